/* Copyright 2026 The romtrack Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "romtrack/checkpoint.h"
#include "romtrack/complexity.h"
#include "romtrack/config.h"
#include "romtrack/errors.h"
#include "test_util.h"

namespace romtrack {
namespace {

using testing::bit_identical;

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

// ---- config ------------------------------------------------------------------------

TEST(ConfigTest, EmptyTextGivesDeskDefaults) {
  RunConfig c = parse_config_text("");
  EXPECT_EQ(c.model.template_size, 32u);
  EXPECT_EQ(c.model.search_size, 64u);
  EXPECT_EQ(c.model.patch_size, 8u);
  EXPECT_EQ(c.model.depth, 4u);
  EXPECT_EQ(c.stage1.steps, 8000u);
  EXPECT_EQ(c.stage2.steps, 2000u);
  EXPECT_DOUBLE_EQ(c.stage2.lr, 4e-5);
  EXPECT_EQ(c.train_data.sequences, 200u);
  EXPECT_EQ(c.eval_data.sequences, 40u);
}

TEST(ConfigTest, FullScalePresetIsSelectableByName) {
  RunConfig c = parse_config_text("[model]\nvariant = htm\npreset = paper-256\n");
  EXPECT_EQ(c.model.template_size, 128u);
  EXPECT_EQ(c.model.search_size, 256u);
  EXPECT_EQ(c.model.patch_size, 16u);
  EXPECT_EQ(c.model.dim, 768u);
  // Other keys still apply on top of the preset.
  EXPECT_EQ(c.model.variant, Variant::kHTM);
}

TEST(ConfigTest, ValuesSectionsAndComments) {
  RunConfig c = parse_config_text(R"(
# desk run
[model]
dim = 32        # narrower
heads = 4
variation_tokens = false
pixel_mean = 0.4, 0.5, 0.6

[stage2]
sampling = random
lr = 1e-5

[run]
seed = 42
)");
  EXPECT_EQ(c.model.dim, 32u);
  EXPECT_EQ(c.model.heads, 4u);
  EXPECT_FALSE(c.model.variation_tokens);
  EXPECT_DOUBLE_EQ(c.model.pixel_mean[2], 0.6);
  EXPECT_EQ(c.stage2.sampling, SamplingMode::kRandom);
  EXPECT_DOUBLE_EQ(c.stage2.lr, 1e-5);
  EXPECT_EQ(c.seed, 42u);
}

TEST(ConfigTest, RejectsUnknownKeysAndBadValues) {
  auto message = [](const std::string& text) {
    try {
      parse_config_text(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("[model]\nwidth = 3\n").find("unknown key 'model.width'"), std::string::npos);
  EXPECT_NE(message("[nope]\nx = 1\n").find("unknown key"), std::string::npos);
  EXPECT_NE(message("[model]\ndim = abc\n").find("model.dim"), std::string::npos);
  EXPECT_NE(message("[model]\ndim = 8\ndim = 8\n").find("duplicate"), std::string::npos);
  EXPECT_NE(message("[model]\npreset = huge\n").find("unknown preset"), std::string::npos);
  EXPECT_NE(message("[model\n").find("section"), std::string::npos);
  EXPECT_NE(message("[model]\ndim\n").find("key = value"), std::string::npos);
}

TEST(ConfigTest, ValidationNamesTheConstraint) {
  try {
    parse_config_text("[model]\npatch_size = 7\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("patch_size divides template_size"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config_text("[model]\nvariant = stm\n"), ConfigError);  // vt needs a hybrid stream
  EXPECT_NO_THROW(parse_config_text("[model]\nvariant = stm\nvariation_tokens = false\n"));
  EXPECT_THROW(parse_config_text("[stage1]\nbatch = 0\n"), ConfigError);
}

TEST(ConfigTest, SerializationRoundTrips) {
  RunConfig c = parse_config_text("[model]\nvariant = htm\nln_eps = 1.2345678901234567e-7\n[stage2]\nsampling = random\n");
  c.eval_corpus = "/data/eval";
  const std::string text = serialize_config(c);
  RunConfig back = parse_config_text(text);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(back.model.ln_eps, c.model.ln_eps);
  EXPECT_EQ(back.eval_corpus, c.eval_corpus);
}

TEST(ConfigTest, ReadsFiles) {
  auto path = temp_file("romtrack_config_test.ini");
  std::ofstream(path) << "[run]\nseed = 7\n";
  EXPECT_EQ(parse_config(path).seed, 7u);
  std::filesystem::remove(path);
  EXPECT_THROW(parse_config(path), ConfigError);
}

// ---- checkpoints -------------------------------------------------------------------

ModelConfig small_config(Variant v) {
  ModelConfig cfg;
  cfg.dim = 16;
  cfg.depth = 2;
  cfg.head_channels = 8;
  cfg.head_layers = 2;
  cfg.variant = v;
  cfg.variation_tokens = v != Variant::kSTM;
  return cfg;
}

Model seeded(const ModelConfig& cfg, std::uint64_t seed) {
  Model m(cfg);
  Rng rng(seed);
  m.initialize(rng);
  // Non-trivial running statistics.
  for (auto& b : m.buffers())
    for (double& v : b.tensor.values()) v += 0.25;
  return m;
}

ModelOutput run(Model& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& c = m.config();
  Tensor t = testing::random_tensor({c.template_tokens(), c.patch_values()}, rng);
  Tensor s = testing::random_tensor({c.search_tokens(), c.patch_values()}, rng);
  NoGradGuard no_grad;
  ModelOutput first = m.forward(t, t, s, 1, nullptr, false);
  return m.forward(t, t, s, 1, c.variation_tokens ? &first.cache : nullptr, false);
}

TEST(CheckpointTest, ReloadReproducesForwardOutputsForEveryVariant) {
  for (Variant v : {Variant::kSTM, Variant::kHTM, Variant::kROM}) {
    RunConfig rc;
    rc.model = small_config(v);
    Model m = seeded(rc.model, 3);
    auto bytes = encode_checkpoint(m, rc, nullptr, 17);
    Checkpoint ck = decode_checkpoint(bytes);
    EXPECT_EQ(ck.step, 17);
    EXPECT_FALSE(ck.optim.has_value());
    ModelOutput a = run(m, 5), b = run(ck.model, 5);
    EXPECT_TRUE(bit_identical(a.maps.cls, b.maps.cls));
    EXPECT_TRUE(bit_identical(a.maps.offset, b.maps.offset));
    EXPECT_TRUE(bit_identical(a.maps.size, b.maps.size));
  }
}

TEST(CheckpointTest, SaveLoadSaveIsByteIdentical) {
  RunConfig rc;
  rc.model = small_config(Variant::kROM);
  rc.seed = 9;
  Model m = seeded(rc.model, 4);
  auto params = m.trainable();
  OptimState st = make_optim_state(params, AdamWOptions{});
  st.step = 12;
  for (auto& v : st.first_moment[0]) v = 0.125;
  auto path = temp_file("romtrack_ck_test.romc");
  save_checkpoint(path, m, rc, &st, 12);
  Checkpoint ck = load_checkpoint(path);
  ASSERT_TRUE(ck.optim.has_value());
  EXPECT_EQ(ck.optim->step, 12);
  EXPECT_EQ(ck.optim->first_moment[0], st.first_moment[0]);
  EXPECT_EQ(ck.config.seed, 9u);
  auto again = encode_checkpoint(ck.model, ck.config, &*ck.optim, ck.step);
  std::ifstream in(path, std::ios::binary);
  std::vector<std::uint8_t> original((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(again, original);
  std::filesystem::remove(path);
}

TEST(CheckpointTest, PayloadMatchesTheParameterCensus) {
  RunConfig rc;
  rc.model = small_config(Variant::kROM);
  Model m = seeded(rc.model, 5);
  Checkpoint ck = decode_checkpoint(encode_checkpoint(m, rc, nullptr, 0));
  std::uint64_t elements = 0;
  for (const auto& p : ck.model.parameters()) elements += p.tensor.numel();
  EXPECT_EQ(elements, count_params(rc.model).total());
}

// Offset of the first tensor record's first extent.
std::size_t first_extent_offset(const std::vector<std::uint8_t>& bytes) {
  std::uint32_t config_len = 0;
  for (int i = 0; i < 4; ++i) config_len |= std::uint32_t(bytes[8 + i]) << (8 * i);
  std::size_t pos = 12 + config_len;
  std::uint32_t name_len = 0;
  for (int i = 0; i < 4; ++i) name_len |= std::uint32_t(bytes[pos + i]) << (8 * i);
  return pos + 4 + name_len + 4;
}

TEST(CheckpointTest, DetectsCorruption) {
  RunConfig rc;
  rc.model = small_config(Variant::kHTM);
  Model m = seeded(rc.model, 6);
  auto good = encode_checkpoint(m, rc, nullptr, 0);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);

  auto bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), FormatError);

  auto truncated = good;
  truncated.resize(good.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), FormatError);

  // Shrinking the first extent misaligns the rest of the stream; whatever
  // trips first, the load must fail.
  auto tampered = good;
  tampered[first_extent_offset(good)] -= 1;
  EXPECT_THROW(decode_checkpoint(tampered), FormatError);

  // A consistent file for a different geometry fails the census.
  RunConfig other = rc;
  other.model.dim = 24;
  other.model.heads = 2;
  Model wider = seeded(other.model, 6);
  auto wide_bytes = encode_checkpoint(wider, other, nullptr, 0);
  auto text = serialize_config(rc);
  std::vector<std::uint8_t> spliced(wide_bytes.begin(), wide_bytes.begin() + 8);
  for (int i = 0; i < 4; ++i) spliced.push_back(static_cast<std::uint8_t>(text.size() >> (8 * i)));
  spliced.insert(spliced.end(), text.begin(), text.end());
  std::uint32_t wide_len = 0;
  for (int i = 0; i < 4; ++i) wide_len |= std::uint32_t(wide_bytes[8 + i]) << (8 * i);
  spliced.insert(spliced.end(), wide_bytes.begin() + 12 + wide_len, wide_bytes.end());
  EXPECT_THROW(decode_checkpoint(spliced), CensusError);
}

TEST(CheckpointTest, TamperedExtentIsACensusMismatch) {
  RunConfig rc;
  rc.model = small_config(Variant::kROM);
  Model m = seeded(rc.model, 7);
  auto good = encode_checkpoint(m, rc, nullptr, 0);
  // patch_embed.proj is [192 × 16]; rewrite it as [96 × 32], same payload size.
  const std::size_t at = first_extent_offset(good);
  auto tampered = good;
  tampered[at] = 96;
  tampered[at + 8] = 32;
  try {
    decode_checkpoint(tampered);
    FAIL();
  } catch (const CensusError& e) {
    EXPECT_NE(std::string(e.what()).find("patch_embed.proj"), std::string::npos) << e.what();
  }
}

TEST(CheckpointTest, RejectsExtraRecords) {
  RunConfig rc;
  rc.model = small_config(Variant::kROM);
  Model m = seeded(rc.model, 8);
  auto bytes = encode_checkpoint(m, rc, nullptr, 0);
  const std::string name = "stray";
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put32(static_cast<std::uint32_t>(name.size()));
  bytes.insert(bytes.end(), name.begin(), name.end());
  put32(0);
  for (int i = 0; i < 8; ++i) bytes.push_back(0);
  EXPECT_THROW(decode_checkpoint(bytes), CensusError);
}

}  // namespace
}  // namespace romtrack
