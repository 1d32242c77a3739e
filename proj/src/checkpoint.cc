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

#include "romtrack/checkpoint.h"

#include <bit>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <string>

#include "romtrack/errors.h"

namespace romtrack {
namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }

  void tensor(const std::string& name, const Shape& shape, std::span<const double> values) {
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name);
    u32(static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) u64(e);
    for (double v : values) f64(v);
  }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  bool done() const { return pos_ == b_.size(); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(b_.begin() + pos_, b_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t get(int n) {
    need(n);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(b_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

struct Record {
  Shape shape;
  std::vector<double> values;
};

std::string shape_text(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model& model, const RunConfig& config, const OptimState* optim,
                                            std::int64_t step) {
  RunConfig snapshot = config;
  snapshot.model = model.config();
  const std::string text = serialize_config(snapshot);
  Writer w;
  w.bytes("ROMC");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  auto params = model.parameters();
  for (const auto& p : params) w.tensor(p.name, p.tensor.shape(), p.tensor.values());
  for (const auto& b : model.buffers()) w.tensor(b.name, b.tensor.shape(), b.tensor.values());
  const double step_value = static_cast<double>(step);
  w.tensor("train.step", {1}, std::span(&step_value, 1));
  if (optim) {
    if (optim->first_moment.size() != params.size() || optim->second_moment.size() != params.size())
      throw ContractError("encode_checkpoint: optimizer state does not match the parameters");
    const double optim_step = static_cast<double>(optim->step);
    w.tensor("optim.step", {1}, std::span(&optim_step, 1));
    for (std::size_t i = 0; i < params.size(); ++i) {
      w.tensor("optim.first." + params[i].name, params[i].tensor.shape(), optim->first_moment[i]);
      w.tensor("optim.second." + params[i].name, params[i].tensor.shape(), optim->second_moment[i]);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || r.bytes(4) != "ROMC") throw FormatError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const std::string text = r.bytes(r.u32());
  RunConfig config = parse_config_text(text, "<checkpoint>");

  std::map<std::string, Record> records;
  while (!r.done()) {
    std::string name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint record '" + name + "' has rank " + std::to_string(rank));
    Record rec;
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      rec.shape.push_back(r.u64());
      numel *= rec.shape.back();
    }
    if (numel > (bytes.size() / 8)) throw FormatError("checkpoint record '" + name + "' exceeds the file");
    rec.values.resize(numel);
    for (auto& v : rec.values) v = r.f64();
    if (!records.emplace(name, std::move(rec)).second) throw CensusError("duplicate checkpoint record '" + name + "'");
  }

  Checkpoint ck{config, Model(config.model), std::nullopt, 0};
  std::set<std::string> used;
  auto take = [&](const std::string& name, const Shape& shape) -> const Record& {
    auto it = records.find(name);
    if (it == records.end()) throw CensusError("checkpoint is missing '" + name + "'");
    if (it->second.shape != shape)
      throw CensusError("checkpoint '" + name + "' has shape " + shape_text(it->second.shape) + ", expected " +
                        shape_text(shape));
    used.insert(name);
    return it->second;
  };
  auto params = ck.model.parameters();
  for (auto& p : params) {
    const Record& rec = take(p.name, p.tensor.shape());
    std::copy(rec.values.begin(), rec.values.end(), p.tensor.values().begin());
  }
  for (auto& b : ck.model.buffers()) {
    const Record& rec = take(b.name, b.tensor.shape());
    std::copy(rec.values.begin(), rec.values.end(), b.tensor.values().begin());
  }
  ck.step = static_cast<std::int64_t>(take("train.step", {1}).values[0]);
  if (records.count("optim.step")) {
    OptimState st;
    st.step = static_cast<std::int64_t>(take("optim.step", {1}).values[0]);
    for (auto& p : params) {
      st.first_moment.push_back(take("optim.first." + p.name, p.tensor.shape()).values);
      st.second_moment.push_back(take("optim.second." + p.name, p.tensor.shape()).values);
    }
    ck.optim = std::move(st);
  }
  for (const auto& [name, rec] : records)
    if (!used.count(name)) throw CensusError("checkpoint has unexpected record '" + name + "'");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const RunConfig& config,
                     const OptimState* optim, std::int64_t step) {
  auto bytes = encode_checkpoint(model, config, optim, step);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace romtrack
