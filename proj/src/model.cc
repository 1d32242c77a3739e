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

#include "romtrack/model.h"

#include <cmath>
#include <utility>

#include "romtrack/errors.h"
#include "romtrack/patch_embed.h"

namespace romtrack {

namespace {

constexpr const char* kBranchNames[] = {"cls", "offset", "size"};
constexpr std::size_t kBranchOutputs[] = {1, 2, 2};

std::string layer_prefix(std::size_t k) { return "encoder." + std::to_string(k) + "."; }

std::string head_prefix(std::size_t branch, std::size_t layer) {
  return std::string("head.") + kBranchNames[branch] + "." + std::to_string(layer) + ".";
}

std::size_t head_width(const ModelConfig& cfg, std::size_t layer) { return cfg.head_channels >> layer; }

HeadBranch& branch_ref(HeadParams& head, std::size_t i) {
  return i == 0 ? head.cls : (i == 1 ? head.offset : head.size);
}

double truncated_normal(Rng& rng, double sigma) {
  std::normal_distribution<double> dist(0.0, sigma);
  for (;;) {
    double v = dist(rng);
    if (std::abs(v) <= 2.0 * sigma) return v;
  }
}

}  // namespace

std::vector<ParamSpec> declare_parameters(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.dim, hidden = cfg.dim * cfg.mlp_ratio;
  std::vector<ParamSpec> out;
  out.push_back({"patch_embed.proj", {cfg.patch_values(), d}, ParamRole::kProjection});
  out.push_back({"pos_embed.template", {cfg.pos_grid_template * cfg.pos_grid_template, d}, ParamRole::kPosition});
  out.push_back({"pos_embed.search", {cfg.pos_grid_search * cfg.pos_grid_search, d}, ParamRole::kPosition});
  for (std::size_t k = 0; k < cfg.depth; ++k) {
    const std::string p = layer_prefix(k);
    out.push_back({p + "ln1.gain", {d}, ParamRole::kNormGain});
    out.push_back({p + "ln1.bias", {d}, ParamRole::kNormBias});
    for (const char* w : {"q", "k", "v"}) {
      out.push_back({p + "attn.w" + w, {d, d}, ParamRole::kProjection});
      out.push_back({p + "attn.b" + w, {d}, ParamRole::kBias});
    }
    out.push_back({p + "attn.wo", {d, d}, ParamRole::kProjection});
    out.push_back({p + "attn.bo", {d}, ParamRole::kBias});
    out.push_back({p + "ln2.gain", {d}, ParamRole::kNormGain});
    out.push_back({p + "ln2.bias", {d}, ParamRole::kNormBias});
    out.push_back({p + "ffn.w1", {d, hidden}, ParamRole::kProjection});
    out.push_back({p + "ffn.b1", {hidden}, ParamRole::kBias});
    out.push_back({p + "ffn.w2", {hidden, d}, ParamRole::kProjection});
    out.push_back({p + "ffn.b2", {d}, ParamRole::kBias});
  }
  if (cfg.depth > 0) {
    out.push_back({"norm.gain", {d}, ParamRole::kNormGain});
    out.push_back({"norm.bias", {d}, ParamRole::kNormBias});
  }
  for (std::size_t b = 0; b < 3; ++b) {
    std::size_t in = d;
    for (std::size_t l = 0; l < cfg.head_layers; ++l) {
      const std::size_t width = head_width(cfg, l);
      const std::string p = head_prefix(b, l);
      out.push_back({p + "conv.weight", {9 * in, width}, ParamRole::kConv});
      out.push_back({p + "conv.bias", {width}, ParamRole::kBias});
      out.push_back({p + "bn.gain", {width}, ParamRole::kNormGain});
      out.push_back({p + "bn.bias", {width}, ParamRole::kNormBias});
      in = width;
    }
    const std::string p = std::string("head.") + kBranchNames[b] + ".out.";
    out.push_back({p + "weight", {in, kBranchOutputs[b]}, ParamRole::kProjection});
    out.push_back({p + "bias", {kBranchOutputs[b]}, ParamRole::kBias});
  }
  return out;
}

std::vector<ParamSpec> declare_buffers(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t l = 0; l < cfg.head_layers; ++l) {
      const std::string p = head_prefix(b, l);
      out.push_back({p + "bn.running_mean", {head_width(cfg, l)}, ParamRole::kRunningMean});
      out.push_back({p + "bn.running_var", {head_width(cfg, l)}, ParamRole::kRunningVar});
    }
  return out;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  const auto specs = declare_parameters(cfg_);
  const auto buffer_specs = declare_buffers(cfg_);
  layers.resize(cfg_.depth);
  for (std::size_t b = 0; b < 3; ++b) branch_ref(head, b).layers.resize(cfg_.head_layers);

  auto make = [](const ParamSpec& s) {
    const double fill = (s.role == ParamRole::kNormGain || s.role == ParamRole::kRunningVar) ? 1.0 : 0.0;
    return Tensor(s.shape, fill);
  };
  // Slots are visited in declaration order; parameters() walks the same order.
  auto fill = [&](const std::vector<ParamSpec>& specs_in, bool params) {
    std::size_t i = 0;
    auto next = [&](Tensor& t) {
      t = make(specs_in.at(i++));
      if (params) t.set_requires_grad();
    };
    if (params) {
      next(patch_proj);
      next(pos_template);
      next(pos_search);
      for (auto& l : layers)
        for (Tensor* t : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo,
                          &l.ln2_gain, &l.ln2_bias, &l.w1, &l.b1, &l.w2, &l.b2})
          next(*t);
      if (cfg_.depth > 0) {
        next(norm_gain);
        next(norm_bias);
      }
      for (std::size_t b = 0; b < 3; ++b) {
        auto& br = branch_ref(head, b);
        for (auto& l : br.layers)
          for (Tensor* t : {&l.weight, &l.bias, &l.bn_gain, &l.bn_bias}) next(*t);
        next(br.out_weight);
        next(br.out_bias);
      }
    } else {
      for (std::size_t b = 0; b < 3; ++b)
        for (auto& l : branch_ref(head, b).layers) {
          next(l.running_mean);
          next(l.running_var);
        }
    }
    if (i != specs_in.size()) throw ContractError("model layout disagrees with its declaration");
  };
  fill(specs, true);
  fill(buffer_specs, false);
}

std::vector<NamedTensor> Model::parameters() const {
  const auto specs = declare_parameters(cfg_);
  std::vector<Tensor> handles{patch_proj, pos_template, pos_search};
  for (const auto& l : layers)
    for (const Tensor* t : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo,
                            &l.ln2_gain, &l.ln2_bias, &l.w1, &l.b1, &l.w2, &l.b2})
      handles.push_back(*t);
  if (cfg_.depth > 0) {
    handles.push_back(norm_gain);
    handles.push_back(norm_bias);
  }
  for (const HeadBranch* br : {&head.cls, &head.offset, &head.size}) {
    for (const auto& l : br->layers)
      for (const Tensor* t : {&l.weight, &l.bias, &l.bn_gain, &l.bn_bias}) handles.push_back(*t);
    handles.push_back(br->out_weight);
    handles.push_back(br->out_bias);
  }
  if (handles.size() != specs.size()) throw ContractError("model layout disagrees with its declaration");
  std::vector<NamedTensor> out;
  out.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) out.push_back({specs[i].name, handles[i]});
  return out;
}

std::vector<NamedTensor> Model::buffers() const {
  const auto specs = declare_buffers(cfg_);
  std::vector<NamedTensor> out;
  std::size_t i = 0;
  for (const HeadBranch* br : {&head.cls, &head.offset, &head.size})
    for (const auto& l : br->layers) {
      out.push_back({specs.at(i++).name, l.running_mean});
      out.push_back({specs.at(i++).name, l.running_var});
    }
  return out;
}

std::vector<Tensor> Model::trainable() const {
  std::vector<Tensor> out;
  for (auto& p : parameters()) out.push_back(p.tensor);
  return out;
}

void Model::initialize(Rng& rng) {
  const auto specs = declare_parameters(cfg_);
  auto params = parameters();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto v = params[i].tensor.values();
    switch (specs[i].role) {
      case ParamRole::kProjection:
      case ParamRole::kPosition:
        for (double& x : v) x = truncated_normal(rng, 0.02);
        break;
      case ParamRole::kConv: {
        const double sigma = std::sqrt(2.0 / double(specs[i].shape[0]));
        for (double& x : v) x = truncated_normal(rng, sigma);
        break;
      }
      case ParamRole::kNormGain:
        for (double& x : v) x = 1.0;
        break;
      default:
        for (double& x : v) x = 0.0;
    }
  }
  // Score prior p = 0.1 keeps the early focal loss from being swamped by
  // the many negative cells.
  for (double& x : head.cls.out_bias.values()) x = -std::log((1.0 - 0.1) / 0.1);
  for (auto& b : buffers()) {
    const bool var = b.name.ends_with("running_var");
    for (double& x : b.tensor.values()) x = var ? 1.0 : 0.0;
  }
}

Tensor Model::patches(std::span<const Image> images) const {
  if (images.empty()) throw ContractError("patches: no images");
  const std::size_t p = cfg_.patch_size, pv = cfg_.patch_values();
  std::size_t per = 0;
  Storage out;
  for (const Image& image : images) {
    ImagePatches ip = patchify(normalize(image, cfg_.pixel_mean, cfg_.pixel_std), p);
    if (per == 0) per = ip.count();
    if (ip.count() != per) throw GeometryError("patches: images of different sizes in one batch");
    auto v = ip.values.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return Tensor({per * images.size(), pv}, std::move(out));
}

Tensor Model::pos_for(const Tensor& table, std::size_t native, std::size_t actual) const {
  if (native == actual) return table;
  // Weight preprocessing that could be folded at load time; kept out of the
  // per-frame MAC count.
  const std::uint64_t saved = thread_mac_count();
  Tensor out = matmul(bicubic_matrix(native, native, actual, actual), table);
  thread_mac_count() = saved;
  return out;
}

Tensor Model::embed_template(const Tensor& patches) const {
  return embed(patches, patch_proj, pos_for(pos_template, cfg_.pos_grid_template, cfg_.template_grid()));
}

Tensor Model::embed_search(const Tensor& patches) const {
  return embed(patches, patch_proj, pos_for(pos_search, cfg_.pos_grid_search, cfg_.search_grid()));
}

Tensor head_input(const Model& model, const Segments& features) {
  Tensor sr = features.sr();
  if (model.config().depth == 0) return sr;
  return layer_norm(sr, model.norm_gain, model.norm_bias, model.config().ln_eps);
}

ModelOutput Model::forward(const Tensor& it_patches, const Tensor& ht_patches, const Tensor& sr_patches,
                           std::size_t batch, const VariationCache* cache, bool training) {
  Tensor it = cfg_.uses_inherent() ? embed_template(it_patches) : Tensor{};
  Tensor ht = cfg_.uses_hybrid() ? embed_template(ht_patches) : Tensor{};
  return forward_tokens(it, ht, embed_search(sr_patches), batch, cache, training);
}

ModelOutput Model::forward_tokens(const Tensor& it_tokens, const Tensor& ht_tokens, const Tensor& sr_tokens,
                                  std::size_t batch, const VariationCache* cache, bool training) {
  BackboneOutput bb = forward_backbone(cfg_.uses_inherent() ? it_tokens : Tensor{},
                                       cfg_.uses_hybrid() ? ht_tokens : Tensor{}, sr_tokens, cache, layers,
                                       encoder_settings(), cfg_.template_tokens(), cfg_.search_tokens(), batch);
  ModelOutput out;
  out.maps = head_forward(head_input(*this, bb.features), head, batch, training);
  out.cache = std::move(bb.cache);
  out.features = std::move(bb.features);
  return out;
}

}  // namespace romtrack
