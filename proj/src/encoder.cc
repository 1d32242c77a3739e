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

#include "romtrack/encoder.h"

#include <cmath>

#include "romtrack/errors.h"

namespace romtrack {

namespace {

struct Projections {
  Tensor q, k, v;
};

Projections project(const Tensor& x, const EncoderLayerParams& p, bool with_query) {
  Projections out;
  if (with_query) out.q = linear(x, p.wq, p.bq);
  out.k = linear(x, p.wk, p.bk);
  out.v = linear(x, p.wv, p.bv);
  return out;
}

Tensor feed_forward(const Tensor& x, const EncoderLayerParams& p) {
  return linear(gelu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

Tensor join(std::vector<Tensor> parts, std::size_t batch) {
  if (parts.size() == 1) return parts.front();
  return interleave_rows(parts, batch);
}

void require_rows(const Tensor& t, std::size_t rows, const char* what) {
  if (t.rank() != 2 || t.rows() != rows) {
    throw ContractError(std::string(what) + ": expected " + std::to_string(rows) + " rows, got " +
                        shape_string(t.shape()));
  }
}

}  // namespace

std::size_t TokenLayout::count(Segment s) const {
  switch (s) {
    case Segment::kVt: return n_vt;
    case Segment::kIt: return n_it;
    case Segment::kHt: return n_ht;
    case Segment::kSr: return n_sr;
  }
  return 0;
}

std::size_t TokenLayout::key_offset(Segment s) const {
  std::size_t off = 0;
  for (Segment t : {Segment::kVt, Segment::kIt, Segment::kHt, Segment::kSr}) {
    if (t == s) return off;
    off += count(t);
  }
  return off;
}

std::size_t TokenLayout::query_offset(Segment s) const {
  if (s == Segment::kHt) return 0;
  if (s == Segment::kSr) return n_ht;
  throw ContractError("only ht and sr contribute query rows");
}

TokenLayout TokenLayout::for_variant(Variant variant, bool with_vt, std::size_t template_tokens,
                                     std::size_t search_tokens) {
  TokenLayout l;
  l.n_it = variant == Variant::kHTM ? 0 : template_tokens;
  l.n_ht = variant == Variant::kSTM ? 0 : template_tokens;
  l.n_vt = with_vt ? l.n_ht : 0;
  l.n_sr = search_tokens;
  if (with_vt && variant == Variant::kSTM) {
    throw ContractError("variation tokens need a hybrid template (variant htm or rom)");
  }
  return l;
}

void TokenLayout::validate() const {
  if (n_sr == 0) throw ContractError("token layout without search tokens");
  if (n_vt != 0 && n_vt != n_ht) {
    throw ContractError("variation tokens must be absent or match the hybrid template length");
  }
  if (n_it != 0 && n_ht != 0 && n_it != n_ht) {
    throw ContractError("inherent and hybrid templates must have equal length");
  }
}

Tensor Segments::ht() const {
  if (n_ht == 0) return {};
  return sample_rows(z, batch, 0, n_ht);
}

Tensor Segments::sr() const { return sample_rows(z, batch, n_ht, n_sr); }

Tensor inherent_self_attention(const Tensor& it_tokens, const EncoderLayerParams& params,
                               std::size_t heads, std::size_t batch) {
  if (it_tokens.cols() != params.wq.rows()) {
    throw DimensionError("inherent_self_attention: token width " + std::to_string(it_tokens.cols()) +
                         " vs projection " + shape_string(params.wq.shape()));
  }
  Projections it = project(it_tokens, params, true);
  return multi_head_attention(it.q, it.k, it.v, heads, batch);
}

MixedQKV assemble_mixed_qkv(const Tensor& vt, const Tensor& it, const Tensor& ht, const Tensor& sr,
                            const EncoderLayerParams& params, std::size_t batch) {
  if (!sr.defined()) throw ContractError("assemble_mixed_qkv: search tokens are required");
  if (batch == 0 || sr.rows() % batch != 0) throw ContractError("assemble_mixed_qkv: bad batch");
  MixedQKV out;
  auto per_sample = [batch](const Tensor& t) { return t.defined() ? t.rows() / batch : 0; };
  out.layout = {per_sample(vt), per_sample(it), per_sample(ht), per_sample(sr)};
  out.layout.validate();
  for (const Tensor* t : {&vt, &it, &ht, &sr}) {
    if (t->defined() && t->rows() % batch != 0) throw ContractError("assemble_mixed_qkv: bad batch");
  }

  std::vector<Tensor> qs, ks, vs;
  if (vt.defined()) {
    auto p = project(vt, params, false);
    ks.push_back(p.k);
    vs.push_back(p.v);
  }
  if (it.defined()) {
    auto p = project(it, params, false);
    ks.push_back(p.k);
    vs.push_back(p.v);
  }
  if (ht.defined()) {
    auto p = project(ht, params, true);
    qs.push_back(p.q);
    ks.push_back(p.k);
    vs.push_back(p.v);
  }
  auto p = project(sr, params, true);
  qs.push_back(p.q);
  ks.push_back(p.k);
  vs.push_back(p.v);
  out.q = join(qs, batch);
  out.k = join(ks, batch);
  out.v = join(vs, batch);
  return out;
}

Tensor mixed_cross_attention(const MixedQKV& qkv, std::size_t heads, std::size_t batch) {
  if (qkv.q.rows() != batch * qkv.layout.query_count() || qkv.k.rows() != batch * qkv.layout.key_count()) {
    throw DimensionError("mixed_cross_attention: q/k rows disagree with the token layout");
  }
  return multi_head_attention(qkv.q, qkv.k, qkv.v, heads, batch);
}

Tensor CorrelationBlocks::block(std::size_t head, Segment query, Segment key) const {
  const std::size_t rows = layout.count(query), cols = layout.count(key);
  if (rows == 0 || cols == 0) return {};
  const Tensor& m = per_head.at(head);
  const std::size_t r0 = layout.query_offset(query), c0 = layout.key_offset(key);
  std::vector<double> v(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] = m.at(r0 + r, c0 + c);
  return Tensor({rows, cols}, std::move(v));
}

CorrelationBlocks correlation_blocks(const MixedQKV& qkv, std::size_t heads) {
  const std::size_t nq = qkv.layout.query_count(), nk = qkv.layout.key_count();
  if (qkv.q.rows() != nq || qkv.k.rows() != nk || qkv.q.cols() != qkv.k.cols()) {
    throw DimensionError("correlation_blocks: expects one sample whose q/k match the layout");
  }
  const std::size_t dm = qkv.q.cols();
  if (heads == 0 || dm % heads != 0) throw DimensionError("correlation_blocks: heads must divide width");
  const std::size_t d = dm / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  CorrelationBlocks out;
  out.layout = qkv.layout;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor scores({nq, nk});
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < nk; ++j) {
        double s = 0.0;
        for (std::size_t c = h * d; c < (h + 1) * d; ++c) s += qkv.q.at(i, c) * qkv.k.at(j, c);
        scores.at(i, j) = s * inv_sqrt_d;
      }
    NoGradGuard no_grad;
    out.per_head.push_back(softmax_rows(scores));
  }
  return out;
}

CorrelationBlocks layer_correlation(const Segments& in, const Tensor& vt, const EncoderLayerParams& p,
                                    const EncoderSettings& settings) {
  if (in.batch != 1) throw ContractError("layer_correlation: single sample only");
  auto norm = [&](const Tensor& x) {
    return x.defined() && x.rows() ? layer_norm(x, p.ln1_gain, p.ln1_bias, settings.ln_eps) : Tensor{};
  };
  Tensor ht = in.n_ht ? in.ht() : Tensor{};
  MixedQKV qkv = assemble_mixed_qkv(norm(vt), norm(in.it), norm(ht), norm(in.sr()), p, 1);
  return correlation_blocks(qkv, settings.heads);
}

Segments encoder_layer_forward(const Segments& in, const Tensor& vt, const EncoderLayerParams& p,
                               const EncoderSettings& settings) {
  const std::size_t batch = in.batch;
  const bool has_it = in.it.defined();
  switch (settings.variant) {
    case Variant::kSTM:
      if (!has_it || in.n_ht != 0 || vt.defined()) {
        throw ContractError("STM layer expects it + sr segments and no variation tokens");
      }
      break;
    case Variant::kHTM:
      if (has_it || in.n_ht == 0) throw ContractError("HTM layer expects ht + sr segments only");
      break;
    case Variant::kROM:
      if (!has_it || in.n_ht == 0) throw ContractError("ROM layer expects it + ht + sr segments");
      break;
  }
  require_rows(in.z, batch * (in.n_ht + in.n_sr), "encoder layer hybrid stream");
  if (has_it) require_rows(in.it, batch * in.n_it, "encoder layer inherent stream");
  if (vt.defined()) require_rows(vt, batch * in.n_ht, "encoder layer variation tokens");

  Segments out = in;

  // Inherent stream: self-attention over it only.
  Projections it_proj;
  if (has_it) {
    Tensor it_norm = layer_norm(in.it, p.ln1_gain, p.ln1_bias, settings.ln_eps);
    it_proj = project(it_norm, p, true);
  }

  // Hybrid stream: queries [ht | sr], keys/values [vt | it | ht | sr].
  Tensor z_norm = layer_norm(in.z, p.ln1_gain, p.ln1_bias, settings.ln_eps);
  Projections z_proj = project(z_norm, p, true);
  std::vector<Tensor> ks, vs;
  if (vt.defined()) {
    Projections vt_proj = project(layer_norm(vt, p.ln1_gain, p.ln1_bias, settings.ln_eps), p, false);
    ks.push_back(vt_proj.k);
    vs.push_back(vt_proj.v);
  }
  if (has_it) {
    ks.push_back(it_proj.k);
    vs.push_back(it_proj.v);
  }
  ks.push_back(z_proj.k);
  vs.push_back(z_proj.v);
  Tensor a_z = multi_head_attention(z_proj.q, join(ks, batch), join(vs, batch), settings.heads, batch);
  Tensor z = add(in.z, linear(a_z, p.wo, p.bo));
  out.z = add(z, feed_forward(layer_norm(z, p.ln2_gain, p.ln2_bias, settings.ln_eps), p));

  if (has_it) {
    Tensor a_it = multi_head_attention(it_proj.q, it_proj.k, it_proj.v, settings.heads, batch);
    Tensor it = add(in.it, linear(a_it, p.wo, p.bo));
    out.it = add(it, feed_forward(layer_norm(it, p.ln2_gain, p.ln2_bias, settings.ln_eps), p));
  }
  return out;
}

VariationCache make_variation_tokens(const std::vector<Tensor>& prev_ht_layers, std::size_t depth,
                                     std::int64_t frame_index) {
  if (prev_ht_layers.size() != depth) {
    throw ContractError("variation cache needs " + std::to_string(depth) + " layers, got " +
                        std::to_string(prev_ht_layers.size()));
  }
  VariationCache cache;
  cache.frame_index = frame_index;
  cache.layers.reserve(depth);
  for (const auto& t : prev_ht_layers) cache.layers.push_back(t.detach());
  return cache;
}

BackboneOutput forward_backbone(const Tensor& it_tokens, const Tensor& ht_tokens, const Tensor& sr_tokens,
                                const VariationCache* cache, const std::vector<EncoderLayerParams>& layers,
                                const EncoderSettings& settings, std::size_t template_tokens,
                                std::size_t search_tokens, std::size_t batch, bool keep_layer_inputs) {
  const bool with_vt = cache != nullptr && !cache->empty();
  const TokenLayout layout = TokenLayout::for_variant(settings.variant, with_vt, template_tokens, search_tokens);
  if (with_vt && cache->layers.size() != layers.size()) {
    throw ContractError("variation cache depth " + std::to_string(cache->layers.size()) +
                        " does not match encoder depth " + std::to_string(layers.size()));
  }
  require_rows(sr_tokens, batch * search_tokens, "search tokens");

  Segments x;
  x.batch = batch;
  x.n_it = layout.n_it;
  x.n_ht = layout.n_ht;
  x.n_sr = layout.n_sr;
  if (layout.n_it) {
    require_rows(it_tokens, batch * template_tokens, "inherent template tokens");
    x.it = it_tokens;
  }
  if (layout.n_ht) {
    require_rows(ht_tokens, batch * template_tokens, "hybrid template tokens");
    Tensor parts[] = {ht_tokens, sr_tokens};
    x.z = interleave_rows(parts, batch);
  } else {
    x.z = sr_tokens;
  }
  if (with_vt) {
    for (const auto& t : cache->layers) require_rows(t, batch * template_tokens, "variation tokens");
  }

  BackboneOutput out;
  std::vector<Tensor> ht_per_layer;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (keep_layer_inputs) out.layer_inputs.push_back(x);
    x = encoder_layer_forward(x, with_vt ? cache->layers[k] : Tensor{}, layers[k], settings);
    if (layout.n_ht) {
      NoGradGuard no_grad;
      ht_per_layer.push_back(x.ht());
    }
  }
  if (layout.n_ht) out.cache = make_variation_tokens(ht_per_layer, layers.size());
  out.features = std::move(x);
  return out;
}

}  // namespace romtrack
