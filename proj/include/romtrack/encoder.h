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

#ifndef ROMTRACK_ENCODER_H_
#define ROMTRACK_ENCODER_H_

// Object encoder: the inherent-template stream, the mixed attention over
// [vt | it | ht | sr], and the per-layer variation-token cache.
//
// Token blocks are stored batch-major: a block of n tokens for a batch of B
// samples is a [B·n × D] tensor whose rows [b·n, (b+1)·n) belong to sample b.

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "romtrack/model_config.h"
#include "romtrack/tensor.h"

namespace romtrack {

// Segment order of the mixed attention keys/values.
enum class Segment { kVt = 0, kIt = 1, kHt = 2, kSr = 3 };

struct TokenLayout {
  std::size_t n_vt = 0;
  std::size_t n_it = 0;
  std::size_t n_ht = 0;
  std::size_t n_sr = 0;

  std::size_t query_count() const { return n_ht + n_sr; }
  std::size_t key_count() const { return n_vt + n_it + n_ht + n_sr; }
  std::size_t count(Segment s) const;
  // First key column (or query row, for kHt/kSr) of a segment.
  std::size_t key_offset(Segment s) const;
  std::size_t query_offset(Segment s) const;

  // Layout for a variant: STM has no ht; HTM has no it; vt mirrors ht.
  static TokenLayout for_variant(Variant variant, bool with_vt, std::size_t template_tokens,
                                 std::size_t search_tokens);
  // Throws ContractError when vt is neither absent nor as long as the template.
  void validate() const;
};

struct EncoderLayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv;
  Tensor wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

struct EncoderSettings {
  Variant variant = Variant::kROM;
  std::size_t heads = 2;
  double ln_eps = 1e-6;
};

// Tokens flowing between layers. `z` is the hybrid stream: per sample the
// hybrid template rows (n_ht, possibly zero) followed by the search rows.
// `it` is the inherent stream and is undefined for HTM.
struct Segments {
  Tensor it;
  Tensor z;
  std::size_t n_it = 0;
  std::size_t n_ht = 0;
  std::size_t n_sr = 0;
  std::size_t batch = 1;

  Tensor ht() const;
  Tensor sr() const;
};

// Per-layer hybrid-template activations of one frame, reused as variation
// tokens for the next. Entry k holds the ht rows emitted by layer k; layer k
// reads entry k as extra keys/values on the following frame.
struct VariationCache {
  std::vector<Tensor> layers;
  std::int64_t frame_index = -1;

  bool empty() const { return layers.empty(); }
};

// A_it = Softmax(q_it k_itᵀ / √d) v_it over the inherent tokens only.
// `it_tokens` are the (already normalised) layer inputs.
Tensor inherent_self_attention(const Tensor& it_tokens, const EncoderLayerParams& params,
                               std::size_t heads, std::size_t batch = 1);

struct MixedQKV {
  Tensor q;  // [B·(n_ht + n_sr) × D]
  Tensor k;  // [B·(n_vt + n_it + n_ht + n_sr) × D]
  Tensor v;
  TokenLayout layout;
};

// q_z = [q_ht, q_sr], k_z = [k_vt, k_it, k_ht, k_sr], v_z likewise, per
// sample. Absent segments are passed as undefined tensors and omitted.
MixedQKV assemble_mixed_qkv(const Tensor& vt, const Tensor& it, const Tensor& ht, const Tensor& sr,
                            const EncoderLayerParams& params, std::size_t batch = 1);

// A_z = Softmax(q_z k_zᵀ / √d) v_z.
Tensor mixed_cross_attention(const MixedQKV& qkv, std::size_t heads, std::size_t batch = 1);

// Row-softmaxed score matrix M_z of one sample, per head, with named views
// of its query-segment × key-segment blocks.
struct CorrelationBlocks {
  TokenLayout layout;
  std::vector<Tensor> per_head;  // [n_q × n_k] each

  // Block M_{query, key} of one head; query ∈ {kHt, kSr}. Returns an
  // undefined tensor when either segment is empty.
  Tensor block(std::size_t head, Segment query, Segment key) const;
};

CorrelationBlocks correlation_blocks(const MixedQKV& qkv, std::size_t heads);

// Correlation blocks of one layer's hybrid-stream attention, normalised as
// the layer does it. Single sample.
CorrelationBlocks layer_correlation(const Segments& in, const Tensor& vt, const EncoderLayerParams& params,
                                    const EncoderSettings& settings);

// One encoder layer with pre-norm residual blocks:
//   x + Attn(LN1(x)), then x + FFN(LN2(x)), GELU FFN.
// The inherent stream runs self-attention only; the hybrid stream queries
// [ht | sr] against [vt | it | ht | sr]. `vt` may be undefined.
Segments encoder_layer_forward(const Segments& in, const Tensor& vt, const EncoderLayerParams& params,
                               const EncoderSettings& settings);

// Builds the cache from per-layer hybrid-template blocks. Values are copied
// verbatim and detached from the tape.
VariationCache make_variation_tokens(const std::vector<Tensor>& prev_ht_layers, std::size_t depth,
                                     std::int64_t frame_index = -1);

struct BackboneOutput {
  Segments features;      // output of the last layer
  VariationCache cache;   // this frame's per-layer hybrid-template rows
  std::vector<Segments> layer_inputs;  // filled when requested
};

// Runs the layer stack. `cache` may be null or empty (no variation tokens).
// Unused template tensors for a variant may be undefined.
BackboneOutput forward_backbone(const Tensor& it_tokens, const Tensor& ht_tokens, const Tensor& sr_tokens,
                                const VariationCache* cache, const std::vector<EncoderLayerParams>& layers,
                                const EncoderSettings& settings, std::size_t template_tokens,
                                std::size_t search_tokens, std::size_t batch = 1,
                                bool keep_layer_inputs = false);

}  // namespace romtrack

#endif  // ROMTRACK_ENCODER_H_
