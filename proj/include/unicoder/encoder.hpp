// Copyright 2026 the unicoder-cpp authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "unicoder/tensor.hpp"
#include "unicoder/vocab.hpp"

namespace unicoder {

/// Residual/norm ordering. Pre-norm trains more stably at small scale;
/// post-norm matches the XLM lineage.
enum class NormOrder { kPre, kPost };

struct EncoderConfig {
  int n_layers = 2;
  Index hidden = 32;
  int n_heads = 4;
  int ffn_mult = 4;
  double dropout = 0.0;
  Index max_len = 64;
  int vocab_size = 0;
  int n_langs = 0;
  NormOrder norm_order = NormOrder::kPre;

  Index head_dim() const { return hidden / n_heads; }
  Index ffn_dim() const { return hidden * ffn_mult; }
  void validate() const;

  /// Tiny deterministic configuration for tests and CPU experiments.
  static EncoderConfig desk(int vocab_size, int n_langs);
  /// Production-scale preset; kept for configuration only.
  static EncoderConfig paper();
};

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

/// Every trainable tensor: embeddings, transformer layers, the tied LM head
/// bias, the binary classifier head, and the alignment weight. The LM output
/// projection shares storage with the token embedding.
struct EncoderParams {
  EncoderConfig config;
  Tensor token_embedding;     // [V×h], tied with the LM projection
  Tensor position_embedding;  // [L×h]
  Tensor language_embedding;  // [n_langs×h]
  std::vector<LayerParams> layers;
  Tensor final_ln_g, final_ln_b;
  Tensor lm_bias;     // [V]
  Tensor classifier;  // [h×2], no bias: zero hidden gives zero logits
  Tensor align_weight;  // [3h]

  static EncoderParams init(const EncoderConfig& config, std::mt19937_64& rng);

  /// Stable (name, tensor) listing; checkpoint and optimizer order.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  EncoderParams clone() const;
  void zero_grads() const;
};

/// E[id] + P[pos] + G[lang] per position. lang_ids has one entry per
/// position. Errors when the sequence exceeds max_len.
Tensor embed(const EncoderParams& params, const std::vector<int>& ids,
             const std::vector<int>& lang_ids);
Tensor embed(const EncoderParams& params, const TokenSequence& seq);

/// Runs the transformer stack over prebuilt embeddings. pad_mask marks PAD
/// positions (1 = pad); pad keys receive additive -1e9 before softmax. An
/// empty mask means no padding. Dropout is sampled from `dropout_rng` only
/// when training and config.dropout > 0.
Tensor encode_from_embeddings(const EncoderParams& params, const Tensor& x,
                              const std::vector<unsigned char>& pad_mask = {},
                              bool training = false,
                              std::mt19937_64* dropout_rng = nullptr);

/// hidden · Eᵀ + bias with the projection tied to the token embedding.
Tensor lm_logits(const EncoderParams& params, const Tensor& hidden);

/// Classifier applied to the first position of the final layer -> [2].
Tensor cls_logits(const EncoderParams& params, const Tensor& hidden);

}  // namespace unicoder
