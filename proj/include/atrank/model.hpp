/* Copyright 2026 The ATRank Authors. All Rights Reserved.

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

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "atrank/behavior.hpp"
#include "atrank/graph.hpp"
#include "atrank/sample.hpp"

namespace atrank {

enum class Architecture {
  kAtrank,    // self attention + vanilla attention
  kMeanPool,  // ablation: masked mean of the common-space projections
};

std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& s);

struct ModelDims {
  std::size_t hidden = 128;      // common space width
  std::size_t num_spaces = 8;    // latent semantic spaces; each is hidden / num_spaces wide
  std::size_t ffn_hidden = 128;  // inner width of the post-attention feedforward block
  double dropout = 0.1;
  double layer_norm_eps = 1e-6;
  Architecture architecture = Architecture::kAtrank;

  std::size_t space_width() const { return hidden / num_spaces; }
  void validate() const;
};

struct ForwardOptions {
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  // Keep per-space attention distributions for export.
  bool keep_attention = false;
};

// Single-layer perceptron x W + b with optional relu.
struct Dense {
  Parameter weight;
  Parameter bias;

  Var apply(Graph& g, Var x, bool relu);
};

struct AttentionResult {
  Var output;
  std::vector<Var> scores;  // one row-stochastic matrix per latent space
};

// Projections, bilinear scorers and feedforward block of one attention stage.
// The self stage and the vanilla stage are two independent instances.
class AttentionStage {
 public:
  AttentionStage() = default;
  AttentionStage(const std::string& prefix, const ModelDims& dims);

  // queries: q x hidden, keys: n x hidden, key_valid: n. Per space k:
  //   A_k = softmax_masked(relu(Q P + b)_k W_k K^T)
  //   C_k = A_k relu(K Q' + b')_k
  // then X = concat_k C_k and output = layer_norm(X + dropout(FFN(X))).
  AttentionResult attend(Graph& g, Var queries, Var keys,
                         std::span<const unsigned char> key_valid,
                         const ModelDims& dims, const ForwardOptions& opts);

  std::vector<Parameter*> parameters();

  Dense query_proj;
  Dense value_proj;
  std::vector<Parameter> bilinear;  // num_spaces of space_width x hidden
  Dense ffn_inner;
  Dense ffn_outer;
  Parameter ln_gain;
  Parameter ln_bias;
};

struct BatchOutput {
  Var logits;  // batch x 1
  std::vector<Var> history_outputs;  // per history: C, padded rows zeroed
  std::vector<Var> candidate_vectors;  // per sample: h_t (1 x hidden)
  // Filled when keep_attention is set.
  std::vector<std::vector<Var>> self_scores;     // per history, per space
  std::vector<std::vector<Var>> vanilla_scores;  // per sample, per space (1 x n)
};

class AtrankModel {
 public:
  AtrankModel(EmbeddingRegistry registry, ModelDims dims);

  AtrankModel(AtrankModel&&) = default;
  AtrankModel& operator=(AtrankModel&&) = default;
  AtrankModel(const AtrankModel&) = delete;
  AtrankModel& operator=(const AtrankModel&) = delete;

  const ModelDims& dims() const noexcept { return dims_; }
  EmbeddingRegistry& registry() noexcept { return registry_; }
  const EmbeddingRegistry& registry() const noexcept { return registry_; }

  // Glorot-uniform dense weights, zero biases, unit layer-norm gain and the
  // registry's embedding init.
  void initialize(std::uint64_t seed);

  // Named dense parameters in a stable order; embedding tables are reached
  // through the registry.
  std::vector<Parameter*> dense_parameters();
  std::vector<const Parameter*> dense_parameters() const;
  void zero_grad();

  Dense& group_projection(std::size_t group) { return group_proj_.at(group); }
  AttentionStage& self_stage() noexcept { return self_stage_; }
  AttentionStage& vanilla_stage() noexcept { return vanilla_stage_; }

  // F_{M_i}: relu(u M_i + b_i), rows x b_i -> rows x hidden.
  Var project_group(Graph& g, std::size_t group, Var u);

  // Projects each group's matrix and reassembles the rows in full-sequence
  // order; groups[i] may be invalid when group i is absent.
  Var project_to_common(Graph& g, std::span<const Var> groups,
                        std::span<const std::vector<std::size_t>> positions);

  // C for one history; rows with valid == 0 are zeroed in the output.
  AttentionResult self_attention_block(Graph& g, Var s, std::span<const unsigned char> valid,
                                       const ForwardOptions& opts);

  // e_u^t for each query row h_t against C.
  AttentionResult vanilla_attention(Graph& g, Var h, Var c,
                                    std::span<const unsigned char> valid,
                                    const ForwardOptions& opts);

  // f(h, e) = <h, e>.
  Var score(Graph& g, Var h, Var e) const;

  // Encodes and projects the candidate of every sample: batch x hidden.
  Var candidate_vectors(Graph& g, const SampleBatch& batch);

  BatchOutput forward(Graph& g, const SampleBatch& batch, const ForwardOptions& opts);

  // Mean sigmoid cross entropy plus l2 * (dense params + gathered rows).
  Var pointwise_loss(Graph& g, Var logits, std::span<const double> labels, double l2);

  // Rounds every parameter to the nearest 32-bit float.
  void round_to_float32();

 private:
  EmbeddingRegistry registry_;
  ModelDims dims_;
  std::vector<Dense> group_proj_;
  AttentionStage self_stage_;
  AttentionStage vanilla_stage_;
};

// Eval-mode logits for a list of samples, scored in one batch.
std::vector<double> score_samples(AtrankModel& model, std::span<const Sample> samples);

}  // namespace atrank
