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
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "atrank/tensor.hpp"

namespace atrank {

// Dense trainable parameter. The gradient buffer is lazily shaped like value.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}

  void zero_grad() { grad = Tensor(); }
  bool has_grad() const { return !grad.empty(); }
};

// Embedding matrix with a row-sparse gradient. Only rows gathered during a
// forward pass ever acquire gradient storage.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::string name, std::size_t rows, std::size_t width);

  const std::string& name() const noexcept { return name_; }
  std::size_t rows() const noexcept { return value_.rows(); }
  std::size_t width() const noexcept { return value_.cols(); }
  Tensor& value() noexcept { return value_; }
  const Tensor& value() const noexcept { return value_; }

  // Accumulation buffer for one row, created on first touch.
  std::span<double> grad_row(std::size_t row);
  // Empty span when the row has not been touched.
  std::span<const double> grad_of(std::size_t row) const;
  // Rows with gradient storage, in first-touch order.
  const std::vector<std::size_t>& touched_rows() const noexcept { return touched_; }
  void zero_grad();

 private:
  std::string name_;
  Tensor value_;
  std::vector<std::size_t> touched_;
  std::vector<double> grad_buf_;
  std::unordered_map<std::size_t, std::size_t> slot_;
};

// Handle to a node in a Graph.
struct Var {
  static constexpr std::uint32_t kInvalid = 0xffffffffu;
  std::uint32_t id = kInvalid;
  bool valid() const noexcept { return id != kInvalid; }
};

// Tape of applied operations. Nodes are appended in evaluation order, which
// is a topological order, and backward() walks the tape once in reverse.
//
// A graph built with grad_enabled == false records values only; it is the
// inference path and never allocates gradient closures.
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Leaves.
  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad = true);
  Var parameter(Parameter& p);
  // Rows of `table` selected by `ids`; gradient is scatter-added into the
  // table's sparse row buffers.
  Var gather(EmbeddingTable& table, std::span<const std::size_t> ids);

  // Linear algebra.
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var add_row(Var a, Var bias);  // bias is 1 x cols, broadcast over rows
  Var mul(Var a, Var b);         // elementwise
  Var scale(Var a, double c);
  Var relu(Var a);

  // Structure.
  Var concat(std::span<const Var> parts, int axis);
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var take_rows(Var a, std::span<const std::size_t> rows);
  Var mask_rows(Var a, std::span<const unsigned char> valid);

  // Normalization and regularization.
  Var softmax_masked(Var scores, const Mask& mask);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
  Var dropout(Var x, double rate, bool training, std::uint64_t seed,
              std::uint64_t step);

  // Reductions.
  Var sum(Var a);
  Var mean(Var a);
  Var dot(Var a, Var b);          // 1 x 1
  Var rowwise_dot(Var a, Var b);  // rows x 1
  Var masked_mean_rows(Var a, std::span<const unsigned char> valid);  // 1 x cols

  // Elementwise numerically stable sigmoid cross entropy; labels are 0 or 1
  // and match logits in size.
  Var sigmoid_cross_entropy(Var logits, std::span<const double> labels);

  // lambda * (sum of squares of `params` + sum of squares of every distinct
  // embedding row gathered so far in this graph).
  Var l2_penalty(std::span<Parameter* const> params, double lambda);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() target; zeros if the node got none.
  Tensor grad(Var v) const;

  // Populates gradients of every requires-grad node and accumulates them into
  // parameters and embedding tables. Throws if already run since reset().
  void backward(Var loss);
  void reset();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Graph&)> backward;
  };

  Var push(Tensor value, bool requires_grad);
  Node& node(Var v);
  const Node& node(Var v) const;
  Tensor& grad_buffer(Var v);
  bool needs_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool tracking(std::initializer_list<Var> inputs) const;

  bool grad_enabled_;
  bool backward_done_ = false;
  std::deque<Node> nodes_;  // stable references across push()
  struct GatheredRows {
    EmbeddingTable* table;
    std::vector<std::size_t> rows;
    std::unordered_set<std::size_t> seen;
  };
  // Distinct rows gathered per table, for the l2 penalty.
  std::vector<GatheredRows> gathered_;
};

// Counter-based uniform draw in [0, 1) keyed by (seed, step, tensor, index).
double counter_uniform(std::uint64_t seed, std::uint64_t step,
                       std::uint64_t tensor_id, std::uint64_t index);

}  // namespace atrank
