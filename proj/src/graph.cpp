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

#include "atrank/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

#include "atrank/error.hpp"

namespace atrank {

namespace {

// detail is a string or a callable producing one, evaluated only on failure.
template <typename Detail>
void require(bool cond, const char* op, Detail&& detail) {
  if (cond) return;
  if constexpr (std::is_invocable_v<Detail>) throw InvalidArgument(std::string(op) + ": " + detail());
  else throw InvalidArgument(std::string(op) + ": " + std::string(detail));
}

void require_rank2(const Tensor& t, const char* op) {
  require(t.shape().size() == 2, op, [&] {
    return "expected a matrix, got shape " + shape_to_string(t.shape());
  });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), op, [&] {
    return "shape mismatch " + shape_to_string(a.shape()) + " vs " +
           shape_to_string(b.shape());
  });
}

// C (+)= A * B, A: n x k, B: k x m.
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = pc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (+)= A * B^T, A: n x k, B: m x k.
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = pb + j * k;
      double acc[4] = {0.0, 0.0, 0.0, 0.0};
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4)
        for (std::size_t q = 0; q < 4; ++q) acc[q] += arow[p + q] * brow[p + q];
      for (; p < k; ++p) acc[0] += arow[p] * brow[p];
      pc[i * m + j] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
    }
  }
}

// C (+)= A^T * B, A: k x n, B: k x m.
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = pb + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = pa[p * n + i];
      if (av == 0.0) continue;
      double* crow = pc + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

double counter_uniform(std::uint64_t seed, std::uint64_t step,
                       std::uint64_t tensor_id, std::uint64_t index) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ step);
  h = splitmix64(h ^ tensor_id);
  h = splitmix64(h ^ index);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// EmbeddingTable

EmbeddingTable::EmbeddingTable(std::string name, std::size_t rows, std::size_t width)
    : name_(std::move(name)), value_({rows, width}) {
  if (rows == 0 || width == 0) {
    throw InvalidArgument("embedding table '" + name_ + "' must be non-empty");
  }
}

std::span<double> EmbeddingTable::grad_row(std::size_t row) {
  const std::size_t w = width();
  auto [it, inserted] = slot_.try_emplace(row, touched_.size());
  if (inserted) {
    touched_.push_back(row);
    grad_buf_.resize(grad_buf_.size() + w, 0.0);
  }
  return std::span<double>(grad_buf_).subspan(it->second * w, w);
}

std::span<const double> EmbeddingTable::grad_of(std::size_t row) const {
  auto it = slot_.find(row);
  if (it == slot_.end()) return {};
  return std::span<const double>(grad_buf_).subspan(it->second * width(), width());
}

void EmbeddingTable::zero_grad() {
  touched_.clear();
  grad_buf_.clear();
  slot_.clear();
}

// ---------------------------------------------------------------------------
// Graph bookkeeping

Var Graph::push(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Graph::Node& Graph::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) throw InvalidArgument("invalid graph variable");
  return nodes_[v.id];
}

const Graph::Node& Graph::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw InvalidArgument("invalid graph variable");
  return nodes_[v.id];
}

Tensor& Graph::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

bool Graph::tracking(std::initializer_list<Var> inputs) const {
  if (!grad_enabled_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [&](Var v) { return nodes_[v.id].requires_grad;
  });
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
}

void Graph::reset() {
  nodes_.clear();
  gathered_.clear();
  backward_done_ = false;
}

void Graph::backward(Var loss) {
  if (!grad_enabled_) throw InvalidArgument("backward: graph was built without gradients");
  if (backward_done_) throw InvalidArgument("backward: already called; reset the graph first");
  const Tensor& lv = node(loss).value;
  require(lv.size() == 1, "backward", [&] {
    return "loss must be a scalar, got " + shape_to_string(lv.shape());
  });
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this);
  }
}

// ---------------------------------------------------------------------------
// Leaves

Var Graph::constant(Tensor value) { return push(std::move(value), false); }

Var Graph::input(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad);
}

Var Graph::parameter(Parameter& p) {
  Var out = push(p.value, true);
  if (grad_enabled_) {
    nodes_[out.id].backward = [out, &p](Graph& g) {
      const Tensor& gr = g.nodes_[out.id].grad;
      if (p.grad.empty()) p.grad = Tensor(p.value.shape());
      axpy(1.0, gr.data(), p.grad.data());
    };
  }
  return out;
}

Var Graph::gather(EmbeddingTable& table, std::span<const std::size_t> ids) {
  const std::size_t w = table.width();
  Tensor out({ids.size(), w});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    require(ids[r] < table.rows(), "gather", [&] {
      return "row " + std::to_string(ids[r]) + " out of range for table '" + table.name() + "'";
    });
    auto src = table.value().row(ids[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  Var v = push(std::move(out), true);

  auto it = std::find_if(gathered_.begin(), gathered_.end(),
                         [&](const GatheredRows& g) { return g.table == &table;
  });
  if (it == gathered_.end()) {
    gathered_.push_back({&table, {}, {}});
    it = std::prev(gathered_.end());
  }
  for (std::size_t id : ids) {
    if (it->seen.insert(id).second) it->rows.push_back(id);
  }
  if (!grad_enabled_) return v;

  std::vector<std::size_t> rows(ids.begin(), ids.end());
  nodes_[v.id].backward = [v, &table, rows = std::move(rows)](Graph& g) {
    const Tensor& gr = g.nodes_[v.id].grad;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      axpy(1.0, gr.row(r), table.grad_row(rows[r]));
    }
  };
  return v;
}

// ---------------------------------------------------------------------------
// Linear algebra

Var Graph::matmul(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  require(A.cols() == B.rows(), "matmul", [&] {
    return "inner dimension mismatch " + shape_to_string(A.shape()) + " * " +
           shape_to_string(B.shape());
  });
  Tensor C({A.rows(), B.cols()});
  gemm_nn(A, B, C);
  const bool track = tracking({a, b});
  Var out = push(std::move(C), track);
  if (track) {
    nodes_[out.id].backward = [a, b, out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      if (g.needs_grad(a)) gemm_nt(G, g.nodes_[b.id].value, g.grad_buffer(a));
      if (g.needs_grad(b)) gemm_tn(g.nodes_[a.id].value, G, g.grad_buffer(b));
    };
  }
  return out;
}

Var Graph::matmul_nt(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  require_rank2(A, "matmul_nt");
  require_rank2(B, "matmul_nt");
  require(A.cols() == B.cols(), "matmul_nt", [&] {
    return "inner dimension mismatch " + shape_to_string(A.shape()) + " * " +
           shape_to_string(B.shape()) + "^T";
  });
  Tensor C({A.rows(), B.rows()});
  gemm_nt(A, B, C);
  const bool track = tracking({a, b});
  Var out = push(std::move(C), track);
  if (track) {
    nodes_[out.id].backward = [a, b, out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      if (g.needs_grad(a)) gemm_nn(G, g.nodes_[b.id].value, g.grad_buffer(a));
      if (g.needs_grad(b)) gemm_tn(G, g.nodes_[a.id].value, g.grad_buffer(b));
    };
  }
  return out;
}

Var Graph::transpose(Var a) {
  const Tensor& A = node(a).value;
  require_rank2(A, "transpose");
  Tensor T({A.cols(), A.rows()});
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) T(j, i) = A(i, j);
  const bool track = tracking({a});
  Var out = push(std::move(T), track);
  if (track) {
    nodes_[out.id].backward = [a, out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      Tensor& GA = g.grad_buffer(a);
      for (std::size_t i = 0; i < G.rows(); ++i)
        for (std::size_t j = 0; j < G.cols(); ++j) GA(j, i) += G(i, j);
    };
  }
  return out;
}

Var Graph::add(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  require_same_shape(A, B, "add");
  Tensor C = A;
  axpy(1.0, B.data(), C.data());
  const bool track = tracking({a, b});
  Var out = push(std::move(C), track);
  if (track) {
    nodes_[out.id].backward = [a, b, out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      if (g.needs_grad(a)) axpy(1.0, G.data(), g.grad_buffer(a).data());
      if (g.needs_grad(b)) axpy(1.0, G.data(), g.grad_buffer(b).data());
    };
  }
  return out;
}

Var Graph::add_row(Var a, Var bias) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(bias).value;
  require_rank2(A, "add_row");
  require(B.rows() == 1 && B.cols() == A.cols(), "add_row", [&] {
    return "bias " + shape_to_string(B.shape()) + " does not broadcast over " +
           shape_to_string(A.shape());
  });
  Tensor C = A;
  for (std::size_t r = 0; r < C.rows(); ++r) axpy(1.0, B.data(), C.row(r));
  const bool track = tracking({a, bias});
  Var out = push(std::move(C), track);
  if (track) {
    nodes_[out.id].backward = [a, bias, out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      if (g.needs_grad(a)) axpy(1.0, G.data(), g.grad_buffer(a).data());
      if (g.needs_grad(bias)) {
        Tensor& GB = g.grad_buffer(bias);
        for (std::size_t r = 0; r < G.rows(); ++r) axpy(1.0, G.row(r), GB.data());
      }
    };
  }
  return out;
}

Var Graph::mul(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  require_same_shape(A, B, "mul");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  const bool track = tracking({a, b});
  Var out = push(std::move(C), track);
  if (track) {
    nodes_[out.id].backward = [a, b, out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      if (g.needs_grad(a)) {
        Tensor& GA = g.grad_buffer(a);
        const Tensor& Bv = g.nodes_[b.id].value;
        for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i] * Bv[i];
      }
      if (g.needs_grad(b)) {
        Tensor& GB = g.grad_buffer(b);
        const Tensor& Av = g.nodes_[a.id].value;
        for (std::size_t i = 0; i < G.size(); ++i) GB[i] += G[i] * Av[i];
      }
    };
  }
  return out;
}

Var Graph::scale(Var a, double c) {
  Tensor C = node(a).value;
  for (double& v : C.data()) v *= c;
  const bool track = tracking({a});
  Var out = push(std::move(C), track);
  if (track) {
    nodes_[out.id].backward = [a, c, out](Graph& g) {
      axpy(c, g.nodes_[out.id].grad.data(), g.grad_buffer(a).data());
    };
  }
  return out;
}

Var Graph::relu(Var a) {
  Tensor C = node(a).value;
  for (double& v : C.data()) v = v > 0.0 ? v : 0.0;
  const bool track = tracking({a});
  Var out = push(std::move(C), track);
  if (track) {
    nodes_[out.id].backward = [a, out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      const Tensor& Y = g.nodes_[out.id].value;
      Tensor& GA = g.grad_buffer(a);
      for (std::size_t i = 0; i < G.size(); ++i)
        if (Y[i] > 0.0) GA[i] += G[i];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structure

Var Graph::concat(std::span<const Var> parts, int axis) {
  require(!parts.empty(), "concat", "no inputs");
  require(axis == 0 || axis == 1, "concat", "axis must be 0 or 1");
  std::vector<Var> ins(parts.begin(), parts.end());
  std::size_t rows = 0, cols = 0;
  const Tensor& first = node(ins[0]).value;
  for (Var v : ins) {
    const Tensor& t = node(v).value;
    require_rank2(t, "concat");
    if (axis == 0) {
      require(t.cols() == first.cols(), "concat", "column count mismatch on axis 0");
      rows += t.rows();
    } else {
      require(t.rows() == first.rows(), "concat", "row count mismatch on axis 1");
      cols += t.cols();
    }
  }
  if (axis == 0) cols = first.cols(); else rows = first.rows();
  Tensor C({rows, cols});
  std::size_t offset = 0;
  for (Var v : ins) {
    const Tensor& t = nodes_[v.id].value;
    if (axis == 0) {
      std::copy(t.data().begin(), t.data().end(), C.data().begin() + offset * cols);
      offset += t.rows();
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        auto src = t.row(r);
        std::copy(src.begin(), src.end(), C.row(r).begin() + offset);
      }
      offset += t.cols();
    }
  }
  bool track = false;
  if (grad_enabled_) {
    for (Var v : ins) track = track || nodes_[v.id].requires_grad;
  }
  Var out = push(std::move(C), track);
  if (track) {
    nodes_[out.id].backward = [ins = std::move(ins), axis, out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      std::size_t offset = 0;
      for (Var v : ins) {
        const Tensor& t = g.nodes_[v.id].value;
        if (g.needs_grad(v)) {
          Tensor& GV = g.grad_buffer(v);
          if (axis == 0) {
            axpy(1.0, G.data().subspan(offset * G.cols(), t.size()), GV.data());
          } else {
            for (std::size_t r = 0; r < t.rows(); ++r)
              axpy(1.0, G.row(r).subspan(offset, t.cols()), GV.row(r));
          }
        }
        offset += axis == 0 ? t.rows() : t.cols();
      }
    };
  }
  return out;
}

Var Graph::slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = node(a).value;
  require_rank2(A, "slice_rows");
  require(begin <= end && end <= A.rows(), "slice_rows", "range out of bounds");
  const std::size_t cols = A.cols();
  Tensor C({end - begin, cols});
  std::copy(A.data().begin() + begin * cols, A.data().begin() + end * cols,
            C.data().begin());
  const bool track = tracking({a});
  Var out = push(std::move(C), track);
  if (track) {
    nodes_[out.id].backward = [a, begin, out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      Tensor& GA = g.grad_buffer(a);
      axpy(1.0, G.data(), GA.data().subspan(begin * GA.cols(), G.size()));
    };
  }
  return out;
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = node(a).value;
  require_rank2(A, "slice_cols");
  require(begin <= end && end <= A.cols(), "slice_cols", "range out of bounds");
  Tensor C({A.rows(), end - begin});
  for (std::size_t r = 0; r < A.rows(); ++r) {
    auto src = A.row(r).subspan(begin, end - begin);
    std::copy(src.begin(), src.end(), C.row(r).begin());
  }
  const bool track = tracking({a});
  Var out = push(std::move(C), track);
  if (track) {
    nodes_[out.id].backward = [a, begin, out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      Tensor& GA = g.grad_buffer(a);
      for (std::size_t r = 0; r < G.rows(); ++r)
        axpy(1.0, G.row(r), GA.row(r).subspan(begin, G.cols()));
    };
  }
  return out;
}

Var Graph::take_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& A = node(a).value;
  require_rank2(A, "take_rows");
  Tensor C({rows.size(), A.cols()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < A.rows(), "take_rows", "row index out of range");
    auto src = A.row(rows[r]);
    std::copy(src.begin(), src.end(), C.row(r).begin());
  }
  const bool track = tracking({a});
  Var out = push(std::move(C), track);
  if (track) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    nodes_[out.id].backward = [a, idx = std::move(idx), out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      Tensor& GA = g.grad_buffer(a);
      for (std::size_t r = 0; r < idx.size(); ++r) axpy(1.0, G.row(r), GA.row(idx[r]));
    };
  }
  return out;
}

Var Graph::mask_rows(Var a, std::span<const unsigned char> valid) {
  const Tensor& A = node(a).value;
  require_rank2(A, "mask_rows");
  require(valid.size() == A.rows(), "mask_rows", "mask length does not match row count");
  Tensor C = A;
  for (std::size_t r = 0; r < C.rows(); ++r)
    if (!valid[r]) std::fill(C.row(r).begin(), C.row(r).end(), 0.0);
  const bool track = tracking({a});
  Var out = push(std::move(C), track);
  if (track) {
    std::vector<unsigned char> keep(valid.begin(), valid.end());
    nodes_[out.id].backward = [a, keep = std::move(keep), out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      Tensor& GA = g.grad_buffer(a);
      for (std::size_t r = 0; r < G.rows(); ++r)
        if (keep[r]) axpy(1.0, G.row(r), GA.row(r));
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

Var Graph::softmax_masked(Var scores, const Mask& mask) {
  const Tensor& S = node(scores).value;
  require_rank2(S, "softmax_masked");
  require(mask.rows() == S.rows() && mask.cols() == S.cols(), "softmax_masked", [&] {
    return "mask shape does not match scores " + shape_to_string(S.shape());
  });
  Tensor Y(S.shape());
  for (std::size_t r = 0; r < S.rows(); ++r) {
    // Masked positions behave as a -inf score: they contribute exactly zero
    // weight and receive zero gradient.
    // A NaN score makes the whole row NaN so the divergence check sees it.
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < S.cols(); ++c) {
      if (!mask(r, c)) continue;
      any = true;
      mx = std::isnan(S(r, c)) ? S(r, c) : std::max(mx, S(r, c));
    }
    if (!any) throw InvalidArgument("softmax_masked: empty attention support");
    double total = 0.0;
    for (std::size_t c = 0; c < S.cols(); ++c) {
      if (mask(r, c)) {
        const double e = std::exp(S(r, c) - mx);
        Y(r, c) = e;
        total += e;
      }
    }
    const double inv = 1.0 / total;
    for (std::size_t c = 0; c < S.cols(); ++c) Y(r, c) *= inv;
  }
  const bool track = tracking({scores});
  Var out = push(std::move(Y), track);
  if (track) {
    nodes_[out.id].backward = [scores, out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      const Tensor& Yv = g.nodes_[out.id].value;
      Tensor& GS = g.grad_buffer(scores);
      for (std::size_t r = 0; r < G.rows(); ++r) {
        double inner = 0.0;
        for (std::size_t c = 0; c < G.cols(); ++c) inner += Yv(r, c) * G(r, c);
        for (std::size_t c = 0; c < G.cols(); ++c)
          GS(r, c) += Yv(r, c) * (G(r, c) - inner);
      }
    };
  }
  return out;
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = node(x).value;
  const Tensor& Gm = node(gamma).value;
  const Tensor& Bt = node(beta).value;
  require_rank2(X, "layer_norm");
  const std::size_t d = X.cols();
  require(d >= 2, "layer_norm", "feature width must be at least 2");
  require(eps > 0.0, "layer_norm", "eps must be positive");
  require(Gm.size() == d && Bt.size() == d, "layer_norm",
          "gain/bias width does not match input width");

  Tensor Y(X.shape());
  Tensor xhat(X.shape());
  std::vector<double> inv_std(X.rows());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto row = X.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (row[c] - mean) * inv;
      Y(r, c) = Gm[c] * xhat(r, c) + Bt[c];
    }
  }
  const bool track = tracking({x, gamma, beta});
  Var out = push(std::move(Y), track);
  if (track) {
    nodes_[out.id].backward = [x, gamma, beta, out, xhat = std::move(xhat),
                               inv_std = std::move(inv_std)](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      const Tensor& Gm = g.nodes_[gamma.id].value;
      const std::size_t d = G.cols();
      if (g.needs_grad(gamma)) {
        Tensor& GG = g.grad_buffer(gamma);
        for (std::size_t r = 0; r < G.rows(); ++r)
          for (std::size_t c = 0; c < d; ++c) GG[c] += G(r, c) * xhat(r, c);
      }
      if (g.needs_grad(beta)) {
        Tensor& GB = g.grad_buffer(beta);
        for (std::size_t r = 0; r < G.rows(); ++r) axpy(1.0, G.row(r), GB.data());
      }
      if (g.needs_grad(x)) {
        Tensor& GX = g.grad_buffer(x);
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < G.rows(); ++r) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            dxhat[c] = G(r, c) * Gm[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat(r, c);
          }
          mean_d /= static_cast<double>(d);
          mean_dx /= static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c)
            GX(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
        }
      }
    };
  }
  return out;
}

Var Graph::dropout(Var x, double rate, bool training, std::uint64_t seed,
                   std::uint64_t step) {
  require(rate >= 0.0 && rate < 1.0, "dropout", "rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const Tensor& X = node(x).value;
  const std::uint64_t tensor_id = nodes_.size();
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor factor(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    factor[i] = counter_uniform(seed, step, tensor_id, i) >= rate ? keep_scale : 0.0;
  }
  Tensor Y = X;
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= factor[i];
  const bool track = tracking({x});
  Var out = push(std::move(Y), track);
  if (track) {
    nodes_[out.id].backward = [x, out, factor = std::move(factor)](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      Tensor& GX = g.grad_buffer(x);
      for (std::size_t i = 0; i < G.size(); ++i) GX[i] += G[i] * factor[i];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

Var Graph::sum(Var a) {
  const Tensor& A = node(a).value;
  double total = 0.0;
  for (double v : A.data()) total += v;
  const bool track = tracking({a});
  Var out = push(Tensor::scalar(total), track);
  if (track) {
    nodes_[out.id].backward = [a, out](Graph& g) {
      const double gv = g.nodes_[out.id].grad[0];
      for (double& v : g.grad_buffer(a).data()) v += gv;
    };
  }
  return out;
}

Var Graph::mean(Var a) {
  const std::size_t n = node(a).value.size();
  require(n > 0, "mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var Graph::dot(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  require(A.size() == B.size(), "dot", [&] {
    return "width mismatch " + shape_to_string(A.shape()) + " vs " +
           shape_to_string(B.shape());
  });
  double acc = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) acc += A[i] * B[i];
  const bool track = tracking({a, b});
  Var out = push(Tensor::scalar(acc), track);
  if (track) {
    nodes_[out.id].backward = [a, b, out](Graph& g) {
      const double gv = g.nodes_[out.id].grad[0];
      if (g.needs_grad(a)) axpy(gv, g.nodes_[b.id].value.data(), g.grad_buffer(a).data());
      if (g.needs_grad(b)) axpy(gv, g.nodes_[a.id].value.data(), g.grad_buffer(b).data());
    };
  }
  return out;
}

Var Graph::rowwise_dot(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  require_same_shape(A, B, "rowwise_dot");
  require_rank2(A, "rowwise_dot");
  Tensor C({A.rows(), 1});
  for (std::size_t r = 0; r < A.rows(); ++r) {
    auto ar = A.row(r), br = B.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < ar.size(); ++c) acc += ar[c] * br[c];
    C[r] = acc;
  }
  const bool track = tracking({a, b});
  Var out = push(std::move(C), track);
  if (track) {
    nodes_[out.id].backward = [a, b, out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      const Tensor& Av = g.nodes_[a.id].value;
      const Tensor& Bv = g.nodes_[b.id].value;
      for (std::size_t r = 0; r < G.rows(); ++r) {
        if (g.needs_grad(a)) axpy(G[r], Bv.row(r), g.grad_buffer(a).row(r));
        if (g.needs_grad(b)) axpy(G[r], Av.row(r), g.grad_buffer(b).row(r));
      }
    };
  }
  return out;
}

Var Graph::masked_mean_rows(Var a, std::span<const unsigned char> valid) {
  const Tensor& A = node(a).value;
  require_rank2(A, "masked_mean_rows");
  require(valid.size() == A.rows(), "masked_mean_rows", "mask length does not match row count");
  std::size_t count = 0;
  for (unsigned char v : valid) count += v ? 1 : 0;
  require(count > 0, "masked_mean_rows", "empty attention support");
  const double inv = 1.0 / static_cast<double>(count);
  Tensor C({1, A.cols()});
  for (std::size_t r = 0; r < A.rows(); ++r)
    if (valid[r]) axpy(1.0, A.row(r), C.data());
  for (double& v : C.data()) v *= inv;
  const bool track = tracking({a});
  Var out = push(std::move(C), track);
  if (track) {
    std::vector<unsigned char> keep(valid.begin(), valid.end());
    nodes_[out.id].backward = [a, inv, keep = std::move(keep), out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      Tensor& GA = g.grad_buffer(a);
      for (std::size_t r = 0; r < GA.rows(); ++r)
        if (keep[r]) axpy(inv, G.data(), GA.row(r));
    };
  }
  return out;
}

Var Graph::sigmoid_cross_entropy(Var logits, std::span<const double> labels) {
  const Tensor& Z = node(logits).value;
  require(labels.size() == Z.size(), "sigmoid_cross_entropy", "label count mismatch");
  Tensor L(Z.shape());
  for (std::size_t i = 0; i < Z.size(); ++i) {
    const double z = Z[i], y = labels[i];
    require(y == 0.0 || y == 1.0, "sigmoid_cross_entropy", "labels must be 0 or 1");
    L[i] = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  const bool track = tracking({logits});
  Var out = push(std::move(L), track);
  if (track) {
    std::vector<double> ys(labels.begin(), labels.end());
    nodes_[out.id].backward = [logits, ys = std::move(ys), out](Graph& g) {
      const Tensor& G = g.nodes_[out.id].grad;
      const Tensor& Zv = g.nodes_[logits.id].value;
      Tensor& GZ = g.grad_buffer(logits);
      for (std::size_t i = 0; i < G.size(); ++i)
        GZ[i] += G[i] * (stable_sigmoid(Zv[i]) - ys[i]);
    };
  }
  return out;
}

Var Graph::l2_penalty(std::span<Parameter* const> params, double lambda) {
  double total = 0.0;
  for (const Parameter* p : params)
    for (double v : p->value.data()) total += v * v;
  for (const GatheredRows& gr : gathered_) {
    for (std::size_t r : gr.rows)
      for (double v : gr.table->value().row(r)) total += v * v;
  }
  Var out = push(Tensor::scalar(lambda * total), grad_enabled_);
  if (grad_enabled_) {
    std::vector<Parameter*> ps(params.begin(), params.end());
    std::vector<std::pair<EmbeddingTable*, std::vector<std::size_t>>> rows;
    for (const GatheredRows& gr : gathered_) rows.emplace_back(gr.table, gr.rows);
    nodes_[out.id].backward = [ps = std::move(ps), rows = std::move(rows), lambda,
                               out](Graph& g) {
      const double c = 2.0 * lambda * g.nodes_[out.id].grad[0];
      for (Parameter* p : ps) {
        if (p->grad.empty()) p->grad = Tensor(p->value.shape());
        axpy(c, p->value.data(), p->grad.data());
      }
      for (auto& [table, rs] : rows)
        for (std::size_t r : rs) axpy(c, table->value().row(r), table->grad_row(r));
    };
  }
  return out;
}

}  // namespace atrank
