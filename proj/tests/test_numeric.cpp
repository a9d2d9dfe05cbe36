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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

#include "atrank/error.hpp"
#include "atrank/graph.hpp"
#include "testing.hpp"

using namespace atrank;
using atrank::testing::finite_difference_error;
using atrank::testing::random_tensor;

namespace {

Tensor row(std::initializer_list<double> v) {
  return Tensor({1, v.size()}, std::vector<double>(v));
}

// Random inputs, a scalar loss <out, R> for fixed random R, and a central
// difference check of d loss / d input for every input.
double op_gradient_error(std::vector<Tensor> inputs,
                         const std::function<Var(Graph&, std::vector<Var>&)>& build,
                         std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  Tensor weights;
  auto loss_of = [&](Graph& g, std::vector<Var>& vars) {
    Var out = build(g, vars);
    if (weights.empty()) weights = random_tensor(g.value(out).rows(), g.value(out).cols(), rng);
    return g.sum(g.mul(out, g.constant(weights)));
  };
  std::vector<Tensor> grads;
  {
    Graph g(true);
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(g.input(t));
    g.backward(loss_of(g, vars));
    for (Var v : vars) grads.push_back(g.grad(v));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    worst = std::max(worst, finite_difference_error(inputs[i].data(), grads[i].data(), [&] {
      Graph g(false);
      std::vector<Var> vars;
      for (const Tensor& t : inputs) vars.push_back(g.constant(t));
      return g.value(loss_of(g, vars)).item();
    }));
  }
  return worst;
}

// Entries bounded away from zero so relu kinks stay out of the stencil.
Tensor away_from_zero(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Tensor t = random_tensor(r, c, rng);
  for (double& v : t.data()) v += v >= 0 ? 0.1 : -0.1;
  return t;
}

}  // namespace

TEST_CASE("tensor shape must match data length") {
  CHECK(Tensor({2, 3}).size() == 6);
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), InvalidArgument);
}

TEST_CASE("softmax_masked examples") {
  Graph g(false);
  SUBCASE("uniform scores") {
    const Tensor& y = g.value(g.softmax_masked(g.constant(row({0, 0, 0})), Mask(1, 3)));
    for (double v : y.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("masked second entry") {
    Mask m(1, 2);
    m.set(0, 1, false);
    for (double x : {-30.0, 0.0, 7.5})
      for (double y : {-4.0, 12.0}) {
        const Tensor& p = g.value(g.softmax_masked(g.constant(row({x, y})), m));
        CHECK(p(0, 0) == 1.0);
        CHECK(p(0, 1) == 0.0);
      }
  }
  SUBCASE("log 2 versus 0") {
    const Tensor& p = g.value(g.softmax_masked(g.constant(row({std::log(2.0), 0.0})), Mask(1, 2)));
    const double z = std::exp(std::log(2.0)) + std::exp(0.0);
    CHECK(p(0, 0) == doctest::Approx(std::exp(std::log(2.0)) / z).epsilon(1e-14));
    CHECK(p(0, 1) == doctest::Approx(1.0 / z).epsilon(1e-14));
  }
  SUBCASE("empty support") {
    try {
      g.softmax_masked(g.constant(row({1, 2})), Mask(1, 2, false));
      FAIL("expected an error");
    } catch (const InvalidArgument& e) {
      CHECK(std::string(e.what()).find("empty attention support") != std::string::npos);
    }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(g.softmax_masked(g.constant(row({1, 2})), Mask(1, 3)), InvalidArgument);
  }
  SUBCASE("a NaN score poisons its row instead of throwing") {
    for (int at = 0; at < 3; ++at) {
      Tensor v = row({1.0, 2.0, 3.0});
      v(0, at) = std::numeric_limits<double>::quiet_NaN();
      const Tensor& p = g.value(g.softmax_masked(g.constant(v), Mask(1, 3)));
      for (double x : p.data()) CHECK(std::isnan(x));
    }
  }
}

TEST_CASE("softmax_masked rows are stochastic, masked exactly and shift invariant") {
  std::mt19937_64 rng(17);
  std::bernoulli_distribution keep(0.6);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor s = random_tensor(4, 7, rng, 20.0);
    Mask m(4, 7);
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 7; ++c) m.set(r, c, keep(rng));
      m.set(r, trial % 7, true);
    }
    Tensor shifted = s;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 7; ++c) shifted(r, c) += 3.0 * static_cast<double>(r) - 40.0;
    Graph g(false);
    const Tensor& p = g.value(g.softmax_masked(g.constant(s), m));
    const Tensor& q = g.value(g.softmax_masked(g.constant(shifted), m));
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        total += p(r, c);
        if (!m(r, c)) CHECK(p(r, c) == 0.0);
        CHECK(std::fabs(p(r, c) - q(r, c)) < 1e-12);
      }
      CHECK(std::fabs(total - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("softmax_masked stays finite for extreme scores") {
  Graph g(false);
  const Tensor& p = g.value(g.softmax_masked(g.constant(row({1e6, -1e6, 3.0})), Mask(1, 3)));
  CHECK(p.all_finite());
  CHECK(p(0, 0) == 1.0);
}

TEST_CASE("layer_norm examples") {
  Graph g(false);
  Var one = g.constant(row({1, 1}));
  Var zero = g.constant(row({0, 0}));
  SUBCASE("constant input") {
    const Tensor& y = g.value(g.layer_norm(g.constant(row({4, 4, 4})), g.constant(row({1, 1, 1})),
                                           g.constant(row({0, 0, 0})), 1e-6));
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("already normalized") {
    const Tensor& y = g.value(g.layer_norm(g.constant(row({1, -1})), one, zero, 1e-14));
    CHECK(y(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("affine") {
    // mean 1, variance 1: (x - 1) * 2 + 1
    const Tensor& y = g.value(g.layer_norm(g.constant(row({2, 0})), g.constant(row({2, 2})),
                                           g.constant(row({1, 1})), 1e-14));
    CHECK(y(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(y(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
  }
}

TEST_CASE("layer_norm output is standardized before the affine map") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor(3, 9, rng, 50.0);
    Graph g(false);
    const Tensor& y = g.value(g.layer_norm(g.constant(x), g.constant(Tensor({1, 9}, 1.0)),
                                           g.constant(Tensor({1, 9}, 0.0)), 1e-12));
    for (std::size_t r = 0; r < 3; ++r) {
      double mean = 0.0, var = 0.0;
      for (double v : y.row(r)) mean += v / 9.0;
      for (double v : y.row(r)) var += (v - mean) * (v - mean) / 9.0;
      CHECK(std::fabs(mean) < 1e-6);
      CHECK(std::fabs(var - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("sigmoid_cross_entropy examples") {
  Graph g(true);
  Var z = g.input(row({0.0, 50.0, 0.0, -3.0, 2.0}));
  const std::vector<double> y{1, 1, 0, 1, 0};
  Var l = g.sigmoid_cross_entropy(z, y);
  const Tensor& v = g.value(l);
  CHECK(v[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(v[1] < 1e-20);
  CHECK(v[2] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  g.backward(g.sum(l));
  const Tensor dz = g.grad(z);
  const std::vector<double> zs{0.0, 50.0, 0.0, -3.0, 2.0};
  for (std::size_t i = 0; i < zs.size(); ++i)
    CHECK(dz[i] == doctest::Approx(1.0 / (1.0 + std::exp(-zs[i])) - y[i]).epsilon(1e-12));
}

TEST_CASE("backward examples") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(3, 4, rng);
  SUBCASE("sum gives ones") {
    Graph g(true);
    Var v = g.input(x);
    g.backward(g.sum(v));
    const Tensor gv = g.grad(v);
    for (double d : gv.data()) CHECK(d == 1.0);
  }
  SUBCASE("dot(x, x) gives 2x") {
    Graph g(true);
    Var v = g.input(x);
    g.backward(g.dot(v, v));
    const Tensor d = g.grad(v);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(d[i] == 2.0 * x[i]);
  }
  SUBCASE("loss gradient is one and backward runs once") {
    Graph g(true);
    Var v = g.input(x);
    Var l = g.sum(v);
    g.backward(l);
    CHECK(g.grad(l).item() == 1.0);
    CHECK_THROWS_AS(g.backward(l), InvalidArgument);
    g.reset();
    Var w = g.input(x);
    CHECK_NOTHROW(g.backward(g.sum(w)));
  }
  SUBCASE("non-scalar loss") {
    Graph g(true);
    CHECK_THROWS_AS(g.backward(g.input(x)), InvalidArgument);
  }
}

TEST_CASE("primitive examples") {
  Graph g(false);
  const Tensor& r = g.value(g.relu(g.constant(row({-1, 0, 2}))));
  CHECK(r == row({0, 0, 2}));
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor(3, 5, rng);
  CHECK(g.value(g.dropout(g.constant(a), 0.0, true, 1, 1)) == a);
  CHECK(g.value(g.matmul(g.constant(Tensor::identity(3)), g.constant(a))) == a);
  CHECK_THROWS_AS(g.matmul(g.constant(a), g.constant(a)), InvalidArgument);
  CHECK_THROWS_AS(g.add(g.constant(a), g.constant(Tensor({5, 3}))), InvalidArgument);
}

TEST_CASE("every differentiable op matches central differences") {
  std::mt19937_64 rng(29);
  auto m = [&](std::size_t r, std::size_t c) { return random_tensor(r, c, rng); };
  const double tol = 1e-4;
  CHECK(op_gradient_error({m(3, 4), m(4, 2)}, [](Graph& g, auto& v) { return g.matmul(v[0], v[1]); }) < tol);
  CHECK(op_gradient_error({m(3, 4), m(5, 4)}, [](Graph& g, auto& v) { return g.matmul_nt(v[0], v[1]); }) < tol);
  CHECK(op_gradient_error({m(3, 4)}, [](Graph& g, auto& v) { return g.transpose(v[0]); }) < tol);
  CHECK(op_gradient_error({m(3, 4), m(3, 4)}, [](Graph& g, auto& v) { return g.add(v[0], v[1]); }) < tol);
  CHECK(op_gradient_error({m(3, 4), m(1, 4)}, [](Graph& g, auto& v) { return g.add_row(v[0], v[1]); }) < tol);
  CHECK(op_gradient_error({m(3, 4), m(3, 4)}, [](Graph& g, auto& v) { return g.mul(v[0], v[1]); }) < tol);
  CHECK(op_gradient_error({m(3, 4)}, [](Graph& g, auto& v) { return g.scale(v[0], -2.5); }) < tol);
  CHECK(op_gradient_error({away_from_zero(3, 4, rng)}, [](Graph& g, auto& v) { return g.relu(v[0]); }) < tol);
  CHECK(op_gradient_error({m(2, 4), m(3, 4)}, [](Graph& g, auto& v) {
          return g.concat(std::vector<Var>{v[0], v[1]}, 0);
        }) < tol);
  CHECK(op_gradient_error({m(3, 2), m(3, 5)}, [](Graph& g, auto& v) {
          return g.concat(std::vector<Var>{v[0], v[1]}, 1);
        }) < tol);
  CHECK(op_gradient_error({m(5, 4)}, [](Graph& g, auto& v) { return g.slice_rows(v[0], 1, 4); }) < tol);
  CHECK(op_gradient_error({m(3, 6)}, [](Graph& g, auto& v) { return g.slice_cols(v[0], 2, 5); }) < tol);
  CHECK(op_gradient_error({m(4, 3)}, [](Graph& g, auto& v) {
          const std::vector<std::size_t> rows{3, 0, 3, 1, 3};
          return g.take_rows(v[0], rows);
        }) < tol);
  CHECK(op_gradient_error({m(4, 3)}, [](Graph& g, auto& v) {
          const std::vector<unsigned char> valid{1, 0, 1, 0};
          return g.mask_rows(v[0], valid);
        }) < tol);
  CHECK(op_gradient_error({m(3, 5)}, [](Graph& g, auto& v) {
          Mask mk(3, 5);
          mk.set(0, 4, false);
          mk.set(2, 0, false);
          mk.set(2, 1, false);
          return g.softmax_masked(v[0], mk);
        }) < tol);
  CHECK(op_gradient_error({m(3, 6), m(1, 6), m(1, 6)}, [](Graph& g, auto& v) {
          return g.layer_norm(v[0], v[1], v[2], 1e-6);
        }) < tol);
  CHECK(op_gradient_error({m(4, 5)}, [](Graph& g, auto& v) { return g.dropout(v[0], 0.3, true, 9, 2); }) < tol);
  CHECK(op_gradient_error({m(3, 4)}, [](Graph& g, auto& v) { return g.sum(v[0]); }) < tol);
  CHECK(op_gradient_error({m(3, 4)}, [](Graph& g, auto& v) { return g.mean(v[0]); }) < tol);
  CHECK(op_gradient_error({m(1, 6), m(1, 6)}, [](Graph& g, auto& v) { return g.dot(v[0], v[1]); }) < tol);
  CHECK(op_gradient_error({m(4, 3), m(4, 3)}, [](Graph& g, auto& v) { return g.rowwise_dot(v[0], v[1]); }) < tol);
  CHECK(op_gradient_error({m(5, 3)}, [](Graph& g, auto& v) {
          const std::vector<unsigned char> valid{1, 1, 0, 1, 0};
          return g.masked_mean_rows(v[0], valid);
        }) < tol);
  CHECK(op_gradient_error({m(1, 6)}, [](Graph& g, auto& v) {
          const std::vector<double> y{1, 0, 0, 1, 1, 0};
          return g.sigmoid_cross_entropy(v[0], y);
        }) < tol);
}

TEST_CASE("l2_penalty value and gradient") {
  Parameter w("w", Tensor({1, 1}, 2.0));
  Graph g(true);
  std::vector<Parameter*> ps{&w};
  Var l = g.l2_penalty(ps, 5e-5);
  CHECK(g.value(l).item() == doctest::Approx(2e-4).epsilon(1e-12));
  g.backward(l);
  CHECK(w.grad.item() == doctest::Approx(2.0 * 5e-5 * 2.0).epsilon(1e-12));
}

TEST_CASE("dropout is identity in eval mode and deterministic in training") {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor(20, 30, rng);
  Graph g(false);
  Var v = g.constant(x);
  CHECK(g.value(g.dropout(v, 0.5, false, 1, 1)) == x);

  auto draw = [&](std::uint64_t seed, std::uint64_t step) {
    Graph h(false);
    return h.value(h.dropout(h.constant(x), 0.25, true, seed, step));
  };
  const Tensor a = draw(7, 3);
  CHECK(a == draw(7, 3));
  CHECK(!(a == draw(7, 4)));
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (a[i] == 0.0) ++zeros;
    else CHECK(a[i] == doctest::Approx(x[i] / 0.75).epsilon(1e-15));
  }
  // 600 Bernoulli(0.25) draws: mean 150, sd ~10.6
  CHECK(zeros > 100);
  CHECK(zeros < 200);
}

TEST_CASE("gather gradient equals the dense one-hot product gradient") {
  std::mt19937_64 rng(8);
  for (std::size_t rows : {1u, 4u, 10u}) {
    EmbeddingTable table("t", rows, 3);
    table.value() = random_tensor(rows, 3, rng);
    std::uniform_int_distribution<std::size_t> pick(0, rows - 1);
    std::vector<std::size_t> ids(6);
    for (auto& i : ids) i = pick(rng);
    const Tensor r = random_tensor(ids.size(), 3, rng);

    Graph g(true);
    Var e = g.gather(table, ids);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t c = 0; c < 3; ++c) CHECK(g.value(e)(i, c) == table.value()(ids[i], c));
    g.backward(g.sum(g.mul(e, g.constant(r))));

    // d/dE <O E, R> = O^T R with O the one-hot selection matrix.
    for (std::size_t row_id = 0; row_id < rows; ++row_id) {
      std::vector<double> expected(3, 0.0);
      bool hit = false;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] != row_id) continue;
        hit = true;
        for (std::size_t c = 0; c < 3; ++c) expected[c] += r(i, c);
      }
      const auto got = table.grad_of(row_id);
      if (!hit) {
        CHECK(got.empty());
        continue;
      }
      REQUIRE(got.size() == 3);
      for (std::size_t c = 0; c < 3; ++c) CHECK(got[c] == doctest::Approx(expected[c]).epsilon(1e-14));
    }
  }
}

TEST_CASE("gather rejects out-of-range ids") {
  EmbeddingTable table("t", 3, 2);
  Graph g(true);
  const std::vector<std::size_t> ids{3};
  CHECK_THROWS_AS(g.gather(table, ids), InvalidArgument);
}
