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
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "atrank/error.hpp"
#include "atrank/train.hpp"
#include "testing.hpp"

using namespace atrank;
namespace t = atrank::testing;

namespace {

std::vector<double> snapshot(AtrankModel& m) {
  std::vector<double> v;
  for (const Parameter* p : m.dense_parameters()) v.insert(v.end(), p->value.data().begin(), p->value.data().end());
  for (const EmbeddingTable* tb : m.registry().tables())
    v.insert(v.end(), tb->value().data().begin(), tb->value().data().end());
  return v;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const Dataset& small_dataset() {
  static const Dataset d = Dataset::from_log(generate_synthetic_multigroup(t::small_synth(40)));
  return d;
}

TrainConfig quick_config() {
  TrainConfig c = t::small_train_config();
  c.max_steps = 12;
  c.eval_negatives = 20;
  c.lr0 = 0.3;
  return c;
}

}  // namespace

TEST_CASE("lr_schedule examples") {
  TrainConfig c;
  c.lr0 = 1.0;
  c.decay_rate = 0.1;
  CHECK(lr_schedule(c, 0, 100) == 1.0);
  CHECK(lr_schedule(c, 100, 100) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(lr_schedule(c, 200, 100) == doctest::Approx(0.01).epsilon(1e-14));
  CHECK(lr_schedule(c, 50, 100) == doctest::Approx(std::sqrt(0.1)).epsilon(1e-14));
  CHECK_THROWS_AS(lr_schedule(c, 1, 0), InvalidArgument);
}

TEST_CASE("average_user_auc examples") {
  using U = std::vector<std::uint32_t>;
  using S = std::vector<double>;
  using L = std::vector<int>;
  SUBCASE("every positive above every negative") {
    const U u{0, 0, 0, 1, 1};
    const S s{0.9, 0.1, 0.2, 0.5, 0.4};
    const L l{1, 0, 0, 1, 0};
    const AucResult r = average_user_auc(u, s, l);
    CHECK(r.auc == 1.0);
    CHECK(r.users == 2);
  }
  SUBCASE("pos {0.9}, neg {0.95, 0.1}") {
    const U u{0, 0, 0};
    const S s{0.9, 0.95, 0.1};
    const L l{1, 0, 0};
    CHECK(average_user_auc(u, s, l).auc == 0.5);
  }
  SUBCASE("a constant scorer scores 0 under strict comparison") {
    const U u{0, 0, 0, 1, 1};
    const S s(5, 0.3);
    const L l{1, 0, 0, 1, 0};
    CHECK(average_user_auc(u, s, l).auc == 0.0);
  }
  SUBCASE("users missing a side are skipped and counted") {
    const U u{0, 0, 1, 2};
    const S s{0.9, 0.1, 0.5, 0.5};
    const L l{1, 0, 1, 0};
    const AucResult r = average_user_auc(u, s, l);
    CHECK(r.auc == 1.0);
    CHECK(r.users == 1);
    CHECK(r.skipped == 2);
  }
  SUBCASE("mismatched lengths") {
    const U u{0, 0};
    const S s{0.9};
    const L l{1, 0};
    CHECK_THROWS_AS(average_user_auc(u, s, l), InvalidArgument);
  }
}

TEST_CASE("average_user_auc matches pair enumeration and ignores scale") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + rng() % 60;
    std::vector<std::uint32_t> u(n);
    std::vector<double> s(n), s2(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      u[i] = static_cast<std::uint32_t>(rng() % 6);
      s[i] = std::round(std::uniform_real_distribution<double>(-3, 3)(rng) * 4.0) / 4.0;  // ties on purpose
      s2[i] = 2.0 * s[i];
      l[i] = static_cast<int>(rng() % 3 == 0);
    }
    const double expected = t::brute_force_user_auc(u, s, l);
    CHECK(average_user_auc(u, s, l).auc == expected);
    CHECK(average_user_auc(u, s2, l).auc == expected);
  }
}

TEST_CASE("train config parsing") {
  const TrainConfig c = TrainConfig::from_key_values(
      {{"hidden", "32"}, {"num_spaces", "4"}, {"mode", "one2one"}, {"targets", "query"}, {"model", "meanpool"}});
  CHECK(c.hidden == 32);
  CHECK(c.mode == TaskMode::kOne2One);
  CHECK(c.targets == std::vector<std::string>{"query"});
  CHECK(c.model == Architecture::kMeanPool);
  const TrainConfig back = TrainConfig::from_key_values(c.to_key_values());
  CHECK(back.to_key_values() == c.to_key_values());
  CHECK_THROWS_AS(TrainConfig::from_key_values({{"hiden", "32"}}), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig::from_key_values({{"hidden", "30"}}), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig::from_key_values({{"lr0", "fast"}}), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig::from_key_values({{"mode", "some2some"}}), InvalidArgument);
  CHECK_THROWS_AS(TrainConfig::from_key_values({{"dropout", "1"}}), InvalidArgument);
}

TEST_CASE("defaults follow the published hyperparameters") {
  const TrainConfig c;
  CHECK(c.embedding_dim == 64);
  CHECK(c.hidden == 128);
  CHECK(c.num_spaces == 8);
  CHECK(c.batch == 32);
  CHECK(c.l2 == 5e-5);
  CHECK(c.lr0 == 1.0);
  CHECK(c.decay_rate == 0.1);
}

TEST_CASE("training is deterministic given the seed") {
  const Dataset& d = small_dataset();
  const TrainConfig c = quick_config();
  AtrankModel a = make_model(c, d);
  AtrankModel b = make_model(c, d);
  const TrainResult ra = train(a, c, d);
  const TrainResult rb = train(b, c, d);
  REQUIRE(ra.metrics.size() == rb.metrics.size());
  for (std::size_t i = 0; i < ra.metrics.size(); ++i) {
    CHECK(ra.metrics[i].step == rb.metrics[i].step);
    CHECK(ra.metrics[i].loss == rb.metrics[i].loss);
    CHECK(ra.metrics[i].lr == rb.metrics[i].lr);
    CHECK(ra.metrics[i].auc == rb.metrics[i].auc);
  }
  CHECK(snapshot(a) == snapshot(b));
  CHECK(ra.final_auc.auc == rb.final_auc.auc);
}

TEST_CASE("lr0 = 0 leaves parameters unchanged") {
  const Dataset& d = small_dataset();
  TrainConfig c = quick_config();
  c.lr0 = 0.0;
  c.dropout = 0.1;
  SUBCASE("fixed samples") {
    AtrankModel m = make_model(c, d);
    const auto before = snapshot(m);
    const TaskSpec task = TaskSpec::resolve(c.mode, c.targets, d.schemas());
    std::mt19937_64 rng(1);
    const auto samples = with_negatives(build_train_positives(d, task), d, 1, rng);
    train_on_samples(m, c, samples);
    CHECK(snapshot(m) == before);
  }
  SUBCASE("full loop, up to the final float32 rounding") {
    AtrankModel m = make_model(c, d);
    AtrankModel ref = make_model(c, d);
    ref.round_to_float32();
    const TrainResult r = train(m, c, d);
    CHECK(snapshot(m) == snapshot(ref));
    CHECK(r.final_auc.auc == evaluate_auc(ref, build_eval_samples(d, c)).auc);
  }
}

TEST_CASE("sgd_step moves parameters against the gradient") {
  const Dataset& d = small_dataset();
  const TrainConfig c = quick_config();
  AtrankModel m = make_model(c, d);
  const TaskSpec task = TaskSpec::resolve(c.mode, c.targets, d.schemas());
  std::mt19937_64 rng(5);
  const auto samples = with_negatives(build_train_positives(d, task), d, 1, rng);
  const std::span<const Sample> first(samples.data(), 8);
  const SampleBatch batch = make_batch(first, m.registry().schemas());
  m.zero_grad();
  {
    Graph g(true);
    g.backward(m.pointwise_loss(g, m.forward(g, batch, {}).logits, batch.labels, c.l2));
  }
  Parameter& w = *m.dense_parameters().front();
  const Tensor before = w.value, grad = w.grad;
  EmbeddingTable& items = m.registry().table("item");
  const std::size_t row = items.touched_rows().front();
  const std::vector<double> row_before(items.value().row(row).begin(), items.value().row(row).end());
  const std::vector<double> row_grad(items.grad_of(row).begin(), items.grad_of(row).end());
  sgd_step(m, 0.25);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(w.value[i] == before[i] - 0.25 * grad[i]);
  for (std::size_t i = 0; i < row_before.size(); ++i)
    CHECK(items.value().row(row)[i] == row_before[i] - 0.25 * row_grad[i]);
}

TEST_CASE("divergence guard") {
  const Dataset& d = small_dataset();
  const TrainConfig c = quick_config();
  AtrankModel m = make_model(c, d);
  for (EmbeddingTable* tb : m.registry().tables()) tb->value().fill(std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(train(m, c, d), DivergenceError);
}

TEST_CASE("NaN attention weights raise the divergence error") {
  const Dataset& d = small_dataset();
  const TrainConfig c = quick_config();
  AtrankModel m = make_model(c, d);
  for (auto& w : m.self_stage().bilinear) w.value.fill(std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(train(m, c, d), DivergenceError);
}

TEST_CASE("checkpoint round trip") {
  const Dataset& d = small_dataset();
  TrainConfig c = quick_config();
  c.eval_every = 4;
  AtrankModel m = make_model(c, d);
  const TrainResult r = train(m, c, d);
  t::TempDir dir("ckpt");
  save_checkpoint(m, c, dir.path());
  for (const char* f : {"manifest.json", "params.bin"}) CHECK(std::filesystem::exists(dir / f));
  LoadedCheckpoint ck = load_checkpoint(dir.path());
  CHECK(snapshot(ck.model) == snapshot(m));
  CHECK(ck.config.to_key_values() == c.to_key_values());
  const Dataset view = d.with_vocabularies(ck.model.registry().schemas(), ck.model.registry().vocabularies());
  CHECK(evaluate_auc(ck.model, build_eval_samples(view, ck.config)).auc == r.final_auc.auc);

  // params.bin holds float32 values in manifest order.
  std::size_t total = 0;
  for (const Parameter* p : std::as_const(m).dense_parameters()) total += p->value.size();
  for (const EmbeddingTable* tb : std::as_const(m).registry().tables()) total += tb->value().size();
  CHECK(std::filesystem::file_size(dir / "params.bin") == 4 * total);

  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), DataError);
  std::filesystem::resize_file(dir / "params.bin", 4 * total - 4);
  CHECK_THROWS_AS(load_checkpoint(dir.path()), DataError);
}

TEST_CASE("metrics log") {
  const Dataset& d = small_dataset();
  TrainConfig c = quick_config();
  c.eval_every = 6;
  c.log_every = 3;
  AtrankModel m = make_model(c, d);
  std::size_t seen = 0;
  const TrainResult r = train(m, c, d, [&](const MetricsRow&) { ++seen; });
  CHECK(seen == r.metrics.size());
  CHECK(r.steps == 12);
  std::size_t with_auc = 0;
  for (const auto& row : r.metrics) {
    CHECK(std::isfinite(row.loss));
    // step counts completed updates; lr is the rate the last of them used
    CHECK(row.lr == doctest::Approx(lr_schedule(c, row.step - 1, r.steps_per_epoch)));
    if (row.auc) ++with_auc;
  }
  CHECK(with_auc == 2);
  t::TempDir dir("metrics");
  write_metrics_csv(dir / "m.csv", r.metrics);
  const std::string csv = slurp(dir / "m.csv");
  CHECK(csv.rfind("step,loss,lr,auc\n", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == r.metrics.size() + 1);
}

TEST_CASE("toy overfitting drives the loss down") {
  const Dataset& d = small_dataset();
  TrainConfig c = quick_config();
  c.max_steps = 300;
  c.decay_steps = 100000;
  c.l2 = 0.0;
  AtrankModel m = make_model(c, d);
  const TaskSpec task = TaskSpec::resolve(c.mode, c.targets, d.schemas());
  auto pos = build_train_positives(d, task);
  pos.resize(16);
  std::mt19937_64 rng(2);
  const auto samples = with_negatives(pos, d, 1, rng);
  const TrainResult r = train_on_samples(m, c, samples);
  CHECK(r.metrics.front().loss > 0.5);
  CHECK(r.final_loss < 0.2);
}

TEST_CASE("attention export") {
  const Dataset& d = small_dataset();
  TrainConfig c = quick_config();
  c.num_spaces = 2;
  AtrankModel m = make_model(c, d);
  const TaskSpec task = TaskSpec::resolve(c.mode, c.targets, d.schemas());
  const AttentionExport e = export_attention(m, d, task, 0);
  const std::size_t n = e.behaviors.size();
  REQUIRE(n > 1);
  CHECK(e.self_scores.size() == 2);
  for (const Tensor& a : e.self_scores) {
    REQUIRE(a.rows() == n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a(i, j);
      CHECK(std::fabs(s - 1.0) < 1e-9);
    }
  }
  CHECK(e.vanilla_scores.rows() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += e.vanilla_scores(k, j);
    CHECK(std::fabs(s - 1.0) < 1e-9);
  }
  // The exported logit is the one the scorer gives the same instance.
  const auto test = build_test_positives(d, task);
  CHECK(e.logit == doctest::Approx(score_samples(m, std::span<const Sample>(&test[0], 1))[0]).epsilon(1e-12));

  t::TempDir dir("export");
  write_attention_export(e, dir.path());
  for (const char* f : {"self_space_0.csv", "self_space_1.csv", "vanilla_scores.csv", "vanilla_mean.csv", "behaviors.json"})
    CHECK(std::filesystem::exists(dir / f));
}

TEST_CASE("attention export of a one-behavior history") {
  // item a@1, query q@2, item b@3: the last item and query are held out, so
  // the item test instance sees only a.
  const InteractionLog log = interactions_from(
      {{"u", t::record("item", "buy", {{"item", "a"}}, 86400)},
       {"u", t::record("query", "search", {{"query", "q"}}, 2 * 86400)},
       {"u", t::record("item", "buy", {{"item", "b"}}, 3 * 86400)},
       {"v", t::record("item", "buy", {{"item", "b"}}, 86400)},
       {"v", t::record("item", "buy", {{"item", "c"}}, 2 * 86400)},
       {"v", t::record("item", "buy", {{"item", "a"}}, 3 * 86400)}});
  const Dataset d = Dataset::from_log(log);
  TrainConfig c = quick_config();
  c.num_spaces = 2;
  AtrankModel m = make_model(c, d);
  const TaskSpec task = TaskSpec::resolve(TaskMode::kAll2One, std::vector<std::string>{"item"}, d.schemas());
  const AttentionExport e = export_attention(m, d, task, d.find_user("u"));
  REQUIRE(e.behaviors.size() == 1);
  for (const Tensor& a : e.self_scores) CHECK(a == Tensor({1, 1}, 1.0));
  CHECK(e.vanilla_scores == Tensor({2, 1}, 1.0));
  CHECK(e.buckets == std::vector<std::size_t>{2});  // two days before the candidate
}

TEST_CASE("time-bucket aggregation") {
  SUBCASE("histories inside one day fall in bucket 0 and share weight evenly") {
    std::vector<Interaction> rows;
    for (int u = 0; u < 6; ++u)
      for (int k = 0; k < 4; ++k)
        rows.push_back({"u" + std::to_string(u),
                        t::record("item", "buy", {{"item", "i" + std::to_string((u + k) % 5)}}, 1000 + 60 * k)});
    const Dataset d = Dataset::from_log(interactions_from(rows));
    TrainConfig c = quick_config();
    AtrankModel m = make_model(c, d);
    const TaskSpec task = TaskSpec::resolve(TaskMode::kAll2One, std::vector<std::string>{"item"}, d.schemas());
    const auto buckets = aggregate_time_bucket_attention(m, d, task);
    REQUIRE(buckets.size() == 1);
    CHECK(buckets[0].bucket == 0);
    CHECK(buckets[0].range_lo == 0.0);
    CHECK(buckets[0].range_hi == 1.0);
    CHECK(buckets[0].count == 6 * 3);
    CHECK(buckets[0].mean_score == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("weights of every instance add up across buckets") {
    const Dataset& d = small_dataset();
    TrainConfig c = quick_config();
    AtrankModel m = make_model(c, d);
    const TaskSpec task = TaskSpec::resolve(c.mode, c.targets, d.schemas());
    const auto buckets = aggregate_time_bucket_attention(m, d, task);
    const auto test = build_test_positives(d, task);
    std::size_t count = 0;
    double mass = 0.0;
    for (const auto& b : buckets) {
      count += b.count;
      mass += b.mean_score * static_cast<double>(b.count);
      CHECK(b.range_lo < b.range_hi);
    }
    std::size_t expected = 0;
    for (const auto& s : test) expected += s.history.size();
    CHECK(count == expected);
    CHECK(mass == doctest::Approx(static_cast<double>(test.size())).epsilon(1e-9));
    t::TempDir dir("buckets");
    write_bucket_csv(dir / "b.csv", buckets);
    CHECK(slurp(dir / "b.csv").rfind("bucket,range_lo,range_hi,count,mean_score\n", 0) == 0);
  }
}

TEST_CASE("mean-pool baseline trains through the same loop") {
  const Dataset& d = small_dataset();
  TrainConfig c = quick_config();
  c.model = Architecture::kMeanPool;
  AtrankModel m = make_model(c, d);
  const TrainResult r = train(m, c, d);
  CHECK(std::isfinite(r.final_loss));
  CHECK(r.final_auc.users > 0);
  const TaskSpec task = TaskSpec::resolve(c.mode, c.targets, d.schemas());
  CHECK_THROWS_AS(export_attention(m, d, task, 0), InvalidArgument);
}
