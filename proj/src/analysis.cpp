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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "json.hpp"

#include "atrank/error.hpp"
#include "atrank/train.hpp"

namespace atrank {

using nlohmann::json;

namespace {

void require_attention(const AtrankModel& model) {
  if (model.dims().architecture != Architecture::kAtrank)
    throw InvalidArgument("attention analysis needs the atrank architecture");
}

void write_matrix_csv(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(9);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) out << (c ? "," : "") << t(r, c);
    out << '\n';
  }
}

json record_json(const BehaviorRecord& r) {
  return {{"group", r.group}, {"action", r.action}, {"features", r.features}, {"timestamp", r.timestamp}};
}

}  // namespace

AttentionExport export_attention(AtrankModel& model, const Dataset& data, const TaskSpec& task,
                                 std::size_t user) {
  require_attention(model);
  if (user >= data.users().size()) throw InvalidArgument("export_attention: user index out of range");
  std::optional<Sample> instance;
  for (auto& s : build_test_positives(data, task))
    if (s.user == user) {
      instance = std::move(s);
      break;
    }
  if (!instance) throw DataError("user '" + data.users()[user].id + "' has no test instance for this task");

  std::vector<TokenizedBehavior> hist = instance->history;
  std::stable_sort(hist.begin(), hist.end(),
                   [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });

  Graph g(false);
  const SampleBatch batch = make_batch(std::span<const Sample>(&*instance, 1), model.registry().schemas());
  ForwardOptions opts;
  opts.keep_attention = true;
  const BatchOutput out = model.forward(g, batch, opts);

  AttentionExport e;
  const std::size_t n = hist.size();
  const std::size_t k = model.dims().num_spaces;
  for (const auto& b : hist) {
    e.behaviors.push_back(model.registry().detokenize(b));
    const TimeBuckets& tb = model.registry().schema(b.group).time;
    e.buckets.push_back(bucketize_time(
        static_cast<double>(std::max<std::int64_t>(0, instance->ref_time - b.timestamp)),
        tb.base_unit_seconds, tb.max_bucket));
  }
  e.candidate = model.registry().detokenize(instance->candidate);
  e.ref_time = instance->ref_time;
  e.logit = g.value(out.logits)(0, 0);
  for (Var a : out.self_scores.at(0)) e.self_scores.push_back(g.value(a));
  e.vanilla_scores = Tensor({k, n}, 0.0);
  e.vanilla_mean = Tensor({1, n}, 0.0);
  for (std::size_t s = 0; s < k; ++s) {
    const Tensor& row = g.value(out.vanilla_scores.at(0).at(s));
    for (std::size_t j = 0; j < n; ++j) {
      e.vanilla_scores(s, j) = row(0, j);
      e.vanilla_mean(0, j) += row(0, j) / static_cast<double>(k);
    }
  }
  return e;
}

void write_attention_export(const AttentionExport& e, const std::filesystem::path& outdir) {
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw DataError("cannot create " + outdir.string() + ": " + ec.message());
  for (std::size_t k = 0; k < e.self_scores.size(); ++k)
    write_matrix_csv(outdir / ("self_space_" + std::to_string(k) + ".csv"), e.self_scores[k]);
  write_matrix_csv(outdir / "vanilla_scores.csv", e.vanilla_scores);
  write_matrix_csv(outdir / "vanilla_mean.csv", e.vanilla_mean);

  json rows = json::array();
  for (std::size_t i = 0; i < e.behaviors.size(); ++i) {
    json r = record_json(e.behaviors[i]);
    r["row"] = i;
    r["elapsed_seconds"] = e.ref_time - e.behaviors[i].timestamp;
    r["time_bucket"] = e.buckets[i];
    rows.push_back(std::move(r));
  }
  json side = {{"behaviors", rows},
               {"candidate", record_json(e.candidate)},
               {"ref_time", e.ref_time},
               {"logit", e.logit},
               {"num_spaces", e.self_scores.size()}};
  std::ofstream(outdir / "behaviors.json") << side.dump(2) << '\n';
}

std::vector<BucketRow> aggregate_time_bucket_attention(AtrankModel& model, const Dataset& data,
                                                       const TaskSpec& task) {
  require_attention(model);
  const auto samples = build_test_positives(data, task);
  std::size_t max_bucket = 1;
  for (const auto& s : model.registry().schemas()) max_bucket = std::max(max_bucket, s.time.max_bucket);
  std::vector<double> sum(max_bucket + 1, 0.0);
  std::vector<std::size_t> count(max_bucket + 1, 0);
  const std::size_t k = model.dims().num_spaces;

  constexpr std::size_t kChunk = 32;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const std::size_t len = std::min(kChunk, samples.size() - begin);
    const SampleBatch batch =
        make_batch(std::span<const Sample>(samples).subspan(begin, len), model.registry().schemas());
    Graph g(false);
    ForwardOptions opts;
    opts.keep_attention = true;
    const BatchOutput out = model.forward(g, batch, opts);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const std::size_t h = batch.history_of[b];
      std::vector<const Tensor*> spaces;
      for (Var a : out.vanilla_scores.at(b)) spaces.push_back(&g.value(a));
      for (const auto& blk : batch.groups)
        for (std::size_t j = 0; j < blk.max_len; ++j) {
          const std::size_t cell = h * blk.max_len + j;
          if (!blk.mask[cell]) continue;
          double score = 0.0;
          for (const Tensor* t : spaces) score += (*t)(0, blk.positions[cell]);
          sum[blk.buckets[cell]] += score / static_cast<double>(k);
          ++count[blk.buckets[cell]];
        }
    }
  }

  std::vector<BucketRow> rows;
  for (std::size_t b = 0; b <= max_bucket; ++b) {
    if (!count[b]) continue;
    BucketRow r;
    r.bucket = b;
    r.range_lo = b == 0 ? 0.0 : std::ldexp(1.0, static_cast<int>(b) - 1);
    r.range_hi = b == max_bucket ? std::numeric_limits<double>::infinity()
                                 : std::ldexp(1.0, static_cast<int>(b));
    r.count = count[b];
    r.mean_score = sum[b] / static_cast<double>(count[b]);
    rows.push_back(r);
  }
  return rows;
}

void write_bucket_csv(const std::filesystem::path& path, std::span<const BucketRow> rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "bucket,range_lo,range_hi,count,mean_score\n" << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.bucket << ',' << r.range_lo << ',';
    if (std::isinf(r.range_hi)) out << "inf";
    else out << r.range_hi;
    out << ',' << r.count << ',' << r.mean_score << '\n';
  }
}

}  // namespace atrank
