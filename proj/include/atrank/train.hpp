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
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atrank/data.hpp"
#include "atrank/model.hpp"

namespace atrank {

struct TrainConfig {
  std::size_t embedding_dim = 64;
  std::size_t hidden = 128;
  std::size_t num_spaces = 8;
  std::size_t ffn_hidden = 0;  // 0: same as hidden
  std::size_t batch = 32;
  double l2 = 5e-5;
  double lr0 = 1.0;
  double decay_rate = 0.1;
  std::size_t decay_steps = 0;  // 0: steps per epoch
  double dropout = 0.1;
  double layer_norm_eps = 1e-6;
  std::size_t max_steps = 0;  // 0: epochs x steps per epoch
  std::size_t epochs = 1;
  std::uint64_t seed = 1;
  TaskMode mode = TaskMode::kAll2One;
  std::vector<std::string> targets;
  Architecture model = Architecture::kAtrank;
  std::size_t eval_every = 0;  // 0: evaluate once at the end
  std::size_t eval_negatives = 100;
  bool resample_negatives = true;  // redraw training negatives every epoch
  std::size_t log_every = 10;

  static TrainConfig from_key_values(const std::map<std::string, std::string>& kv);
  static TrainConfig load(const std::filesystem::path& path);
  std::map<std::string, std::string> to_key_values() const;
  void validate() const;
  ModelDims model_dims() const;
};

// lr0 * decay_rate^(step / decay_steps), continuous in step.
double lr_schedule(const TrainConfig& config, std::size_t step, std::size_t decay_steps);

// ---------------------------------------------------------------------------
// Evaluation

struct AucResult {
  double auc = 0.0;
  std::size_t users = 0;    // users contributing to the mean
  std::size_t skipped = 0;  // users missing a positive or a negative
};

// Per-user pairwise accuracy with strict '>' (ties count 0), averaged over
// users. users, scores and labels are parallel.
AucResult average_user_auc(std::span<const std::uint32_t> users, std::span<const double> scores,
                           std::span<const int> labels);

// Test positives each followed by `negatives` sampled negatives. Deterministic
// given the seed.
std::vector<Sample> build_eval_samples(const Dataset& data, const TaskSpec& task,
                                       std::size_t negatives, std::uint64_t seed);
// The evaluation set a training run with this config reports on.
std::vector<Sample> build_eval_samples(const Dataset& data, const TrainConfig& config);

// Eval-mode scores, one batch per user's run of samples.
std::vector<double> score_eval_samples(AtrankModel& model, std::span<const Sample> samples);

AucResult evaluate_auc(AtrankModel& model, std::span<const Sample> eval_samples);
// Same, restricted to candidates of one group.
AucResult evaluate_auc_for_group(AtrankModel& model, std::span<const Sample> eval_samples,
                                 std::uint32_t group);

// ---------------------------------------------------------------------------
// Training

struct MetricsRow {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> auc;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  std::size_t steps = 0;
  std::size_t steps_per_epoch = 0;
  double final_loss = 0.0;  // mean loss over the last logging window
  AucResult final_auc;
};

AtrankModel make_model(const TrainConfig& config, const Dataset& data);


// One SGD update: theta <- theta - lr * grad over dense parameters and the
// embedding rows the step touched.
void sgd_step(AtrankModel& model, double lr);

// Plain SGD with exponential decay over shuffled positives, each followed by
// one sampled negative. Throws DivergenceError on a non-finite loss. The
// trained parameters are rounded to float32 before the final evaluation, so
// the reported AUC is the one a saved checkpoint reproduces. The callback, if
// set, sees every metrics row as it is produced.
TrainResult train(AtrankModel& model, const TrainConfig& config, const Dataset& data,
                  const std::function<void(const MetricsRow&)>& on_metrics = {});

// Same loop over a fixed, caller-supplied sample list (no negative sampling,
// no evaluation); used for toy overfitting runs.
TrainResult train_on_samples(AtrankModel& model, const TrainConfig& config,
                             std::span<const Sample> samples);

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows);

// ---------------------------------------------------------------------------
// Checkpoint: <dir>/manifest.json, <dir>/params.bin (little-endian float32 in
// manifest order), <dir>/vocab/<handle>.txt.

void save_checkpoint(AtrankModel& model, const TrainConfig& config,
                     const std::filesystem::path& dir);

struct LoadedCheckpoint {
  TrainConfig config;
  AtrankModel model;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Attention analysis

struct AttentionExport {
  std::vector<BehaviorRecord> behaviors;  // history in sequence order
  std::vector<std::size_t> buckets;
  BehaviorRecord candidate;
  std::int64_t ref_time = 0;
  double logit = 0.0;
  std::vector<Tensor> self_scores;  // per space, n x n
  Tensor vanilla_scores;            // K x n
  Tensor vanilla_mean;              // 1 x n, mean over spaces
};

// The user's first test instance under the task.
AttentionExport export_attention(AtrankModel& model, const Dataset& data, const TaskSpec& task,
                                 std::size_t user);
// self_space_<k>.csv, vanilla_scores.csv, vanilla_mean.csv, behaviors.json.
void write_attention_export(const AttentionExport& e, const std::filesystem::path& outdir);

struct BucketRow {
  std::size_t bucket = 0;
  double range_lo = 0.0;  // in base time units
  double range_hi = 0.0;  // infinity for the open last bucket
  std::size_t count = 0;
  double mean_score = 0.0;
};

// Space-mean vanilla attention of every history behavior over the test
// positives, averaged per time bucket. Only buckets that occur are listed.
std::vector<BucketRow> aggregate_time_bucket_attention(AtrankModel& model, const Dataset& data,
                                                       const TaskSpec& task);
void write_bucket_csv(const std::filesystem::path& path, std::span<const BucketRow> rows);

}  // namespace atrank
