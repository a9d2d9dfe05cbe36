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
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "atrank/behavior.hpp"
#include "atrank/sample.hpp"

namespace atrank {

// ---------------------------------------------------------------------------
// Raw interactions

struct Interaction {
  std::string user;
  BehaviorRecord record;
};

struct UserTimeline {
  std::string user;
  std::vector<BehaviorRecord> records;  // stable-sorted by timestamp
};

struct InteractionLog {
  // Group layouts without widths (widths are a model choice).
  std::vector<GroupSchema> schemas;
  std::vector<UserTimeline> users;  // in order of first appearance

  std::size_t num_records() const;
  // Distinct tokens per feature handle, plus "users" and "records".
  std::map<std::string, std::size_t> stats() const;
};

enum class InputFormat { kAmazonCsv, kJsonl };
InputFormat parse_input_format(const std::string& s);

// amazon-csv rows are `user_id,item_id,cate_id,unix_ts` with no header and
// load into a single "item" group with features item and cate. jsonl lines are
//   {"user": ..., "group": ..., "action": ..., "timestamp": ..., "features": {...}}
// Malformed rows raise DataError with the line number. With five_core set,
// users and objects (group plus every feature token) with fewer than 5
// interactions are removed iteratively.
InteractionLog load_interactions(const std::filesystem::path& path, InputFormat format,
                                 bool five_core = false);

InteractionLog interactions_from(std::vector<Interaction> rows,
                                 std::vector<GroupSchema> schemas = {});

void write_jsonl(const std::filesystem::path& path, const InteractionLog& log);

// ---------------------------------------------------------------------------
// Split protocol

struct TrainTestSplit {
  std::vector<Sample> train;  // positives predicting b_2 .. b_{n-1}
  std::optional<Sample> test;  // positive predicting b_n from b_1 .. b_{n-1}
};

// For a time-ordered sequence b_1..b_n: train positives use the first k
// behaviors to predict b_{k+1} for k = 1..n-2; the test positive uses the
// first n-1 to predict b_n. n < 3 yields nothing.
TrainTestSplit make_train_and_test(std::span<const TokenizedBehavior> sequence,
                                   std::uint32_t user = 0);

// ---------------------------------------------------------------------------
// Prepared dataset

// Directory layout: schema.json, vocab/<handle>.txt, train.jsonl, test.jsonl,
// stats.json. The test split holds each user's last behavior of every group;
// vocabularies come from the train split only.
struct PrepareReport {
  std::size_t users_kept = 0;
  std::size_t users_skipped = 0;  // fewer than 3 behaviors
  std::size_t train_records = 0;
  std::size_t test_records = 0;
};
PrepareReport prepare_dataset(const InteractionLog& log, const std::filesystem::path& outdir);

class Dataset {
 public:
  struct User {
    std::string id;
    std::vector<TokenizedBehavior> train;  // time ordered
    std::vector<TokenizedBehavior> test;   // held-out last behavior per group
  };

  static Dataset open(const std::filesystem::path& dir);
  // In-memory construction, mainly for tests.
  static Dataset from_log(const InteractionLog& log);

  const std::vector<GroupSchema>& schemas() const noexcept { return schemas_; }
  const VocabularySet& vocabularies() const noexcept { return vocabs_; }
  const std::vector<User>& users() const noexcept { return users_; }
  std::size_t find_user(const std::string& id) const;

  // The same records re-tokenized under another model's schemas and
  // vocabularies (e.g. a checkpoint's). Group and feature names must match.
  Dataset with_vocabularies(const std::vector<GroupSchema>& schemas,
                            const VocabularySet& vocabs) const;

  // Schemas with every feature at the given width, ready for a model.
  std::vector<GroupSchema> schemas_with_width(std::size_t width) const;

  // Distinct train-split objects per group, in first-seen order.
  const std::vector<TokenizedBehavior>& object_pool(std::size_t group) const {
    return pools_.at(group);
  }

 private:
  void build_pools();

  std::vector<GroupSchema> schemas_;
  VocabularySet vocabs_;
  std::vector<User> users_;
  std::vector<std::vector<TokenizedBehavior>> pools_;
};

// ---------------------------------------------------------------------------
// Task regimes

enum class TaskMode { kOne2One, kAll2One, kAll2All };
std::string to_string(TaskMode m);
TaskMode parse_task_mode(const std::string& s);

struct TaskSpec {
  TaskMode mode = TaskMode::kAll2One;
  std::vector<std::uint32_t> targets;  // candidate groups

  // one2one: exactly one target and histories restricted to it; all2one:
  // one target, histories over every group; all2all: every group.
  static TaskSpec resolve(TaskMode mode, std::span<const std::string> target_names,
                          std::span<const GroupSchema> schemas);
  bool is_target(std::uint32_t group) const;
  bool history_includes(std::uint32_t group) const;
};

// Positive training samples: each target-group behavior in a user's train
// split, predicted from the (task-filtered) behaviors before it.
std::vector<Sample> build_train_positives(const Dataset& data, const TaskSpec& task);
// One positive per user and target group: the held-out behavior predicted
// from the train-split behaviors at or before its timestamp.
std::vector<Sample> build_test_positives(const Dataset& data, const TaskSpec& task);

// ---------------------------------------------------------------------------
// Negative sampling

struct ObjectKeyHash {
  std::size_t operator()(const TokenizedBehavior& b) const noexcept;
};
struct ObjectKeyEq {
  bool operator()(const TokenizedBehavior& a, const TokenizedBehavior& b) const noexcept {
    return a.same_object(b);
  }
};
using ObjectSet = std::unordered_set<TokenizedBehavior, ObjectKeyHash, ObjectKeyEq>;

// Every object the user touched in either split.
ObjectSet owned_objects(const Dataset::User& user);

// Uniform draw from same-group pool objects not in `owned`; the negative keeps
// the positive's action and timestamp. Throws DataError when the pool is not
// larger than the user's owned set or 100 draws all collide.
TokenizedBehavior sample_negative(const TokenizedBehavior& positive,
                                  std::span<const TokenizedBehavior> pool,
                                  const ObjectSet& owned, std::mt19937_64& rng);

// For each positive, the positive followed by `ratio` negatives with the same
// history.
std::vector<Sample> with_negatives(std::span<const Sample> positives, const Dataset& data,
                                   std::size_t ratio, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Synthetic multi-group data

struct SynthConfig {
  std::size_t users = 1000;
  std::size_t clusters = 40;
  std::size_t interests_per_user = 1;
  std::size_t items = 800;
  std::size_t shops = 200;
  std::size_t brands = 160;
  std::size_t categories = 80;
  std::size_t queries = 400;
  std::size_t coupons = 400;
  std::size_t coupon_types = 5;
  // Probability that a behavior's object comes from the user's current
  // interest cluster rather than the whole catalogue.
  double strength = 0.9;
  // Probability that the current interest is redrawn before each behavior.
  double switch_prob = 0.15;
  std::size_t min_per_group = 3;
  std::size_t mean_length = 24;
  double item_share = 0.4;
  double query_share = 0.3;  // coupons take the remainder
  double mean_gap_days = 1.0;
  std::uint64_t seed = 7;

  static SynthConfig from_key_values(const std::map<std::string, std::string>& kv);
  void validate() const;
};

// Groups: item (item, shop, brand, cate), query (query), coupon (coupon,
// shop, coupon_type); shop is shared between items and coupons. Each cluster
// owns a slice of every catalogue, users hold a few interest clusters and
// drift between them over time.
InteractionLog generate_synthetic_multigroup(const SynthConfig& config);

// Cluster id of an object token as planted by the generator, or -1.
int synthetic_cluster_of(const SynthConfig& config, const std::string& group,
                         const std::map<std::string, std::string>& features);

// ---------------------------------------------------------------------------
// Helpers

// Flat key=value text (blank lines and '#' comments ignored).
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

}  // namespace atrank
