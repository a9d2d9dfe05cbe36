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

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "atrank/graph.hpp"

namespace atrank {

// One user event: an action on an object at a point in time, routed to a
// behavior group by object type.
struct BehaviorRecord {
  std::string group;
  std::string action;
  std::map<std::string, std::string> features;
  std::int64_t timestamp = 0;

  bool operator==(const BehaviorRecord&) const = default;
};

// Token <-> id mapping. Id 0 is reserved for out-of-vocabulary tokens, so a
// vocabulary of n tokens backs a table with n + 1 rows.
class Vocabulary {
 public:
  static constexpr std::size_t kOov = 0;

  std::size_t add(const std::string& token);
  std::size_t id_of(std::string_view token) const;
  const std::string& token(std::size_t id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t rows() const noexcept { return tokens_.size() + 1; }

  // One token per line; line k holds the token with id k + 1.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

using VocabularySet = std::map<std::string, Vocabulary, std::less<>>;

struct TimeBuckets {
  double base_unit_seconds = 86400.0;
  std::size_t max_bucket = 12;
};

// 0 for g = elapsed / base_unit < 1, else min(floor(log2 g) + 1, max_bucket).
std::size_t bucketize_time(double elapsed, double base_unit, std::size_t max_bucket);

struct FeatureSpec {
  std::string name;
  std::string handle;  // vocabulary/table key; equal handles share a table
  std::size_t width = 0;
};

struct GroupSchema {
  std::string name;
  std::vector<FeatureSpec> features;
  std::string action_handle;
  std::string time_handle;
  TimeBuckets time;

  // Concatenated object embedding width.
  std::size_t width() const;

  // Default layout: feature handles equal feature names, so a feature name
  // appearing in two groups shares one table; action/time handles are
  // "<group>.action" and "<group>.time".
  static GroupSchema make(std::string name, std::vector<std::string> feature_names,
                          std::size_t feature_width, TimeBuckets time = {});
};

inline constexpr std::size_t kMaxFeatures = 8;

// A BehaviorRecord after vocabulary lookup; fixed-size so histories copy
// cheaply.
struct TokenizedBehavior {
  std::uint32_t group = 0;
  std::uint32_t action = 0;
  std::uint32_t num_features = 0;
  std::array<std::uint32_t, kMaxFeatures> features{};
  std::int64_t timestamp = 0;

  std::span<const std::uint32_t> feature_ids() const {
    return std::span<const std::uint32_t>(features.data(), num_features);
  }
  bool same_object(const TokenizedBehavior& o) const {
    return group == o.group && features == o.features;
  }
  bool operator==(const TokenizedBehavior&) const = default;
};

std::size_t find_group(std::span<const GroupSchema> schemas, std::string_view name);

// Throws DataError for an unknown group or a feature set that does not match
// the schema; unknown tokens map to the OOV id.
TokenizedBehavior tokenize(std::span<const GroupSchema> schemas,
                           const VocabularySet& vocabs, const BehaviorRecord& record);
BehaviorRecord detokenize(std::span<const GroupSchema> schemas,
                          const VocabularySet& vocabs, const TokenizedBehavior& b);

// Columnar ids for n behaviors of one group, the unit the encoder consumes.
struct GroupRows {
  std::vector<std::size_t> actions;
  std::vector<std::vector<std::size_t>> features;  // one column per schema feature
  std::vector<std::size_t> buckets;

  std::size_t size() const noexcept { return actions.size(); }
};

// Handle -> (vocabulary, embedding table). Shared handles resolve to a single
// table; time tables are private to their group.
class EmbeddingRegistry {
 public:
  EmbeddingRegistry() = default;
  EmbeddingRegistry(std::vector<GroupSchema> schemas, VocabularySet vocabs);

  const std::vector<GroupSchema>& schemas() const noexcept { return schemas_; }
  const GroupSchema& schema(std::size_t group) const { return schemas_.at(group); }
  std::size_t group_index(std::string_view name) const { return find_group(schemas_, name); }
  const VocabularySet& vocabularies() const noexcept { return vocabs_; }

  EmbeddingTable& table(std::string_view handle);
  const EmbeddingTable& table(std::string_view handle) const;
  // All tables ordered by handle.
  std::vector<EmbeddingTable*> tables();
  std::vector<const EmbeddingTable*> tables() const;

  // Uniform in +-sqrt(6 / (rows + width)) per table.
  void initialize(std::mt19937_64& rng);
  void zero_grad();

  TokenizedBehavior tokenize(const BehaviorRecord& record) const {
    return atrank::tokenize(schemas_, vocabs_, record);
  }
  BehaviorRecord detokenize(const TokenizedBehavior& b) const {
    return atrank::detokenize(schemas_, vocabs_, b);
  }

 private:
  std::vector<GroupSchema> schemas_;
  VocabularySet vocabs_;
  std::map<std::string, EmbeddingTable, std::less<>> tables_;
};

// emb_i(o) for each row: per-feature embeddings concatenated in schema order.
Var embed_objects(Graph& g, EmbeddingRegistry& reg, std::size_t group, const GroupRows& rows);

// u_ij = emb_i(o_j) + lookup_t(bucket_j) + lookup_a(a_j) for each row.
Var encode_rows(Graph& g, EmbeddingRegistry& reg, std::size_t group, const GroupRows& rows);

// Single-object and single-record conveniences over the columnar encoder.
Var embed_object(Graph& g, EmbeddingRegistry& reg, std::string_view group,
                 const std::map<std::string, std::string>& object_features);
Var encode_behavior(Graph& g, EmbeddingRegistry& reg, const BehaviorRecord& record,
                    std::int64_t ref_time);

struct EncodedSequence {
  // Per group, in schema order; invalid Var when the group has no behaviors.
  std::vector<Var> groups;
  // Per group, full-sequence position of each row.
  std::vector<std::vector<std::size_t>> positions;
  std::size_t total = 0;
};

// Routes records by group, keeping time order (ties by input order), and
// encodes each group's matrix. Future-dated records are an error here; the
// sample pipeline clamps them before they reach the encoder.
EncodedSequence encode_sequence(Graph& g, EmbeddingRegistry& reg,
                                std::span<const BehaviorRecord> history,
                                std::int64_t ref_time);

}  // namespace atrank
