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

#include "atrank/behavior.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "atrank/error.hpp"

namespace atrank {

// ---------------------------------------------------------------------------
// Vocabulary

std::size_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = ids_.try_emplace(token, tokens_.size() + 1);
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::size_t Vocabulary::id_of(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kOov : it->second;
}

const std::string& Vocabulary::token(std::size_t id) const {
  static const std::string kOovToken = "<oov>";
  if (id == kOov || id > tokens_.size()) return kOovToken;
  return tokens_[id - 1];
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (v.add(line) != line_no) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": duplicate token '" + line + "'");
    }
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

// ---------------------------------------------------------------------------
// Schema

std::size_t bucketize_time(double elapsed, double base_unit, std::size_t max_bucket) {
  if (!(elapsed >= 0.0)) throw InvalidArgument("bucketize_time: negative elapsed time");
  if (!(base_unit > 0.0)) throw InvalidArgument("bucketize_time: base unit must be positive");
  if (max_bucket < 1) throw InvalidArgument("bucketize_time: max_bucket must be at least 1");
  const double g = elapsed / base_unit;
  if (g < 1.0) return 0;
  // g = m * 2^e with m in [0.5, 1), so floor(log2 g) = e - 1 exactly.
  int e = 0;
  std::frexp(g, &e);
  const auto bucket = static_cast<std::size_t>(e);
  return std::min(bucket, max_bucket);
}

std::size_t GroupSchema::width() const {
  std::size_t w = 0;
  for (const auto& f : features) w += f.width;
  return w;
}

GroupSchema GroupSchema::make(std::string name, std::vector<std::string> feature_names,
                              std::size_t feature_width, TimeBuckets time) {
  GroupSchema s;
  s.action_handle = name + ".action";
  s.time_handle = name + ".time";
  s.name = std::move(name);
  s.time = time;
  for (auto& f : feature_names) s.features.push_back({f, f, feature_width});
  return s;
}

std::size_t find_group(std::span<const GroupSchema> schemas, std::string_view name) {
  for (std::size_t i = 0; i < schemas.size(); ++i)
    if (schemas[i].name == name) return i;
  throw DataError("unknown behavior group '" + std::string(name) + "'");
}

namespace {

const Vocabulary& vocab_or_empty(const VocabularySet& vocabs, std::string_view handle) {
  static const Vocabulary kEmpty;
  auto it = vocabs.find(handle);
  return it == vocabs.end() ? kEmpty : it->second;
}

}  // namespace

TokenizedBehavior tokenize(std::span<const GroupSchema> schemas,
                           const VocabularySet& vocabs, const BehaviorRecord& record) {
  const std::size_t gi = find_group(schemas, record.group);
  const GroupSchema& s = schemas[gi];
  if (record.timestamp < 0) {
    throw DataError("negative timestamp in group '" + record.group + "'");
  }
  TokenizedBehavior t;
  t.group = static_cast<std::uint32_t>(gi);
  t.timestamp = record.timestamp;
  t.action = static_cast<std::uint32_t>(
      vocab_or_empty(vocabs, s.action_handle).id_of(record.action));
  t.num_features = static_cast<std::uint32_t>(s.features.size());
  for (std::size_t f = 0; f < s.features.size(); ++f) {
    auto it = record.features.find(s.features[f].name);
    if (it == record.features.end()) {
      throw DataError("behavior in group '" + s.name + "' is missing feature '" +
                      s.features[f].name + "'");
    }
    t.features[f] = static_cast<std::uint32_t>(
        vocab_or_empty(vocabs, s.features[f].handle).id_of(it->second));
  }
  if (record.features.size() != s.features.size()) {
    for (const auto& [name, _] : record.features) {
      const bool known = std::any_of(s.features.begin(), s.features.end(),
                                     [&](const FeatureSpec& f) { return f.name == name; });
      if (!known) {
        throw DataError("behavior in group '" + s.name + "' has unexpected feature '" +
                        name + "'");
      }
    }
  }
  return t;
}

BehaviorRecord detokenize(std::span<const GroupSchema> schemas,
                          const VocabularySet& vocabs, const TokenizedBehavior& b) {
  const GroupSchema& s = schemas[b.group];
  BehaviorRecord r;
  r.group = s.name;
  r.timestamp = b.timestamp;
  r.action = vocab_or_empty(vocabs, s.action_handle).token(b.action);
  for (std::size_t f = 0; f < s.features.size(); ++f) {
    r.features[s.features[f].name] =
        vocab_or_empty(vocabs, s.features[f].handle).token(b.features[f]);
  }
  return r;
}

// ---------------------------------------------------------------------------
// EmbeddingRegistry

EmbeddingRegistry::EmbeddingRegistry(std::vector<GroupSchema> schemas, VocabularySet vocabs)
    : schemas_(std::move(schemas)), vocabs_(std::move(vocabs)) {
  if (schemas_.empty()) throw InvalidArgument("registry needs at least one group schema");

  std::map<std::string, std::size_t, std::less<>> widths;
  std::map<std::string, std::string, std::less<>> time_owner;
  auto declare = [&](const std::string& handle, std::size_t width, std::size_t rows) {
    auto [it, inserted] = widths.try_emplace(handle, width);
    if (!inserted) {
      if (it->second != width) {
        throw InvalidArgument("handle '" + handle + "' is shared with conflicting widths " +
                              std::to_string(it->second) + " and " + std::to_string(width));
      }
      return;
    }
    tables_.emplace(handle, EmbeddingTable(handle, rows, width));
  };

  for (std::size_t gi = 0; gi < schemas_.size(); ++gi) {
    const GroupSchema& s = schemas_[gi];
    if (s.features.empty()) throw InvalidArgument("group '" + s.name + "' has no features");
    if (s.features.size() > kMaxFeatures) {
      throw InvalidArgument("group '" + s.name + "' has more than " +
                            std::to_string(kMaxFeatures) + " features");
    }
    for (std::size_t gj = 0; gj < gi; ++gj) {
      if (schemas_[gj].name == s.name) throw InvalidArgument("duplicate group '" + s.name + "'");
    }
    for (const auto& f : s.features) {
      if (f.width == 0) {
        throw InvalidArgument("feature '" + f.name + "' in group '" + s.name +
                              "' has zero width");
      }
      declare(f.handle, f.width, vocab_or_empty(vocabs_, f.handle).rows());
    }
    const std::size_t b = s.width();
    declare(s.action_handle, b, vocab_or_empty(vocabs_, s.action_handle).rows());
    if (!time_owner.try_emplace(s.time_handle, s.name).second || widths.count(s.time_handle)) {
      throw InvalidArgument("time lookup '" + s.time_handle +
                            "' cannot be shared across groups or features");
    }
    if (s.time.max_bucket < 1 || !(s.time.base_unit_seconds > 0.0)) {
      throw InvalidArgument("group '" + s.name + "' has an invalid time bucket config");
    }
    declare(s.time_handle, b, s.time.max_bucket + 1);
  }
}

EmbeddingTable& EmbeddingRegistry::table(std::string_view handle) {
  auto it = tables_.find(handle);
  if (it == tables_.end()) throw InvalidArgument("no embedding table '" + std::string(handle) + "'");
  return it->second;
}

const EmbeddingTable& EmbeddingRegistry::table(std::string_view handle) const {
  auto it = tables_.find(handle);
  if (it == tables_.end()) throw InvalidArgument("no embedding table '" + std::string(handle) + "'");
  return it->second;
}

std::vector<EmbeddingTable*> EmbeddingRegistry::tables() {
  std::vector<EmbeddingTable*> out;
  for (auto& [_, t] : tables_) out.push_back(&t);
  return out;
}

std::vector<const EmbeddingTable*> EmbeddingRegistry::tables() const {
  std::vector<const EmbeddingTable*> out;
  for (const auto& [_, t] : tables_) out.push_back(&t);
  return out;
}

void EmbeddingRegistry::initialize(std::mt19937_64& rng) {
  for (auto& [_, t] : tables_) {
    const double limit = std::sqrt(6.0 / static_cast<double>(t.rows() + t.width()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : t.value().data()) v = dist(rng);
  }
}

void EmbeddingRegistry::zero_grad() {
  for (auto& [_, t] : tables_) t.zero_grad();
}

// ---------------------------------------------------------------------------
// Encoding

Var embed_objects(Graph& g, EmbeddingRegistry& reg, std::size_t group, const GroupRows& rows) {
  const GroupSchema& s = reg.schema(group);
  if (rows.features.size() != s.features.size()) {
    throw InvalidArgument("group '" + s.name + "' expects " +
                          std::to_string(s.features.size()) + " feature columns");
  }
  std::vector<Var> parts;
  parts.reserve(s.features.size());
  for (std::size_t f = 0; f < s.features.size(); ++f) {
    if (rows.features[f].size() != rows.size()) {
      throw InvalidArgument("feature column length mismatch in group '" + s.name + "'");
    }
    parts.push_back(g.gather(reg.table(s.features[f].handle), rows.features[f]));
  }
  return parts.size() == 1 ? parts[0] : g.concat(parts, 1);
}

Var encode_rows(Graph& g, EmbeddingRegistry& reg, std::size_t group, const GroupRows& rows) {
  const GroupSchema& s = reg.schema(group);
  if (rows.buckets.size() != rows.size()) {
    throw InvalidArgument("bucket column length mismatch in group '" + s.name + "'");
  }
  Var obj = embed_objects(g, reg, group, rows);
  Var time = g.gather(reg.table(s.time_handle), rows.buckets);
  Var action = g.gather(reg.table(s.action_handle), rows.actions);
  return g.add(g.add(obj, time), action);
}

namespace {

void append_row(GroupRows& rows, const TokenizedBehavior& b, std::size_t bucket) {
  if (rows.features.size() < b.num_features) rows.features.resize(b.num_features);
  rows.actions.push_back(b.action);
  for (std::size_t f = 0; f < b.num_features; ++f) rows.features[f].push_back(b.features[f]);
  rows.buckets.push_back(bucket);
}

}  // namespace

Var embed_object(Graph& g, EmbeddingRegistry& reg, std::string_view group,
                 const std::map<std::string, std::string>& object_features) {
  BehaviorRecord r;
  r.group = std::string(group);
  r.features = object_features;
  const TokenizedBehavior t = reg.tokenize(r);
  GroupRows rows;
  append_row(rows, t, 0);
  return embed_objects(g, reg, t.group, rows);
}

Var encode_behavior(Graph& g, EmbeddingRegistry& reg, const BehaviorRecord& record,
                    std::int64_t ref_time) {
  const TokenizedBehavior t = reg.tokenize(record);
  const TimeBuckets& tb = reg.schema(t.group).time;
  const double elapsed = static_cast<double>(ref_time - record.timestamp);
  GroupRows rows;
  append_row(rows, t, bucketize_time(elapsed, tb.base_unit_seconds, tb.max_bucket));
  return encode_rows(g, reg, t.group, rows);
}

EncodedSequence encode_sequence(Graph& g, EmbeddingRegistry& reg,
                                std::span<const BehaviorRecord> history,
                                std::int64_t ref_time) {
  if (history.empty()) throw InvalidArgument("encode_sequence: empty history");
  std::vector<std::size_t> order(history.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return history[a].timestamp < history[b].timestamp;
  });

  const std::size_t ng = reg.schemas().size();
  std::vector<GroupRows> rows(ng);
  EncodedSequence out;
  out.groups.assign(ng, Var{});
  out.positions.assign(ng, {});
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const BehaviorRecord& r = history[order[pos]];
    const TokenizedBehavior t = reg.tokenize(r);
    const TimeBuckets& tb = reg.schema(t.group).time;
    const double elapsed = static_cast<double>(ref_time - r.timestamp);
    append_row(rows[t.group], t, bucketize_time(elapsed, tb.base_unit_seconds, tb.max_bucket));
    out.positions[t.group].push_back(pos);
  }
  for (std::size_t gi = 0; gi < ng; ++gi) {
    if (rows[gi].size() == 0) continue;
    rows[gi].features.resize(reg.schema(gi).features.size());
    out.groups[gi] = encode_rows(g, reg, gi, rows[gi]);
  }
  out.total = history.size();
  return out;
}

}  // namespace atrank
