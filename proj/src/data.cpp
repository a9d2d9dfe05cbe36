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

#include "atrank/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

#include "atrank/error.hpp"

namespace atrank {

using nlohmann::json;

namespace {

std::string line_prefix(const std::filesystem::path& path, std::size_t line_no) {
  return path.string() + ":" + std::to_string(line_no) + ": ";
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> feature_names_of(const BehaviorRecord& r) {
  std::vector<std::string> names;
  for (const auto& [k, v] : r.features) names.push_back(k);
  return names;
}

// Object identity across the raw log: group plus every feature token.
std::string object_key(const BehaviorRecord& r) {
  std::string k = r.group;
  for (const auto& [name, value] : r.features) {
    k += '\x1f';
    k += value;
  }
  return k;
}

void check_against_schema(const GroupSchema& s, const BehaviorRecord& r) {
  if (r.features.size() != s.features.size())
    throw DataError("group '" + r.group + "' expects " + std::to_string(s.features.size()) +
                    " features, record has " + std::to_string(r.features.size()));
  for (const auto& f : s.features)
    if (!r.features.count(f.name))
      throw DataError("group '" + r.group + "' record lacks feature '" + f.name + "'");
}

void five_core_filter(std::vector<Interaction>& rows) {
  for (;;) {
    std::unordered_map<std::string, std::size_t> per_user, per_object;
    for (const auto& r : rows) {
      ++per_user[r.user];
      ++per_object[object_key(r.record)];
    }
    const std::size_t before = rows.size();
    std::erase_if(rows, [&](const Interaction& r) {
      return per_user[r.user] < 5 || per_object[object_key(r.record)] < 5;
    });
    if (rows.size() == before) return;
  }
}

Interaction parse_jsonl_row(const std::string& line) {
  const json j = json::parse(line);
  if (!j.is_object()) throw DataError("expected a JSON object");
  Interaction it;
  const auto str = [&](const char* key) -> std::string {
    if (!j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
    const auto& v = j.at(key);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
    throw DataError(std::string("field '") + key + "' must be a string");
  };
  it.user = str("user");
  it.record.group = str("group");
  it.record.action = str("action");
  if (!j.contains("timestamp") || !j.at("timestamp").is_number_integer())
    throw DataError("field 'timestamp' must be an integer");
  it.record.timestamp = j.at("timestamp").get<std::int64_t>();
  if (!j.contains("features") || !j.at("features").is_object() || j.at("features").empty())
    throw DataError("field 'features' must be a non-empty object");
  for (const auto& [k, v] : j.at("features").items()) {
    if (v.is_string()) it.record.features[k] = v.get<std::string>();
    else if (v.is_number_integer()) it.record.features[k] = std::to_string(v.get<std::int64_t>());
    else throw DataError("feature '" + k + "' must be a string");
  }
  if (it.record.features.size() > kMaxFeatures)
    throw DataError("at most " + std::to_string(kMaxFeatures) + " features per object");
  return it;
}

Interaction parse_amazon_row(const std::string& line) {
  std::vector<std::string> cols;
  std::stringstream ss(line);
  std::string c;
  while (std::getline(ss, c, ',')) cols.push_back(trim(c));
  if (!line.empty() && line.back() == ',') cols.emplace_back();
  if (cols.size() != 4)
    throw DataError("expected 4 comma-separated fields, got " + std::to_string(cols.size()));
  for (const auto& col : cols)
    if (col.empty()) throw DataError("empty field");
  std::int64_t ts = 0;
  const auto [p, ec] = std::from_chars(cols[3].data(), cols[3].data() + cols[3].size(), ts);
  if (ec != std::errc() || p != cols[3].data() + cols[3].size())
    throw DataError("timestamp '" + cols[3] + "' is not an integer");
  Interaction it;
  it.user = cols[0];
  it.record.group = "item";
  it.record.action = "review";
  it.record.features = {{"item", cols[1]}, {"cate", cols[2]}};
  it.record.timestamp = ts;
  return it;
}

// Splits one user's time-ordered records into the train part and the held-out
// last record of every group. Returns false for users that are skipped.
bool split_timeline(const std::vector<BehaviorRecord>& records,
                    std::vector<BehaviorRecord>& train, std::vector<BehaviorRecord>& test) {
  train.clear();
  test.clear();
  if (records.size() < 3) return false;
  std::map<std::string, std::size_t> last;
  for (std::size_t i = 0; i < records.size(); ++i) last[records[i].group] = i;
  std::vector<bool> held(records.size(), false);
  for (const auto& [g, i] : last) held[i] = true;
  for (std::size_t i = 0; i < records.size(); ++i) (held[i] ? test : train).push_back(records[i]);
  return !train.empty();
}

json schema_to_json(const GroupSchema& s) {
  json feats = json::array();
  for (const auto& f : s.features) feats.push_back({{"name", f.name}, {"handle", f.handle}});
  return {{"name", s.name},
          {"features", feats},
          {"action_handle", s.action_handle},
          {"time_handle", s.time_handle},
          {"base_unit_seconds", s.time.base_unit_seconds},
          {"max_bucket", s.time.max_bucket}};
}

GroupSchema schema_from_json(const json& j) {
  GroupSchema s;
  s.name = j.at("name").get<std::string>();
  for (const auto& f : j.at("features"))
    s.features.push_back({f.at("name").get<std::string>(), f.at("handle").get<std::string>(), 0});
  s.action_handle = j.at("action_handle").get<std::string>();
  s.time_handle = j.at("time_handle").get<std::string>();
  s.time.base_unit_seconds = j.at("base_unit_seconds").get<double>();
  s.time.max_bucket = j.at("max_bucket").get<std::size_t>();
  return s;
}

json record_to_json(const std::string& user, const BehaviorRecord& r) {
  return {{"user", user},
          {"group", r.group},
          {"action", r.action},
          {"timestamp", r.timestamp},
          {"features", r.features}};
}

void write_records(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, std::vector<BehaviorRecord>>>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& [user, recs] : rows)
    for (const auto& r : recs) out << record_to_json(user, r).dump() << '\n';
}

std::vector<Interaction> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Interaction> rows;
  std::map<std::string, std::vector<std::string>> layout;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      rows.push_back(parse_jsonl_row(line));
      const auto& r = rows.back().record;
      auto [it, fresh] = layout.try_emplace(r.group, feature_names_of(r));
      if (!fresh && it->second != feature_names_of(r))
        throw DataError("feature set of group '" + r.group + "' differs from its first record");
    } catch (const json::exception& e) {
      throw DataError(line_prefix(path, line_no) + e.what());
    } catch (const DataError& e) {
      throw DataError(line_prefix(path, line_no) + e.what());
    }
  }
  return rows;
}

// Vocabularies over the given records, tokens in first-seen order.
VocabularySet build_vocabularies(const std::vector<GroupSchema>& schemas,
                                 const std::vector<const BehaviorRecord*>& records) {
  VocabularySet vocabs;
  for (const auto& s : schemas) {
    vocabs[s.action_handle];
    for (const auto& f : s.features) vocabs[f.handle];
  }
  for (const BehaviorRecord* r : records) {
    const GroupSchema& s = schemas[find_group(schemas, r->group)];
    vocabs[s.action_handle].add(r->action);
    for (const auto& f : s.features) vocabs[f.handle].add(r->features.at(f.name));
  }
  return vocabs;
}

std::vector<TokenizedBehavior> tokenize_all(const std::vector<GroupSchema>& schemas,
                                            const VocabularySet& vocabs,
                                            const std::vector<BehaviorRecord>& records) {
  std::vector<TokenizedBehavior> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(tokenize(schemas, vocabs, r));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Interactions

std::size_t InteractionLog::num_records() const {
  std::size_t n = 0;
  for (const auto& u : users) n += u.records.size();
  return n;
}

std::map<std::string, std::size_t> InteractionLog::stats() const {
  std::map<std::string, std::set<std::string>> distinct;
  for (const auto& u : users)
    for (const auto& r : u.records) {
      const GroupSchema& s = schemas[find_group(schemas, r.group)];
      for (const auto& f : s.features) distinct[f.handle].insert(r.features.at(f.name));
    }
  std::map<std::string, std::size_t> out;
  for (const auto& [h, set] : distinct) out[h] = set.size();
  out["users"] = users.size();
  out["records"] = num_records();
  return out;
}

InputFormat parse_input_format(const std::string& s) {
  if (s == "amazon-csv") return InputFormat::kAmazonCsv;
  if (s == "jsonl") return InputFormat::kJsonl;
  throw InvalidArgument("unknown input format '" + s + "' (expected amazon-csv or jsonl)");
}

InteractionLog interactions_from(std::vector<Interaction> rows, std::vector<GroupSchema> schemas) {
  if (rows.empty()) throw DataError("empty dataset");
  if (schemas.empty()) {
    std::map<std::string, std::vector<std::string>> layout;
    for (const auto& r : rows)
      if (!layout.count(r.record.group)) layout[r.record.group] = feature_names_of(r.record);
    for (auto& [g, names] : layout) schemas.push_back(GroupSchema::make(g, names, 0));
  }
  InteractionLog log;
  log.schemas = std::move(schemas);
  std::unordered_map<std::string, std::size_t> index;
  for (auto& r : rows) {
    check_against_schema(log.schemas[find_group(log.schemas, r.record.group)], r.record);
    auto [it, fresh] = index.try_emplace(r.user, log.users.size());
    if (fresh) log.users.push_back({r.user, {}});
    log.users[it->second].records.push_back(std::move(r.record));
  }
  for (auto& u : log.users)
    std::stable_sort(u.records.begin(), u.records.end(),
                     [](const BehaviorRecord& a, const BehaviorRecord& b) {
                       return a.timestamp < b.timestamp;
                     });
  return log;
}

InteractionLog load_interactions(const std::filesystem::path& path, InputFormat format,
                                 bool five_core) {
  std::vector<Interaction> rows;
  if (format == InputFormat::kJsonl) {
    rows = read_jsonl(path);
  } else {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (trim(line).empty()) continue;
      try {
        rows.push_back(parse_amazon_row(line));
      } catch (const DataError& e) {
        throw DataError(line_prefix(path, line_no) + e.what());
      }
    }
  }
  if (five_core) five_core_filter(rows);
  if (rows.empty()) throw DataError(path.string() + ": empty dataset");
  return interactions_from(std::move(rows));
}

void write_jsonl(const std::filesystem::path& path, const InteractionLog& log) {
  std::vector<std::pair<std::string, std::vector<BehaviorRecord>>> rows;
  for (const auto& u : log.users) rows.emplace_back(u.user, u.records);
  write_records(path, rows);
}

// ---------------------------------------------------------------------------
// Split

TrainTestSplit make_train_and_test(std::span<const TokenizedBehavior> seq, std::uint32_t user) {
  TrainTestSplit out;
  const std::size_t n = seq.size();
  if (n < 3) return out;
  for (std::size_t k = 1; k + 1 < n; ++k) {
    Sample s;
    s.user = user;
    s.history.assign(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(k));
    s.candidate = seq[k];
    s.label = 1;
    s.ref_time = seq[k].timestamp;
    out.train.push_back(std::move(s));
  }
  Sample t;
  t.user = user;
  t.history.assign(seq.begin(), seq.end() - 1);
  t.candidate = seq[n - 1];
  t.label = 1;
  t.ref_time = seq[n - 1].timestamp;
  out.test = std::move(t);
  return out;
}

// ---------------------------------------------------------------------------
// Prepared dataset

PrepareReport prepare_dataset(const InteractionLog& log, const std::filesystem::path& outdir) {
  namespace fs = std::filesystem;
  PrepareReport report;
  std::vector<std::pair<std::string, std::vector<BehaviorRecord>>> train_rows, test_rows;
  std::vector<const BehaviorRecord*> train_refs;
  std::vector<BehaviorRecord> train, test;
  for (const auto& u : log.users) {
    if (!split_timeline(u.records, train, test)) {
      ++report.users_skipped;
      continue;
    }
    ++report.users_kept;
    report.train_records += train.size();
    report.test_records += test.size();
    train_rows.emplace_back(u.user, train);
    test_rows.emplace_back(u.user, test);
  }
  if (report.users_kept == 0) throw DataError("no user has at least 3 behaviors");
  for (const auto& [u, recs] : train_rows)
    for (const auto& r : recs) train_refs.push_back(&r);
  const VocabularySet vocabs = build_vocabularies(log.schemas, train_refs);

  std::error_code ec;
  fs::create_directories(outdir / "vocab", ec);
  if (ec) throw DataError("cannot create " + (outdir / "vocab").string() + ": " + ec.message());

  json schema = {{"format_version", 1}, {"groups", json::array()}};
  for (const auto& s : log.schemas) schema["groups"].push_back(schema_to_json(s));
  std::ofstream(outdir / "schema.json") << schema.dump(2) << '\n';
  for (const auto& [handle, v] : vocabs) v.save(outdir / "vocab" / (handle + ".txt"));
  write_records(outdir / "train.jsonl", train_rows);
  write_records(outdir / "test.jsonl", test_rows);

  json stats = log.stats();
  stats["users_kept"] = report.users_kept;
  stats["users_skipped"] = report.users_skipped;
  stats["train_records"] = report.train_records;
  stats["test_records"] = report.test_records;
  std::ofstream(outdir / "stats.json") << stats.dump(2) << '\n';
  return report;
}

Dataset Dataset::from_log(const InteractionLog& log) {
  Dataset d;
  d.schemas_ = log.schemas;
  std::vector<std::pair<std::string, std::pair<std::vector<BehaviorRecord>,
                                               std::vector<BehaviorRecord>>>> split;
  std::vector<BehaviorRecord> train, test;
  for (const auto& u : log.users)
    if (split_timeline(u.records, train, test)) split.push_back({u.user, {train, test}});
  if (split.empty()) throw DataError("no user has at least 3 behaviors");
  std::vector<const BehaviorRecord*> refs;
  for (const auto& [u, tt] : split)
    for (const auto& r : tt.first) refs.push_back(&r);
  d.vocabs_ = build_vocabularies(d.schemas_, refs);
  for (const auto& [u, tt] : split)
    d.users_.push_back({u, tokenize_all(d.schemas_, d.vocabs_, tt.first),
                        tokenize_all(d.schemas_, d.vocabs_, tt.second)});
  d.build_pools();
  return d;
}

Dataset Dataset::open(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path schema_path = dir / "schema.json";
  std::ifstream in(schema_path);
  if (!in) throw DataError("not a prepared dataset (missing " + schema_path.string() + ")");
  Dataset d;
  try {
    const json schema = json::parse(in);
    for (const auto& g : schema.at("groups")) d.schemas_.push_back(schema_from_json(g));
  } catch (const json::exception& e) {
    throw DataError(schema_path.string() + ": " + e.what());
  }
  if (d.schemas_.empty()) throw DataError(schema_path.string() + ": no behavior groups");
  for (const auto& s : d.schemas_) {
    d.vocabs_[s.action_handle] = Vocabulary::load(dir / "vocab" / (s.action_handle + ".txt"));
    for (const auto& f : s.features)
      if (!d.vocabs_.count(f.handle))
        d.vocabs_[f.handle] = Vocabulary::load(dir / "vocab" / (f.handle + ".txt"));
  }

  std::unordered_map<std::string, std::size_t> index;
  for (const auto& it : read_jsonl(dir / "train.jsonl")) {
    auto [pos, fresh] = index.try_emplace(it.user, d.users_.size());
    if (fresh) d.users_.push_back({it.user, {}, {}});
    d.users_[pos->second].train.push_back(tokenize(d.schemas_, d.vocabs_, it.record));
  }
  for (const auto& it : read_jsonl(dir / "test.jsonl")) {
    auto pos = index.find(it.user);
    if (pos == index.end())
      throw DataError("test.jsonl: user '" + it.user + "' has no training behaviors");
    d.users_[pos->second].test.push_back(tokenize(d.schemas_, d.vocabs_, it.record));
  }
  if (d.users_.empty()) throw DataError(dir.string() + ": empty dataset");
  for (auto& u : d.users_)
    std::stable_sort(u.train.begin(), u.train.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  d.build_pools();
  return d;
}

std::size_t Dataset::find_user(const std::string& id) const {
  for (std::size_t i = 0; i < users_.size(); ++i)
    if (users_[i].id == id) return i;
  throw DataError("unknown user '" + id + "'");
}

Dataset Dataset::with_vocabularies(const std::vector<GroupSchema>& schemas,
                                   const VocabularySet& vocabs) const {
  if (schemas.size() != schemas_.size())
    throw DataError("dataset and model disagree on the number of behavior groups");
  for (std::size_t g = 0; g < schemas.size(); ++g) {
    bool same = schemas[g].name == schemas_[g].name &&
                schemas[g].features.size() == schemas_[g].features.size();
    for (std::size_t f = 0; same && f < schemas[g].features.size(); ++f)
      same = schemas[g].features[f].name == schemas_[g].features[f].name;
    if (!same) throw DataError("dataset group '" + schemas_[g].name + "' does not match the model");
  }
  Dataset d;
  d.schemas_ = schemas;
  d.vocabs_ = vocabs;
  const auto convert = [&](const std::vector<TokenizedBehavior>& in) {
    std::vector<TokenizedBehavior> out;
    out.reserve(in.size());
    for (const auto& b : in) out.push_back(tokenize(schemas, vocabs, detokenize(schemas_, vocabs_, b)));
    return out;
  };
  for (const auto& u : users_) d.users_.push_back({u.id, convert(u.train), convert(u.test)});
  d.build_pools();
  return d;
}

std::vector<GroupSchema> Dataset::schemas_with_width(std::size_t width) const {
  auto out = schemas_;
  for (auto& s : out)
    for (auto& f : s.features) f.width = width;
  return out;
}

void Dataset::build_pools() {
  pools_.assign(schemas_.size(), {});
  std::vector<ObjectSet> seen(schemas_.size());
  for (const auto& u : users_)
    for (const auto& b : u.train) {
      TokenizedBehavior obj = b;
      obj.action = 0;
      obj.timestamp = 0;
      if (seen[b.group].insert(obj).second) pools_[b.group].push_back(obj);
    }
}

// ---------------------------------------------------------------------------
// Tasks

std::string to_string(TaskMode m) {
  switch (m) {
    case TaskMode::kOne2One: return "one2one";
    case TaskMode::kAll2One: return "all2one";
    case TaskMode::kAll2All: return "all2all";
  }
  return "?";
}

TaskMode parse_task_mode(const std::string& s) {
  if (s == "one2one") return TaskMode::kOne2One;
  if (s == "all2one") return TaskMode::kAll2One;
  if (s == "all2all") return TaskMode::kAll2All;
  throw InvalidArgument("unknown task mode '" + s + "' (expected one2one, all2one or all2all)");
}

TaskSpec TaskSpec::resolve(TaskMode mode, std::span<const std::string> names,
                           std::span<const GroupSchema> schemas) {
  TaskSpec t;
  t.mode = mode;
  for (const auto& n : names) {
    std::size_t g = 0;
    try {
      g = find_group(schemas, n);
    } catch (const DataError&) {
      throw InvalidArgument("unknown target group '" + n + "'");
    }
    if (std::find(t.targets.begin(), t.targets.end(), g) == t.targets.end())
      t.targets.push_back(static_cast<std::uint32_t>(g));
  }
  if (mode == TaskMode::kAll2All) {
    if (t.targets.empty())
      for (std::size_t g = 0; g < schemas.size(); ++g) t.targets.push_back(static_cast<std::uint32_t>(g));
  } else {
    if (t.targets.empty() && schemas.size() == 1) t.targets.push_back(0);
    if (t.targets.size() != 1)
      throw InvalidArgument(to_string(mode) + " needs exactly one target group");
  }
  return t;
}

bool TaskSpec::is_target(std::uint32_t group) const {
  return std::find(targets.begin(), targets.end(), group) != targets.end();
}

bool TaskSpec::history_includes(std::uint32_t group) const {
  return mode != TaskMode::kOne2One || group == targets.front();
}

std::vector<Sample> build_train_positives(const Dataset& data, const TaskSpec& task) {
  std::vector<Sample> out;
  std::vector<TokenizedBehavior> seq;
  for (std::size_t u = 0; u < data.users().size(); ++u) {
    seq.clear();
    for (const auto& b : data.users()[u].train)
      if (task.history_includes(b.group)) seq.push_back(b);
    for (std::size_t k = 1; k < seq.size(); ++k) {
      if (!task.is_target(seq[k].group)) continue;
      Sample s;
      s.user = static_cast<std::uint32_t>(u);
      s.history.assign(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(k));
      s.candidate = seq[k];
      s.ref_time = seq[k].timestamp;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<Sample> build_test_positives(const Dataset& data, const TaskSpec& task) {
  std::vector<Sample> out;
  for (std::size_t u = 0; u < data.users().size(); ++u) {
    const auto& user = data.users()[u];
    for (std::uint32_t g : task.targets)
      for (const auto& t : user.test) {
        if (t.group != g) continue;
        Sample s;
        s.user = static_cast<std::uint32_t>(u);
        for (const auto& b : user.train)
          if (task.history_includes(b.group) && b.timestamp <= t.timestamp) s.history.push_back(b);
        if (s.history.empty()) continue;
        s.candidate = t;
        s.ref_time = t.timestamp;
        out.push_back(std::move(s));
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Negatives

std::size_t ObjectKeyHash::operator()(const TokenizedBehavior& b) const noexcept {
  std::size_t h = b.group * 0x9e3779b97f4a7c15ULL;
  for (std::uint32_t f : b.features) h = (h ^ f) * 0x100000001b3ULL;
  return h;
}

ObjectSet owned_objects(const Dataset::User& user) {
  ObjectSet s;
  for (const auto& b : user.train) s.insert(b);
  for (const auto& b : user.test) s.insert(b);
  return s;
}

TokenizedBehavior sample_negative(const TokenizedBehavior& positive,
                                  std::span<const TokenizedBehavior> pool,
                                  const ObjectSet& owned, std::mt19937_64& rng) {
  if (pool.empty()) throw DataError("negative sampling: empty object pool");
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const TokenizedBehavior& c = pool[pick(rng)];
    if (c.group != positive.group)
      throw InvalidArgument("negative sampling: pool group differs from the positive's");
    if (owned.count(c)) continue;
    TokenizedBehavior neg = c;
    neg.action = positive.action;
    neg.timestamp = positive.timestamp;
    return neg;
  }
  throw DataError("negative sampling: no unowned object found after 100 draws");
}

std::vector<Sample> with_negatives(std::span<const Sample> positives, const Dataset& data,
                                   std::size_t ratio, std::mt19937_64& rng) {
  std::vector<Sample> out;
  out.reserve(positives.size() * (ratio + 1));
  std::unordered_map<std::uint32_t, ObjectSet> owned;
  for (const Sample& p : positives) {
    auto it = owned.find(p.user);
    if (it == owned.end()) it = owned.emplace(p.user, owned_objects(data.users().at(p.user))).first;
    out.push_back(p);
    out.back().label = 1;
    for (std::size_t r = 0; r < ratio; ++r) {
      Sample n = p;
      n.candidate = sample_negative(p.candidate, data.object_pool(p.candidate.group), it->second, rng);
      n.label = 0;
      out.push_back(std::move(n));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument(line_prefix(path, line_no) + "expected key=value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw InvalidArgument(line_prefix(path, line_no) + "empty key");
    if (kv.count(key)) throw InvalidArgument(line_prefix(path, line_no) + "duplicate key '" + key + "'");
    kv[key] = trim(std::string_view(t).substr(eq + 1));
  }
  return kv;
}

}  // namespace atrank
