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
#include <charconv>
#include <cmath>
#include <functional>
#include <random>

#include "atrank/data.hpp"
#include "atrank/error.hpp"

namespace atrank {

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end)
    throw InvalidArgument("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

// Cluster c owns the tokens j < n with j % clusters == c.
std::size_t slice_size(std::size_t n, std::size_t clusters, std::size_t c) {
  return (n - c + clusters - 1) / clusters;
}

std::size_t parse_token_id(const std::string& token, const std::string& prefix) {
  if (token.rfind(prefix, 0) != 0) return static_cast<std::size_t>(-1);
  std::size_t id = 0;
  const char* b = token.data() + prefix.size();
  const char* e = token.data() + token.size();
  auto [p, ec] = std::from_chars(b, e, id);
  if (ec != std::errc() || p != e || b == e) return static_cast<std::size_t>(-1);
  return id;
}

class Generator {
 public:
  explicit Generator(const SynthConfig& c) : c_(c), rng_(c.seed) {}

  std::vector<Interaction> run() {
    std::vector<Interaction> rows;
    for (std::size_t u = 0; u < c_.users; ++u) user(u, rows);
    return rows;
  }

 private:
  std::size_t uniform(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_);
  }
  double unit() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

  std::size_t pick(std::size_t catalogue, std::size_t cluster) {
    if (unit() < c_.strength)
      return cluster + c_.clusters * uniform(slice_size(catalogue, c_.clusters, cluster));
    return uniform(catalogue);
  }

  std::size_t attribute(std::size_t id, std::size_t catalogue, std::size_t salt) {
    const std::size_t c = id % c_.clusters;
    const std::size_t k = (id / c_.clusters) * (2 * salt + 1) + salt;
    return c + c_.clusters * (k % slice_size(catalogue, c_.clusters, c));
  }

  BehaviorRecord item(std::size_t cluster) {
    const std::size_t i = pick(c_.items, cluster);
    BehaviorRecord r;
    r.group = "item";
    const double a = unit();
    r.action = a < 0.7 ? "browse" : (a < 0.9 ? "mark" : "buy");
    r.features = {{"item", "i" + std::to_string(i)},
                  {"shop", "s" + std::to_string(attribute(i, c_.shops, 0))},
                  {"brand", "b" + std::to_string(attribute(i, c_.brands, 1))},
                  {"cate", "c" + std::to_string(attribute(i, c_.categories, 2))}};
    return r;
  }

  BehaviorRecord query(std::size_t cluster) {
    BehaviorRecord r;
    r.group = "query";
    r.action = "search";
    r.features = {{"query", "q" + std::to_string(pick(c_.queries, cluster))}};
    return r;
  }

  BehaviorRecord coupon(std::size_t cluster) {
    const std::size_t j = pick(c_.coupons, cluster);
    BehaviorRecord r;
    r.group = "coupon";
    r.action = "receive";
    r.features = {{"coupon", "cp" + std::to_string(j)},
                  {"shop", "s" + std::to_string(attribute(j, c_.shops, 3))},
                  {"coupon_type", "t" + std::to_string(j % c_.coupon_types)}};
    return r;
  }

  void user(std::size_t u, std::vector<Interaction>& rows) {
    std::vector<std::size_t> all(c_.clusters);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::vector<std::size_t> interests;
    std::sample(all.begin(), all.end(), std::back_inserter(interests), c_.interests_per_user, rng_);
    std::shuffle(interests.begin(), interests.end(), rng_);

    const std::size_t floor_len = 3 * c_.min_per_group;
    std::size_t n = floor_len;
    if (c_.mean_length > floor_len)
      n += std::poisson_distribution<std::size_t>(static_cast<double>(c_.mean_length - floor_len))(rng_);

    std::vector<int> groups;
    for (std::size_t k = 0; k < c_.min_per_group; ++k) groups.insert(groups.end(), {0, 1, 2});
    while (groups.size() < n) {
      const double g = unit();
      groups.push_back(g < c_.item_share ? 0 : (g < c_.item_share + c_.query_share ? 1 : 2));
    }
    std::shuffle(groups.begin(), groups.end(), rng_);

    std::int64_t t = 1'500'000'000 + static_cast<std::int64_t>(uniform(30 * 86400));
    std::exponential_distribution<double> gap(1.0 / (c_.mean_gap_days * 86400.0));
    std::size_t current = 0;
    const std::string id = "u" + std::to_string(u);
    for (int g : groups) {
      if (interests.size() > 1 && unit() < c_.switch_prob) {
        const std::size_t next = uniform(interests.size() - 1);
        current = next >= current ? next + 1 : next;
      }
      const std::size_t cluster = interests[current];
      BehaviorRecord r = g == 0 ? item(cluster) : (g == 1 ? query(cluster) : coupon(cluster));
      r.timestamp = t;
      rows.push_back({id, std::move(r)});
      t += std::max<std::int64_t>(1, std::llround(gap(rng_)));
    }
  }

  const SynthConfig& c_;
  std::mt19937_64 rng_;
};

}  // namespace

SynthConfig SynthConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  SynthConfig c;
  const std::map<std::string, std::function<void(const std::string&, const std::string&)>> set = {
      {"users", [&](auto& k, auto& v) { c.users = parse_number<std::size_t>(k, v); }},
      {"clusters", [&](auto& k, auto& v) { c.clusters = parse_number<std::size_t>(k, v); }},
      {"interests_per_user",
       [&](auto& k, auto& v) { c.interests_per_user = parse_number<std::size_t>(k, v); }},
      {"items", [&](auto& k, auto& v) { c.items = parse_number<std::size_t>(k, v); }},
      {"shops", [&](auto& k, auto& v) { c.shops = parse_number<std::size_t>(k, v); }},
      {"brands", [&](auto& k, auto& v) { c.brands = parse_number<std::size_t>(k, v); }},
      {"categories", [&](auto& k, auto& v) { c.categories = parse_number<std::size_t>(k, v); }},
      {"queries", [&](auto& k, auto& v) { c.queries = parse_number<std::size_t>(k, v); }},
      {"coupons", [&](auto& k, auto& v) { c.coupons = parse_number<std::size_t>(k, v); }},
      {"coupon_types", [&](auto& k, auto& v) { c.coupon_types = parse_number<std::size_t>(k, v); }},
      {"strength", [&](auto& k, auto& v) { c.strength = parse_number<double>(k, v); }},
      {"switch_prob", [&](auto& k, auto& v) { c.switch_prob = parse_number<double>(k, v); }},
      {"min_per_group", [&](auto& k, auto& v) { c.min_per_group = parse_number<std::size_t>(k, v); }},
      {"mean_length", [&](auto& k, auto& v) { c.mean_length = parse_number<std::size_t>(k, v); }},
      {"item_share", [&](auto& k, auto& v) { c.item_share = parse_number<double>(k, v); }},
      {"query_share", [&](auto& k, auto& v) { c.query_share = parse_number<double>(k, v); }},
      {"mean_gap_days", [&](auto& k, auto& v) { c.mean_gap_days = parse_number<double>(k, v); }},
      {"seed", [&](auto& k, auto& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
  };
  for (const auto& [k, v] : kv) {
    auto it = set.find(k);
    if (it == set.end()) throw InvalidArgument("unknown synth config key '" + k + "'");
    it->second(k, v);
  }
  c.validate();
  return c;
}

void SynthConfig::validate() const {
  if (users == 0) throw InvalidArgument("synth: users must be positive");
  if (clusters == 0) throw InvalidArgument("synth: clusters must be positive");
  if (interests_per_user == 0 || interests_per_user > clusters)
    throw InvalidArgument("synth: interests_per_user must be in [1, clusters]");
  for (std::size_t n : {items, shops, brands, categories, queries, coupons})
    if (n < clusters) throw InvalidArgument("synth: every catalogue needs at least one token per cluster");
  if (coupon_types == 0) throw InvalidArgument("synth: coupon_types must be positive");
  if (!(strength >= 0.0 && strength <= 1.0)) throw InvalidArgument("synth: strength must be in [0, 1]");
  if (!(switch_prob >= 0.0 && switch_prob <= 1.0))
    throw InvalidArgument("synth: switch_prob must be in [0, 1]");
  if (min_per_group == 0) throw InvalidArgument("synth: min_per_group must be positive");
  if (!(item_share >= 0.0 && query_share >= 0.0 && item_share + query_share <= 1.0))
    throw InvalidArgument("synth: group shares must be non-negative and sum to at most 1");
  if (!(mean_gap_days > 0.0)) throw InvalidArgument("synth: mean_gap_days must be positive");
}

InteractionLog generate_synthetic_multigroup(const SynthConfig& config) {
  config.validate();
  return interactions_from(Generator(config).run());
}

int synthetic_cluster_of(const SynthConfig& config, const std::string& group,
                         const std::map<std::string, std::string>& features) {
  static const std::map<std::string, std::pair<std::string, std::string>> key = {
      {"item", {"item", "i"}}, {"query", {"query", "q"}}, {"coupon", {"coupon", "cp"}}};
  auto k = key.find(group);
  if (k == key.end()) return -1;
  auto f = features.find(k->second.first);
  if (f == features.end()) return -1;
  const std::size_t id = parse_token_id(f->second, k->second.second);
  if (id == static_cast<std::size_t>(-1)) return -1;
  return static_cast<int>(id % config.clusters);
}

}  // namespace atrank
