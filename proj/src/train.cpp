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

#include "atrank/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

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

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidArgument("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

constexpr std::uint64_t kEvalSeedSalt = 0x9e3779b97f4a7c15ULL;

}  // namespace

// ---------------------------------------------------------------------------
// Config

TrainConfig TrainConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "embedding_dim") c.embedding_dim = parse_number<std::size_t>(k, v);
    else if (k == "hidden") c.hidden = parse_number<std::size_t>(k, v);
    else if (k == "num_spaces") c.num_spaces = parse_number<std::size_t>(k, v);
    else if (k == "ffn_hidden") c.ffn_hidden = parse_number<std::size_t>(k, v);
    else if (k == "batch") c.batch = parse_number<std::size_t>(k, v);
    else if (k == "l2") c.l2 = parse_number<double>(k, v);
    else if (k == "lr0") c.lr0 = parse_number<double>(k, v);
    else if (k == "decay_rate") c.decay_rate = parse_number<double>(k, v);
    else if (k == "decay_steps") c.decay_steps = parse_number<std::size_t>(k, v);
    else if (k == "dropout") c.dropout = parse_number<double>(k, v);
    else if (k == "layer_norm_eps") c.layer_norm_eps = parse_number<double>(k, v);
    else if (k == "max_steps") c.max_steps = parse_number<std::size_t>(k, v);
    else if (k == "epochs") c.epochs = parse_number<std::size_t>(k, v);
    else if (k == "seed") c.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "mode") c.mode = parse_task_mode(v);
    else if (k == "targets") c.targets = split_list(v);
    else if (k == "model") c.model = parse_architecture(v);
    else if (k == "eval_every") c.eval_every = parse_number<std::size_t>(k, v);
    else if (k == "eval_negatives") c.eval_negatives = parse_number<std::size_t>(k, v);
    else if (k == "resample_negatives") c.resample_negatives = parse_bool(k, v);
    else if (k == "log_every") c.log_every = parse_number<std::size_t>(k, v);
    else throw InvalidArgument("unknown config key '" + k + "'");
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  return from_key_values(read_key_values(path));
}

std::map<std::string, std::string> TrainConfig::to_key_values() const {
  std::string t;
  for (const auto& s : targets) t += (t.empty() ? "" : ",") + s;
  return {{"embedding_dim", std::to_string(embedding_dim)},
          {"hidden", std::to_string(hidden)},
          {"num_spaces", std::to_string(num_spaces)},
          {"ffn_hidden", std::to_string(ffn_hidden)},
          {"batch", std::to_string(batch)},
          {"l2", format_double(l2)},
          {"lr0", format_double(lr0)},
          {"decay_rate", format_double(decay_rate)},
          {"decay_steps", std::to_string(decay_steps)},
          {"dropout", format_double(dropout)},
          {"layer_norm_eps", format_double(layer_norm_eps)},
          {"max_steps", std::to_string(max_steps)},
          {"epochs", std::to_string(epochs)},
          {"seed", std::to_string(seed)},
          {"mode", to_string(mode)},
          {"targets", t},
          {"model", to_string(model)},
          {"eval_every", std::to_string(eval_every)},
          {"eval_negatives", std::to_string(eval_negatives)},
          {"resample_negatives", resample_negatives ? "true" : "false"},
          {"log_every", std::to_string(log_every)}};
}

void TrainConfig::validate() const {
  if (embedding_dim == 0) throw InvalidArgument("embedding_dim must be positive");
  if (batch == 0) throw InvalidArgument("batch must be positive");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) throw InvalidArgument("l2 must be a finite value >= 0");
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw InvalidArgument("lr0 must be a finite value >= 0");
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw InvalidArgument("decay_rate must be in (0, 1]");
  if (max_steps == 0 && epochs == 0) throw InvalidArgument("one of max_steps or epochs must be positive");
  if (log_every == 0) throw InvalidArgument("log_every must be positive");
  if (eval_negatives == 0) throw InvalidArgument("eval_negatives must be positive");
  model_dims().validate();
}

ModelDims TrainConfig::model_dims() const {
  ModelDims d;
  d.hidden = hidden;
  d.num_spaces = num_spaces;
  d.ffn_hidden = ffn_hidden == 0 ? hidden : ffn_hidden;
  d.dropout = dropout;
  d.layer_norm_eps = layer_norm_eps;
  d.architecture = model;
  return d;
}

double lr_schedule(const TrainConfig& config, std::size_t step, std::size_t decay_steps) {
  if (decay_steps == 0) throw InvalidArgument("lr_schedule: decay_steps must be positive");
  return config.lr0 *
         std::pow(config.decay_rate, static_cast<double>(step) / static_cast<double>(decay_steps));
}

// ---------------------------------------------------------------------------
// Evaluation

AucResult average_user_auc(std::span<const std::uint32_t> users, std::span<const double> scores,
                           std::span<const int> labels) {
  if (users.size() != scores.size() || users.size() != labels.size())
    throw InvalidArgument("average_user_auc: users, scores and labels differ in length");
  std::map<std::uint32_t, std::pair<std::vector<double>, std::vector<double>>> by_user;
  for (std::size_t i = 0; i < users.size(); ++i) {
    auto& [pos, neg] = by_user[users[i]];
    (labels[i] == 1 ? pos : neg).push_back(scores[i]);
  }
  AucResult r;
  double total = 0.0;
  for (auto& [u, pn] : by_user) {
    auto& [pos, neg] = pn;
    if (pos.empty() || neg.empty()) {
      ++r.skipped;
      continue;
    }
    // Count pairs with pos > neg by merging sorted lists.
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    std::size_t below = 0, j = 0;
    for (double p : pos) {
      while (j < neg.size() && neg[j] < p) ++j;
      below += j;
    }
    total += static_cast<double>(below) / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
    ++r.users;
  }
  r.auc = r.users ? total / static_cast<double>(r.users) : 0.0;
  return r;
}

std::vector<Sample> build_eval_samples(const Dataset& data, const TaskSpec& task,
                                       std::size_t negatives, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto positives = build_test_positives(data, task);
  return with_negatives(positives, data, negatives, rng);
}

std::vector<Sample> build_eval_samples(const Dataset& data, const TrainConfig& config) {
  const TaskSpec task = TaskSpec::resolve(config.mode, config.targets, data.schemas());
  return build_eval_samples(data, task, config.eval_negatives, config.seed ^ kEvalSeedSalt);
}

std::vector<double> score_eval_samples(AtrankModel& model, std::span<const Sample> samples) {
  std::vector<double> scores;
  scores.reserve(samples.size());
  std::size_t begin = 0;
  while (begin < samples.size()) {
    std::size_t end = begin + 1;
    while (end < samples.size() && samples[end].user == samples[begin].user) ++end;
    const auto s = score_samples(model, samples.subspan(begin, end - begin));
    scores.insert(scores.end(), s.begin(), s.end());
    begin = end;
  }
  return scores;
}

namespace {

AucResult auc_of(AtrankModel& model, std::span<const Sample> samples) {
  const auto scores = score_eval_samples(model, samples);
  std::vector<std::uint32_t> users;
  std::vector<int> labels;
  for (const auto& s : samples) {
    users.push_back(s.user);
    labels.push_back(s.label);
  }
  return average_user_auc(users, scores, labels);
}

}  // namespace

AucResult evaluate_auc(AtrankModel& model, std::span<const Sample> eval_samples) {
  return auc_of(model, eval_samples);
}

AucResult evaluate_auc_for_group(AtrankModel& model, std::span<const Sample> eval_samples,
                                 std::uint32_t group) {
  std::vector<Sample> subset;
  for (const auto& s : eval_samples)
    if (s.candidate.group == group) subset.push_back(s);
  return auc_of(model, subset);
}

// ---------------------------------------------------------------------------
// Training

AtrankModel make_model(const TrainConfig& config, const Dataset& data) {
  config.validate();
  AtrankModel m(EmbeddingRegistry(data.schemas_with_width(config.embedding_dim), data.vocabularies()),
                config.model_dims());
  m.initialize(config.seed);
  return m;
}

void sgd_step(AtrankModel& model, double lr) {
  for (Parameter* p : model.dense_parameters()) {
    if (!p->has_grad()) continue;
    auto v = p->value.data();
    const auto g = p->grad.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
  for (EmbeddingTable* t : model.registry().tables())
    for (std::size_t r : t->touched_rows()) {
      auto row = t->value().row(r);
      const auto g = t->grad_of(r);
      for (std::size_t i = 0; i < row.size(); ++i) row[i] -= lr * g[i];
    }
}

namespace {

struct Stepper {
  AtrankModel& model;
  const TrainConfig& config;
  std::size_t decay_steps;
  std::size_t total_steps;
  TrainResult result;
  double window_loss = 0.0;
  std::size_t window_n = 0;

  // Returns the step's loss.
  double step(std::size_t s, std::span<const Sample> samples) {
    const double lr = lr_schedule(config, s, decay_steps);
    const SampleBatch batch = make_batch(samples, model.registry().schemas());
    Graph g(true);
    ForwardOptions opts;
    opts.training = true;
    opts.seed = config.seed;
    opts.step = s;
    const BatchOutput out = model.forward(g, batch, opts);
    const Var loss = model.pointwise_loss(g, out.logits, batch.labels, config.l2);
    const double value = g.value(loss).item();
    if (!std::isfinite(value))
      throw DivergenceError("non-finite training loss at step " + std::to_string(s));
    g.backward(loss);
    sgd_step(model, lr);
    model.zero_grad();
    window_loss += value;
    ++window_n;
    return value;
  }

  // Emits a metrics row after step s when logging or evaluation is due.
  std::optional<MetricsRow> maybe_row(std::size_t s, bool eval_due) {
    const std::size_t done = s + 1;
    const bool last = done == total_steps;
    if (!(last || eval_due || done % config.log_every == 0)) return std::nullopt;
    MetricsRow row;
    row.step = done;
    row.loss = window_n ? window_loss / static_cast<double>(window_n) : 0.0;
    row.lr = lr_schedule(config, s, decay_steps);
    result.final_loss = row.loss;
    window_loss = 0.0;
    window_n = 0;
    return row;
  }
};

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

TrainResult train(AtrankModel& model, const TrainConfig& config, const Dataset& data,
                  const std::function<void(const MetricsRow&)>& on_metrics) {
  config.validate();
  const TaskSpec task = TaskSpec::resolve(config.mode, config.targets, data.schemas());
  const std::vector<Sample> positives = build_train_positives(data, task);
  if (positives.empty()) throw DataError("no training samples for the selected task");
  const std::vector<Sample> eval = build_eval_samples(data, config);

  std::mt19937_64 rng(config.seed);
  const std::size_t per_epoch = ceil_div(2 * positives.size(), config.batch);
  const std::size_t total = config.max_steps ? config.max_steps : config.epochs * per_epoch;
  Stepper st{model, config, config.decay_steps ? config.decay_steps : per_epoch, total, {}};
  st.result.steps_per_epoch = per_epoch;

  std::vector<std::size_t> order(positives.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Sample> epoch;
  std::vector<TokenizedBehavior> fixed_negatives;
  std::size_t cursor = 0;

  const auto new_epoch = [&] {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Sample> shuffled;
    shuffled.reserve(order.size());
    for (std::size_t i : order) shuffled.push_back(positives[i]);
    if (config.resample_negatives || fixed_negatives.empty()) {
      epoch = with_negatives(shuffled, data, 1, rng);
      if (!config.resample_negatives) {
        // Remember each positive's negative by its original index.
        fixed_negatives.assign(positives.size(), {});
        for (std::size_t k = 0; k < order.size(); ++k) fixed_negatives[order[k]] = epoch[2 * k + 1].candidate;
      }
    } else {
      epoch.clear();
      for (std::size_t i : order) {
        epoch.push_back(positives[i]);
        Sample n = positives[i];
        n.candidate = fixed_negatives[i];
        n.label = 0;
        epoch.push_back(std::move(n));
      }
    }
    cursor = 0;
  };

  new_epoch();
  for (std::size_t s = 0; s < total; ++s) {
    if (cursor >= epoch.size()) new_epoch();
    const std::size_t n = std::min(config.batch, epoch.size() - cursor);
    st.step(s, std::span<const Sample>(epoch).subspan(cursor, n));
    cursor += n;
    const bool eval_due = (config.eval_every && (s + 1) % config.eval_every == 0) || s + 1 == total;
    if (auto row = st.maybe_row(s, eval_due)) {
      if (eval_due) {
        if (s + 1 == total) model.round_to_float32();
        st.result.final_auc = evaluate_auc(model, eval);
        row->auc = st.result.final_auc.auc;
      }
      if (on_metrics) on_metrics(*row);
      st.result.metrics.push_back(*row);
    }
  }
  st.result.steps = total;
  return st.result;
}

TrainResult train_on_samples(AtrankModel& model, const TrainConfig& config,
                             std::span<const Sample> samples) {
  config.validate();
  if (samples.empty()) throw InvalidArgument("train_on_samples: no samples");
  const std::size_t per_epoch = ceil_div(samples.size(), config.batch);
  const std::size_t total = config.max_steps ? config.max_steps : config.epochs * per_epoch;
  Stepper st{model, config, config.decay_steps ? config.decay_steps : per_epoch, total, {}};
  st.result.steps_per_epoch = per_epoch;
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < total; ++s) {
    if (cursor >= samples.size()) cursor = 0;
    const std::size_t n = std::min(config.batch, samples.size() - cursor);
    st.step(s, samples.subspan(cursor, n));
    cursor += n;
    if (auto row = st.maybe_row(s, false)) st.result.metrics.push_back(*row);
  }
  st.result.steps = total;
  return st.result;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const bool with_auc = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.auc.has_value(); });
  out << (with_auc ? "step,loss,lr,auc\n" : "step,loss,lr\n");
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.step << ',' << r.loss << ',' << r.lr;
    if (with_auc) {
      out << ',';
      if (r.auc) out << *r.auc;
    }
    out << '\n';
  }
}

}  // namespace atrank
