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

#include "atrank/model.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "atrank/error.hpp"

namespace atrank {

std::string to_string(Architecture a) {
  return a == Architecture::kAtrank ? "atrank" : "meanpool";
}

Architecture parse_architecture(const std::string& s) {
  if (s == "atrank") return Architecture::kAtrank;
  if (s == "meanpool") return Architecture::kMeanPool;
  throw InvalidArgument("unknown model architecture '" + s + "' (expected atrank|meanpool)");
}

void ModelDims::validate() const {
  if (hidden == 0 || num_spaces == 0 || hidden % num_spaces != 0) {
    throw InvalidArgument("hidden width " + std::to_string(hidden) +
                          " must be a positive multiple of num_spaces " +
                          std::to_string(num_spaces));
  }
  if (ffn_hidden == 0) throw InvalidArgument("ffn_hidden must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must lie in [0, 1)");
  if (!(layer_norm_eps > 0.0)) throw InvalidArgument("layer_norm_eps must be positive");
}

namespace {

Dense make_dense(const std::string& name, std::size_t in, std::size_t out) {
  return Dense{Parameter(name + ".weight", Tensor({in, out})),
               Parameter(name + ".bias", Tensor({1, out}))};
}

void glorot(Parameter& p, std::mt19937_64& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : p.value.data()) v = dist(rng);
}

void init_dense(Dense& d, std::mt19937_64& rng) {
  glorot(d.weight, rng);
  d.bias.value.fill(0.0);
}

float round_f32(double v) { return static_cast<float>(v); }

}  // namespace

Var Dense::apply(Graph& g, Var x, bool relu) {
  Var y = g.add_row(g.matmul(x, g.parameter(weight)), g.parameter(bias));
  return relu ? g.relu(y) : y;
}

// ---------------------------------------------------------------------------
// AttentionStage

AttentionStage::AttentionStage(const std::string& prefix, const ModelDims& dims)
    : query_proj(make_dense(prefix + ".query", dims.hidden, dims.hidden)),
      value_proj(make_dense(prefix + ".value", dims.hidden, dims.hidden)),
      ffn_inner(make_dense(prefix + ".ffn_inner", dims.hidden, dims.ffn_hidden)),
      ffn_outer(make_dense(prefix + ".ffn_outer", dims.ffn_hidden, dims.hidden)),
      ln_gain(prefix + ".ln.gain", Tensor({1, dims.hidden}, 1.0)),
      ln_bias(prefix + ".ln.bias", Tensor({1, dims.hidden})) {
  for (std::size_t k = 0; k < dims.num_spaces; ++k) {
    bilinear.emplace_back(prefix + ".bilinear." + std::to_string(k),
                          Tensor({dims.space_width(), dims.hidden}));
  }
}

std::vector<Parameter*> AttentionStage::parameters() {
  std::vector<Parameter*> out{&query_proj.weight, &query_proj.bias, &value_proj.weight,
                              &value_proj.bias};
  for (auto& w : bilinear) out.push_back(&w);
  for (Parameter* p : {&ffn_inner.weight, &ffn_inner.bias, &ffn_outer.weight,
                       &ffn_outer.bias, &ln_gain, &ln_bias})
    out.push_back(p);
  return out;
}

AttentionResult AttentionStage::attend(Graph& g, Var queries, Var keys,
                                       std::span<const unsigned char> key_valid,
                                       const ModelDims& dims,
                                       const ForwardOptions& opts) {
  const std::size_t q = g.value(queries).rows();
  if (key_valid.size() != g.value(keys).rows()) throw InvalidArgument("attention: validity length mismatch");
  const Mask mask = Mask::from_columns(q, key_valid);
  const std::size_t w = dims.space_width();

  Var projected_q = query_proj.apply(g, queries, true);
  Var projected_v = value_proj.apply(g, keys, true);

  AttentionResult result;
  std::vector<Var> heads;
  heads.reserve(dims.num_spaces);
  for (std::size_t k = 0; k < dims.num_spaces; ++k) {
    Var sk = g.slice_cols(projected_q, k * w, (k + 1) * w);
    Var scores = g.matmul_nt(g.matmul(sk, g.parameter(bilinear[k])), keys);
    Var attn = g.softmax_masked(scores, mask);
    heads.push_back(g.matmul(attn, g.slice_cols(projected_v, k * w, (k + 1) * w)));
    result.scores.push_back(attn);
  }
  Var x = heads.size() == 1 ? heads[0] : g.concat(heads, 1);
  Var f = ffn_outer.apply(g, ffn_inner.apply(g, x, true), false);
  Var d = g.dropout(f, dims.dropout, opts.training, opts.seed, opts.step);
  result.output = g.layer_norm(g.add(x, d), g.parameter(ln_gain), g.parameter(ln_bias),
                               dims.layer_norm_eps);
  return result;
}

// ---------------------------------------------------------------------------
// AtrankModel

AtrankModel::AtrankModel(EmbeddingRegistry registry, ModelDims dims)
    : registry_(std::move(registry)), dims_(dims) {
  dims_.validate();
  for (const GroupSchema& s : registry_.schemas()) {
    group_proj_.push_back(make_dense("proj." + s.name, s.width(), dims_.hidden));
  }
  if (dims_.architecture == Architecture::kAtrank) {
    self_stage_ = AttentionStage("self", dims_);
    vanilla_stage_ = AttentionStage("vanilla", dims_);
  }
}

void AtrankModel::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  registry_.initialize(rng);
  for (Dense& d : group_proj_) init_dense(d, rng);
  if (dims_.architecture == Architecture::kAtrank) {
    for (AttentionStage* st : {&self_stage_, &vanilla_stage_}) {
      init_dense(st->query_proj, rng);
      init_dense(st->value_proj, rng);
      for (auto& w : st->bilinear) glorot(w, rng);
      init_dense(st->ffn_inner, rng);
      init_dense(st->ffn_outer, rng);
      st->ln_gain.value.fill(1.0);
      st->ln_bias.value.fill(0.0);
    }
  }
}

std::vector<Parameter*> AtrankModel::dense_parameters() {
  std::vector<Parameter*> out;
  for (Dense& d : group_proj_) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  if (dims_.architecture == Architecture::kAtrank) {
    for (Parameter* p : self_stage_.parameters()) out.push_back(p);
    for (Parameter* p : vanilla_stage_.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Parameter*> AtrankModel::dense_parameters() const {
  auto ps = const_cast<AtrankModel*>(this)->dense_parameters();
  return {ps.begin(), ps.end()};
}

void AtrankModel::zero_grad() {
  for (Parameter* p : dense_parameters()) p->zero_grad();
  registry_.zero_grad();
}

void AtrankModel::round_to_float32() {
  for (Parameter* p : dense_parameters())
    for (double& v : p->value.data()) v = round_f32(v);
  for (EmbeddingTable* t : registry_.tables())
    for (double& v : t->value().data()) v = round_f32(v);
}

Var AtrankModel::project_group(Graph& g, std::size_t group, Var u) {
  return group_proj_.at(group).apply(g, u, true);
}

Var AtrankModel::project_to_common(Graph& g, std::span<const Var> groups,
                                   std::span<const std::vector<std::size_t>> positions) {
  if (groups.size() != positions.size()) {
    throw InvalidArgument("project_to_common: group/position count mismatch");
  }
  std::vector<Var> parts;
  std::vector<std::size_t> order;
  std::size_t offset = 0;
  std::size_t total = 0;
  for (const auto& p : positions) total += p.size();
  if (total == 0) throw InvalidArgument("project_to_common: no behaviors");
  order.assign(total, total);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    if (!groups[gi].valid()) continue;
    Var p = project_group(g, gi, groups[gi]);
    const std::size_t rows = g.value(p).rows();
    if (rows != positions[gi].size()) {
      throw InvalidArgument("project_to_common: position count does not match rows");
    }
    for (std::size_t r = 0; r < rows; ++r) {
      if (positions[gi][r] >= total || order[positions[gi][r]] != total) {
        throw InvalidArgument("project_to_common: positions are not a permutation");
      }
      order[positions[gi][r]] = offset + r;
    }
    parts.push_back(p);
    offset += rows;
  }
  Var all = parts.size() == 1 ? parts[0] : g.concat(parts, 0);
  return g.take_rows(all, order);
}

AttentionResult AtrankModel::self_attention_block(Graph& g, Var s,
                                                  std::span<const unsigned char> valid,
                                                  const ForwardOptions& opts) {
  if (dims_.architecture != Architecture::kAtrank) {
    throw InvalidArgument("self_attention_block: model has no attention stages");
  }
  AttentionResult r = self_stage_.attend(g, s, s, valid, dims_, opts);
  r.output = g.mask_rows(r.output, valid);
  return r;
}

AttentionResult AtrankModel::vanilla_attention(Graph& g, Var h, Var c,
                                               std::span<const unsigned char> valid,
                                               const ForwardOptions& opts) {
  if (dims_.architecture != Architecture::kAtrank) {
    throw InvalidArgument("vanilla_attention: model has no attention stages");
  }
  return vanilla_stage_.attend(g, h, c, valid, dims_, opts);
}

Var AtrankModel::score(Graph& g, Var h, Var e) const { return g.dot(h, e); }

Var AtrankModel::candidate_vectors(Graph& g, const SampleBatch& batch) {
  const std::size_t ng = registry_.schemas().size();
  std::vector<GroupRows> rows(ng);
  std::vector<std::vector<std::size_t>> members(ng);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const TokenizedBehavior& c = batch.candidates[b];
    if (c.group >= ng) throw InvalidArgument("candidate group index out of range");
    GroupRows& gr = rows[c.group];
    gr.features.resize(registry_.schema(c.group).features.size());
    gr.actions.push_back(c.action);
    for (std::size_t f = 0; f < gr.features.size(); ++f) gr.features[f].push_back(c.features[f]);
    gr.buckets.push_back(0);  // candidates are scored at ranking time
    members[c.group].push_back(b);
  }
  std::vector<Var> parts;
  std::vector<std::size_t> order(batch.size());
  std::size_t offset = 0;
  for (std::size_t gi = 0; gi < ng; ++gi) {
    if (members[gi].empty()) continue;
    parts.push_back(project_group(g, gi, encode_rows(g, registry_, gi, rows[gi])));
    for (std::size_t r = 0; r < members[gi].size(); ++r) order[members[gi][r]] = offset + r;
    offset += members[gi].size();
  }
  Var all = parts.size() == 1 ? parts[0] : g.concat(parts, 0);
  bool identity = true;
  for (std::size_t i = 0; i < order.size(); ++i) identity = identity && order[i] == i;
  return identity ? all : g.take_rows(all, order);
}

BatchOutput AtrankModel::forward(Graph& g, const SampleBatch& batch, const ForwardOptions& opts) {
  if (batch.size() == 0) throw InvalidArgument("forward: empty batch");
  const std::size_t ng = registry_.schemas().size();
  if (batch.groups.size() != ng) throw InvalidArgument("forward: batch group count mismatch");
  const std::size_t nh = batch.num_histories;
  const std::size_t n = batch.padded_length();

  // Encode and project every history slot of each group in one pass.
  std::vector<Var> parts;
  std::vector<std::size_t> group_offset(ng, 0);
  std::size_t offset = 0;
  for (std::size_t gi = 0; gi < ng; ++gi) {
    const auto& blk = batch.groups[gi];
    group_offset[gi] = offset;
    if (blk.max_len == 0) continue;
    const std::size_t nf = registry_.schema(gi).features.size();
    const std::size_t cells = nh * blk.max_len;
    GroupRows rows;
    rows.actions = blk.actions;
    rows.buckets = blk.buckets;
    rows.features.assign(nf, std::vector<std::size_t>(cells));
    for (std::size_t c = 0; c < cells; ++c)
      for (std::size_t f = 0; f < nf; ++f) rows.features[f][c] = blk.features[c * nf + f];
    parts.push_back(project_group(g, gi, encode_rows(g, registry_, gi, rows)));
    offset += cells;
  }
  Var all = parts.size() == 1 ? parts[0] : g.concat(parts, 0);

  BatchOutput out;
  out.history_outputs.resize(nh);
  if (opts.keep_attention) {
    out.self_scores.resize(nh);
    out.vanilla_scores.resize(batch.size());
  }

  Var cand = candidate_vectors(g, batch);
  std::vector<std::vector<std::size_t>> members(nh);
  for (std::size_t b = 0; b < batch.size(); ++b) members.at(batch.history_of[b]).push_back(b);

  std::vector<Var> logit_parts;
  std::vector<std::size_t> logit_order;
  for (std::size_t h = 0; h < nh; ++h) {
    std::vector<std::size_t> idx(n);
    for (std::size_t gi = 0; gi < ng; ++gi) {
      const auto& blk = batch.groups[gi];
      for (std::size_t j = 0; j < blk.max_len; ++j) {
        const std::size_t cell = h * blk.max_len + j;
        idx[blk.positions[cell]] = group_offset[gi] + cell;
      }
    }
    Var s = g.take_rows(all, idx);
    const std::vector<unsigned char> valid = batch.validity(h);
    if (members[h].empty()) continue;
    Var hq = g.take_rows(cand, members[h]);

    Var logits;
    if (dims_.architecture == Architecture::kAtrank) {
      AttentionResult self = self_attention_block(g, s, valid, opts);
      out.history_outputs[h] = self.output;
      AttentionResult van = vanilla_attention(g, hq, self.output, valid, opts);
      logits = g.rowwise_dot(hq, van.output);
      if (opts.keep_attention) {
        out.self_scores[h] = self.scores;
        for (std::size_t r = 0; r < members[h].size(); ++r) {
          auto& dst = out.vanilla_scores[members[h][r]];
          for (Var a : van.scores) dst.push_back(g.slice_rows(a, r, r + 1));
        }
      }
    } else {
      Var pooled = g.masked_mean_rows(s, valid);
      out.history_outputs[h] = pooled;
      logits = g.matmul_nt(hq, pooled);
    }
    logit_parts.push_back(logits);
    logit_order.insert(logit_order.end(), members[h].begin(), members[h].end());
  }

  Var stacked = logit_parts.size() == 1 ? logit_parts[0] : g.concat(logit_parts, 0);
  std::vector<std::size_t> inverse(batch.size());
  bool identity = true;
  for (std::size_t i = 0; i < logit_order.size(); ++i) {
    inverse[logit_order[i]] = i;
    identity = identity && logit_order[i] == i;
  }
  out.logits = identity ? stacked : g.take_rows(stacked, inverse);
  for (std::size_t b = 0; b < batch.size(); ++b)
    out.candidate_vectors.push_back(g.slice_rows(cand, b, b + 1));
  return out;
}

Var AtrankModel::pointwise_loss(Graph& g, Var logits, std::span<const double> labels, double l2) {
  Var data = g.mean(g.sigmoid_cross_entropy(logits, labels));
  auto params = dense_parameters();
  return g.add(data, g.l2_penalty(params, l2));
}

std::vector<double> score_samples(AtrankModel& model, std::span<const Sample> samples) {
  Graph g(false);
  SampleBatch batch = make_batch(samples, model.registry().schemas());
  BatchOutput out = model.forward(g, batch, ForwardOptions{});
  const Tensor& v = g.value(out.logits);
  return {v.data().begin(), v.data().end()};
}

}  // namespace atrank
