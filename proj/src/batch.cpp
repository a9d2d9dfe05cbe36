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

#include "atrank/error.hpp"
#include "atrank/sample.hpp"

namespace atrank {

std::size_t SampleBatch::padded_length() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.max_len;
  return n;
}

std::vector<unsigned char> SampleBatch::validity(std::size_t history) const {
  std::vector<unsigned char> v(padded_length(), 0);
  std::fill(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(history_length.at(history)), 1);
  return v;
}

namespace {

bool same_history(const Sample& a, const Sample& b) {
  return a.user == b.user && a.ref_time == b.ref_time && a.history == b.history;
}

}  // namespace

SampleBatch make_batch(std::span<const Sample> samples, std::span<const GroupSchema> schemas) {
  SampleBatch batch;
  const std::size_t ng = schemas.size();
  batch.groups.resize(ng);

  // Unique histories in order of first appearance.
  std::vector<const Sample*> heads;
  for (const Sample& s : samples) {
    if (s.history.empty()) throw InvalidArgument("make_batch: sample with empty history");
    if (heads.empty() || !same_history(*heads.back(), s)) heads.push_back(&s);
    batch.history_of.push_back(heads.size() - 1);
    batch.users.push_back(s.user);
    batch.candidates.push_back(s.candidate);
    if (s.label != 0 && s.label != 1) throw InvalidArgument("make_batch: label must be 0 or 1");
    batch.labels.push_back(static_cast<double>(s.label));
  }
  const std::size_t nh = heads.size();
  batch.num_histories = nh;

  std::vector<std::vector<std::size_t>> counts(nh, std::vector<std::size_t>(ng, 0));
  for (std::size_t h = 0; h < nh; ++h) {
    for (const auto& b : heads[h]->history) {
      if (b.group >= ng) throw InvalidArgument("make_batch: group index out of range");
      ++counts[h][b.group];
    }
    for (std::size_t gi = 0; gi < ng; ++gi)
      batch.groups[gi].max_len = std::max(batch.groups[gi].max_len, counts[h][gi]);
  }

  for (std::size_t gi = 0; gi < ng; ++gi) {
    auto& blk = batch.groups[gi];
    const std::size_t nf = schemas[gi].features.size();
    const std::size_t cells = nh * blk.max_len;
    blk.actions.assign(cells, Vocabulary::kOov);
    blk.features.assign(cells * nf, Vocabulary::kOov);
    blk.buckets.assign(cells, 0);
    blk.elapsed.assign(cells, 0);
    blk.mask.assign(cells, 0);
    blk.positions.assign(cells, 0);
  }

  for (std::size_t h = 0; h < nh; ++h) {
    const Sample& s = *heads[h];
    // Stable time order; the pipeline already sorts, this keeps make_batch
    // safe for hand-built samples.
    std::vector<std::size_t> order(s.history.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return s.history[a].timestamp < s.history[b].timestamp;
    });

    std::vector<std::size_t> fill(ng, 0);
    std::size_t pos = 0;
    for (std::size_t idx : order) {
      const TokenizedBehavior& b = s.history[idx];
      auto& blk = batch.groups[b.group];
      const std::size_t cell = h * blk.max_len + fill[b.group]++;
      const std::int64_t elapsed = std::max<std::int64_t>(0, s.ref_time - b.timestamp);
      const TimeBuckets& tb = schemas[b.group].time;
      blk.actions[cell] = b.action;
      const std::size_t nf = schemas[b.group].features.size();
      for (std::size_t f = 0; f < nf; ++f) blk.features[cell * nf + f] = b.features[f];
      blk.buckets[cell] =
          bucketize_time(static_cast<double>(elapsed), tb.base_unit_seconds, tb.max_bucket);
      blk.elapsed[cell] = elapsed;
      blk.mask[cell] = 1;
      blk.positions[cell] = pos++;
    }
    for (std::size_t gi = 0; gi < ng; ++gi) {
      auto& blk = batch.groups[gi];
      for (std::size_t j = fill[gi]; j < blk.max_len; ++j)
        blk.positions[h * blk.max_len + j] = pos++;
    }
    batch.history_length.push_back(s.history.size());
    batch.ref_time.push_back(s.ref_time);
  }
  return batch;
}

BatchStream::BatchStream(std::span<const Sample> samples, std::span<const GroupSchema> schemas,
                         std::size_t batch_size)
    : samples_(samples), schemas_(schemas), batch_size_(batch_size) {
  if (batch_size_ == 0) throw InvalidArgument("batch size must be positive");
}

std::optional<SampleBatch> BatchStream::next() {
  if (cursor_ >= samples_.size()) return std::nullopt;
  const std::size_t n = std::min(batch_size_, samples_.size() - cursor_);
  SampleBatch b = make_batch(samples_.subspan(cursor_, n), schemas_);
  cursor_ += n;
  return b;
}

std::size_t BatchStream::num_batches() const noexcept {
  return (samples_.size() + batch_size_ - 1) / batch_size_;
}

}  // namespace atrank
