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
#include <optional>
#include <span>
#include <vector>

#include "atrank/behavior.hpp"

namespace atrank {

// One ranking instance: a history (time ordered), the candidate to score at
// ref_time, and its binary label.
struct Sample {
  std::uint32_t user = 0;
  std::vector<TokenizedBehavior> history;
  TokenizedBehavior candidate;
  int label = 1;
  std::int64_t ref_time = 0;
};

// Padded, columnar form of a run of samples. Consecutive samples with the
// same user, ref_time and history share one encoded history.
struct SampleBatch {
  struct GroupBlock {
    std::size_t max_len = 0;
    // Row-major [history][slot]; padded slots hold OOV ids, bucket 0 and
    // elapsed 0.
    std::vector<std::size_t> actions;
    std::vector<std::size_t> features;  // [history][slot][feature]
    std::vector<std::size_t> buckets;
    std::vector<std::int64_t> elapsed;
    std::vector<unsigned char> mask;
    // Row index of each slot inside its history's full sequence. Valid
    // behaviors occupy 0..len-1 in time order, padding follows.
    std::vector<std::size_t> positions;
  };

  std::size_t num_histories = 0;
  std::vector<GroupBlock> groups;
  std::vector<std::size_t> history_length;
  std::vector<std::int64_t> ref_time;  // per history

  std::vector<std::size_t> history_of;  // per sample
  std::vector<std::uint32_t> users;
  std::vector<TokenizedBehavior> candidates;
  std::vector<double> labels;

  std::size_t size() const noexcept { return candidates.size(); }
  // Padded sequence length of every history: sum of group max lengths.
  std::size_t padded_length() const;
  // Per-history validity over the padded full sequence.
  std::vector<unsigned char> validity(std::size_t history) const;
};

// Builds one padded batch. Future-dated history entries are clamped to
// elapsed 0.
SampleBatch make_batch(std::span<const Sample> samples, std::span<const GroupSchema> schemas);

// Splits samples into consecutive batches of batch_size; the last may be
// partial.
class BatchStream {
 public:
  BatchStream(std::span<const Sample> samples, std::span<const GroupSchema> schemas,
              std::size_t batch_size = 32);
  std::optional<SampleBatch> next();
  std::size_t num_batches() const noexcept;

 private:
  std::span<const Sample> samples_;
  std::span<const GroupSchema> schemas_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
};

}  // namespace atrank
