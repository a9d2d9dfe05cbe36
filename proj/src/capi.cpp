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

#include "atrank/atrank.h"

#include <cmath>
#include <limits>
#include <new>
#include <string>

#include "atrank/data.hpp"
#include "atrank/error.hpp"
#include "atrank/train.hpp"

struct atrank_dataset {
  atrank::Dataset data;
};

struct atrank_model {
  atrank::TrainConfig config;
  atrank::AtrankModel model;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
atrank_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return ATRANK_OK;
  } catch (const atrank::Error& e) {
    g_last_error = e.what();
    return static_cast<atrank_status>(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return ATRANK_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return ATRANK_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return ATRANK_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw atrank::InvalidArgument(std::string(what) + " must not be NULL");
}

void fill(atrank_prepare_stats* out, const atrank::PrepareReport& r) {
  if (!out) return;
  out->users_kept = r.users_kept;
  out->users_skipped = r.users_skipped;
  out->train_records = r.train_records;
  out->test_records = r.test_records;
}

atrank_auc to_c(const atrank::AucResult& r) { return {r.auc, r.users, r.skipped}; }

// The dataset in the model's vocabulary space.
atrank::Dataset aligned(const atrank_model* m, const atrank_dataset* d) {
  return d->data.with_vocabularies(m->model.registry().schemas(), m->model.registry().vocabularies());
}

}  // namespace

extern "C" {

const char* atrank_version(void) { return "1.0.0"; }

const char* atrank_last_error(void) { return g_last_error.c_str(); }

atrank_status atrank_prepare(const char* format, const char* input_path, const char* outdir,
                             int five_core, atrank_prepare_stats* stats) {
  return guarded([&] {
    require(format, "format");
    require(input_path, "input_path");
    require(outdir, "outdir");
    const auto log = atrank::load_interactions(input_path, atrank::parse_input_format(format), five_core != 0);
    fill(stats, atrank::prepare_dataset(log, outdir));
  });
}

atrank_status atrank_synthesize(const char* config_path, const char* outdir,
                                atrank_prepare_stats* stats) {
  return guarded([&] {
    require(config_path, "config_path");
    require(outdir, "outdir");
    const auto cfg = atrank::SynthConfig::from_key_values(atrank::read_key_values(config_path));
    const auto log = atrank::generate_synthetic_multigroup(cfg);
    fill(stats, atrank::prepare_dataset(log, outdir));
    atrank::write_jsonl(std::filesystem::path(outdir) / "interactions.jsonl", log);
  });
}

atrank_status atrank_dataset_open(const char* dir, atrank_dataset** out) {
  return guarded([&] {
    require(dir, "dir");
    require(out, "out");
    *out = nullptr;
    *out = new atrank_dataset{atrank::Dataset::open(dir)};
  });
}

void atrank_dataset_free(atrank_dataset* dataset) { delete dataset; }

size_t atrank_dataset_num_users(const atrank_dataset* dataset) {
  return dataset ? dataset->data.users().size() : 0;
}

atrank_status atrank_train(const char* config_path, const char* data_dir,
                           const char* checkpoint_dir, const char* metrics_csv,
                           atrank_metrics_fn callback, void* user_data,
                           atrank_train_summary* summary) {
  return guarded([&] {
    require(config_path, "config_path");
    require(data_dir, "data_dir");
    require(checkpoint_dir, "checkpoint_dir");
    const auto config = atrank::TrainConfig::load(config_path);
    const auto data = atrank::Dataset::open(data_dir);
    auto model = atrank::make_model(config, data);
    std::function<void(const atrank::MetricsRow&)> on_row;
    if (callback)
      on_row = [&](const atrank::MetricsRow& r) {
        callback(r.step, r.loss, r.lr, r.auc ? *r.auc : std::numeric_limits<double>::quiet_NaN(),
                 user_data);
      };
    const auto result = atrank::train(model, config, data, on_row);
    atrank::save_checkpoint(model, config, checkpoint_dir);
    if (metrics_csv) atrank::write_metrics_csv(metrics_csv, result.metrics);
    if (summary) {
      summary->steps = result.steps;
      summary->steps_per_epoch = result.steps_per_epoch;
      summary->final_loss = result.final_loss;
      summary->auc = to_c(result.final_auc);
    }
  });
}

atrank_status atrank_model_load(const char* checkpoint_dir, atrank_model** out) {
  return guarded([&] {
    require(checkpoint_dir, "checkpoint_dir");
    require(out, "out");
    *out = nullptr;
    auto loaded = atrank::load_checkpoint(checkpoint_dir);
    *out = new atrank_model{std::move(loaded.config), std::move(loaded.model)};
  });
}

void atrank_model_free(atrank_model* model) { delete model; }

atrank_status atrank_evaluate(atrank_model* model, const atrank_dataset* dataset, atrank_auc* out) {
  return guarded([&] {
    require(model, "model");
    require(dataset, "dataset");
    require(out, "out");
    const auto data = aligned(model, dataset);
    const auto eval = atrank::build_eval_samples(data, model->config);
    *out = to_c(atrank::evaluate_auc(model->model, eval));
  });
}

atrank_status atrank_export_attention(atrank_model* model, const atrank_dataset* dataset,
                                      const char* user_id, const char* outdir) {
  return guarded([&] {
    require(model, "model");
    require(dataset, "dataset");
    require(user_id, "user_id");
    require(outdir, "outdir");
    const auto data = aligned(model, dataset);
    const auto task = atrank::TaskSpec::resolve(model->config.mode, model->config.targets, data.schemas());
    const auto e = atrank::export_attention(model->model, data, task, data.find_user(user_id));
    atrank::write_attention_export(e, outdir);
  });
}

atrank_status atrank_time_buckets(atrank_model* model, const atrank_dataset* dataset,
                                  const char* out_csv) {
  return guarded([&] {
    require(model, "model");
    require(dataset, "dataset");
    require(out_csv, "out_csv");
    const auto data = aligned(model, dataset);
    const auto task = atrank::TaskSpec::resolve(model->config.mode, model->config.targets, data.schemas());
    const auto rows = atrank::aggregate_time_bucket_attention(model->model, data, task);
    atrank::write_bucket_csv(out_csv, rows);
  });
}

}  // extern "C"
