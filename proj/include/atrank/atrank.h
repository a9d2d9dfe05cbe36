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

#ifndef ATRANK_ATRANK_H_
#define ATRANK_ATRANK_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define ATRANK_API __declspec(dllexport)
#else
#define ATRANK_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum atrank_status {
  ATRANK_OK = 0,
  ATRANK_ERR_USAGE = 1,
  ATRANK_ERR_DATA = 2,
  ATRANK_ERR_DIVERGED = 3,
  ATRANK_ERR_INTERNAL = 4
} atrank_status;

typedef struct atrank_dataset atrank_dataset;
typedef struct atrank_model atrank_model;

typedef struct atrank_prepare_stats {
  size_t users_kept;
  size_t users_skipped;
  size_t train_records;
  size_t test_records;
} atrank_prepare_stats;

typedef struct atrank_auc {
  double auc;
  size_t users;
  size_t skipped;
} atrank_auc;

typedef struct atrank_train_summary {
  size_t steps;
  size_t steps_per_epoch;
  double final_loss;
  atrank_auc auc;
} atrank_train_summary;

/* Called for each metrics row; auc is NaN when the row has no evaluation. */
typedef void (*atrank_metrics_fn)(size_t step, double loss, double lr, double auc, void* user_data);

ATRANK_API const char* atrank_version(void);

/* Message of the last failed call on this thread; "" when none. */
ATRANK_API const char* atrank_last_error(void);

/* format: "amazon-csv" or "jsonl". stats may be NULL. */
ATRANK_API atrank_status atrank_prepare(const char* format, const char* input_path,
                                        const char* outdir, int five_core,
                                        atrank_prepare_stats* stats);

/* Generates synthetic multi-group data from a key=value config and writes a
   prepared dataset (plus the raw interactions.jsonl) to outdir. */
ATRANK_API atrank_status atrank_synthesize(const char* config_path, const char* outdir,
                                           atrank_prepare_stats* stats);

ATRANK_API atrank_status atrank_dataset_open(const char* dir, atrank_dataset** out);
ATRANK_API void atrank_dataset_free(atrank_dataset* dataset);
ATRANK_API size_t atrank_dataset_num_users(const atrank_dataset* dataset);

/* Trains from a key=value config and writes a checkpoint directory.
   metrics_csv, callback and summary may be NULL. */
ATRANK_API atrank_status atrank_train(const char* config_path, const char* data_dir,
                                      const char* checkpoint_dir, const char* metrics_csv,
                                      atrank_metrics_fn callback, void* user_data,
                                      atrank_train_summary* summary);

ATRANK_API atrank_status atrank_model_load(const char* checkpoint_dir, atrank_model** out);
ATRANK_API void atrank_model_free(atrank_model* model);

/* Average user AUC on the test split under the checkpoint's task, with the
   checkpoint's negative count and seed. */
ATRANK_API atrank_status atrank_evaluate(atrank_model* model, const atrank_dataset* dataset,
                                         atrank_auc* out);

ATRANK_API atrank_status atrank_export_attention(atrank_model* model,
                                                 const atrank_dataset* dataset,
                                                 const char* user_id, const char* outdir);

ATRANK_API atrank_status atrank_time_buckets(atrank_model* model, const atrank_dataset* dataset,
                                             const char* out_csv);

#ifdef __cplusplus
}
#endif

#endif  /* ATRANK_ATRANK_H_ */
