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

// Command-line front end over the C API.

#include <cmath>
#include <cstdio>
#include <string>

#include "CLI11.hpp"

#include "atrank/atrank.h"

namespace {

int report(atrank_status s) {
  if (s != ATRANK_OK) std::fprintf(stderr, "atrank: %s\n", atrank_last_error());
  return static_cast<int>(s);
}

void print_prepare(const atrank_prepare_stats& st) {
  std::printf("users kept %zu, skipped %zu; train records %zu, test records %zu\n", st.users_kept,
              st.users_skipped, st.train_records, st.test_records);
}

void on_metrics(size_t step, double loss, double lr, double auc, void* quiet) {
  if (*static_cast<bool*>(quiet)) return;
  if (std::isnan(auc)) std::printf("step %zu  loss %.6f  lr %.6g\n", step, loss, lr);
  else std::printf("step %zu  loss %.6f  lr %.6g  auc %.6f\n", step, loss, lr, auc);
  std::fflush(stdout);
}

// Loads a checkpoint and dataset, runs fn, frees both.
template <typename F>
int with_model_and_data(const std::string& ckpt, const std::string& data, F&& fn) {
  atrank_model* model = nullptr;
  atrank_dataset* dataset = nullptr;
  atrank_status s = atrank_model_load(ckpt.c_str(), &model);
  if (s == ATRANK_OK) s = atrank_dataset_open(data.c_str(), &dataset);
  if (s == ATRANK_OK) s = fn(model, dataset);
  atrank_dataset_free(dataset);
  atrank_model_free(model);
  return report(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ATRank: attention-based heterogeneous behavior ranking"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(atrank_version()));

  std::string format, input, outdir, config, data, ckpt, metrics, user, out_csv;
  bool five_core = false, quiet = false;

  auto* prepare = app.add_subcommand("prepare", "Build a prepared dataset from raw interactions");
  prepare->add_option("format", format, "amazon-csv or jsonl")->required()
      ->check(CLI::IsMember({"amazon-csv", "jsonl"}));
  prepare->add_option("in", input, "Input file")->required();
  prepare->add_option("outdir", outdir, "Output directory")->required();
  prepare->add_flag("--five-core", five_core, "Keep only users and objects with >= 5 interactions");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-group dataset");
  synth->add_option("config", config, "key=value generator config")->required();
  synth->add_option("outdir", outdir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("config", config, "key=value training config")->required();
  train->add_option("data", data, "Prepared dataset directory")->required();
  train->add_option("ckpt", ckpt, "Checkpoint directory")->required();
  train->add_option("--metrics", metrics, "Metrics CSV path (default <ckpt>/metrics.csv)");
  train->add_flag("-q,--quiet", quiet, "Do not print metrics rows");

  auto* eval = app.add_subcommand("eval", "Average user AUC on the test split");
  eval->add_option("ckpt", ckpt, "Checkpoint directory")->required();
  eval->add_option("data", data, "Prepared dataset directory")->required();

  auto* exp = app.add_subcommand("export-attention", "Write attention heatmaps for one user");
  exp->add_option("ckpt", ckpt, "Checkpoint directory")->required();
  exp->add_option("data", data, "Prepared dataset directory")->required();
  exp->add_option("user", user, "User id")->required();
  exp->add_option("outdir", outdir, "Output directory")->required();

  auto* tb = app.add_subcommand("time-buckets", "Mean vanilla attention per time bucket");
  tb->add_option("ckpt", ckpt, "Checkpoint directory")->required();
  tb->add_option("data", data, "Prepared dataset directory")->required();
  tb->add_option("out", out_csv, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ATRANK_ERR_USAGE);
  }

  if (prepare->parsed()) {
    atrank_prepare_stats st{};
    const auto s = atrank_prepare(format.c_str(), input.c_str(), outdir.c_str(), five_core ? 1 : 0, &st);
    if (s == ATRANK_OK) print_prepare(st);
    return report(s);
  }
  if (synth->parsed()) {
    atrank_prepare_stats st{};
    const auto s = atrank_synthesize(config.c_str(), outdir.c_str(), &st);
    if (s == ATRANK_OK) print_prepare(st);
    return report(s);
  }
  if (train->parsed()) {
    if (metrics.empty()) metrics = (std::filesystem::path(ckpt) / "metrics.csv").string();
    atrank_train_summary sum{};
    const auto s = atrank_train(config.c_str(), data.c_str(), ckpt.c_str(), metrics.c_str(),
                                on_metrics, &quiet, &sum);
    if (s == ATRANK_OK)
      std::printf("trained %zu steps (%zu per epoch); final loss %.6f; test AUC %.6f over %zu users\n",
                  sum.steps, sum.steps_per_epoch, sum.final_loss, sum.auc.auc, sum.auc.users);
    return report(s);
  }
  if (eval->parsed()) {
    return with_model_and_data(ckpt, data, [](atrank_model* m, atrank_dataset* d) {
      atrank_auc auc{};
      const auto s = atrank_evaluate(m, d, &auc);
      if (s == ATRANK_OK)
        std::printf("auc %.6f users %zu skipped %zu\n", auc.auc, auc.users, auc.skipped);
      return s;
    });
  }
  if (exp->parsed()) {
    return with_model_and_data(ckpt, data, [&](atrank_model* m, atrank_dataset* d) {
      return atrank_export_attention(m, d, user.c_str(), outdir.c_str());
    });
  }
  if (tb->parsed()) {
    return with_model_and_data(ckpt, data, [&](atrank_model* m, atrank_dataset* d) {
      return atrank_time_buckets(m, d, out_csv.c_str());
    });
  }
  return report(ATRANK_ERR_USAGE);
}
