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
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "atrank/atrank.h"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("atrank_capi_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

const char* kSynth =
    "users=40\nclusters=8\nitems=80\nshops=24\nbrands=16\ncategories=8\n"
    "queries=40\ncoupons=40\nmean_length=12\nseed=11\n";

const char* kTrain =
    "embedding_dim=4\nhidden=8\nnum_spaces=2\ndropout=0\ntargets=item\n"
    "max_steps=6\nlog_every=2\neval_every=3\ndecay_steps=100\n";

struct Rows {
  std::vector<double> loss, lr, auc;
};

void collect(size_t, double loss, double lr, double auc, void* user) {
  auto* r = static_cast<Rows*>(user);
  r->loss.push_back(loss);
  r->lr.push_back(lr);
  r->auc.push_back(auc);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ATRANK_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("version and empty last error") {
  CHECK(std::string(atrank_version()).size() > 0);
  CHECK(atrank_dataset_open(nullptr, nullptr) == ATRANK_ERR_USAGE);
  CHECK(std::string(atrank_last_error()).size() > 0);
  CHECK(atrank_version() != nullptr);
  atrank_dataset_free(nullptr);
  atrank_model_free(nullptr);
  CHECK(atrank_dataset_num_users(nullptr) == 0);
}

TEST_CASE("synthesize, train, evaluate and export through handles") {
  const fs::path dir = scratch("flow");
  write_file(dir / "synth.txt", kSynth);
  write_file(dir / "train.txt", kTrain);

  atrank_prepare_stats st{};
  REQUIRE(atrank_synthesize((dir / "synth.txt").c_str(), (dir / "data").c_str(), &st) == ATRANK_OK);
  CHECK(std::string(atrank_last_error()).empty());
  CHECK(st.users_kept > 0);
  CHECK(st.test_records > 0);
  CHECK(st.train_records > st.test_records);
  CHECK(fs::exists(dir / "data" / "interactions.jsonl"));

  atrank_dataset* data = nullptr;
  REQUIRE(atrank_dataset_open((dir / "data").c_str(), &data) == ATRANK_OK);
  CHECK(atrank_dataset_num_users(data) == st.users_kept);

  Rows rows;
  atrank_train_summary sum{};
  REQUIRE(atrank_train((dir / "train.txt").c_str(), (dir / "data").c_str(), (dir / "ckpt").c_str(),
                       (dir / "metrics.csv").c_str(), collect, &rows, &sum) == ATRANK_OK);
  CHECK(sum.steps == 6);
  CHECK(std::isfinite(sum.final_loss));
  CHECK(sum.auc.users > 0);
  CHECK(sum.auc.auc >= 0.0);
  CHECK(sum.auc.auc <= 1.0);
  REQUIRE(!rows.loss.empty());
  bool any_eval = false, any_plain = false;
  for (double a : rows.auc) (std::isnan(a) ? any_plain : any_eval) = true;
  CHECK(any_eval);
  CHECK(any_plain);
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "ckpt" / "params.bin"));

  atrank_model* model = nullptr;
  REQUIRE(atrank_model_load((dir / "ckpt").c_str(), &model) == ATRANK_OK);
  atrank_auc auc{};
  REQUIRE(atrank_evaluate(model, data, &auc) == ATRANK_OK);
  CHECK(auc.auc == sum.auc.auc);
  CHECK(auc.users == sum.auc.users);

  CHECK(atrank_export_attention(model, data, "u0", (dir / "attn").c_str()) == ATRANK_OK);
  CHECK(fs::exists(dir / "attn" / "behaviors.json"));
  CHECK(fs::exists(dir / "attn" / "vanilla_scores.csv"));
  CHECK(atrank_time_buckets(model, data, (dir / "buckets.csv").c_str()) == ATRANK_OK);
  CHECK(fs::exists(dir / "buckets.csv"));

  CHECK(atrank_export_attention(model, data, "no-such-user", (dir / "x").c_str()) != ATRANK_OK);
  CHECK(std::string(atrank_last_error()).find("no-such-user") != std::string::npos);
  CHECK(atrank_evaluate(model, nullptr, &auc) == ATRANK_ERR_USAGE);
  CHECK(atrank_evaluate(model, data, nullptr) == ATRANK_ERR_USAGE);

  atrank_model_free(model);
  atrank_dataset_free(data);
  fs::remove_all(dir);
}

TEST_CASE("error codes") {
  const fs::path dir = scratch("err");
  atrank_dataset* data = nullptr;
  CHECK(atrank_dataset_open((dir / "missing").c_str(), &data) == ATRANK_ERR_DATA);
  CHECK(data == nullptr);
  CHECK(std::string(atrank_last_error()).size() > 0);

  atrank_model* model = nullptr;
  CHECK(atrank_model_load((dir / "missing").c_str(), &model) != ATRANK_OK);
  CHECK(model == nullptr);

  CHECK(atrank_prepare("parquet", "x", (dir / "o").c_str(), 0, nullptr) == ATRANK_ERR_USAGE);

  write_file(dir / "bad.jsonl", "{\"user\": \"u\"}\n");
  CHECK(atrank_prepare("jsonl", (dir / "bad.jsonl").c_str(), (dir / "o").c_str(), 0, nullptr) ==
        ATRANK_ERR_DATA);
  CHECK(std::string(atrank_last_error()).find("bad.jsonl:1:") != std::string::npos);

  write_file(dir / "bad.txt", "hidden=abc\n");
  CHECK(atrank_train((dir / "bad.txt").c_str(), (dir / "d").c_str(), (dir / "c").c_str(), nullptr,
                     nullptr, nullptr, nullptr) == ATRANK_ERR_USAGE);

  CHECK(atrank_dataset_open((dir).c_str(), nullptr) == ATRANK_ERR_USAGE);
  fs::remove_all(dir);
}

TEST_CASE("command line exit codes") {
  const fs::path dir = scratch("cli");
  write_file(dir / "synth.txt", kSynth);
  write_file(dir / "train.txt", kTrain);
  const std::string d = dir.string();
  CHECK(run_cli("--version") == 0);
  CHECK(run_cli("") == ATRANK_ERR_USAGE);
  CHECK(run_cli("frobnicate") == ATRANK_ERR_USAGE);
  CHECK(run_cli("prepare parquet x y") == ATRANK_ERR_USAGE);
  CHECK(run_cli("eval " + d + "/none " + d + "/none") == ATRANK_ERR_DATA);
  REQUIRE(run_cli("synth " + d + "/synth.txt " + d + "/data") == 0);
  REQUIRE(run_cli("train -q " + d + "/train.txt " + d + "/data " + d + "/ckpt") == 0);
  CHECK(fs::exists(dir / "ckpt" / "metrics.csv"));
  CHECK(run_cli("eval " + d + "/ckpt " + d + "/data") == 0);
  CHECK(run_cli("export-attention " + d + "/ckpt " + d + "/data u0 " + d + "/attn") == 0);
  CHECK(run_cli("time-buckets " + d + "/ckpt " + d + "/data " + d + "/b.csv") == 0);
  fs::remove_all(dir);
}
