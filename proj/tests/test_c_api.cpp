/* Copyright 2026 The controlllm Authors. All Rights Reserved.

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
#include <doctest.h>

#include <cstring>
#include <string>
#include <vector>

#include "controlllm/c_api.h"
#include "test_util.hpp"

namespace {

cllm_config* tiny_config(const std::string& out) {
  cllm_config* cfg = nullptr;
  REQUIRE(cllm_config_create(&cfg) == CLLM_OK);
  const char* kv[][2] = {{"d_model", "32"}, {"n_layers", "4"},     {"n_heads", "2"},
                         {"d_ff", "64"},    {"steps", "4"},        {"batch_size", "4"},
                         {"eval_every", "2"}, {"eval_samples", "8"}};
  for (const auto& p : kv) REQUIRE(cllm_config_set(cfg, p[0], p[1]) == CLLM_OK);
  REQUIRE(cllm_config_set(cfg, "out", out.c_str()) == CLLM_OK);
  return cfg;
}

}  // namespace

TEST_CASE("status names and null arguments") {
  CHECK(std::string(cllm_status_name(CLLM_OK)) == "ok");
  CHECK(std::string(cllm_status_name(CLLM_ERR_CONFIG)) == "config error");
  CHECK(std::strlen(cllm_version()) > 0);
  CHECK(cllm_config_create(nullptr) == CLLM_ERR_INVALID_ARGUMENT);
  CHECK(std::string(cllm_last_error()).find("null") != std::string::npos);
  CHECK(cllm_config_set(nullptr, "steps", "1") == CLLM_ERR_INVALID_ARGUMENT);
  CHECK(cllm_run(nullptr, "eval", nullptr) == CLLM_ERR_INVALID_ARGUMENT);
  CHECK(cllm_model_load(nullptr, nullptr) == CLLM_ERR_INVALID_ARGUMENT);
  cllm_config_destroy(nullptr);
  cllm_model_destroy(nullptr);
}

TEST_CASE("errors map to status codes") {
  cllm_config* cfg = nullptr;
  REQUIRE(cllm_config_create(&cfg) == CLLM_OK);
  CHECK(cllm_config_set(cfg, "no_such_key", "1") == CLLM_ERR_CONFIG);
  CHECK(std::string(cllm_last_error()).find("no_such_key") != std::string::npos);
  CHECK(cllm_config_set(cfg, "steps", "1") == CLLM_OK);
  CHECK(std::string(cllm_last_error()).empty());
  CHECK(cllm_run(cfg, "teleport", nullptr) == CLLM_ERR_CONFIG);
  CHECK(cllm_config_merge_file(cfg, "/nonexistent/cfg.txt") == CLLM_ERR_CONFIG);
  cllm_model* m = nullptr;
  CHECK(cllm_model_load("/nonexistent/ckpt", &m) == CLLM_ERR_IO);
  CHECK(m == nullptr);
  cllm_config_destroy(cfg);
}

TEST_CASE("run, load and forward through the C interface") {
  const auto root = cllm::testing::scratch_dir("c_api");
  cllm_config* cfg = tiny_config((root / "pre").string());
  const char* out = nullptr;
  REQUIRE(cllm_run(cfg, "pretrain", &out) == CLLM_OK);
  REQUIRE(out != nullptr);
  CHECK(std::string(out).find("test accuracy") != std::string::npos);
  cllm_config_destroy(cfg);

  cllm_model* m = nullptr;
  REQUIRE(cllm_model_load((root / "pre" / "checkpoint").c_str(), &m) == CLLM_OK);
  int64_t params = 0;
  int32_t vocab = 0, expanded = -1;
  CHECK(cllm_model_parameter_count(m, &params) == CLLM_OK);
  CHECK(cllm_model_vocab_size(m, &vocab) == CLLM_OK);
  CHECK(cllm_model_expanded_layers(m, &expanded) == CLLM_OK);
  CHECK(vocab == 64);
  CHECK(expanded == 0);
  // 2*64*32 (tok_emb, lm_head) + 32*32 (positions) + 4 layers + final norm
  CHECK(params == 2 * 64 * 32 + 32 * 32 + 4 * (4 * 32 * 32 + 2 * 32 * 64 + 2 * 32) + 32);

  const std::vector<int32_t> ids{2, 4, 5, 6, 1, 9};
  std::vector<float> logits(2 * 3 * 64);
  CHECK(cllm_model_forward(m, ids.data(), 2, 3, logits.data(), logits.size() - 1) ==
        CLLM_ERR_INVALID_ARGUMENT);
  REQUIRE(cllm_model_forward(m, ids.data(), 2, 3, logits.data(), logits.size()) == CLLM_OK);
  std::vector<float> again(logits.size());
  REQUIRE(cllm_model_forward(m, ids.data(), 2, 3, again.data(), again.size()) == CLLM_OK);
  CHECK(logits == again);
  const std::vector<int32_t> bad{2, 4, 99};
  CHECK(cllm_model_forward(m, bad.data(), 1, 3, logits.data(), logits.size()) == CLLM_ERR_SHAPE);
  CHECK(std::string(cllm_last_error()).find("position 2") != std::string::npos);

  REQUIRE(cllm_model_save(m, (root / "copy").c_str()) == CLLM_OK);
  cllm_model* copy = nullptr;
  REQUIRE(cllm_model_load((root / "copy").c_str(), &copy) == CLLM_OK);
  std::vector<float> copied(logits.size());
  REQUIRE(cllm_model_forward(copy, ids.data(), 2, 3, copied.data(), copied.size()) == CLLM_OK);
  CHECK(copied == again);
  cllm_model_destroy(copy);
  cllm_model_destroy(m);

  cllm_config* ex = tiny_config((root / "exp").string());
  REQUIRE(cllm_config_set(ex, "checkpoint", (root / "pre" / "checkpoint").c_str()) == CLLM_OK);
  REQUIRE(cllm_config_set(ex, "period", "2") == CLLM_OK);
  REQUIRE(cllm_run(ex, "expand", &out) == CLLM_OK);
  cllm_config_destroy(ex);
  REQUIRE(cllm_model_load((root / "exp" / "checkpoint").c_str(), &m) == CLLM_OK);
  CHECK(cllm_model_expanded_layers(m, &expanded) == CLLM_OK);
  CHECK(expanded == 2);
  cllm_model_destroy(m);
}
