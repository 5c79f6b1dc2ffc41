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

// Experiment orchestration behind the command-line tool.
//
// Settings live in a flat key=value map (see known_config_keys()). A config
// file is read first and explicit flags are applied on top.

#ifndef CONTROLLLM_HARNESS_HPP_
#define CONTROLLLM_HARNESS_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "controlllm/probe.hpp"
#include "controlllm/training.hpp"

namespace cllm {

class KeyValueConfig {
 public:
  // Rejects keys outside known_config_keys().
  void set(const std::string& key, const std::string& value);
  // key=value lines; '#' starts a comment. Keys already set are kept, so
  // flags applied before or after a file both win over it.
  void merge_text(const std::string& text);
  void merge_file(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

const std::vector<std::string>& known_config_keys();

const std::vector<std::string>& method_labels();

// A method label fixes the plan (if any) and the trainable-set mode.
struct MethodSpec {
  std::string label;
  std::optional<ExpansionPlan> plan;
  TrainMode mode = TrainMode::kFullParam;
  std::vector<int> partial_layers;
};

struct PlanParams {
  int period = 4;
  double fixed_alpha = 0.5;
  bool learnable_alpha = false;
  double lambda = 1.0;
};

MethodSpec resolve_method(const std::string& label, int n_layers, const PlanParams& params = {});

ModelSpec model_spec_from(const KeyValueConfig& cfg);
TrainConfig train_config_from(const KeyValueConfig& cfg);
PlanParams plan_params_from(const KeyValueConfig& cfg);

// Max |logit difference| between a control model and its base on `inputs`
// random sequences.
double identity_residual(const Model& base, const Model& control, int inputs, std::uint64_t seed);

struct CfRow {
  int step = 0;
  std::string method;
  std::uint64_t seed = 0;
  double task_a_acc = 0.0;
  double task_b_acc = 0.0;
};

struct CfResult {
  std::vector<CfRow> rows;
  // Final record per (method, seed).
  std::map<std::pair<std::string, std::uint64_t>, CfRow> final_rows;
  std::vector<std::string> aborted;  // "method seed: reason"
};

struct CfOptions {
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  TrainConfig train;
  PlanParams plan;
  TaskKind task_a = TaskKind::kCopyReverse;
  TaskKind task_b = TaskKind::kSort;
  // Receives every finished (method, seed) run, e.g. for probing.
  std::function<void(const std::string&, std::uint64_t, const Model&, const TrainResult&)>
      on_run;
};

// Fine-tunes a copy of `base` for every method and seed. Aborted runs are
// listed and their partial curves kept.
CfResult run_cf_experiment(const Model& base, const CfOptions& options);

std::string cf_rows_to_csv(const std::vector<CfRow>& rows);
std::string cf_rows_to_svg(const std::vector<CfRow>& rows);

// Runs one subcommand (pretrain, expand, finetune, eval, probe, merge, sweep,
// cf-experiment) and returns its printable summary. Failures surface as
// Error; kConfig marks usage problems.
std::string run_command(const std::string& command, const KeyValueConfig& cfg);

}  // namespace cllm

#endif  // CONTROLLLM_HARNESS_HPP_
