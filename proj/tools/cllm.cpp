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

// cllm: pretrain -> expand -> finetune -> eval / probe / merge / sweep, and
// the forgetting comparison (cf-experiment).
//
// Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

#include <CLI11.hpp>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "controlllm/c_api.h"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct Flag {
  const char* name;  // option name without dashes
  const char* key;   // config key
  const char* help;
};

const Flag kTrainFlags[] = {
    {"steps", "steps", "optimizer steps"},
    {"batch-size", "batch_size", "sequences per step"},
    {"schedule-scale", "schedule_scale", "warmup and eval-interval scale"},
    {"lr-scale", "lr_scale", "learning-rate multiplier"},
    {"peak-lr", "peak_lr", "unscaled peak learning rate"},
    {"min-lr", "min_lr", "unscaled floor learning rate"},
    {"warmup-steps", "warmup_steps", "unscaled warmup steps"},
    {"eval-every", "eval_every", "steps between evaluations (0: derived)"},
    {"eval-samples", "eval_samples", "examples per evaluation"},
    {"eval-seed", "eval_seed", "seed of the evaluation sets"},
    {"task-a", "task_a", "retained task (copy_reverse|sort)"},
    {"task-b", "task_b", "new task (copy_reverse|sort)"},
};

const Flag kPlanFlags[] = {
    {"method", "method", "method label"},
    {"period", "period", "expand the last layer of every group of this size"},
    {"fixed-alpha", "fixed_alpha", "lerp/plerp blend weight"},
    {"learnable-alpha", "learnable_alpha", "train the lerp/plerp weight (true|false)"},
    {"lambda", "lambda", "divergence weight"},
};

const Flag kModelFlags[] = {
    {"d-model", "d_model", "hidden width"},
    {"n-layers", "n_layers", "decoder layers"},
    {"n-heads", "n_heads", "attention heads"},
    {"d-ff", "d_ff", "feed-forward width"},
};

const Flag kCheckpointFlag = {"checkpoint", "checkpoint", "input checkpoint directory"};

struct Command {
  std::string name;
  std::string help;
  std::vector<Flag> flags;
};

std::vector<Command> commands() {
  auto with = [](std::vector<Flag> base, std::initializer_list<const Flag*> groups,
                 std::initializer_list<std::size_t> sizes) {
    auto size = sizes.begin();
    for (const Flag* g : groups) {
      base.insert(base.end(), g, g + *size++);
    }
    return base;
  };
  const std::size_t nt = std::size(kTrainFlags), np = std::size(kPlanFlags),
                    nm = std::size(kModelFlags);
  return {
      {"pretrain", "train the base model on task A",
       with({{"gate", "gate", "accuracy required with --strict"}}, {kTrainFlags, kModelFlags},
            {nt, nm})},
      {"expand", "add branches to a base checkpoint and verify identity at init",
       with({kCheckpointFlag, {"residual-inputs", "residual_inputs", "identity-check inputs"}},
            {kPlanFlags}, {np})},
      {"finetune", "continual fine-tuning on task B",
       with({kCheckpointFlag}, {kTrainFlags, kPlanFlags}, {nt, np})},
      {"eval", "greedy-decoding accuracy on both tasks",
       {kCheckpointFlag,
        {"split", "split", "train|validation|test"},
        {"eval-samples", "eval_samples", "examples per task"},
        {"eval-seed", "eval_seed", "seed of the evaluation sets"},
        {"task-a", "task_a", "first task"},
        {"task-b", "task_b", "second task"}}},
      {"probe", "hidden-state alignment report",
       {kCheckpointFlag,
        {"probe-file", "probe_file", "category<TAB>sentence file"},
        {"probe-categories", "probe_categories", "built-in probe groups"},
        {"probe-per-category", "probe_per_category", "built-in probes per group"}}},
      {"merge", "fold branches into a plain model",
       {kCheckpointFlag, {"alpha", "alpha", "merge weight of the branch"}}},
      {"sweep", "evaluate a lerp model at several blend weights",
       {kCheckpointFlag,
        {"alphas", "alphas", "comma-separated weights"},
        {"split", "split", "train|validation|test"},
        {"eval-samples", "eval_samples", "examples per task"},
        {"task-a", "task_a", "first task"},
        {"task-b", "task_b", "second task"}}},
      {"cf-experiment", "fine-tune every method and seed from one base",
       with({kCheckpointFlag,
             {"methods", "methods", "comma-separated method labels"},
             {"seeds", "seeds", "comma-separated seeds"}},
            {kTrainFlags, kPlanFlags + 1}, {nt, np - 1})},
  };
}

int exit_code(cllm_status s) {
  return s == CLLM_ERR_CONFIG || s == CLLM_ERR_INVALID_ARGUMENT ? kExitUsage : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Control-style layer expansion experiments"};
  app.require_subcommand(1);
  std::string seed, out, config;
  bool strict = false;
  app.add_option("--seed", seed, "random seed");
  app.add_option("--out", out, "output directory");
  app.add_option("--config", config, "key=value settings file (flags win)");
  app.add_flag("--strict", strict, "enforce accuracy gates");

  const auto cmds = commands();
  std::map<std::string, std::map<std::string, std::string>> values;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->fallthrough();
    auto& slot = values[c.name];
    for (const auto& f : c.flags) {
      sub->add_option(std::string("--") + f.name, slot[f.key], f.help);
    }
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  cllm_config* cfg = nullptr;
  if (cllm_config_create(&cfg) != CLLM_OK) {
    std::fprintf(stderr, "error: %s\n", cllm_last_error());
    return kExitRuntime;
  }
  auto bail = [&](cllm_status s) {
    std::fprintf(stderr, "error (%s): %s\n", cllm_status_name(s), cllm_last_error());
    cllm_config_destroy(cfg);
    return exit_code(s);
  };
  cllm_status s = CLLM_OK;
  auto set = [&](const char* key, const std::string& value) {
    if (s == CLLM_OK) s = cllm_config_set(cfg, key, value.c_str());
  };
  if (!seed.empty()) set("seed", seed);
  if (!out.empty()) set("out", out);
  if (strict) set("strict", "true");

  std::string command;
  for (const auto& [sub, c] : subs) {
    if (!sub->parsed()) continue;
    command = c->name;
    for (const auto& f : c->flags) {
      if (sub->count(std::string("--") + f.name) > 0) set(f.key, values[c->name][f.key]);
    }
  }
  if (s != CLLM_OK) return bail(s);
  if (!config.empty()) {
    s = cllm_config_merge_file(cfg, config.c_str());
    if (s != CLLM_OK) return bail(s);
  }

  const char* output = nullptr;
  s = cllm_run(cfg, command.c_str(), &output);
  if (s != CLLM_OK) return bail(s);
  std::fputs(output, stdout);
  cllm_config_destroy(cfg);
  return 0;
}
