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

#include "controlllm/expansion.hpp"

#include <algorithm>

namespace cllm {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kConcat: return "concat";
    case Strategy::kStack: return "stack";
    case Strategy::kHybrid: return "hybrid";
  }
  return "?";
}

Strategy parse_strategy(std::string_view s) {
  if (s == "concat") return Strategy::kConcat;
  if (s == "stack") return Strategy::kStack;
  if (s == "hybrid") return Strategy::kHybrid;
  fail(ErrorKind::kConfig, "unknown strategy '" + std::string(s) + "'");
}

bool ExpansionPlan::expands(int layer) const {
  return std::binary_search(expanded_indices.begin(), expanded_indices.end(), layer);
}

BranchKind ExpansionPlan::branch_kind(int layer) const {
  const auto it = std::lower_bound(expanded_indices.begin(), expanded_indices.end(), layer);
  if (it == expanded_indices.end() || *it != layer) {
    fail(ErrorKind::kContract, "plan: layer " + std::to_string(layer) + " is not expanded");
  }
  switch (strategy) {
    case Strategy::kConcat: return BranchKind::kConcat;
    case Strategy::kStack: return BranchKind::kStack;
    case Strategy::kHybrid:
      return (it - expanded_indices.begin()) % 2 == 0 ? BranchKind::kConcat : BranchKind::kStack;
  }
  return BranchKind::kConcat;
}

bool ExpansionPlan::all_concat() const {
  return std::all_of(expanded_indices.begin(), expanded_indices.end(),
                     [&](int i) { return branch_kind(i) == BranchKind::kConcat; });
}

ExpansionPlan build_expansion_plan(int n_layers, int period, Strategy strategy,
                                   InterpolatorConfig interpolator, DivergenceConfig divergence) {
  if (n_layers < 1) fail(ErrorKind::kConfig, "plan: n_layers must be positive");
  if (period < 1 || period > n_layers) {
    fail(ErrorKind::kConfig, "plan: period " + std::to_string(period) + " must lie in [1, " +
                                 std::to_string(n_layers) + "]");
  }
  if (!(interpolator.fixed_alpha >= 0.0 && interpolator.fixed_alpha <= 1.0)) {
    fail(ErrorKind::kConfig, "plan: fixed_alpha must lie in [0, 1]");
  }
  if (!(divergence.lambda >= 0.0)) fail(ErrorKind::kConfig, "plan: lambda must be non-negative");
  ExpansionPlan plan;
  plan.n_layers = n_layers;
  plan.period = period;
  plan.strategy = strategy;
  plan.interpolator = interpolator;
  plan.divergence = divergence;
  for (int i = 0; i < n_layers; ++i) {
    if ((i + 1) % period == 0) plan.expanded_indices.push_back(i);
  }
  return plan;
}

namespace {

bool interp_tensor_trainable(const InterpolatorConfig& cfg, std::string_view stem) {
  if (stem == "alpha") return cfg.learnable_alpha;
  if (is_interpolator_bias(stem)) return !cfg.freeze_bias;
  return true;
}

Tensor identity_interp_tensor(const InterpolatorConfig& cfg, std::string_view stem, int d) {
  if (stem == "alpha") return Tensor({1}, static_cast<float>(cfg.fixed_alpha));
  if (stem == "W") return Tensor({1, 2 * d});
  if (stem == "b" || stem == "b_in") return Tensor({1});
  if (stem == "W_in") return Tensor({1, d});
  if (stem == "W_g") return Tensor({2, d});
  if (stem == "b_g") return Tensor({2});
  if (stem == "W_lateral") {
    Tensor t({d, d});
    auto data = t.mutable_data();
    for (int i = 0; i < d; ++i) data[static_cast<std::size_t>(i) * d + i] = 1.0f;
    return t;
  }
  fail(ErrorKind::kContract, "unknown interpolator tensor '" + std::string(stem) + "'");
}

}  // namespace

Model expand_model(const Model& base, const ExpansionPlan& plan) {
  if (base.plan) fail(ErrorKind::kContract, "expand_model: base is already expanded");
  if (plan.n_layers != base.spec.n_layers) {
    fail(ErrorKind::kConfig, "expand_model: plan covers " + std::to_string(plan.n_layers) +
                                 " layers but base has " + std::to_string(base.spec.n_layers));
  }
  Model out{base.spec, {}, plan};
  for (const auto& [name, e] : base.store) out.store.add(name, e.tensor, true);
  for (const int i : plan.expanded_indices) {
    const BranchKind kind = plan.branch_kind(i);
    for (const auto& stem : block_tensor_names()) {
      Tensor copy = base.store.at(base_name(stem, i));
      if (kind == BranchKind::kStack && (stem == "o_proj" || stem == "down_proj")) {
        copy = Tensor(copy.shape());
      }
      out.store.add(branch_name(i, stem), std::move(copy), false);
    }
    if (kind == BranchKind::kConcat) {
      for (const auto& stem : interpolator_tensor_names(plan.interpolator.kind)) {
        out.store.add(interp_name(i, stem),
                      identity_interp_tensor(plan.interpolator, stem, base.spec.d_model),
                      !interp_tensor_trainable(plan.interpolator, stem));
      }
    }
  }
  return out;
}

std::set<std::string> trainable_set(const Model& model, TrainMode mode,
                                    std::span<const int> partial_layers) {
  std::set<std::string> out;
  switch (mode) {
    case TrainMode::kFullParam:
      for (const auto& [name, e] : model.store) out.insert(name);
      break;
    case TrainMode::kPartialParam:
      for (const int i : partial_layers) {
        for (const auto& stem : block_tensor_names()) {
          const auto name = base_name(stem, i);
          if (!model.store.contains(name)) {
            fail(ErrorKind::kConfig, "trainable_set: no layer " + std::to_string(i));
          }
          out.insert(name);
        }
      }
      break;
    case TrainMode::kControl: {
      if (!model.plan) fail(ErrorKind::kContract, "trainable_set: control mode needs a plan");
      for (const auto& [name, e] : model.store) {
        if (name.rfind("branch.", 0) == 0) {
          out.insert(name);
        } else if (name.rfind("interp.", 0) == 0) {
          const auto stem = std::string_view(name).substr(name.rfind('.') + 1);
          if (interp_tensor_trainable(model.plan->interpolator, stem)) out.insert(name);
        }
      }
      break;
    }
  }
  return out;
}

void apply_trainable(ParameterStore& store, const std::set<std::string>& trainable) {
  for (auto& [name, e] : store) e.frozen = trainable.count(name) == 0;
}

ParameterStore merge_blocks(const Model& model, double alpha) {
  if (!model.plan) fail(ErrorKind::kContract, "merge_blocks: model has no expansion plan");
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    fail(ErrorKind::kConfig, "merge_blocks: alpha must lie in [0, 1]");
  }
  if (!model.plan->all_concat()) {
    fail(ErrorKind::kConfig,
         "merge_blocks: stack branches have no paired base block, merging is only defined for "
         "concat expansion");
  }
  const float a = static_cast<float>(alpha);
  ParameterStore out;
  for (const auto& [name, e] : model.store) {
    if (name.rfind("branch.", 0) == 0 || name.rfind("interp.", 0) == 0) continue;
    out.add(name, e.tensor, false);
  }
  for (const int i : model.plan->expanded_indices) {
    for (const auto& stem : block_tensor_names()) {
      Tensor& dst = out.at(base_name(stem, i));
      const Tensor& branch = model.store.at(branch_name(i, stem));
      auto d = dst.mutable_data();
      const auto b = branch.data();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = (1.0f - a) * d[k] + a * b[k];
    }
  }
  return out;
}

AlphaView alpha_sweep(const Model& model, double inference_alpha) {
  if (!model.plan || model.plan->interpolator.kind != InterpolatorKind::kLerp) {
    fail(ErrorKind::kConfig, "alpha_sweep: requires a lerp-interpolated control model");
  }
  if (!(inference_alpha >= 0.0 && inference_alpha <= 1.0)) {
    fail(ErrorKind::kConfig, "alpha_sweep: alpha must lie in [0, 1]");
  }
  return AlphaView{&model, inference_alpha};
}

}  // namespace cllm
