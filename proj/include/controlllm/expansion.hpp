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

// Layer expansion: which layers get an expanded branch, how the branch is
// wired (side-car or stacked), freezing, and weight-space merging.

#ifndef CONTROLLLM_EXPANSION_HPP_
#define CONTROLLLM_EXPANSION_HPP_

#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "controlllm/interpolators.hpp"
#include "controlllm/model.hpp"

namespace cllm {

enum class Strategy { kConcat, kStack, kHybrid };
enum class BranchKind { kConcat, kStack };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);

struct ExpansionPlan {
  int n_layers = 0;
  int period = 1;
  Strategy strategy = Strategy::kConcat;
  std::vector<int> expanded_indices;
  InterpolatorConfig interpolator;
  DivergenceConfig divergence;

  bool expands(int layer) const;
  // Branch wiring of an expanded layer; hybrid alternates by rank,
  // concat on even ranks.
  BranchKind branch_kind(int layer) const;
  bool all_concat() const;
};

ExpansionPlan build_expansion_plan(int n_layers, int period, Strategy strategy,
                                   InterpolatorConfig interpolator, DivergenceConfig divergence);

// A model is the spec, its tensors and, for control models, the plan that
// wires the branch.* and interp.* tensors in.
struct Model {
  ModelSpec spec;
  ParameterStore store;
  std::optional<ExpansionPlan> plan;
};

// Base tensors frozen, branches copied from the base blocks (stack copies
// get o_proj and down_proj zeroed), interpolators at their identity values.
Model expand_model(const Model& base, const ExpansionPlan& plan);

enum class TrainMode { kControl, kFullParam, kPartialParam };

// Names that may change during training under `mode`. Partial-parameter
// tuning trains the base blocks listed in `partial_layers` in place.
std::set<std::string> trainable_set(const Model& model, TrainMode mode,
                                    std::span<const int> partial_layers = {});

// Sets every frozen flag in the store so that exactly `trainable` is unfrozen.
void apply_trainable(ParameterStore& store, const std::set<std::string>& trainable);

// Plain store with each expanded block replaced by (1 - alpha) * base +
// alpha * branch. Requires an all-concat plan.
ParameterStore merge_blocks(const Model& model, double alpha);

// Read-only view that evaluates a lerp model with a different blend weight.
struct AlphaView {
  const Model* model = nullptr;
  double inference_alpha = 0.5;
};

AlphaView alpha_sweep(const Model& model, double inference_alpha);

}  // namespace cllm

#endif  // CONTROLLLM_EXPANSION_HPP_
