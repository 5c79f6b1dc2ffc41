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

// Fusion of the frozen and expanded branch outputs, and the divergence
// penalty between them.

#ifndef CONTROLLLM_INTERPOLATORS_HPP_
#define CONTROLLLM_INTERPOLATORS_HPP_

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "controlllm/graph.hpp"

namespace cllm {

enum class InterpolatorKind { kLerp, kDlerp, kDlerpIn, kMoe, kPlerp };
enum class DivergenceKind { kNone, kMse, kCosine };
enum class DivergenceWeighting { kAlphaWeighted, kUnweighted };

std::string_view to_string(InterpolatorKind kind);
std::string_view to_string(DivergenceKind kind);
std::string_view to_string(DivergenceWeighting w);
InterpolatorKind parse_interpolator(std::string_view s);
DivergenceKind parse_divergence(std::string_view s);
DivergenceWeighting parse_weighting(std::string_view s);

struct InterpolatorConfig {
  InterpolatorKind kind = InterpolatorKind::kLerp;
  double fixed_alpha = 0.5;     // lerp / plerp
  bool learnable_alpha = false;  // lerp / plerp
  bool freeze_bias = true;       // dlerp / dlerpin / moe

  bool dynamic() const {
    return kind == InterpolatorKind::kDlerp || kind == InterpolatorKind::kDlerpIn ||
           kind == InterpolatorKind::kMoe;
  }
};

struct DivergenceConfig {
  DivergenceKind kind = DivergenceKind::kNone;
  DivergenceWeighting weighting = DivergenceWeighting::kUnweighted;
  double lambda = 1.0;

  // Unweighted for fixed-alpha lerp/plerp, alpha-weighted for the dynamic kinds.
  static DivergenceConfig defaults_for(const InterpolatorConfig& interp,
                                       DivergenceKind kind = DivergenceKind::kNone);
};

// Names of the interpolator tensors a kind owns, in canonical order.
std::vector<std::string> interpolator_tensor_names(InterpolatorKind kind);
// Bias-like tensors subject to `freeze_bias`.
bool is_interpolator_bias(std::string_view name);

// Output of a fusion: `alpha` is [1] for scalar blends, [rows] otherwise.
struct Fused {
  Var combined;
  Var alpha;
  std::vector<int> chosen;  // MoE only
};

template <typename T>
Fused lerp_combine(Graph<T>& g, Var h_pre, Var h_exp, Var alpha);

template <typename T>
Fused dlerp_combine(Graph<T>& g, Var h_pre, Var h_exp, Var weight, Var bias);

template <typename T>
Fused dlerpin_combine(Graph<T>& g, Var h_input, Var h_pre, Var h_exp, Var weight_in,
                      Var bias_in);

template <typename T>
Fused moe_select(Graph<T>& g, Var h_input, Var h_pre, Var h_exp, Var gate_weight,
                 Var gate_bias);

template <typename T>
Fused plerp_combine(Graph<T>& g, Var h_pre, Var h_exp, Var lateral, Var alpha);

struct DivergenceTerm {
  Var h_pre;
  Var h_exp;
  Var alpha;  // may be invalid when unweighted
};

// (1/L) * sum over terms of mean over rows of w * delta(h_pre, h_exp).
template <typename T>
Var divergence_loss(Graph<T>& g, std::span<const DivergenceTerm> terms,
                    const DivergenceConfig& config);

// task + lambda * div, failing on non-finite inputs.
template <typename T>
Var total_loss(Graph<T>& g, Var task, Var div, double lambda);

double total_loss(double task, double div, double lambda);

extern template Fused lerp_combine<float>(Graph<float>&, Var, Var, Var);
extern template Fused lerp_combine<double>(Graph<double>&, Var, Var, Var);
extern template Fused dlerp_combine<float>(Graph<float>&, Var, Var, Var, Var);
extern template Fused dlerp_combine<double>(Graph<double>&, Var, Var, Var, Var);
extern template Fused dlerpin_combine<float>(Graph<float>&, Var, Var, Var, Var, Var);
extern template Fused dlerpin_combine<double>(Graph<double>&, Var, Var, Var, Var, Var);
extern template Fused moe_select<float>(Graph<float>&, Var, Var, Var, Var, Var);
extern template Fused moe_select<double>(Graph<double>&, Var, Var, Var, Var, Var);
extern template Fused plerp_combine<float>(Graph<float>&, Var, Var, Var, Var);
extern template Fused plerp_combine<double>(Graph<double>&, Var, Var, Var, Var);
extern template Var divergence_loss<float>(Graph<float>&, std::span<const DivergenceTerm>,
                                           const DivergenceConfig&);
extern template Var divergence_loss<double>(Graph<double>&, std::span<const DivergenceTerm>,
                                            const DivergenceConfig&);
extern template Var total_loss<float>(Graph<float>&, Var, Var, double);
extern template Var total_loss<double>(Graph<double>&, Var, Var, double);

}  // namespace cllm

#endif  // CONTROLLLM_INTERPOLATORS_HPP_
