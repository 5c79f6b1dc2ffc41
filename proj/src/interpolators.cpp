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

#include "controlllm/interpolators.hpp"

#include <cmath>

namespace cllm {

std::string_view to_string(InterpolatorKind kind) {
  switch (kind) {
    case InterpolatorKind::kLerp: return "lerp";
    case InterpolatorKind::kDlerp: return "dlerp";
    case InterpolatorKind::kDlerpIn: return "dlerpin";
    case InterpolatorKind::kMoe: return "moe";
    case InterpolatorKind::kPlerp: return "plerp";
  }
  return "?";
}

std::string_view to_string(DivergenceKind kind) {
  switch (kind) {
    case DivergenceKind::kNone: return "none";
    case DivergenceKind::kMse: return "mse";
    case DivergenceKind::kCosine: return "cosine";
  }
  return "?";
}

std::string_view to_string(DivergenceWeighting w) {
  return w == DivergenceWeighting::kAlphaWeighted ? "alpha_weighted" : "unweighted";
}

InterpolatorKind parse_interpolator(std::string_view s) {
  if (s == "lerp") return InterpolatorKind::kLerp;
  if (s == "dlerp") return InterpolatorKind::kDlerp;
  if (s == "dlerpin") return InterpolatorKind::kDlerpIn;
  if (s == "moe") return InterpolatorKind::kMoe;
  if (s == "plerp") return InterpolatorKind::kPlerp;
  fail(ErrorKind::kConfig, "unknown interpolator '" + std::string(s) + "'");
}

DivergenceKind parse_divergence(std::string_view s) {
  if (s == "none") return DivergenceKind::kNone;
  if (s == "mse") return DivergenceKind::kMse;
  if (s == "cosine" || s == "cos") return DivergenceKind::kCosine;
  fail(ErrorKind::kConfig, "unknown divergence '" + std::string(s) + "'");
}

DivergenceWeighting parse_weighting(std::string_view s) {
  if (s == "alpha_weighted") return DivergenceWeighting::kAlphaWeighted;
  if (s == "unweighted") return DivergenceWeighting::kUnweighted;
  fail(ErrorKind::kConfig, "unknown divergence weighting '" + std::string(s) + "'");
}

DivergenceConfig DivergenceConfig::defaults_for(const InterpolatorConfig& interp,
                                                DivergenceKind kind) {
  DivergenceConfig c;
  c.kind = kind;
  c.weighting =
      interp.dynamic() ? DivergenceWeighting::kAlphaWeighted : DivergenceWeighting::kUnweighted;
  return c;
}

std::vector<std::string> interpolator_tensor_names(InterpolatorKind kind) {
  switch (kind) {
    case InterpolatorKind::kLerp: return {"alpha"};
    case InterpolatorKind::kDlerp: return {"W", "b"};
    case InterpolatorKind::kDlerpIn: return {"W_in", "b_in"};
    case InterpolatorKind::kMoe: return {"W_g", "b_g"};
    case InterpolatorKind::kPlerp: return {"alpha", "W_lateral"};
  }
  return {};
}

bool is_interpolator_bias(std::string_view name) {
  return name == "b" || name == "b_in" || name == "b_g";
}

template <typename T>
Fused lerp_combine(Graph<T>& g, Var h_pre, Var h_exp, Var alpha) {
  for (const T a : g.value(alpha)) {
    if (!(a >= T(0) && a <= T(1))) {
      fail(ErrorKind::kConfig, "lerp_combine: alpha " + std::to_string(a) + " outside [0, 1]");
    }
  }
  return Fused{g.blend(h_pre, h_exp, alpha), alpha, {}};
}

template <typename T>
Fused dlerp_combine(Graph<T>& g, Var h_pre, Var h_exp, Var weight, Var bias) {
  const Var joint = g.concat_last(h_pre, h_exp);
  const Var logit = g.add_bias(g.linear(joint, weight), bias);
  const Var alpha = g.reshape(g.sigmoid(logit), Shape{row_count(g.shape(h_pre))});
  return Fused{g.blend(h_pre, h_exp, alpha), alpha, {}};
}

template <typename T>
Fused dlerpin_combine(Graph<T>& g, Var h_input, Var h_pre, Var h_exp, Var weight_in,
                      Var bias_in) {
  const Var logit = g.add_bias(g.linear(h_input, weight_in), bias_in);
  const Var alpha = g.reshape(g.sigmoid(logit), Shape{row_count(g.shape(h_pre))});
  return Fused{g.blend(h_pre, h_exp, alpha), alpha, {}};
}

template <typename T>
Fused moe_select(Graph<T>& g, Var h_input, Var h_pre, Var h_exp, Var gate_weight,
                 Var gate_bias) {
  const Var logits = g.add_bias(g.linear(h_input, gate_weight), gate_bias);
  auto sel = g.hard_select(h_pre, h_exp, logits);
  return Fused{sel.combined, sel.chosen, std::move(sel.index)};
}

template <typename T>
Fused plerp_combine(Graph<T>& g, Var h_pre, Var h_exp, Var lateral, Var alpha) {
  const Shape& sl = g.shape(lateral);
  const auto d = last_dim(g.shape(h_pre));
  if (sl.size() != 2 || sl[0] != d || sl[1] != d) {
    fail(ErrorKind::kShape, "plerp_combine: lateral shape " + shape_str(sl) +
                                " is not square in " + std::to_string(d));
  }
  const Var lateral_out = g.linear(h_pre, lateral);
  return lerp_combine(g, lateral_out, h_exp, alpha);
}

template <typename T>
Var divergence_loss(Graph<T>& g, std::span<const DivergenceTerm> terms,
                    const DivergenceConfig& config) {
  if (config.kind == DivergenceKind::kNone) {
    return g.constant(BasicTensor<T>(Shape{1}, T(0)), "div_none");
  }
  if (terms.empty()) {
    fail(ErrorKind::kContract, "divergence_loss: empty trace");
  }
  Var acc;
  for (const auto& t : terms) {
    const Var delta = config.kind == DivergenceKind::kMse ? g.row_mse(t.h_pre, t.h_exp)
                                                          : g.row_cosine_distance(t.h_pre, t.h_exp);
    Var weighted = delta;
    if (config.weighting == DivergenceWeighting::kAlphaWeighted) {
      if (!t.alpha.valid()) {
        fail(ErrorKind::kContract, "divergence_loss: alpha-weighted divergence without alpha trace");
      }
      const auto rows = shape_numel(g.shape(delta));
      Var w = t.alpha;
      const auto na = shape_numel(g.shape(w));
      if (na == 1) {
        const std::vector<int> zeros(static_cast<std::size_t>(rows), 0);
        w = g.reshape(g.embedding(g.reshape(w, Shape{1, 1}), zeros), Shape{rows});
      } else if (na != rows) {
        fail(ErrorKind::kShape, "divergence_loss: alpha " + shape_str(g.shape(w)) +
                                    " vs " + std::to_string(rows) + " rows");
      }
      weighted = g.mul(delta, w);
    }
    const Var layer_mean = g.mean(weighted);
    acc = acc.valid() ? g.add(acc, layer_mean) : layer_mean;
  }
  return g.scale(acc, T(1) / static_cast<T>(terms.size()));
}

template <typename T>
Var total_loss(Graph<T>& g, Var task, Var div, double lambda) {
  const T t = g.scalar(task), d = g.scalar(div);
  if (!std::isfinite(t) || !std::isfinite(d) || !std::isfinite(lambda)) {
    fail(ErrorKind::kNonFinite, "total_loss: non-finite input");
  }
  if (lambda == 0.0) return task;
  return g.add(task, g.scale(div, static_cast<T>(lambda)));
}

double total_loss(double task, double div, double lambda) {
  if (!std::isfinite(task) || !std::isfinite(div) || !std::isfinite(lambda)) {
    fail(ErrorKind::kNonFinite, "total_loss: non-finite input");
  }
  return task + lambda * div;
}

template Fused lerp_combine<float>(Graph<float>&, Var, Var, Var);
template Fused lerp_combine<double>(Graph<double>&, Var, Var, Var);
template Fused dlerp_combine<float>(Graph<float>&, Var, Var, Var, Var);
template Fused dlerp_combine<double>(Graph<double>&, Var, Var, Var, Var);
template Fused dlerpin_combine<float>(Graph<float>&, Var, Var, Var, Var, Var);
template Fused dlerpin_combine<double>(Graph<double>&, Var, Var, Var, Var, Var);
template Fused moe_select<float>(Graph<float>&, Var, Var, Var, Var, Var);
template Fused moe_select<double>(Graph<double>&, Var, Var, Var, Var, Var);
template Fused plerp_combine<float>(Graph<float>&, Var, Var, Var, Var);
template Fused plerp_combine<double>(Graph<double>&, Var, Var, Var, Var);
template Var divergence_loss<float>(Graph<float>&, std::span<const DivergenceTerm>,
                                    const DivergenceConfig&);
template Var divergence_loss<double>(Graph<double>&, std::span<const DivergenceTerm>,
                                     const DivergenceConfig&);
template Var total_loss<float>(Graph<float>&, Var, Var, double);
template Var total_loss<double>(Graph<double>&, Var, Var, double);

}  // namespace cllm
