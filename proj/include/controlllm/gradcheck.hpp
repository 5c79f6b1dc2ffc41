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

// Central finite-difference gradient checking.
//
// The scalar function is given as a graph builder: it receives a fresh graph
// and the parameter map and must bind every checked tensor with
// g.param(name, point.at(name), true) before returning the scalar node.

#ifndef CONTROLLLM_GRADCHECK_HPP_
#define CONTROLLLM_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "controlllm/graph.hpp"

namespace cllm {

template <typename T>
using ParamMap = std::map<std::string, BasicTensor<T>>;

template <typename T>
using ScalarBuilder = std::function<Var(Graph<T>&, const ParamMap<T>&)>;

struct GradReport {
  std::map<std::string, double> max_rel_error;
  double worst = 0.0;
  std::string worst_param;
  double epsilon = 0.0;
  double tolerance = 1e-3;
  bool passed = false;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

template <typename T>
T evaluate_scalar(const ScalarBuilder<T>& f, const ParamMap<T>& point) {
  Graph<T> g;
  return g.scalar(f(g, point));
}

template <typename T>
GradMap<T> analytic_gradient(const ScalarBuilder<T>& f, const ParamMap<T>& point) {
  Graph<T> g;
  const Var loss = f(g, point);
  return g.backward(loss);
}

// Only tensors that the analytic pass reports (i.e. bound as trainable) are
// differenced.
template <typename T>
GradMap<T> numeric_gradient(const ScalarBuilder<T>& f, ParamMap<T> point, double epsilon,
                            const GradMap<T>& which) {
  if (!(epsilon >= 1e-5 && epsilon <= 1e-2)) {
    fail(ErrorKind::kConfig, "finite_diff_check: epsilon must lie in [1e-5, 1e-2]");
  }
  const T base = evaluate_scalar(f, point);
  if (evaluate_scalar(f, point) != base) {
    fail(ErrorKind::kContract, "finite_diff_check: function is not deterministic");
  }
  GradMap<T> out;
  for (const auto& [name, analytic] : which) {
    auto it = point.find(name);
    if (it == point.end()) continue;
    BasicTensor<T> numeric(it->second.shape());
    auto nd = numeric.mutable_data();
    for (std::int64_t i = 0; i < it->second.numel(); ++i) {
      const T orig = it->second[i];
      it->second.mutable_data()[i] = orig + static_cast<T>(epsilon);
      const T up = evaluate_scalar(f, point);
      it->second.mutable_data()[i] = orig - static_cast<T>(epsilon);
      const T down = evaluate_scalar(f, point);
      it->second.mutable_data()[i] = orig;
      nd[i] = static_cast<T>((static_cast<double>(up) - static_cast<double>(down)) /
                             (2.0 * epsilon));
    }
    out.emplace(name, std::move(numeric));
  }
  return out;
}

template <typename T>
GradReport compare_gradients(const GradMap<T>& analytic, const GradMap<T>& numeric,
                             double epsilon, double tolerance = 1e-3) {
  GradReport report;
  report.epsilon = epsilon;
  report.tolerance = tolerance;
  for (const auto& [name, a] : analytic) {
    auto it = numeric.find(name);
    if (it == numeric.end()) continue;
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      worst = std::max(worst, relative_error(a[i], it->second[i]));
    }
    report.max_rel_error[name] = worst;
    if (worst >= report.worst) {
      report.worst = worst;
      report.worst_param = name;
    }
  }
  report.passed = !report.max_rel_error.empty() && report.worst < tolerance;
  return report;
}

template <typename T>
GradReport finite_diff_check(const ScalarBuilder<T>& f, const ParamMap<T>& point,
                             double epsilon, double tolerance = 1e-3) {
  const GradMap<T> analytic = analytic_gradient(f, point);
  const GradMap<T> numeric = numeric_gradient(f, point, epsilon, analytic);
  return compare_gradients(analytic, numeric, epsilon, tolerance);
}

}  // namespace cllm

#endif  // CONTROLLLM_GRADCHECK_HPP_
