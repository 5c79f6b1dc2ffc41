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

// Hidden-state probing: final-token states of both branches at every
// expanded layer, a PCA view of them, and alignment scores.

#ifndef CONTROLLLM_PROBE_HPP_
#define CONTROLLLM_PROBE_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "controlllm/tasks.hpp"

namespace cllm {

struct ProbeItem {
  std::string category;
  std::string text;  // source sentence for file probes, empty otherwise
  std::vector<int> tokens;
};

struct ProbeSet {
  std::vector<ProbeItem> items;
};

// `categories` groups of `per_category` copy_reverse prompts; items within a
// group are permutations of one payload multiset.
ProbeSet builtin_probe_set(std::uint64_t seed, int categories = 5, int per_category = 2,
                           const TaskSpec& task = {});

// category<TAB>sentence per line, bytes mapped onto the symbol range.
ProbeSet parse_probe_text(const std::string& text, int vocab = 64);
ProbeSet load_probe_file(const std::filesystem::path& path, int vocab = 64);

enum class Branch { kPretrained, kExpanded };
std::string_view to_string(Branch b);

using Vec = std::vector<double>;

struct ProbeStates {
  int d_model = 0;
  std::vector<int> layers;               // expanded layer indices
  std::vector<std::string> categories;   // per probe
  std::vector<std::vector<Vec>> pre;     // [probe][layer]
  std::vector<std::vector<Vec>> exp;     // [probe][layer]

  std::size_t probes() const { return categories.size(); }
};

// One capture forward per probe; the model is not modified.
ProbeStates extract_states(const Model& model, const ProbeSet& probes);

struct PcaResult {
  std::vector<Vec> coordinates;  // [point][k]
  std::vector<Vec> components;   // [k][dim], orthonormal
  Vec explained_ratio;           // [k], non-increasing
  Vec mean;
};

// Covariance eigendecomposition. Each component's largest-magnitude entry is
// made positive. Identical points give zero ratios and zero coordinates.
PcaResult pca_project(const std::vector<Vec>& points, int k);

// Mean silhouette under Euclidean distance; singleton clusters score 0.
double silhouette(const std::vector<Vec>& points, const std::vector<int>& labels);

double cosine_similarity(const Vec& a, const Vec& b);
double euclidean_distance(const Vec& a, const Vec& b);

struct LayerDrift {
  int layer = 0;
  double cosine = 0.0;
  double distance = 0.0;
  friend bool operator==(const LayerDrift&, const LayerDrift&) = default;
};

struct ProbePoint {
  int probe = 0;
  std::string category;
  int layer = 0;
  Branch branch = Branch::kPretrained;
  Vec coords;
  friend bool operator==(const ProbePoint&, const ProbePoint&) = default;
};

struct Neighbor {
  int probe = 0;
  int layer = 0;
  Branch branch = Branch::kPretrained;
  double distance = 0.0;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct AlignmentReport {
  int d_model = 0;
  std::vector<LayerDrift> drift;
  std::vector<double> stability_per_layer;
  double semantic_stability = 0.0;
  // Absent with fewer than two expanded layers.
  std::optional<double> layer_silhouette;
  Vec explained_ratio;
  std::vector<ProbePoint> points;
  // Reference is probe 0 in the Expanded branch of the last expanded layer.
  std::vector<Neighbor> neighbors;
  std::vector<std::string> category_warnings;

  double mean_drift_cosine() const;
  friend bool operator==(const AlignmentReport&, const AlignmentReport&) = default;
};

inline constexpr int kNeighborCount = 20;
inline constexpr int kPcaDims = 3;

AlignmentReport alignment_metrics(const ProbeStates& states);

std::string report_to_json(const AlignmentReport& report);
AlignmentReport report_from_json(const std::string& text);
std::string report_to_svg(const AlignmentReport& report);

// Writes probe_report.json and probe_pca.svg into `dir`.
void emit_probe_report(const AlignmentReport& report, const std::filesystem::path& dir);

}  // namespace cllm

#endif  // CONTROLLLM_PROBE_HPP_
