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

#include "controlllm/probe.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <random>
#include <sstream>

#include "controlllm/checkpoint.hpp"
#include "controlllm/rng.hpp"

namespace cllm {

using nlohmann::json;

ProbeSet builtin_probe_set(std::uint64_t seed, int categories, int per_category,
                           const TaskSpec& task) {
  if (categories < 1 || per_category < 1) {
    fail(ErrorKind::kConfig, "probe set: need at least one category and item");
  }
  ProbeSet set;
  for (int c = 0; c < categories; ++c) {
    std::mt19937_64 gen(mix_seed(mix_seed(seed, "probe"), static_cast<std::uint64_t>(c)));
    std::uniform_int_distribution<int> symbol(kFirstSymbol, task.vocab - 1);
    std::vector<int> payload(static_cast<std::size_t>(task.payload_len));
    for (auto& s : payload) s = symbol(gen);
    for (int i = 0; i < per_category; ++i) {
      if (i > 0) std::shuffle(payload.begin(), payload.end(), gen);
      ProbeItem item;
      item.category = "multiset-" + std::to_string(c);
      item.tokens.push_back(task_marker(TaskKind::kCopyReverse));
      item.tokens.insert(item.tokens.end(), payload.begin(), payload.end());
      item.tokens.push_back(kSepId);
      set.items.push_back(std::move(item));
    }
  }
  return set;
}

ProbeSet parse_probe_text(const std::string& text, int vocab) {
  const int symbols = vocab - kFirstSymbol;
  if (symbols < 1) fail(ErrorKind::kConfig, "probe file: vocabulary too small");
  ProbeSet set;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      fail(ErrorKind::kConfig,
           "probe file line " + std::to_string(lineno) + ": expected category<TAB>sentence");
    }
    ProbeItem item;
    item.category = line.substr(0, tab);
    item.text = line.substr(tab + 1);
    for (const unsigned char b : item.text) item.tokens.push_back(kFirstSymbol + b % symbols);
    set.items.push_back(std::move(item));
  }
  return set;
}

ProbeSet load_probe_file(const std::filesystem::path& path, int vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read probe file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_probe_text(ss.str(), vocab);
}

std::string_view to_string(Branch b) {
  return b == Branch::kPretrained ? "Pretrained" : "Expanded";
}

namespace {

Branch parse_branch(const std::string& s) {
  if (s == "Pretrained") return Branch::kPretrained;
  if (s == "Expanded") return Branch::kExpanded;
  fail(ErrorKind::kIo, "probe report: unknown branch '" + s + "'");
}

Vec final_row(const Tensor& t, int d) {
  const auto data = t.data();
  const std::size_t off = data.size() - static_cast<std::size_t>(d);
  return Vec(data.begin() + static_cast<std::ptrdiff_t>(off), data.end());
}

}  // namespace

ProbeStates extract_states(const Model& model, const ProbeSet& probes) {
  if (probes.items.empty()) fail(ErrorKind::kConfig, "extract_states: empty probe set");
  if (!model.plan) fail(ErrorKind::kConfig, "extract_states: model has no expanded layers");
  ProbeStates states;
  states.d_model = model.spec.d_model;
  states.layers = model.plan->expanded_indices;
  for (std::size_t p = 0; p < probes.items.size(); ++p) {
    const auto& item = probes.items[p];
    if (item.tokens.empty()) fail(ErrorKind::kConfig, "extract_states: empty probe");
    if (static_cast<int>(item.tokens.size()) > model.spec.max_seq_len) {
      fail(ErrorKind::kShape, "extract_states: probe " + std::to_string(p) + " has " +
                                  std::to_string(item.tokens.size()) +
                                  " tokens, max_seq_len is " +
                                  std::to_string(model.spec.max_seq_len));
    }
    TokenBatch batch{1, static_cast<int>(item.tokens.size()), item.tokens};
    const ForwardResult res = forward(model, batch, true);
    std::vector<Vec> pre, exp;
    for (const auto& layer : res.trace->layers) {
      pre.push_back(final_row(layer.h_pre, states.d_model));
      exp.push_back(final_row(layer.h_exp, states.d_model));
    }
    states.categories.push_back(item.category);
    states.pre.push_back(std::move(pre));
    states.exp.push_back(std::move(exp));
  }
  return states;
}

PcaResult pca_project(const std::vector<Vec>& points, int k) {
  if (points.empty()) fail(ErrorKind::kConfig, "pca: no points");
  const auto n = static_cast<Eigen::Index>(points.size());
  const auto dim = static_cast<Eigen::Index>(points.front().size());
  if (k < 1 || k > dim) fail(ErrorKind::kConfig, "pca: k must lie in [1, dim]");
  if (n < k + 1) fail(ErrorKind::kConfig, "pca: need at least k+1 points");
  Eigen::MatrixXd X(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(points[i].size()) != dim) {
      fail(ErrorKind::kShape, "pca: points differ in dimension");
    }
    for (Eigen::Index j = 0; j < dim; ++j) X(i, j) = points[i][j];
  }
  const Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  const Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) fail(ErrorKind::kRuntime, "pca: eigensolver failed");
  const Eigen::VectorXd values = solver.eigenvalues().cwiseMax(0.0);
  const double total = values.sum();
  PcaResult out;
  out.mean.assign(mean.data(), mean.data() + dim);
  Eigen::MatrixXd comps(k, dim);
  for (int c = 0; c < k; ++c) {
    const Eigen::Index idx = dim - 1 - c;  // eigenvalues ascend
    Eigen::VectorXd v = solver.eigenvectors().col(idx);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    comps.row(c) = v.transpose();
    out.explained_ratio.push_back(total > 0 ? values(idx) / total : 0.0);
    out.components.emplace_back(v.data(), v.data() + dim);
  }
  const Eigen::MatrixXd coords =
      total > 0 ? Eigen::MatrixXd(X * comps.transpose()) : Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec row(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) row[c] = coords(i, c);
    out.coordinates.push_back(std::move(row));
  }
  return out;
}

double cosine_similarity(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) fail(ErrorKind::kShape, "cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double c = dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
  return std::clamp(c, -1.0, 1.0);
}

double euclidean_distance(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) fail(ErrorKind::kShape, "distance: dimension mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double silhouette(const std::vector<Vec>& points, const std::vector<int>& labels) {
  if (points.size() != labels.size() || points.empty()) {
    fail(ErrorKind::kShape, "silhouette: points and labels differ in count");
  }
  std::map<int, int> sizes;
  for (const int l : labels) ++sizes[l];
  if (sizes.size() < 2) fail(ErrorKind::kConfig, "silhouette: need at least two clusters");
  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (sizes[labels[i]] == 1) continue;
    std::map<int, double> sum;
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j != i) sum[labels[j]] += euclidean_distance(points[i], points[j]);
    }
    const double a = sum[labels[i]] / (sizes[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, s] : sum) {
      if (label != labels[i]) b = std::min(b, s / sizes[label]);
    }
    const double m = std::max(a, b);
    total += m > 0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(points.size());
}

double AlignmentReport::mean_drift_cosine() const {
  if (drift.empty()) return 1.0;
  double s = 0;
  for (const auto& d : drift) s += d.cosine;
  return s / static_cast<double>(drift.size());
}

AlignmentReport alignment_metrics(const ProbeStates& states) {
  const std::size_t np = states.probes(), nl = states.layers.size();
  if (np == 0 || nl == 0) fail(ErrorKind::kConfig, "alignment_metrics: no paired states");
  if (states.pre.size() != np || states.exp.size() != np) {
    fail(ErrorKind::kShape, "alignment_metrics: inconsistent probe counts");
  }
  for (std::size_t p = 0; p < np; ++p) {
    if (states.pre[p].size() != nl || states.exp[p].size() != nl) {
      fail(ErrorKind::kShape, "alignment_metrics: probe " + std::to_string(p) + " lacks layers");
    }
  }
  AlignmentReport r;
  r.d_model = states.d_model;

  for (std::size_t l = 0; l < nl; ++l) {
    LayerDrift d{states.layers[l], 0.0, 0.0};
    for (std::size_t p = 0; p < np; ++p) {
      d.cosine += cosine_similarity(states.pre[p][l], states.exp[p][l]);
      d.distance += euclidean_distance(states.pre[p][l], states.exp[p][l]);
    }
    d.cosine /= static_cast<double>(np);
    d.distance /= static_cast<double>(np);
    r.drift.push_back(d);
  }

  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t p = 0; p < np; ++p) groups[states.categories[p]].push_back(p);
  for (const auto& [cat, members] : groups) {
    if (members.size() < 2) {
      r.category_warnings.push_back("category '" + cat + "' has " +
                                    std::to_string(members.size()) +
                                    " item; excluded from semantic stability");
    }
  }
  bool any_pair = false;
  for (std::size_t l = 0; l < nl; ++l) {
    double s = 0;
    int pairs = 0;
    for (const auto& [cat, members] : groups) {
      if (members.size() < 2) continue;
      for (std::size_t i = 0; i < members.size(); ++i) {
        for (std::size_t j = i + 1; j < members.size(); ++j) {
          s += cosine_similarity(states.exp[members[i]][l], states.exp[members[j]][l]);
          ++pairs;
        }
      }
    }
    any_pair = pairs > 0;
    r.stability_per_layer.push_back(pairs > 0 ? s / pairs : 0.0);
  }
  if (any_pair) {
    for (const double s : r.stability_per_layer) r.semantic_stability += s;
    r.semantic_stability /= static_cast<double>(nl);
  }

  if (nl >= 2) {
    std::vector<Vec> pts;
    std::vector<int> labels;
    for (std::size_t p = 0; p < np; ++p) {
      for (std::size_t l = 0; l < nl; ++l) {
        pts.push_back(states.exp[p][l]);
        labels.push_back(states.layers[l]);
      }
    }
    r.layer_silhouette = silhouette(pts, labels);
  }

  // Point order: probe, layer, branch.
  std::vector<Vec> all;
  std::vector<ProbePoint> meta;
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t l = 0; l < nl; ++l) {
      for (const Branch b : {Branch::kPretrained, Branch::kExpanded}) {
        all.push_back(b == Branch::kPretrained ? states.pre[p][l] : states.exp[p][l]);
        meta.push_back(ProbePoint{static_cast<int>(p), states.categories[p], states.layers[l], b, {}});
      }
    }
  }
  const int k = std::min<int>({kPcaDims, states.d_model, static_cast<int>(all.size()) - 1});
  if (k >= 1) {
    const PcaResult pca = pca_project(all, k);
    r.explained_ratio = pca.explained_ratio;
    for (std::size_t i = 0; i < meta.size(); ++i) meta[i].coords = pca.coordinates[i];
  }
  r.points = meta;

  const std::size_t ref = (nl - 1) * 2 + 1;  // probe 0, last layer, Expanded
  std::vector<Neighbor> cand;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (i == ref) continue;
    cand.push_back(Neighbor{meta[i].probe, meta[i].layer, meta[i].branch,
                            euclidean_distance(all[ref], all[i])});
  }
  std::stable_sort(cand.begin(), cand.end(),
                   [](const Neighbor& a, const Neighbor& b) { return a.distance < b.distance; });
  if (cand.size() > kNeighborCount) cand.resize(kNeighborCount);
  r.neighbors = std::move(cand);
  return r;
}

std::string report_to_json(const AlignmentReport& r) {
  json j;
  j["d_model"] = r.d_model;
  j["drift"] = json::array();
  for (const auto& d : r.drift) {
    j["drift"].push_back({{"layer", d.layer}, {"cosine", d.cosine}, {"distance", d.distance}});
  }
  j["semantic_stability"] = r.semantic_stability;
  j["stability_per_layer"] = r.stability_per_layer;
  j["layer_silhouette"] = r.layer_silhouette ? json(*r.layer_silhouette) : json(nullptr);
  j["explained_variance_ratio"] = r.explained_ratio;
  j["points"] = json::array();
  for (const auto& p : r.points) {
    j["points"].push_back({{"probe", p.probe},
                           {"category", p.category},
                           {"layer", p.layer},
                           {"branch", std::string(to_string(p.branch))},
                           {"coords", p.coords}});
  }
  j["nearest_neighbors"] = json::array();
  for (const auto& n : r.neighbors) {
    j["nearest_neighbors"].push_back({{"probe", n.probe},
                                      {"layer", n.layer},
                                      {"branch", std::string(to_string(n.branch))},
                                      {"distance", n.distance}});
  }
  j["category_warnings"] = r.category_warnings;
  return j.dump(2) + "\n";
}

AlignmentReport report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    AlignmentReport r;
    r.d_model = j.at("d_model").get<int>();
    for (const auto& d : j.at("drift")) {
      r.drift.push_back(LayerDrift{d.at("layer").get<int>(), d.at("cosine").get<double>(),
                                   d.at("distance").get<double>()});
    }
    r.semantic_stability = j.at("semantic_stability").get<double>();
    r.stability_per_layer = j.at("stability_per_layer").get<std::vector<double>>();
    if (!j.at("layer_silhouette").is_null()) {
      r.layer_silhouette = j.at("layer_silhouette").get<double>();
    }
    r.explained_ratio = j.at("explained_variance_ratio").get<Vec>();
    for (const auto& p : j.at("points")) {
      r.points.push_back(ProbePoint{p.at("probe").get<int>(), p.at("category").get<std::string>(),
                                    p.at("layer").get<int>(),
                                    parse_branch(p.at("branch").get<std::string>()),
                                    p.at("coords").get<Vec>()});
    }
    for (const auto& n : j.at("nearest_neighbors")) {
      r.neighbors.push_back(Neighbor{n.at("probe").get<int>(), n.at("layer").get<int>(),
                                     parse_branch(n.at("branch").get<std::string>()),
                                     n.at("distance").get<double>()});
    }
    r.category_warnings = j.at("category_warnings").get<std::vector<std::string>>();
    return r;
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, std::string("probe report: ") + e.what());
  }
}

std::string report_to_svg(const AlignmentReport& r) {
  static const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  constexpr double kW = 640, kH = 480, kPad = 40;
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  bool first = true;
  auto coord = [](const ProbePoint& p, std::size_t i) { return i < p.coords.size() ? p.coords[i] : 0.0; };
  for (const auto& p : r.points) {
    const double x = coord(p, 0), y = coord(p, 1);
    if (first) {
      x0 = x1 = x;
      y0 = y1 = y;
      first = false;
    }
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
  const double sx = x1 > x0 ? (kW - 2 * kPad) / (x1 - x0) : 0.0;
  const double sy = y1 > y0 ? (kH - 2 * kPad) / (y1 - y0) : 0.0;
  std::map<int, int> layer_rank;
  for (const auto& d : r.drift) layer_rank.emplace(d.layer, static_cast<int>(layer_rank.size()));
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kPad << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">"
      << "PCA of final-token states (circle: Pretrained, square: Expanded)</text>\n";
  for (const auto& p : r.points) {
    const double x = sx > 0 ? kPad + (coord(p, 0) - x0) * sx : kW / 2;
    const double y = sy > 0 ? kH - kPad - (coord(p, 1) - y0) * sy : kH / 2;
    const int rank = layer_rank.count(p.layer) ? layer_rank[p.layer] : 0;
    const char* color = kPalette[rank % 10];
    if (p.branch == Branch::kPretrained) {
      out << "<circle class=\"marker\" cx=\"" << x << "\" cy=\"" << y << "\" r=\"4\" fill=\""
          << color << "\"/>\n";
    } else {
      out << "<rect class=\"marker\" x=\"" << x - 4 << "\" y=\"" << y - 4
          << "\" width=\"8\" height=\"8\" fill=\"none\" stroke=\"" << color << "\"/>\n";
    }
  }
  int row = 0;
  for (const auto& [layer, rank] : layer_rank) {
    out << "<text x=\"" << kW - 110 << "\" y=\"" << 44 + 16 * row++
        << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << kPalette[rank % 10]
        << "\">layer " << layer << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

void emit_probe_report(const AlignmentReport& report, const std::filesystem::path& dir) {
  write_file_atomic(dir / "probe_report.json", report_to_json(report));
  write_file_atomic(dir / "probe_pca.svg", report_to_svg(report));
}

}  // namespace cllm
