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

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails. The forgetting comparison
// (criteria 7 and 8) trains 16 models and dominates the runtime.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "controlllm/checkpoint.hpp"
#include "controlllm/gradcheck.hpp"
#include "controlllm/harness.hpp"
#include "controlllm/probe.hpp"
#include "controlllm/transformer.hpp"

using namespace cllm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
const Clock::time_point g_start = Clock::now();

void progress(const std::string& msg) {
  const double t = std::chrono::duration<double>(Clock::now() - g_start).count();
  std::fprintf(stderr, "[%7.1fs] %s\n", t, msg.c_str());
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

TokenBatch random_tokens(std::mt19937_64& gen, int batch, int seq, int vocab) {
  std::uniform_int_distribution<int> tok(0, vocab - 1);
  TokenBatch t{batch, seq, std::vector<int>(static_cast<std::size_t>(batch) * seq)};
  for (auto& id : t.ids) id = tok(gen);
  return t;
}

Tensor random_tensor_like(const Tensor& like, std::mt19937_64& gen) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor t(like.shape());
  for (auto& v : t.mutable_data()) v = static_cast<float>(nd(gen));
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  }
  return worst;
}

ModelSpec base_spec() {
  ModelSpec s;
  s.seed = 1;
  return s;
}

const std::vector<InterpolatorKind> kKinds = {InterpolatorKind::kLerp, InterpolatorKind::kDlerp,
                                              InterpolatorKind::kDlerpIn, InterpolatorKind::kMoe,
                                              InterpolatorKind::kPlerp};
const std::vector<Strategy> kStrategies = {Strategy::kConcat, Strategy::kStack, Strategy::kHybrid};

// 1. Identity at init.
Outcome identity_at_init() {
  const ModelSpec spec = base_spec();
  const Model base{spec, init_model(spec), std::nullopt};
  double worst = 0.0;
  int configs = 0;
  for (const Strategy st : kStrategies) {
    for (const InterpolatorKind k : kKinds) {
      InterpolatorConfig ic;
      ic.kind = k;
      const ExpansionPlan plan = build_expansion_plan(
          spec.n_layers, 4, st, ic, DivergenceConfig::defaults_for(ic, DivergenceKind::kMse));
      worst = std::max(worst, identity_residual(base, expand_model(base, plan), 20, 2024));
      ++configs;
    }
  }
  return {worst < 1e-5, "max |dlogit| " + num(worst) + " over " + std::to_string(configs) +
                            " strategy/interpolator pairs, 20 inputs each"};
}

// 2. Freezing over 200 optimizer steps.
Outcome freezing() {
  const ModelSpec spec = base_spec();
  const Model base{spec, init_model(spec), std::nullopt};
  TrainConfig tc = TrainConfig::desk();
  tc.steps = 200;
  tc.batch_size = 8;
  tc.eval_samples = 8;
  std::vector<std::string> broken;
  bool full_has_frozen = false;
  for (const auto& label : method_labels()) {
    const MethodSpec m = resolve_method(label, spec.n_layers);
    Model model = m.plan ? expand_model(base, *m.plan) : base;
    const ParameterStore before = model.store;
    TrainJob job;
    job.method = label;
    job.train_task = TaskKind::kSort;
    job.mode = m.mode;
    job.partial_layers = m.partial_layers;
    const TrainResult run = train(model, job, tc);
    if (run.aborted) broken.push_back(label + " aborted");
    const auto trainable = trainable_set(model, m.mode, m.partial_layers);
    int moved = 0;
    for (const auto& [name, e] : model.store) {
      const bool same = e.tensor == before.at(name);
      if (trainable.count(name) == 0 && !same) broken.push_back(label + ":" + name);
      if (!same) ++moved;
    }
    if (moved == 0) broken.push_back(label + " trained nothing");
    if (m.mode == TrainMode::kFullParam) {
      for (const auto& [name, e] : model.store) full_has_frozen |= e.frozen;
      full_has_frozen |= trainable.size() != model.store.size();
    }
    progress("freezing: " + label + " done");
  }
  if (full_has_frozen) broken.push_back("full_param has frozen tensors");
  std::string detail = std::to_string(method_labels().size()) + " methods x 200 steps";
  for (const auto& b : broken) detail += "; " + b;
  return {broken.empty(), detail};
}

// 3. Gradient correctness, two ways per configuration:
//  (a) the float32 backward of each interpolator combine plus its divergence
//      term, fed with hidden states and interpolator weights from a 2-layer
//      control model, against float64 central differences of the same code
//      (float32 differencing noise alone exceeds the tolerance);
//  (b) the whole control-model loss in float64 against float64 central
//      differences.
// The hard MoE gate is excluded: its straight-through gradient is not the
// derivative of the forward pass, and neither is anything upstream of it.

// `store` outlives the graph because parameters are bound by reference.
template <typename T>
Var control_loss(Graph<T>& g, const ModelSpec& spec, BasicStore<T>& store,
                 const ParamMap<T>& point, const ExpansionPlan& plan, const TokenBatch& tokens,
                 const std::vector<int>& targets, const std::vector<float>& weights) {
  for (const auto& [name, t] : point) store.at(name) = t;
  ForwardOptions opts;
  opts.track_grad = true;
  const GraphForward fwd = build_forward(g, spec, store, &plan, tokens, opts);
  const std::vector<T> w(weights.begin(), weights.end());
  const Var task = g.cross_entropy(fwd.logits, targets, w);
  const Var div = trace_divergence(g, fwd, plan.divergence);
  return total_loss(g, task, div, plan.divergence.lambda);
}

template <typename T>
Var combine_loss(Graph<T>& g, const ExpansionPlan& plan, const ParamMap<T>& point,
                 const ParamMap<T>& fixed, const BasicTensor<T>& readout) {
  auto in = [&](const std::string& name) {
    auto it = point.find(name);
    return it != point.end() ? g.param(name, it->second, true) : g.constant(fixed.at(name), name);
  };
  const Var pre = in("h_pre"), exp = in("h_exp");
  Fused fused;
  switch (plan.interpolator.kind) {
    case InterpolatorKind::kLerp: fused = lerp_combine(g, pre, exp, in("alpha")); break;
    case InterpolatorKind::kDlerp: fused = dlerp_combine(g, pre, exp, in("W"), in("b")); break;
    case InterpolatorKind::kDlerpIn:
      fused = dlerpin_combine(g, in("h_input"), pre, exp, in("W_in"), in("b_in"));
      break;
    case InterpolatorKind::kMoe:
      fused = moe_select(g, in("h_input"), pre, exp, in("W_g"), in("b_g"));
      break;
    case InterpolatorKind::kPlerp:
      fused = plerp_combine(g, pre, exp, in("W_lateral"), in("alpha"));
      break;
  }
  const Var task = g.sum(g.mul(fused.combined, g.constant(readout, "readout")));
  const DivergenceTerm term{pre, exp, fused.alpha};
  const Var div = divergence_loss<T>(g, std::span(&term, 1), plan.divergence);
  return total_loss(g, task, div, plan.divergence.lambda);
}

// float32 backward of one combine + divergence term, with its inputs taken
// from the model's own forward pass.
GradReport combine_check(const Model& model, int layer, const TokenBatch& tokens,
                         std::mt19937_64& gen) {
  const ExpansionPlan& plan = *model.plan;
  const InterpolatorKind kind = plan.interpolator.kind;
  Graph<float> cap;
  const GraphForward fwd = build_forward(cap, model.spec, model.store, &plan, tokens, {});
  ParamMap<float> point, fixed;
  for (const auto& e : fwd.trace) {
    if (e.layer != layer) continue;
    fixed["h_input"] = cap.tensor(e.h_input);
    point["h_pre"] = cap.tensor(e.h_pre);
    point["h_exp"] = cap.tensor(e.h_exp);
  }
  if (kind != InterpolatorKind::kMoe) point["h_input"] = fixed.at("h_input");
  for (const auto& stem : interpolator_tensor_names(kind)) {
    (kind == InterpolatorKind::kMoe ? fixed : point)[stem] =
        model.store.at(interp_name(layer, stem));
  }
  const Tensor readout = random_tensor_like(point.at("h_exp"), gen);
  auto widen = [](const ParamMap<float>& m) {
    ParamMap<double> out;
    for (const auto& [k, v] : m) out.emplace(k, v.cast<double>());
    return out;
  };
  const ParamMap<double> point_d = widen(point), fixed_d = widen(fixed);
  const BasicTensor<double> readout_d = readout.cast<double>();
  const ScalarBuilder<float> f32 = [&](Graph<float>& g, const ParamMap<float>& p) {
    return combine_loss(g, plan, p, fixed, readout);
  };
  const ScalarBuilder<double> f64 = [&](Graph<double>& g, const ParamMap<double>& p) {
    return combine_loss(g, plan, p, fixed_d, readout_d);
  };
  GradMap<double> analytic;
  for (const auto& [k, v] : analytic_gradient(f32, point)) analytic.emplace(k, v.cast<double>());
  const double eps = 1e-5;
  return compare_gradients(analytic, numeric_gradient(f64, point_d, eps, analytic), eps, 1e-3);
}

Outcome gradient_correctness() {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  double worst32 = 0.0, worst64 = 0.0;
  std::string where32, where64;
  int failures = 0, combines = 0;
  for (int i = 0; i < 50; ++i) {
    ModelSpec spec;
    spec.d_model = 16;
    spec.n_heads = 2;
    spec.n_layers = 2;
    spec.d_ff = 32;
    spec.max_seq_len = 8;
    spec.seed = 100 + i;
    InterpolatorConfig ic;
    ic.kind = kKinds[i % 5];
    ic.learnable_alpha = unit(gen) < 0.5;
    DivergenceConfig dc;
    dc.kind = (i / 5) % 2 == 0 ? DivergenceKind::kMse : DivergenceKind::kCosine;
    dc.weighting = unit(gen) < 0.5 ? DivergenceWeighting::kAlphaWeighted
                                   : DivergenceWeighting::kUnweighted;
    dc.lambda = 0.1 + 1.9 * unit(gen);
    const bool hybrid = i % 10 >= 7;
    const int period = hybrid ? 1 : (unit(gen) < 0.5 ? 1 : 2);
    const ExpansionPlan plan = build_expansion_plan(
        2, period, hybrid ? Strategy::kHybrid : Strategy::kConcat, ic, dc);
    Model model = expand_model(Model{spec, init_model(spec), std::nullopt}, plan);
    // Move away from the identity point so every term is active.
    for (auto& [name, e] : model.store) {
      auto data = e.tensor.mutable_data();
      const bool gain = name.find("norm") != std::string::npos;
      const bool lateral = name.find("W_lateral") != std::string::npos;
      const bool alpha = name.find("alpha") != std::string::npos;
      for (std::size_t j = 0; j < data.size(); ++j) {
        if (alpha) {
          data[j] = static_cast<float>(0.2 + 0.6 * unit(gen));
        } else if (gain) {
          data[j] = static_cast<float>(1.0 + 0.2 * nd(gen));
        } else if (lateral) {
          const auto d = static_cast<std::size_t>(spec.d_model);
          data[j] = static_cast<float>((j / d == j % d ? 1.0 : 0.0) + 0.2 * nd(gen));
        } else {
          data[j] = static_cast<float>(0.3 * nd(gen));
        }
      }
    }
    const TokenBatch tokens = random_tokens(gen, 2, 8, spec.vocab_size);
    auto note = [&](const GradReport& r, double& worst, std::string& where, const char* tag) {
      if (!r.passed) ++failures;
      if (r.worst >= worst) {
        worst = r.worst;
        where = "config " + std::to_string(i) + " (" + std::string(to_string(ic.kind)) + "/" +
                std::string(to_string(dc.kind)) + ", " + tag + ") " + r.worst_param;
      }
    };

    const TokenBatch few{1, 4, std::vector<int>(tokens.ids.begin(), tokens.ids.begin() + 4)};
    for (const int l : plan.expanded_indices) {
      if (plan.branch_kind(l) != BranchKind::kConcat) continue;
      note(combine_check(model, l, few, gen), worst32, where32, "combine");
      ++combines;
    }

    const int top = plan.expanded_indices.back();
    ParamMap<double> point;
    for (const auto& name : trainable_set(model, TrainMode::kControl)) {
      if (ic.kind == InterpolatorKind::kMoe &&
          (name.find("W_g") != std::string::npos || name.find("b_g") != std::string::npos ||
           name.find("." + std::to_string(top) + ".") == std::string::npos)) {
        continue;
      }
      point.emplace(name, model.store.at(name).cast<double>());
    }
    BasicStore<double> store = model.store.cast<double>();
    for (const auto& name : store.names()) store.set_frozen(name, point.count(name) == 0);
    const std::vector<int> targets = random_tokens(gen, 2, 8, spec.vocab_size).ids;
    const std::vector<float> weights(targets.size(), 1.0f);
    const ScalarBuilder<double> f64 = [&](Graph<double>& g, const ParamMap<double>& p) {
      return control_loss(g, spec, store, p, plan, tokens, targets, weights);
    };
    note(finite_diff_check(f64, point, 1e-5, 1e-3), worst64, where64, "model");
  }
  return {failures == 0,
          std::to_string(combines) + " float32 combine checks, worst rel. error " + num(worst32) +
              " at " + where32 + "; 50 float64 model checks, worst " + num(worst64) + " at " +
              where64 + (failures ? "; " + std::to_string(failures) + " failing" : "")};
}

// 4. Divergence at init and hand examples.
Outcome divergence_semantics() {
  const ModelSpec spec = base_spec();
  const Model base{spec, init_model(spec), std::nullopt};
  std::mt19937_64 gen(4);
  const TokenBatch tokens = random_tokens(gen, 4, 16, spec.vocab_size);
  double worst_init = 0.0;
  int configs = 0;
  for (const Strategy st : kStrategies) {
    for (const InterpolatorKind k : kKinds) {
      for (const auto dk : {DivergenceKind::kMse, DivergenceKind::kCosine}) {
        for (const auto w : {DivergenceWeighting::kAlphaWeighted, DivergenceWeighting::kUnweighted}) {
          InterpolatorConfig ic;
          ic.kind = k;
          DivergenceConfig dc{dk, w, 1.0};
          const Model control = expand_model(base, build_expansion_plan(spec.n_layers, 4, st, ic, dc));
          const ForwardResult fr = forward(control, tokens, true);
          worst_init = std::max(worst_init, std::abs(divergence_loss(*fr.trace, dc)));
          ++configs;
        }
      }
    }
  }
  auto row = [](std::vector<double> v) {
    const auto n = static_cast<std::int64_t>(v.size());
    return BasicTensor<double>(Shape{1, n}, std::move(v));
  };
  auto hand = [&](DivergenceKind kind, std::vector<double> pre, std::vector<double> exp) {
    Graph<double> g;
    const DivergenceTerm t{g.constant(row(pre)), g.constant(row(exp)), Var{}};
    DivergenceConfig c;
    c.kind = kind;
    return g.scalar(divergence_loss<double>(g, std::span(&t, 1), c));
  };
  // ((1 - 1)^2 + (2 - 4)^2) / 2 = 2 and 1 - cos(90 deg) = 1
  const double mse = hand(DivergenceKind::kMse, {1, 2}, {1, 4});
  const double cos_orth = hand(DivergenceKind::kCosine, {1, 0}, {0, 1});
  // 1 - (3*4 + 4*3) / 25 = 0.04
  const double cos_skew = hand(DivergenceKind::kCosine, {3, 4}, {4, 3});
  const bool pass = worst_init == 0.0 && std::abs(mse - 2.0) < 1e-6 &&
                    std::abs(cos_orth - 1.0) < 1e-6 && std::abs(cos_skew - 0.04) < 1e-6;
  return {pass, "max L_div at init " + num(worst_init) + " over " + std::to_string(configs) +
                    " configurations; mse " + num(mse) + ", cosine " + num(cos_orth) + " and " +
                    num(cos_skew)};
}

// 5. Unscaled warmup-cosine schedule.
Outcome schedule() {
  const TrainConfig c;  // paper values: warmup 1000, peak 5e-5, min 1e-5
  const int w = 1000, total = c.steps;
  auto formula = [&](int s) {
    if (s < w) return 5e-5 * (s + 1) / w;
    const double progress = static_cast<double>(s - w) / (total - w);
    return 1e-5 + 0.5 * (5e-5 - 1e-5) * (1 + std::cos(std::acos(-1.0) * progress));
  };
  double worst = 0.0;
  for (int s = 0; s < total; ++s) worst = std::max(worst, std::abs(lr_at(s, c) - formula(s)));
  const double at_peak = lr_at(w - 1, c), at_end = lr_at(total - 1, c);
  const double increment = formula(total - 2) - formula(total - 1);
  const bool pass = c.warmup_steps() == w && worst < 1e-12 && std::abs(at_peak - 5e-5) < 1e-12 &&
                    std::abs(lr_at(w, c) - 5e-5) < 1e-12 && std::abs(at_end - 1e-5) <= increment &&
                    std::abs(lr_at(total, c) - 1e-5) < 1e-12;
  return {pass, "lr(warmup-1) " + num(at_peak) + ", lr(final) " + num(at_end) +
                    ", max deviation from formula " + num(worst) + " over " +
                    std::to_string(total) + " steps"};
}

// 6. Block merging against the lerp-combined model.
Outcome merge_equivalence() {
  ModelSpec spec = base_spec();
  spec.use_norm = false;
  spec.use_attention = false;
  spec.activation = Activation::kIdentity;
  InterpolatorConfig ic;
  ic.fixed_alpha = 0.3;
  const ExpansionPlan plan =
      build_expansion_plan(spec.n_layers, 4, Strategy::kConcat, ic, DivergenceConfig{});
  Model control = expand_model(Model{spec, init_model(spec), std::nullopt}, plan);
  // Without norms the stream scale is free; unit-scale embeddings put the
  // GELU inputs in its curved range. With one perturbed factor per block the
  // branch output is linear in the merged weights, so merging commutes with
  // the blend.
  std::mt19937_64 gen(6);
  std::normal_distribution<double> nd(0.0, 0.5), unit(0.0, 1.0);
  for (const char* name : {"tok_emb", "pos_emb"}) {
    for (auto& v : control.store.at(name).mutable_data()) v = static_cast<float>(unit(gen));
  }
  for (const int l : plan.expanded_indices) {
    for (auto& v : control.store.at(branch_name(l, "up_proj")).mutable_data()) {
      v += static_cast<float>(nd(gen));
    }
  }
  const TokenBatch inputs = random_tokens(gen, 100, 8, spec.vocab_size);
  auto discrepancy = [&](const Model& m) {
    const Model merged{m.spec, merge_blocks(m, ic.fixed_alpha), std::nullopt};
    return max_abs_diff(forward(m, inputs).logits, forward(merged, inputs).logits);
  };
  const double linear = discrepancy(control);
  Model gelu = control;
  gelu.spec.activation = Activation::kGelu;
  const double nonlinear = discrepancy(gelu);
  return {linear < 1e-5 && nonlinear > 1e-3,
          "linear blocks " + num(linear) + ", with GELU " + num(nonlinear) + " (100 inputs)"};
}

// 9. Hard MoE selection.
Outcome moe_hardness() {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> nd(0.0, 1.0);
  const std::int64_t rows = 1000, d = 64;
  auto rand = [&](Shape s) {
    Tensor t(std::move(s));
    for (auto& v : t.mutable_data()) v = static_cast<float>(nd(gen));
    return t;
  };
  const Tensor x = rand({rows, d}), pre = rand({rows, d}), exp = rand({rows, d});
  Graph<float> g;
  const Fused f = moe_select<float>(g, g.constant(x), g.constant(pre), g.constant(exp),
                                    g.constant(rand({2, d})), g.constant(Tensor({2})));
  const Tensor& out = g.tensor(f.combined);
  int exact_one = 0, picked_exp = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    bool eq_pre = true, eq_exp = true;
    for (std::int64_t c = 0; c < d; ++c) {
      eq_pre &= out[r * d + c] == pre[r * d + c];
      eq_exp &= out[r * d + c] == exp[r * d + c];
    }
    exact_one += eq_pre != eq_exp;
    picked_exp += eq_exp;
  }
  Graph<float> tie;
  const Fused t = moe_select<float>(tie, tie.constant(x), tie.constant(pre), tie.constant(exp),
                                    tie.constant(Tensor({2, d})), tie.constant(Tensor({2})));
  const bool ties_pre = tie.tensor(t.combined) == pre;
  return {exact_one == rows && ties_pre && picked_exp > 0 && picked_exp < rows,
          std::to_string(exact_one) + "/1000 rows equal exactly one branch (" +
              std::to_string(picked_exp) + " expanded); ties " +
              (ties_pre ? "select pre-trained" : "do not select pre-trained")};
}

// 10. Checkpoint round trip and manifest validation.
Outcome serialization(const fs::path& work) {
  const ModelSpec spec = base_spec();
  InterpolatorConfig ic;
  ic.kind = InterpolatorKind::kPlerp;
  ic.learnable_alpha = true;
  const Model control = expand_model(
      Model{spec, init_model(spec), std::nullopt},
      build_expansion_plan(spec.n_layers, 2, Strategy::kHybrid, ic,
                           DivergenceConfig::defaults_for(ic, DivergenceKind::kCosine)));
  const fs::path dir = work / "roundtrip";
  save_checkpoint(dir, control);
  const Model back = load_checkpoint(dir);
  const bool exact = bitwise_equal(back.store, control.store) && back.spec == control.spec &&
                     back.plan.has_value() &&
                     plan_to_json_text(*back.plan) == plan_to_json_text(*control.plan);
  auto rejected = [&](const std::string& name, auto corrupt) {
    const fs::path bad = work / ("corrupt_" + name);
    fs::remove_all(bad);
    fs::copy(dir, bad);
    corrupt(bad);
    try {
      load_checkpoint(bad);
    } catch (const Error& e) {
      return e.kind() == ErrorKind::kIo;
    }
    return false;
  };
  const auto blob_size = fs::file_size(dir / "weights.bin");
  int caught = 0;
  caught += rejected("truncated", [&](const fs::path& p) { fs::resize_file(p / "weights.bin", blob_size - 4); });
  caught += rejected("padded", [&](const fs::path& p) { fs::resize_file(p / "weights.bin", blob_size + 4); });
  caught += rejected("offset", [&](const fs::path& p) {
    std::ifstream in(p / "manifest.json");
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    const auto at = text.find("\"offset\"");
    const auto colon = text.find(':', at);
    const auto end = text.find_first_of(",}", colon);
    text.replace(colon + 1, end - colon - 1, " " + std::to_string(blob_size));
    std::ofstream(p / "manifest.json", std::ios::trunc) << text;
  });
  return {exact && caught == 3, std::string(exact ? "bit-exact" : "NOT bit-exact") +
                                    " round trip of " + std::to_string(control.store.size()) +
                                    " tensors; " + std::to_string(caught) +
                                    "/3 corrupted checkpoints rejected"};
}

// 7 and 8. Forgetting comparison and probe alignment.
struct CfOutcome {
  Outcome forgetting;
  Outcome alignment;
};

CfOutcome forgetting_and_alignment(const fs::path& work) {
  const ModelSpec spec = base_spec();
  Model base{spec, init_model(spec), std::nullopt};
  TrainConfig pre = TrainConfig::desk();
  pre.seed = 1;
  TrainJob job;
  job.method = "pretrain";
  job.train_task = TaskKind::kCopyReverse;
  progress("pretraining base on copy_reverse");
  const TrainResult pr = train(base, job, pre);
  pr.log.write_csv(work / "pretrain_metrics.csv");
  const double base_acc = evaluate_task(base, TaskSpec{}, Split::kTest, 256, 7);
  save_checkpoint(work / "base", base);
  progress("base test accuracy " + num(base_acc));
  if (pr.aborted || base_acc < 0.95) {
    const Outcome o{false, "pretrained base reached only " + num(base_acc) + " test accuracy"};
    return {o, o};
  }

  CfOptions opts;
  opts.methods = {"full_param", "partial_param", "stack", "concat_lerp_mse", "concat_lerp"};
  opts.seeds = {0, 1, 2};
  opts.train = TrainConfig::desk();
  const ProbeSet probes = builtin_probe_set(0);
  std::map<std::pair<std::string, std::uint64_t>, double> alignment, distance;
  std::map<std::pair<std::string, std::uint64_t>, double> best_b;
  opts.on_run = [&](const std::string& label, std::uint64_t seed, const Model& model,
                    const TrainResult& run) {
    run.log.write_csv(work / "runs" / (label + "_s" + std::to_string(seed) + ".csv"));
    double b = 0.0;
    for (const auto& r : run.log.records()) b = std::max(b, r.task_b_acc);
    best_b[{label, seed}] = b;
    if (model.plan && model.plan->strategy == Strategy::kConcat) {
      const AlignmentReport r = alignment_metrics(extract_states(model, probes));
      alignment[{label, seed}] = r.mean_drift_cosine();
      double d = 0.0;
      for (const auto& l : r.drift) d += l.distance;
      distance[{label, seed}] = d / static_cast<double>(r.drift.size());
    }
    const auto& last = run.log.records().back();
    progress(label + " seed " + std::to_string(seed) + ": task_a " + num(last.task_a_acc) +
             ", task_b " + num(last.task_b_acc));
  };
  const CfResult res = run_cf_experiment(base, opts);
  write_file_atomic(work / "cf_curves.csv", cf_rows_to_csv(res.rows));
  write_file_atomic(work / "cf_curves.svg", cf_rows_to_svg(res.rows));

  int seeds_ok = 0, align_ok = 0;
  std::string detail, align_detail;
  for (const auto seed : opts.seeds) {
    auto a = [&](const std::string& m) { return res.final_rows.at({m, seed}).task_a_acc; };
    bool learned = true;
    for (const auto& m : opts.methods) learned &= best_b.at({m, seed}) >= 0.90;
    const bool ordered = a("concat_lerp_mse") > a("stack") && a("stack") > a("partial_param") &&
                         a("partial_param") > a("full_param");
    const double gap = a("concat_lerp_mse") - a("full_param");
    const bool ok = learned && ordered && gap >= 0.20;
    seeds_ok += ok;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "; seed %llu %s: task_a lerp_mse %.3f stack %.3f partial %.3f full %.3f, "
                  "min best task_b %.3f",
                  static_cast<unsigned long long>(seed), ok ? "ok" : "miss", a("concat_lerp_mse"),
                  a("stack"), a("partial_param"), a("full_param"),
                  std::min({best_b.at({"full_param", seed}), best_b.at({"partial_param", seed}),
                            best_b.at({"stack", seed}), best_b.at({"concat_lerp_mse", seed})}));
    detail += buf;
    const double with = alignment.at({"concat_lerp_mse", seed});
    const double without = alignment.at({"concat_lerp", seed});
    align_ok += with >= without;
    // Distance is reported for context only; the ordering is judged on cosine.
    std::snprintf(buf, sizeof buf,
                  "; seed %llu: cosine %.4f with mse vs %.4f without (distance %.3f vs %.3f)",
                  static_cast<unsigned long long>(seed), with, without,
                  distance.at({"concat_lerp_mse", seed}), distance.at({"concat_lerp", seed}));
    align_detail += buf;
  }
  const bool clean = res.aborted.empty();
  if (!clean) detail += "; aborted runs: " + std::to_string(res.aborted.size());
  return {{clean && seeds_ok >= 2, std::to_string(seeds_ok) + "/3 seeds" + detail},
          {clean && align_ok >= 2, std::to_string(align_ok) + "/3 seeds" + align_detail}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<int> only, expected;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--expect-fail", expected,
                 "criteria known not to hold; reported as FAIL without failing the run");
  CLI11_PARSE(app, argc, argv);
  const fs::path dir(work);
  fs::create_directories(dir);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  std::map<int, std::pair<std::string, Outcome>> results;
  auto run = [&](int id, const std::string& name, auto fn) {
    if (!wanted(id)) return;
    progress("criterion " + std::to_string(id) + ": " + name);
    try {
      results[id] = {name, fn()};
    } catch (const std::exception& e) {
      results[id] = {name, Outcome{false, std::string("error: ") + e.what()}};
    }
  };
  run(1, "identity at init", identity_at_init);
  run(2, "freezing", freezing);
  run(3, "gradient correctness", gradient_correctness);
  run(4, "divergence semantics", divergence_semantics);
  run(5, "learning-rate schedule", schedule);
  run(6, "merge equivalence", merge_equivalence);
  if (wanted(7) || wanted(8)) {
    progress("criteria 7 and 8: forgetting comparison");
    try {
      const CfOutcome cf = forgetting_and_alignment(dir);
      if (wanted(7)) results[7] = {"forgetting comparison", cf.forgetting};
      if (wanted(8)) results[8] = {"probe alignment ordering", cf.alignment};
    } catch (const std::exception& e) {
      const Outcome o{false, std::string("error: ") + e.what()};
      if (wanted(7)) results[7] = {"forgetting comparison", o};
      if (wanted(8)) results[8] = {"probe alignment ordering", o};
    }
  }
  run(9, "moe hardness", moe_hardness);
  run(10, "serialization", [&] { return serialization(dir); });

  int failed = 0, known = 0;
  std::string report;
  for (const auto& [id, r] : results) {
    const bool excused =
        !r.second.pass && std::find(expected.begin(), expected.end(), id) != expected.end();
    report += std::string(r.second.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(id) +
              " (" + r.first + "): " + r.second.detail +
              (excused ? " [known limitation]" : "") + "\n";
    failed += !r.second.pass && !excused;
    known += excused;
  }
  report += std::to_string(results.size()) + " criteria run, " + std::to_string(failed) +
            " unexpected failures, " + std::to_string(known) + " known limitations\n";
  std::fputs(report.c_str(), stdout);
  // ctest hides the output of passing tests; keep a copy next to the artifacts.
  write_file_atomic(dir / "acceptance_report.txt", report);
  progress("done");
  return failed == 0 ? 0 : 1;
}
