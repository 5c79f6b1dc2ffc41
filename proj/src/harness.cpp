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

#include "controlllm/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "controlllm/checkpoint.hpp"
#include "controlllm/rng.hpp"

namespace cllm {

namespace fs = std::filesystem;

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = {
      "seed",          "out",          "strict",         "checkpoint",     "method",
      "methods",       "seeds",        "period",         "fixed_alpha",    "learnable_alpha",
      "lambda",        "steps",        "batch_size",     "schedule_scale", "lr_scale",
      "peak_lr",       "min_lr",       "warmup_steps",   "weight_decay_ratio",
      "eval_every",    "eval_samples", "eval_seed",      "task_a",         "task_b",
      "split",         "alpha",        "alphas",         "probe_file",     "probe_categories",
      "probe_per_category",            "d_model",        "n_layers",       "n_heads",
      "d_ff",          "residual_inputs",                "gate"};
  return keys;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    fail(ErrorKind::kConfig, "config: '" + key + "' expects a number, got '" + text + "'");
  }
  return v;
}

}  // namespace

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  const auto& keys = known_config_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
    fail(ErrorKind::kConfig, "config: unknown key '" + key + "'");
  }
  values_[key] = value;
}

void KeyValueConfig::merge_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::kConfig, "config line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!has(key)) set(key, trim(line.substr(eq + 1)));
  }
}

void KeyValueConfig::merge_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kConfig, "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str());
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  return has(key) ? parse_number<long long>(key, values_.at(key)) : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? parse_number<double>(key, values_.at(key)) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = values_.at(key);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  fail(ErrorKind::kConfig, "config: '" + key + "' expects a boolean, got '" + v + "'");
}

const std::vector<std::string>& method_labels() {
  static const std::vector<std::string> labels = {
      "full_param",    "partial_param",  "stack",         "concat_lerp",
      "concat_lerp_mse", "concat_dlerp", "concat_dlerp_mse", "concat_dlerpin",
      "concat_plerp",  "concat_moe",     "hybrid"};
  return labels;
}

MethodSpec resolve_method(const std::string& label, int n_layers, const PlanParams& params) {
  MethodSpec m;
  m.label = label;
  auto plan = [&](Strategy s, InterpolatorKind kind, DivergenceKind div) {
    InterpolatorConfig ic;
    ic.kind = kind;
    ic.fixed_alpha = params.fixed_alpha;
    ic.learnable_alpha = params.learnable_alpha;
    DivergenceConfig dc = DivergenceConfig::defaults_for(ic, div);
    dc.lambda = params.lambda;
    m.plan = build_expansion_plan(n_layers, params.period, s, ic, dc);
    m.mode = TrainMode::kControl;
  };
  using IK = InterpolatorKind;
  using DK = DivergenceKind;
  if (label == "full_param") {
    m.mode = TrainMode::kFullParam;
  } else if (label == "partial_param") {
    // Same layers a control model would expand, trained in place.
    m.mode = TrainMode::kPartialParam;
    m.partial_layers = build_expansion_plan(n_layers, params.period, Strategy::kConcat, {}, {})
                           .expanded_indices;
  } else if (label == "stack") {
    plan(Strategy::kStack, IK::kLerp, DK::kNone);
  } else if (label == "concat_lerp") {
    plan(Strategy::kConcat, IK::kLerp, DK::kNone);
  } else if (label == "concat_lerp_mse") {
    plan(Strategy::kConcat, IK::kLerp, DK::kMse);
  } else if (label == "concat_dlerp") {
    plan(Strategy::kConcat, IK::kDlerp, DK::kNone);
  } else if (label == "concat_dlerp_mse") {
    plan(Strategy::kConcat, IK::kDlerp, DK::kMse);
  } else if (label == "concat_dlerpin") {
    plan(Strategy::kConcat, IK::kDlerpIn, DK::kNone);
  } else if (label == "concat_plerp") {
    plan(Strategy::kConcat, IK::kPlerp, DK::kNone);
  } else if (label == "concat_moe") {
    plan(Strategy::kConcat, IK::kMoe, DK::kNone);
  } else if (label == "hybrid") {
    plan(Strategy::kHybrid, IK::kLerp, DK::kMse);
  } else {
    fail(ErrorKind::kConfig, "unknown method '" + label + "'");
  }
  return m;
}

ModelSpec model_spec_from(const KeyValueConfig& cfg) {
  ModelSpec s;
  s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  s.d_model = static_cast<int>(cfg.get_int("d_model", s.d_model));
  s.n_layers = static_cast<int>(cfg.get_int("n_layers", s.n_layers));
  s.n_heads = static_cast<int>(cfg.get_int("n_heads", s.n_heads));
  s.d_ff = static_cast<int>(cfg.get_int("d_ff", s.d_ff));
  s.validate();
  return s;
}

TrainConfig train_config_from(const KeyValueConfig& cfg) {
  TrainConfig c = TrainConfig::desk();
  c.steps = static_cast<int>(cfg.get_int("steps", c.steps));
  c.batch_size = static_cast<int>(cfg.get_int("batch_size", c.batch_size));
  c.schedule_scale = cfg.get_double("schedule_scale", c.schedule_scale);
  c.lr_scale = cfg.get_double("lr_scale", c.lr_scale);
  c.base_peak_lr = cfg.get_double("peak_lr", c.base_peak_lr);
  c.base_min_lr = cfg.get_double("min_lr", c.base_min_lr);
  c.base_warmup_steps = static_cast<int>(cfg.get_int("warmup_steps", c.base_warmup_steps));
  c.weight_decay_ratio = cfg.get_double("weight_decay_ratio", c.weight_decay_ratio);
  c.eval_every = static_cast<int>(cfg.get_int("eval_every", c.eval_every));
  c.eval_samples = static_cast<int>(cfg.get_int("eval_samples", c.eval_samples));
  c.eval_seed = static_cast<std::uint64_t>(cfg.get_int("eval_seed", static_cast<long long>(c.eval_seed)));
  c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  c.validate();
  return c;
}

PlanParams plan_params_from(const KeyValueConfig& cfg) {
  PlanParams p;
  p.period = static_cast<int>(cfg.get_int("period", p.period));
  p.fixed_alpha = cfg.get_double("fixed_alpha", p.fixed_alpha);
  p.learnable_alpha = cfg.get_bool("learnable_alpha", p.learnable_alpha);
  p.lambda = cfg.get_double("lambda", p.lambda);
  return p;
}

double identity_residual(const Model& base, const Model& control, int inputs, std::uint64_t seed) {
  if (inputs < 1) fail(ErrorKind::kConfig, "identity check: need at least one input");
  std::mt19937_64 gen(mix_seed(seed, "identity"));
  std::uniform_int_distribution<int> id(0, base.spec.vocab_size - 1);
  TokenBatch batch{inputs, base.spec.max_seq_len, {}};
  batch.ids.resize(static_cast<std::size_t>(inputs) * batch.seq);
  for (auto& t : batch.ids) t = id(gen);
  const Tensor a = forward(base, batch).logits;
  const Tensor b = forward(control, batch).logits;
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  }
  return worst;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

Model expand_for(const Model& base, const MethodSpec& m) {
  if (!m.plan) return base;
  return expand_model(base, *m.plan);
}

}  // namespace

CfResult run_cf_experiment(const Model& base, const CfOptions& options) {
  if (base.plan) fail(ErrorKind::kConfig, "cf-experiment: base checkpoint must not be expanded");
  if (options.methods.empty() || options.seeds.empty()) {
    fail(ErrorKind::kConfig, "cf-experiment: need at least one method and one seed");
  }
  CfResult result;
  for (const auto& label : options.methods) {
    const MethodSpec method = resolve_method(label, base.spec.n_layers, options.plan);
    for (const auto seed : options.seeds) {
      Model model = expand_for(base, method);
      TrainConfig cfg = options.train;
      cfg.seed = seed;
      TrainJob job;
      job.method = label;
      job.train_task = options.task_b;
      job.task_a = options.task_a;
      job.task_b = options.task_b;
      job.mode = method.mode;
      job.partial_layers = method.partial_layers;
      const TrainResult run = train(model, job, cfg);
      for (const auto& r : run.log.records()) {
        result.rows.push_back(CfRow{r.step, label, seed, r.task_a_acc, r.task_b_acc});
      }
      if (!run.log.empty()) {
        const auto& last = run.log.records().back();
        result.final_rows[{label, seed}] = CfRow{last.step, label, seed, last.task_a_acc, last.task_b_acc};
      }
      if (run.aborted) {
        result.aborted.push_back(label + " seed " + std::to_string(seed) + ": " + run.abort_reason);
      }
      if (options.on_run) options.on_run(label, seed, model, run);
    }
  }
  return result;
}

std::string cf_rows_to_csv(const std::vector<CfRow>& rows) {
  std::string out = "step,method,seed,task_a_acc,task_b_acc\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + r.method + "," + std::to_string(r.seed) + "," +
           fmt(r.task_a_acc) + "," + fmt(r.task_b_acc) + "\n";
  }
  return out;
}

std::string cf_rows_to_svg(const std::vector<CfRow>& rows) {
  // Fixed palette keyed by the position of the label in the method roster.
  static const char* kPalette[] = {"#d62728", "#ff7f0e", "#8c564b", "#7f7f7f", "#1f77b4", "#2ca02c",
                                   "#17becf", "#9467bd", "#e377c2", "#bcbd22", "#000000"};
  const auto& labels = method_labels();
  auto color = [&](const std::string& m) {
    const auto it = std::find(labels.begin(), labels.end(), m);
    return kPalette[it == labels.end() ? 10 : (it - labels.begin()) % 11];
  };
  // Mean over seeds per (method, step).
  std::map<std::string, std::map<int, std::pair<double, double>>> sums;
  std::map<std::string, std::map<int, int>> counts;
  std::vector<std::string> order;
  int max_step = 1;
  for (const auto& r : rows) {
    if (!sums.count(r.method)) order.push_back(r.method);
    auto& s = sums[r.method][r.step];
    s.first += r.task_a_acc;
    s.second += r.task_b_acc;
    ++counts[r.method][r.step];
    max_step = std::max(max_step, r.step);
  }
  constexpr double kPanelW = 420, kPanelH = 300, kPad = 50, kGap = 40;
  const double width = 2 * kPanelW + kGap + 2 * kPad + 150;
  const double height = kPanelH + 2 * kPad;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const char* titles[] = {"task A retention", "task B acquisition"};
  for (int panel = 0; panel < 2; ++panel) {
    const double x0 = kPad + panel * (kPanelW + kGap);
    const double y0 = kPad;
    out << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << kPanelW << "\" height=\""
        << kPanelH << "\" fill=\"none\" stroke=\"#444\"/>\n"
        << "<text x=\"" << x0 << "\" y=\"" << y0 - 10
        << "\" font-family=\"sans-serif\" font-size=\"14\">" << titles[panel] << "</text>\n";
    for (int t = 0; t <= 4; ++t) {
      const double y = y0 + kPanelH - t * kPanelH / 4;
      out << "<text x=\"" << x0 - 8 << "\" y=\"" << y + 4
          << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">"
          << fixed(t * 0.25, 2) << "</text>\n";
    }
    out << "<text x=\"" << x0 + kPanelW << "\" y=\"" << y0 + kPanelH + 16
        << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">step " << max_step
        << "</text>\n";
    for (const auto& method : order) {
      out << "<polyline class=\"curve\" data-method=\"" << method << "\" fill=\"none\" stroke=\""
          << color(method) << "\" stroke-width=\"2\" points=\"";
      for (const auto& [step, s] : sums[method]) {
        const double n = counts[method][step];
        const double v = (panel == 0 ? s.first : s.second) / n;
        out << fixed(x0 + kPanelW * step / max_step, 1) << ',' << fixed(y0 + kPanelH * (1 - v), 1)
            << ' ';
      }
      out << "\"/>\n";
    }
  }
  double ly = kPad + 10;
  for (const auto& method : order) {
    const double lx = 2 * kPanelW + kGap + kPad + 15;
    out << "<line x1=\"" << lx << "\" y1=\"" << ly << "\" x2=\"" << lx + 20 << "\" y2=\"" << ly
        << "\" stroke=\"" << color(method) << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << lx + 26 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << method << "</text>\n";
    ly += 18;
  }
  out << "</svg>\n";
  return out.str();
}

namespace {

fs::path out_dir(const KeyValueConfig& cfg) {
  const fs::path dir = cfg.get("out", "cllm_out");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create output directory " + dir.string());
  return dir;
}

Model load_input(const KeyValueConfig& cfg) {
  if (!cfg.has("checkpoint")) fail(ErrorKind::kConfig, "missing --checkpoint");
  return load_checkpoint(cfg.get("checkpoint", ""));
}

TaskKind task_a(const KeyValueConfig& cfg) { return parse_task(cfg.get("task_a", "copy_reverse")); }
TaskKind task_b(const KeyValueConfig& cfg) { return parse_task(cfg.get("task_b", "sort")); }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "validation") return Split::kValidation;
  if (s == "test") return Split::kTest;
  fail(ErrorKind::kConfig, "unknown split '" + s + "'");
}

std::vector<double> parse_alphas(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(parse_number<double>("alphas", item));
  if (out.empty()) fail(ErrorKind::kConfig, "alphas: empty list");
  return out;
}

std::string cmd_pretrain(const KeyValueConfig& cfg) {
  const ModelSpec spec = model_spec_from(cfg);
  TrainConfig tc = train_config_from(cfg);
  const fs::path dir = out_dir(cfg);
  Model model{spec, init_model(spec), std::nullopt};
  TrainJob job;
  job.method = "pretrain";
  job.train_task = job.task_a = task_a(cfg);
  job.task_b = task_b(cfg);
  job.mode = TrainMode::kFullParam;
  const TrainResult run = train(model, job, tc);
  run.log.write_csv(dir / "metrics.csv");
  if (run.aborted) fail(ErrorKind::kRuntime, run.abort_reason);
  save_checkpoint(dir / "checkpoint", model);
  const TaskSpec ta{job.task_a, 12, spec.vocab_size};
  const double acc = evaluate_task(model, ta, Split::kTest, tc.eval_samples, tc.eval_seed);
  const double gate = cfg.get_double("gate", 0.95);
  std::string msg = "pretrained " + std::string(to_string(job.task_a)) + " for " +
                    std::to_string(tc.steps) + " steps; test accuracy " + fixed(acc) + "\n" +
                    "checkpoint: " + (dir / "checkpoint").string() + "\n";
  if (cfg.get_bool("strict", false) && acc < gate) {
    fail(ErrorKind::kRuntime, "accuracy gate failed: " + fixed(acc) + " < " + fixed(gate));
  }
  return msg;
}

std::string cmd_expand(const KeyValueConfig& cfg) {
  const Model base = load_input(cfg);
  if (base.plan) fail(ErrorKind::kConfig, "expand: checkpoint is already expanded");
  const std::string label = cfg.get("method", "concat_lerp_mse");
  const MethodSpec m = resolve_method(label, base.spec.n_layers, plan_params_from(cfg));
  if (!m.plan) fail(ErrorKind::kConfig, "expand: method '" + label + "' adds no branches");
  const Model control = expand_model(base, *m.plan);
  const double residual =
      identity_residual(base, control, static_cast<int>(cfg.get_int("residual_inputs", 20)),
                        static_cast<std::uint64_t>(cfg.get_int("seed", 0)));
  std::string msg = "identity residual (max |dlogit|): " + fmt(residual) + "\n";
  if (!(residual <= 1e-5)) {
    fail(ErrorKind::kContract, "expand: identity-at-init violated, residual " + fmt(residual));
  }
  const fs::path dir = out_dir(cfg);
  save_checkpoint(dir / "checkpoint", control);
  return msg + "expanded layers:" +
         [&] {
           std::string s;
           for (const int i : m.plan->expanded_indices) s += " " + std::to_string(i);
           return s;
         }() +
         "\ncheckpoint: " + (dir / "checkpoint").string() + "\n";
}

std::string cmd_finetune(const KeyValueConfig& cfg) {
  Model model = load_input(cfg);
  TrainConfig tc = train_config_from(cfg);
  tc.keep_snapshots = true;
  TrainJob job;
  job.task_a = task_a(cfg);
  job.task_b = job.train_task = task_b(cfg);
  if (model.plan) {
    job.method = cfg.get("method", "control");
    job.mode = TrainMode::kControl;
  } else {
    job.method = cfg.get("method", "concat_lerp_mse");
    const MethodSpec m = resolve_method(job.method, model.spec.n_layers, plan_params_from(cfg));
    model = expand_for(model, m);
    job.mode = m.mode;
    job.partial_layers = m.partial_layers;
  }
  const fs::path dir = out_dir(cfg);
  const TrainResult run = train(model, job, tc);
  run.log.write_csv(dir / "metrics.csv");
  if (run.aborted) fail(ErrorKind::kRuntime, run.abort_reason);
  save_checkpoint(dir / "final", model);
  const int best = select_checkpoint(run.log, run.checkpoints);
  for (const auto& ck : run.checkpoints) {
    if (ck.step == best) {
      save_checkpoint(dir / "checkpoint", Model{model.spec, *ck.snapshot, model.plan});
    }
  }
  const auto& last = run.log.records().back();
  return "fine-tuned " + job.method + " for " + std::to_string(tc.steps) + " steps; final task_a " +
         fixed(last.task_a_acc) + ", task_b " + fixed(last.task_b_acc) + "\nselected step " +
         std::to_string(best) + " -> " + (dir / "checkpoint").string() + "\n";
}

std::string cmd_eval(const KeyValueConfig& cfg) {
  const Model model = load_input(cfg);
  const Split split = parse_split(cfg.get("split", "test"));
  const int samples = static_cast<int>(cfg.get_int("eval_samples", 256));
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("eval_seed", 7));
  std::string out = "task,split,accuracy\n";
  for (const TaskKind t : {task_a(cfg), task_b(cfg)}) {
    const double acc = evaluate_task(model, TaskSpec{t, 12, model.spec.vocab_size}, split, samples, seed);
    out += std::string(to_string(t)) + "," + cfg.get("split", "test") + "," + fmt(acc) + "\n";
  }
  return out;
}

std::string cmd_probe(const KeyValueConfig& cfg) {
  const Model model = load_input(cfg);
  const ProbeSet probes =
      cfg.has("probe_file")
          ? load_probe_file(cfg.get("probe_file", ""), model.spec.vocab_size)
          : builtin_probe_set(static_cast<std::uint64_t>(cfg.get_int("seed", 0)),
                              static_cast<int>(cfg.get_int("probe_categories", 5)),
                              static_cast<int>(cfg.get_int("probe_per_category", 2)));
  const AlignmentReport report = alignment_metrics(extract_states(model, probes));
  const fs::path dir = out_dir(cfg);
  emit_probe_report(report, dir);
  std::string out = "layer,drift_cosine,drift_distance\n";
  for (const auto& d : report.drift) {
    out += std::to_string(d.layer) + "," + fmt(d.cosine) + "," + fmt(d.distance) + "\n";
  }
  out += "semantic_stability " + fmt(report.semantic_stability) + "\n";
  for (const auto& w : report.category_warnings) out += "warning: " + w + "\n";
  return out + "report: " + (dir / "probe_report.json").string() + "\n";
}

std::string cmd_merge(const KeyValueConfig& cfg) {
  const Model model = load_input(cfg);
  const double alpha = cfg.get_double("alpha", 0.5);
  Model merged{model.spec, merge_blocks(model, alpha), std::nullopt};
  const fs::path dir = out_dir(cfg);
  save_checkpoint(dir / "checkpoint", merged);
  return "merged at alpha " + fmt(alpha) + " -> " + (dir / "checkpoint").string() + "\n";
}

std::string cmd_sweep(const KeyValueConfig& cfg) {
  const Model model = load_input(cfg);
  const auto alphas = parse_alphas(cfg.get("alphas", "0,0.25,0.5,0.75,1"));
  const Split split = parse_split(cfg.get("split", "test"));
  const int samples = static_cast<int>(cfg.get_int("eval_samples", 256));
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("eval_seed", 7));
  std::string csv = "alpha,task_a_acc,task_b_acc\n";
  for (const double a : alphas) {
    const AlphaView view = alpha_sweep(model, a);
    const ExpansionPlan* plan = &*model.plan;
    const double acc_a = evaluate_task(model.spec, model.store, plan,
                                       TaskSpec{task_a(cfg), 12, model.spec.vocab_size}, split,
                                       samples, seed, view.inference_alpha);
    const double acc_b = evaluate_task(model.spec, model.store, plan,
                                       TaskSpec{task_b(cfg), 12, model.spec.vocab_size}, split,
                                       samples, seed, view.inference_alpha);
    csv += fmt(a) + "," + fmt(acc_a) + "," + fmt(acc_b) + "\n";
  }
  write_file_atomic(out_dir(cfg) / "sweep.csv", csv);
  return csv;
}

std::string cmd_cf_experiment(const KeyValueConfig& cfg) {
  const Model base = load_input(cfg);
  CfOptions opts;
  opts.methods = split_list(cfg.get("methods", "full_param,partial_param,stack,concat_lerp_mse"));
  for (const auto& s : split_list(cfg.get("seeds", "0,1,2"))) {
    opts.seeds.push_back(parse_number<std::uint64_t>("seeds", s));
  }
  opts.train = train_config_from(cfg);
  opts.plan = plan_params_from(cfg);
  opts.task_a = task_a(cfg);
  opts.task_b = task_b(cfg);
  for (const auto& m : opts.methods) resolve_method(m, base.spec.n_layers, opts.plan);
  const fs::path dir = out_dir(cfg);
  opts.on_run = [&](const std::string& label, std::uint64_t seed, const Model&,
                    const TrainResult& run) {
    run.log.write_csv(dir / "runs" / (label + "_s" + std::to_string(seed) + ".csv"));
  };
  const CfResult res = run_cf_experiment(base, opts);
  write_file_atomic(dir / "cf_curves.csv", cf_rows_to_csv(res.rows));
  write_file_atomic(dir / "cf_curves.svg", cf_rows_to_svg(res.rows));
  std::string out = "method,seed,step,task_a_acc,task_b_acc\n";
  for (const auto& [key, r] : res.final_rows) {
    out += r.method + "," + std::to_string(r.seed) + "," + std::to_string(r.step) + "," +
           fixed(r.task_a_acc) + "," + fixed(r.task_b_acc) + "\n";
  }
  if (!res.aborted.empty()) {
    std::string why = "cf-experiment: aborted runs:";
    for (const auto& a : res.aborted) why += "\n  " + a;
    fail(ErrorKind::kRuntime, why);
  }
  return out + "curves: " + (dir / "cf_curves.csv").string() + "\n";
}

}  // namespace

std::string run_command(const std::string& command, const KeyValueConfig& cfg) {
  if (command == "pretrain") return cmd_pretrain(cfg);
  if (command == "expand") return cmd_expand(cfg);
  if (command == "finetune") return cmd_finetune(cfg);
  if (command == "eval") return cmd_eval(cfg);
  if (command == "probe") return cmd_probe(cfg);
  if (command == "merge") return cmd_merge(cfg);
  if (command == "sweep") return cmd_sweep(cfg);
  if (command == "cf-experiment") return cmd_cf_experiment(cfg);
  fail(ErrorKind::kConfig, "unknown command '" + command + "'");
}

}  // namespace cllm
