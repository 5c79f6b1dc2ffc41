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

#include "controlllm/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "controlllm/checkpoint.hpp"

namespace cllm {

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.schedule_scale = 0.1;
  c.lr_scale = 20.0;
  return c;
}

int TrainConfig::warmup_steps() const {
  return std::max(1, static_cast<int>(std::lround(base_warmup_steps * schedule_scale)));
}

int TrainConfig::eval_interval() const {
  if (eval_every > 0) return eval_every;
  return std::max(1, static_cast<int>(std::lround(1000.0 * schedule_scale)));
}

void TrainConfig::validate() const {
  std::string msg;
  if (steps < 1) msg += " steps must be positive;";
  if (batch_size < 1) msg += " batch_size must be positive;";
  if (!(schedule_scale > 0)) msg += " schedule_scale must be positive;";
  if (!(lr_scale > 0)) msg += " lr_scale must be positive;";
  if (!(base_min_lr >= 0) || !(base_peak_lr >= base_min_lr)) msg += " need 0 <= min_lr <= peak_lr;";
  if (!(weight_decay_ratio >= 0)) msg += " weight_decay_ratio must be non-negative;";
  if (eval_every < 0) msg += " eval_every must be non-negative;";
  if (eval_samples < 1) msg += " eval_samples must be positive;";
  if (!msg.empty()) fail(ErrorKind::kConfig, "invalid train config:" + msg);
}

double lr_at(int step, const TrainConfig& config) {
  const int warmup = config.warmup_steps();
  const double peak = config.peak_lr(), floor = config.min_lr();
  if (step < warmup) return peak * (step + 1) / warmup;
  if (config.steps <= warmup) return peak;
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup) / (config.steps - warmup));
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(ParameterStore& store, const GradMap<float>& grads, double lr,
                 double weight_decay) {
  for (const auto& [name, g] : grads) {
    if (store.frozen(name)) {
      fail(ErrorKind::kContract, "adamw: gradient supplied for frozen tensor '" + name + "'");
    }
    if (g.shape() != store.at(name).shape()) {
      fail(ErrorKind::kShape, "adamw: gradient shape " + shape_str(g.shape()) + " for '" + name +
                                  "' of shape " + shape_str(store.at(name).shape()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    auto& mom = state_[name];
    const auto gd = g.data();
    if (mom.m.empty()) {
      mom.m.assign(gd.size(), 0.0f);
      mom.v.assign(gd.size(), 0.0f);
    }
    auto p = store.at(name).mutable_data();
    for (std::size_t i = 0; i < gd.size(); ++i) {
      const double gi = gd[i];
      mom.m[i] = static_cast<float>(kBeta1 * mom.m[i] + (1.0 - kBeta1) * gi);
      mom.v[i] = static_cast<float>(kBeta2 * mom.v[i] + (1.0 - kBeta2) * gi * gi);
      const double mhat = mom.m[i] / c1;
      const double vhat = mom.v[i] / c2;
      double value = p[i];
      value -= weight_decay * value;
      value -= lr * mhat / (std::sqrt(vhat) + kEps);
      p[i] = static_cast<float>(value);
    }
  }
}

void MetricLog::append(MetricRecord r) {
  if (!records_.empty() && r.step < records_.back().step) {
    fail(ErrorKind::kContract, "metric log: steps must not decrease");
  }
  records_.push_back(std::move(r));
}

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    fail(ErrorKind::kIo, "metric log: bad number '" + s + "'");
  }
  return v;
}

}  // namespace

std::string MetricLog::to_csv() const {
  std::string out = "step,method,task_loss,div_loss,lr,task_a_acc,task_b_acc\n";
  for (const auto& r : records_) {
    out += std::to_string(r.step) + "," + r.method + "," + fmt(r.task_loss) + "," +
           fmt(r.div_loss) + "," + fmt(r.lr) + "," + fmt(r.task_a_acc) + "," + fmt(r.task_b_acc) +
           "\n";
  }
  return out;
}

MetricLog MetricLog::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "step,method,task_loss,div_loss,lr,task_a_acc,task_b_acc") {
    fail(ErrorKind::kIo, "metric log: unexpected header");
  }
  MetricLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cols.push_back(cell);
    if (cols.size() != 7) fail(ErrorKind::kIo, "metric log: expected 7 columns in '" + line + "'");
    MetricRecord r;
    r.step = static_cast<int>(parse_double(cols[0]));
    r.method = cols[1];
    r.task_loss = parse_double(cols[2]);
    r.div_loss = parse_double(cols[3]);
    r.lr = parse_double(cols[4]);
    r.task_a_acc = parse_double(cols[5]);
    r.task_b_acc = parse_double(cols[6]);
    log.append(std::move(r));
  }
  return log;
}

void MetricLog::write_csv(const std::filesystem::path& path) const {
  write_file_atomic(path, to_csv());
}

double evaluate_predictor(const AnswerPredictor& predictor, const TaskSpec& task, Split split,
                          int samples, std::uint64_t seed) {
  if (samples < 1) fail(ErrorKind::kConfig, "evaluate: samples must be positive");
  constexpr int kChunk = 128;
  long long correct = 0, total = 0;
  for (int first = 0; first < samples; first += kChunk) {
    const int count = std::min(kChunk, samples - first);
    std::vector<std::vector<int>> prompts;
    std::vector<std::vector<int>> answers;
    for (int i = 0; i < count; ++i) {
      Example ex = make_example(task, seed, split, static_cast<std::uint64_t>(first + i));
      prompts.push_back(std::move(ex.prompt));
      answers.push_back(std::move(ex.answer));
    }
    const auto predicted = predictor(prompts);
    for (int i = 0; i < count; ++i) {
      for (std::size_t t = 0; t < answers[i].size(); ++t) {
        correct += t < predicted[i].size() && predicted[i][t] == answers[i][t];
        ++total;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double evaluate_task(const ModelSpec& spec, const ParameterStore& store, const ExpansionPlan* plan,
                     const TaskSpec& task, Split split, int samples, std::uint64_t seed,
                     std::optional<double> alpha_override) {
  auto predictor = [&](const std::vector<std::vector<int>>& prompts) {
    auto decoded = greedy_decode_batch(spec, store, plan, prompts, task.payload_len, alpha_override);
    std::vector<std::vector<int>> out;
    out.reserve(decoded.size());
    for (auto& d : decoded) out.emplace_back(d.tokens.begin() + prompts.front().size(), d.tokens.end());
    return out;
  };
  return evaluate_predictor(predictor, task, split, samples, seed);
}

double evaluate_task(const Model& model, const TaskSpec& task, Split split, int samples,
                     std::uint64_t seed) {
  return evaluate_task(model.spec, model.store, model.plan ? &*model.plan : nullptr, task, split,
                       samples, seed);
}

namespace {

struct StepLoss {
  double task = 0.0;
  double div = 0.0;
  GradMap<float> grads;
};

StepLoss run_batch(const Model& model, const SupervisedBatch& batch, bool with_grad) {
  Graph<float> g;
  ForwardOptions opts;
  opts.track_grad = with_grad;
  const ExpansionPlan* plan = model.plan ? &*model.plan : nullptr;
  const GraphForward fwd = build_forward(g, model.spec, model.store, plan, batch.inputs, opts);
  const Var task = g.cross_entropy(fwd.logits, batch.targets, batch.weights);
  Var div;
  double lambda = 0.0;
  if (plan != nullptr && plan->divergence.kind != DivergenceKind::kNone) {
    div = trace_divergence(g, fwd, plan->divergence);
    lambda = plan->divergence.lambda;
  } else {
    div = g.constant(Tensor({1}, 0.0f), "div_none");
  }
  const Var total = total_loss(g, task, div, lambda);
  StepLoss out;
  out.task = g.scalar(task);
  out.div = g.scalar(div);
  if (with_grad) out.grads = g.backward(total);
  return out;
}

void clamp_alphas(ParameterStore& store) {
  for (auto& [name, e] : store) {
    if (e.frozen || name.rfind("interp.", 0) != 0 || !name.ends_with(".alpha")) continue;
    auto d = e.tensor.mutable_data();
    for (auto& v : d) v = std::clamp(v, 0.0f, 1.0f);
  }
}

}  // namespace

TrainResult train(Model& model, const TrainJob& job, const TrainConfig& config) {
  config.validate();
  apply_trainable(model.store, trainable_set(model, job.mode, job.partial_layers));
  const TaskSpec train_task{job.train_task, job.payload_len, model.spec.vocab_size};
  const TaskSpec task_a{job.task_a, job.payload_len, model.spec.vocab_size};
  const TaskSpec task_b{job.task_b, job.payload_len, model.spec.vocab_size};
  if (train_task.sequence_len() - 1 > model.spec.max_seq_len) {
    fail(ErrorKind::kConfig, "train: task sequences exceed max_seq_len");
  }
  const ExpansionPlan* plan = model.plan ? &*model.plan : nullptr;
  TrainResult result;
  const int interval = config.eval_interval();

  auto record = [&](int step, double task_loss, double div_loss, double lr) {
    MetricRecord r;
    r.step = step;
    r.method = job.method;
    r.task_loss = task_loss;
    r.div_loss = div_loss;
    r.lr = lr;
    r.task_a_acc = evaluate_task(model.spec, model.store, plan, task_a, Split::kValidation,
                                 config.eval_samples, config.eval_seed);
    r.task_b_acc = evaluate_task(model.spec, model.store, plan, task_b, Split::kValidation,
                                 config.eval_samples, config.eval_seed);
    result.log.append(r);
    Checkpoint ck;
    ck.step = step;
    if (!config.checkpoint_dir.empty()) {
      ck.path = config.checkpoint_dir / ("ckpt-" + std::to_string(step));
      save_checkpoint(ck.path, model);
    }
    if (config.keep_snapshots) ck.snapshot = model.store;
    result.checkpoints.push_back(std::move(ck));
  };

  {
    const auto first = make_batch(train_task, config.seed, Split::kTrain, 0, config.batch_size);
    const StepLoss initial = run_batch(model, first, false);
    record(0, initial.task, initial.div, lr_at(0, config));
  }

  AdamW optimizer;
  double task_sum = 0.0, div_sum = 0.0;
  int since = 0;
  double lr = 0.0;
  for (int step = 0; step < config.steps; ++step) {
    lr = lr_at(step, config);
    try {
      const auto batch =
          make_batch(train_task, config.seed, Split::kTrain,
                     static_cast<std::uint64_t>(step) * config.batch_size, config.batch_size);
      StepLoss s = run_batch(model, batch, true);
      optimizer.step(model.store, s.grads, lr, config.weight_decay_ratio * lr);
      clamp_alphas(model.store);
      task_sum += s.task;
      div_sum += s.div;
      ++since;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNonFinite) throw;
      result.aborted = true;
      result.abort_reason = "training aborted at step " + std::to_string(step) + " (lr " +
                            fmt(lr) + "): " + e.what();
      return result;
    }
    const int done = step + 1;
    if (done % interval == 0 || done == config.steps) {
      record(done, task_sum / since, div_sum / since, lr);
      task_sum = div_sum = 0.0;
      since = 0;
    }
  }
  return result;
}

int select_checkpoint(const MetricLog& log, const std::vector<Checkpoint>& checkpoints) {
  if (log.empty()) fail(ErrorKind::kContract, "select_checkpoint: empty metric log");
  const MetricRecord* best = nullptr;
  for (const auto& r : log.records()) {
    if (!checkpoints.empty() &&
        std::none_of(checkpoints.begin(), checkpoints.end(),
                     [&](const Checkpoint& c) { return c.step == r.step; })) {
      continue;
    }
    if (best == nullptr || r.task_b_acc > best->task_b_acc) best = &r;
  }
  if (best == nullptr) fail(ErrorKind::kContract, "select_checkpoint: no checkpoint matches the log");
  return best->step;
}

}  // namespace cllm
