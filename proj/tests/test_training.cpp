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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "controlllm/checkpoint.hpp"
#include "controlllm/training.hpp"
#include "test_util.hpp"

using namespace cllm;

namespace {

ModelSpec tiny_spec(std::uint64_t seed = 1) {
  ModelSpec s;
  s.d_model = 32;
  s.n_heads = 2;
  s.n_layers = 4;
  s.d_ff = 64;
  s.seed = seed;
  return s;
}

TrainConfig quick_config() {
  TrainConfig c = TrainConfig::desk();
  c.steps = 20;
  c.batch_size = 8;
  c.eval_every = 10;
  c.eval_samples = 16;
  return c;
}

ExpansionPlan tiny_plan(InterpolatorKind k, DivergenceKind d, Strategy s = Strategy::kConcat) {
  InterpolatorConfig ic;
  ic.kind = k;
  return build_expansion_plan(4, 2, s, ic, DivergenceConfig::defaults_for(ic, d));
}

}  // namespace

TEST_CASE("desk configuration scales the reference schedule") {
  const TrainConfig ref;
  CHECK(ref.warmup_steps() == 1000);
  CHECK(ref.eval_interval() == 1000);
  CHECK(ref.peak_lr() == 5e-5);
  CHECK(ref.min_lr() == 1e-5);
  CHECK(ref.batch_size == 64);
  const TrainConfig desk = TrainConfig::desk();
  CHECK(desk.warmup_steps() == 100);
  CHECK(desk.eval_interval() == 100);
  CHECK(std::abs(desk.peak_lr() - 1e-3) < 1e-15);
  CHECK(std::abs(desk.min_lr() - 2e-4) < 1e-15);
  TrainConfig bad;
  bad.steps = 0;
  bad.eval_samples = 0;
  try {
    bad.validate();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
    CHECK(std::string(e.what()).find("steps") != std::string::npos);
    CHECK(std::string(e.what()).find("eval_samples") != std::string::npos);
  }
}

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  c.steps = 3000;
  const int w = 1000;
  auto cosine = [&](int step) {
    const double progress = double(step - w) / (c.steps - w);
    return 1e-5 + 0.5 * (5e-5 - 1e-5) * (1 + std::cos(std::numbers::pi * progress));
  };
  CHECK(std::abs(lr_at(w - 1, c) - 5e-5) < 1e-12);
  CHECK(std::abs(lr_at(w / 2 - 1, c) - 2.5e-5) < 1e-12);
  CHECK(std::abs(lr_at(0, c) - 5e-5 / w) < 1e-12);
  CHECK(std::abs(lr_at(w, c) - 5e-5) < 1e-12);
  CHECK(std::abs(lr_at(c.steps - 1, c) - cosine(c.steps - 1)) < 1e-12);
  CHECK(std::abs(lr_at(c.steps - 1, c) - 1e-5) < 1e-10);
  CHECK(std::abs(lr_at(c.steps, c) - 1e-5) < 1e-12);
  for (int s = w; s < c.steps - 1; ++s) CHECK(lr_at(s + 1, c) <= lr_at(s, c));
}

TEST_CASE("adamw first step and decay") {
  ParameterStore s;
  s.add("p", Tensor({1}, 0.5f));
  s.add("q", Tensor({2}, 1.0f));
  AdamW opt;
  GradMap<float> g{{"p", Tensor({1}, 1.0f)}, {"q", Tensor({2}, 0.0f)}};
  const double lr = 1e-3;
  opt.step(s, g, lr, 0.0);
  // m = 0.1, v = 0.001; bias-corrected both are 1, so the step is lr / (1 + eps).
  const double expect = 0.5 - lr * 1.0 / (1.0 + 1e-8);
  CHECK(std::abs(s.at("p")[0] - expect) < 1e-7);
  CHECK(s.at("q")[0] == 1.0f);
  CHECK(opt.steps_taken() == 1);
  opt.step(s, GradMap<float>{{"q", Tensor({2}, 0.0f)}}, lr, 0.1 * lr);
  CHECK(std::abs(s.at("q")[0] - (1.0 - 0.1 * lr)) < 1e-7);
}

TEST_CASE("adamw refuses gradients for frozen tensors and leaves them untouched") {
  ParameterStore s;
  s.add("w", Tensor({3}, 1.0f));
  s.add("f", Tensor({3}, 2.0f), true);
  const Tensor frozen_before = s.at("f");
  AdamW opt;
  for (int i = 0; i < 100; ++i) {
    opt.step(s, GradMap<float>{{"w", Tensor({3}, 0.5f)}}, 1e-2, 1e-3);
  }
  CHECK(s.at("f") == frozen_before);
  try {
    opt.step(s, GradMap<float>{{"f", Tensor({3}, 0.5f)}}, 1e-2, 0.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kContract);
  }
  CHECK_THROWS_AS(opt.step(s, GradMap<float>{{"w", Tensor({2}, 0.5f)}}, 1e-2, 0.0), Error);
}

TEST_CASE("metric log csv") {
  MetricLog log;
  log.append({0, "m", 4.0, 0.0, 1e-5, 0.02, 0.01});
  log.append({100, "m", 0.123456789012345, 1e-9, 9.99e-4, 1.0, 0.5});
  const std::string csv = log.to_csv();
  CHECK(csv.rfind("step,method,task_loss,div_loss,lr,task_a_acc,task_b_acc\n", 0) == 0);
  CHECK(MetricLog::from_csv(csv) == log);
  CHECK_THROWS_AS(log.append({50, "m", 0, 0, 0, 0, 0}), Error);
  CHECK_THROWS_AS(MetricLog::from_csv("step,loss\n1,2\n"), Error);
  CHECK_THROWS_AS(MetricLog::from_csv("step,method,task_loss,div_loss,lr,task_a_acc,task_b_acc\n1,m,2\n"),
                  Error);
}

TEST_CASE("checkpoint selection") {
  MetricLog single;
  single.append({1000, "m", 0, 0, 0, 0, 0.3});
  CHECK(select_checkpoint(single) == 1000);
  MetricLog tie;
  tie.append({1000, "m", 0, 0, 0, 0, 0.5});
  tie.append({2000, "m", 0, 0, 0, 0, 0.9});
  tie.append({3000, "m", 0, 0, 0, 0, 0.9});
  CHECK(select_checkpoint(tie) == 2000);
  MetricLog rising;
  rising.append({1, "m", 0, 0, 0, 0, 0.1});
  rising.append({2, "m", 0, 0, 0, 0, 0.2});
  rising.append({3, "m", 0, 0, 0, 0, 0.3});
  CHECK(select_checkpoint(rising) == 3);
  std::vector<Checkpoint> written(2);
  written[0].step = 1;
  written[1].step = 2;
  CHECK(select_checkpoint(rising, written) == 2);
  CHECK_THROWS_AS(select_checkpoint(MetricLog{}), Error);
}

TEST_CASE("evaluation of oracle, constant and untrained predictors") {
  for (const auto kind : {TaskKind::kCopyReverse, TaskKind::kSort}) {
    const TaskSpec task{kind};
    const AnswerPredictor oracle = [&](const std::vector<std::vector<int>>& prompts) {
      std::vector<std::vector<int>> out;
      for (const auto& p : prompts) out.push_back(solve(kind, std::vector<int>(p.begin() + 1, p.end() - 1)));
      return out;
    };
    CHECK(evaluate_predictor(oracle, task, Split::kTest, 300, 3) == 1.0);
  }
  const TaskSpec rev;
  const AnswerPredictor constant = [](const std::vector<std::vector<int>>& prompts) {
    return std::vector<std::vector<int>>(prompts.size(), std::vector<int>(12, 4));
  };
  // Each answer token equals symbol 4 with probability 1/60.
  const double acc = evaluate_predictor(constant, rev, Split::kTest, 1000, 3);
  CHECK(std::abs(acc - 1.0 / 60.0) < 0.006);

  const ModelSpec s = tiny_spec();
  const Model m{s, init_model(s), std::nullopt};
  const double a1 = evaluate_task(m, rev, Split::kValidation, 64, 7);
  const double a2 = evaluate_task(m, rev, Split::kValidation, 64, 7);
  CHECK(a1 == a2);
  CHECK(a1 < 0.06);
}

TEST_CASE("training is deterministic and logs every interval") {
  const ModelSpec s = tiny_spec();
  Model a{s, init_model(s), std::nullopt}, b = a;
  TrainJob job;
  const TrainResult ra = train(a, job, quick_config());
  const TrainResult rb = train(b, job, quick_config());
  CHECK_FALSE(ra.aborted);
  CHECK(ra.log == rb.log);
  CHECK(bitwise_equal(a.store, b.store));
  REQUIRE(ra.log.records().size() == 3);
  CHECK(ra.log.records()[0].step == 0);
  CHECK(ra.log.records()[1].step == 10);
  CHECK(ra.log.records()[2].step == 20);
  CHECK(ra.log.records()[2].task_loss < ra.log.records()[0].task_loss);
  for (const auto& [name, e] : a.store) CHECK_FALSE(e.frozen);
}

TEST_CASE("training writes checkpoints and keeps snapshots") {
  const auto dir = cllm::testing::scratch_dir("train_ckpt");
  const ModelSpec s = tiny_spec();
  Model m{s, init_model(s), std::nullopt};
  TrainConfig c = quick_config();
  c.checkpoint_dir = dir;
  c.keep_snapshots = true;
  const TrainResult r = train(m, TrainJob{}, c);
  REQUIRE(r.checkpoints.size() == 3);
  for (const auto& ck : r.checkpoints) {
    CHECK(std::filesystem::exists(ck.path / "manifest.json"));
    CHECK(ck.snapshot.has_value());
  }
  CHECK(bitwise_equal(load_checkpoint(r.checkpoints.back().path).store, m.store));
  CHECK(bitwise_equal(*r.checkpoints.back().snapshot, m.store));
}

TEST_CASE("control training only moves trainable tensors") {
  const ModelSpec s = tiny_spec();
  const Model base{s, init_model(s), std::nullopt};
  for (const auto k : {InterpolatorKind::kLerp, InterpolatorKind::kMoe, InterpolatorKind::kPlerp}) {
    Model c = expand_model(base, tiny_plan(k, DivergenceKind::kMse, Strategy::kHybrid));
    const ParameterStore before = c.store;
    TrainJob job;
    job.train_task = TaskKind::kSort;
    job.mode = TrainMode::kControl;
    const TrainResult r = train(c, job, quick_config());
    CHECK_FALSE(r.aborted);
    CHECK(r.log.records()[0].div_loss == 0.0);
    const auto trainable = trainable_set(c, TrainMode::kControl);
    bool moved = false;
    for (const auto& [name, e] : c.store) {
      if (trainable.count(name) == 0) {
        CHECK_MESSAGE(e.tensor == before.at(name), name);
      } else {
        moved = moved || !(e.tensor == before.at(name));
      }
    }
    CHECK(moved);
  }
}

TEST_CASE("dynamic interpolators receive gradient") {
  const ModelSpec s = tiny_spec();
  const Model base{s, init_model(s), std::nullopt};
  for (const auto k : {InterpolatorKind::kDlerp, InterpolatorKind::kDlerpIn, InterpolatorKind::kMoe}) {
    Model c = expand_model(base, tiny_plan(k, DivergenceKind::kMse));
    TrainConfig cfg = quick_config();
    cfg.steps = 5;
    TrainJob job;
    job.train_task = TaskKind::kSort;
    job.mode = TrainMode::kControl;
    const ParameterStore before = c.store;
    train(c, job, cfg);
    const std::string weight = interpolator_tensor_names(k).front();
    CHECK_MESSAGE(!(c.store.at(interp_name(1, weight)) == before.at(interp_name(1, weight))),
                  to_string(k));
  }
}

TEST_CASE("partial-parameter training updates only the listed layers in place") {
  const ModelSpec s = tiny_spec();
  Model m{s, init_model(s), std::nullopt};
  const ParameterStore before = m.store;
  TrainJob job;
  job.mode = TrainMode::kPartialParam;
  job.partial_layers = {1, 3};
  train(m, job, quick_config());
  for (const auto& [name, e] : m.store) {
    const bool listed = name.size() > 2 && (name.ends_with(".1") || name.ends_with(".3"));
    CHECK_MESSAGE((e.tensor == before.at(name)) != listed, name);
  }
}

TEST_CASE("a diverging run aborts with its step and learning rate") {
  const ModelSpec s = tiny_spec();
  Model m{s, init_model(s), std::nullopt};
  TrainConfig c = quick_config();
  c.lr_scale = 1e33;
  const TrainResult r = train(m, TrainJob{}, c);
  CHECK(r.aborted);
  CHECK(r.abort_reason.find("step") != std::string::npos);
  CHECK(r.abort_reason.find("lr") != std::string::npos);
  CHECK(r.log.records().size() >= 1);
}
