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

#include "controlllm/tasks.hpp"

#include <algorithm>
#include <random>

#include "controlllm/rng.hpp"

namespace cllm {

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::kCopyReverse ? "copy_reverse" : "sort";
}

TaskKind parse_task(std::string_view s) {
  if (s == "copy_reverse") return TaskKind::kCopyReverse;
  if (s == "sort") return TaskKind::kSort;
  fail(ErrorKind::kConfig, "unknown task '" + std::string(s) + "'");
}

int task_marker(TaskKind kind) {
  return kind == TaskKind::kCopyReverse ? kReverseMarker : kSortMarker;
}

std::vector<int> solve(TaskKind kind, std::vector<int> payload) {
  if (kind == TaskKind::kCopyReverse) {
    std::reverse(payload.begin(), payload.end());
  } else {
    std::sort(payload.begin(), payload.end());
  }
  return payload;
}

Example make_example(const TaskSpec& task, std::uint64_t seed, Split split, std::uint64_t index) {
  if (task.symbol_count() < 2 || task.payload_len < 1) {
    fail(ErrorKind::kConfig, "task: vocabulary or payload too small");
  }
  constexpr std::uint64_t kSplitStride = std::uint64_t{1} << 40;
  const std::uint64_t global = static_cast<std::uint64_t>(split) * kSplitStride + index;
  std::mt19937_64 gen(mix_seed(seed, static_cast<std::uint64_t>(task.kind) + 1, global));
  std::uniform_int_distribution<int> symbol(kFirstSymbol, task.vocab - 1);
  std::vector<int> payload(static_cast<std::size_t>(task.payload_len));
  for (auto& s : payload) s = symbol(gen);
  Example ex;
  ex.prompt.reserve(static_cast<std::size_t>(task.prompt_len()));
  ex.prompt.push_back(task_marker(task.kind));
  ex.prompt.insert(ex.prompt.end(), payload.begin(), payload.end());
  ex.prompt.push_back(kSepId);
  ex.answer = solve(task.kind, std::move(payload));
  return ex;
}

SupervisedBatch make_batch(const TaskSpec& task, std::uint64_t seed, Split split,
                           std::uint64_t first, int count) {
  const int len = task.sequence_len() - 1;
  SupervisedBatch b;
  b.inputs.batch = count;
  b.inputs.seq = len;
  b.inputs.ids.reserve(static_cast<std::size_t>(count) * len);
  b.targets.reserve(b.inputs.ids.capacity());
  b.weights.reserve(b.inputs.ids.capacity());
  for (int i = 0; i < count; ++i) {
    const Example ex = make_example(task, seed, split, first + static_cast<std::uint64_t>(i));
    std::vector<int> full = ex.prompt;
    full.insert(full.end(), ex.answer.begin(), ex.answer.end());
    const int answer_from = static_cast<int>(ex.prompt.size());
    for (int t = 0; t < len; ++t) {
      b.inputs.ids.push_back(full[t]);
      b.targets.push_back(full[t + 1]);
      b.weights.push_back(t + 1 >= answer_from && full[t + 1] != kPadId ? 1.0f : 0.0f);
    }
  }
  return b;
}

}  // namespace cllm
