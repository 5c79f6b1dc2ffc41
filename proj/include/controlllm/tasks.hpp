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

// Synthetic symbol tasks.
//
// Sequence layout: [marker] payload... [SEP] answer...
// where the marker names the task, the payload is payload_len symbols drawn
// uniformly from kFirstSymbol..vocab-1, and the answer is the reversed
// (copy_reverse) or ascending-sorted (sort) payload.

#ifndef CONTROLLLM_TASKS_HPP_
#define CONTROLLLM_TASKS_HPP_

#include <cstdint>
#include <string_view>
#include <vector>

#include "controlllm/transformer.hpp"

namespace cllm {

enum class TaskKind { kCopyReverse, kSort };
enum class Split { kTrain, kValidation, kTest };

inline constexpr int kPadId = 0;
inline constexpr int kSepId = 1;
inline constexpr int kReverseMarker = 2;
inline constexpr int kSortMarker = 3;
inline constexpr int kFirstSymbol = 4;

std::string_view to_string(TaskKind kind);
TaskKind parse_task(std::string_view s);
int task_marker(TaskKind kind);

struct TaskSpec {
  TaskKind kind = TaskKind::kCopyReverse;
  int payload_len = 12;
  int vocab = 64;

  int symbol_count() const { return vocab - kFirstSymbol; }
  int prompt_len() const { return payload_len + 2; }
  int sequence_len() const { return 2 * payload_len + 2; }
};

struct Example {
  std::vector<int> prompt;  // marker, payload, separator
  std::vector<int> answer;
};

// Pure in (seed, split, index); splits occupy disjoint index ranges.
Example make_example(const TaskSpec& task, std::uint64_t seed, Split split, std::uint64_t index);

std::vector<int> solve(TaskKind kind, std::vector<int> payload);

// Next-token batch of examples [first, first + count): inputs drop the last
// token, targets drop the first, weights select answer positions only.
struct SupervisedBatch {
  TokenBatch inputs;
  std::vector<int> targets;
  std::vector<float> weights;
};

SupervisedBatch make_batch(const TaskSpec& task, std::uint64_t seed, Split split,
                           std::uint64_t first, int count);

}  // namespace cllm

#endif  // CONTROLLLM_TASKS_HPP_
