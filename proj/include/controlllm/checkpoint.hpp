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

// Checkpoint directory layout:
//
//   manifest.json  {"format": "controlllm-checkpoint", "version": 1,
//                   "model": {...spec...}, "plan": {...} (expanded only),
//                   "tensors": [{name, shape, dtype: "f32", offset,
//                                byte_length, frozen}, ...]}
//   weights.bin    little-endian f32 blobs at the listed offsets
//
// Both files are written to temporaries and renamed into place.

#ifndef CONTROLLLM_CHECKPOINT_HPP_
#define CONTROLLLM_CHECKPOINT_HPP_

#include <filesystem>
#include <string>

#include "controlllm/expansion.hpp"

namespace cllm {

void save_checkpoint(const std::filesystem::path& dir, const Model& model);
Model load_checkpoint(const std::filesystem::path& dir);

// JSON text of a plan / spec, as embedded in the manifest.
std::string plan_to_json_text(const ExpansionPlan& plan);
ExpansionPlan plan_from_json_text(const std::string& text);

// Writes `contents` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace cllm

#endif  // CONTROLLLM_CHECKPOINT_HPP_
