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

#ifndef CONTROLLLM_SRC_JSON_IO_HPP_
#define CONTROLLLM_SRC_JSON_IO_HPP_

#include <json.hpp>

#include "controlllm/expansion.hpp"

namespace cllm {

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);
nlohmann::json plan_to_json(const ExpansionPlan& plan);
ExpansionPlan plan_from_json(const nlohmann::json& j);

}  // namespace cllm

#endif  // CONTROLLLM_SRC_JSON_IO_HPP_
