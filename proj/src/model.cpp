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

#include "controlllm/model.hpp"

#include <random>

#include "controlllm/rng.hpp"

namespace cllm {

std::vector<std::string> ModelSpec::violations() const {
  std::vector<std::string> out;
  if (vocab_size <= 0) out.push_back("vocab_size must be positive");
  if (d_model <= 0) out.push_back("d_model must be positive");
  if (d_model > 0 && d_model % 2 != 0) out.push_back("d_model must be even");
  if (n_heads <= 0) out.push_back("n_heads must be positive");
  if (n_heads > 0 && d_model > 0 && d_model % n_heads != 0) {
    out.push_back("d_model must be divisible by n_heads");
  }
  if (n_layers <= 0) out.push_back("n_layers must be positive");
  if (d_ff <= 0) out.push_back("d_ff must be positive");
  if (max_seq_len <= 0) out.push_back("max_seq_len must be positive");
  return out;
}

void ModelSpec::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid model spec:";
  for (const auto& s : v) msg += " " + s + ";";
  fail(ErrorKind::kConfig, msg);
}

std::string base_name(std::string_view stem, int layer) {
  return std::string(stem) + "." + std::to_string(layer);
}

std::string branch_name(int layer, std::string_view stem) {
  return "branch." + std::to_string(layer) + "." + std::string(stem);
}

std::string interp_name(int layer, std::string_view stem) {
  return "interp." + std::to_string(layer) + "." + std::string(stem);
}

Shape block_tensor_shape(const ModelSpec& spec, std::string_view stem) {
  const std::int64_t d = spec.d_model, f = spec.d_ff;
  if (stem == "attn_norm" || stem == "mlp_norm") return {d};
  if (stem == "q_proj" || stem == "k_proj" || stem == "v_proj" || stem == "o_proj") return {d, d};
  if (stem == "up_proj") return {f, d};
  if (stem == "down_proj") return {d, f};
  fail(ErrorKind::kContract, "unknown block tensor '" + std::string(stem) + "'");
}

void fill_truncated_normal(Tensor& tensor, std::uint64_t seed, float stddev) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> dist(0.0f, stddev);
  auto data = tensor.mutable_data();
  for (auto& v : data) {
    float x;
    do {
      x = dist(gen);
    } while (std::abs(x) > 2.0f * stddev);
    v = x;
  }
}

ParameterStore init_model(const ModelSpec& spec) {
  spec.validate();
  ParameterStore store;
  const std::int64_t d = spec.d_model;
  auto weight = [&](const std::string& name, Shape shape) {
    Tensor t(std::move(shape));
    fill_truncated_normal(t, mix_seed(spec.seed, name), kInitStd);
    store.add(name, std::move(t));
  };
  weight("tok_emb", {spec.vocab_size, d});
  weight("pos_emb", {spec.max_seq_len, d});
  for (int i = 0; i < spec.n_layers; ++i) {
    for (const auto& stem : block_tensor_names()) {
      const Shape shape = block_tensor_shape(spec, stem);
      if (shape.size() == 1) {
        store.add(base_name(stem, i), Tensor(shape, 1.0f));
      } else {
        weight(base_name(stem, i), shape);
      }
    }
  }
  store.add("final_norm", Tensor({d}, 1.0f));
  weight("lm_head", {spec.vocab_size, d});
  return store;
}

std::int64_t expected_parameter_count(const ModelSpec& spec) {
  const std::int64_t v = spec.vocab_size, d = spec.d_model, f = spec.d_ff;
  const std::int64_t per_layer = 4 * d * d + 2 * d * f + 2 * d;
  return v * d * 2 + spec.n_layers * per_layer + d + std::int64_t{spec.max_seq_len} * d;
}

}  // namespace cllm
