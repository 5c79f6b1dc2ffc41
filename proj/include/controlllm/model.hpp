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

#ifndef CONTROLLLM_MODEL_HPP_
#define CONTROLLLM_MODEL_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "controlllm/tensor.hpp"

namespace cllm {

enum class Activation { kGelu, kIdentity };

struct ModelSpec {
  int vocab_size = 64;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 8;
  int d_ff = 256;
  int max_seq_len = 32;
  std::uint64_t seed = 0;

  // Degenerate switches used by the block-merging linearity tests.
  bool use_norm = true;
  bool use_attention = true;
  Activation activation = Activation::kGelu;

  // Every violated constraint, empty when valid.
  std::vector<std::string> violations() const;
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline constexpr float kRmsNormEps = 1e-5f;
inline constexpr float kInitStd = 0.02f;

// Per-layer tensor stems, in canonical order.
inline const std::vector<std::string>& block_tensor_names() {
  static const std::vector<std::string> names = {
      "attn_norm", "q_proj", "k_proj", "v_proj", "o_proj", "mlp_norm", "up_proj", "down_proj"};
  return names;
}

std::string base_name(std::string_view stem, int layer);
std::string branch_name(int layer, std::string_view stem);
std::string interp_name(int layer, std::string_view stem);

Shape block_tensor_shape(const ModelSpec& spec, std::string_view stem);

template <typename T>
struct StoreEntry {
  BasicTensor<T> tensor;
  bool frozen = false;
};

// Named tensors with frozen flags. Iteration order is by name.
template <typename T>
class BasicStore {
 public:
  void add(const std::string& name, BasicTensor<T> tensor, bool frozen = false) {
    auto [it, inserted] = entries_.emplace(name, StoreEntry<T>{std::move(tensor), frozen});
    if (!inserted) fail(ErrorKind::kContract, "store: duplicate tensor '" + name + "'");
  }
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const StoreEntry<T>& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) fail(ErrorKind::kContract, "store: missing tensor '" + name + "'");
    return it->second;
  }
  StoreEntry<T>& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) fail(ErrorKind::kContract, "store: missing tensor '" + name + "'");
    return it->second;
  }
  const BasicTensor<T>& at(const std::string& name) const { return entry(name).tensor; }
  BasicTensor<T>& at(const std::string& name) { return entry(name).tensor; }
  bool frozen(const std::string& name) const { return entry(name).frozen; }
  void set_frozen(const std::string& name, bool frozen) { entry(name).frozen = frozen; }
  void erase(const std::string& name) { entries_.erase(name); }

  std::size_t size() const noexcept { return entries_.size(); }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }
  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [k, v] : entries_) n += v.tensor.numel();
    return n;
  }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  template <typename U>
  BasicStore<U> cast() const {
    BasicStore<U> out;
    for (const auto& [k, v] : entries_) out.add(k, v.tensor.template cast<U>(), v.frozen);
    return out;
  }

  friend bool operator==(const BasicStore& a, const BasicStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (const auto& [k, v] : a.entries_) {
      auto it = b.entries_.find(k);
      if (it == b.entries_.end() || it->second.frozen != v.frozen ||
          !(it->second.tensor == v.tensor)) {
        return false;
      }
    }
    return true;
  }

 private:
  std::map<std::string, StoreEntry<T>> entries_;
};

using ParameterStore = BasicStore<float>;

// Truncated-normal (std 0.02, cut at 2 std) weights, unit norm gains,
// no biases. Deterministic in spec.seed.
ParameterStore init_model(const ModelSpec& spec);

// Closed-form size of init_model(spec), position table included.
std::int64_t expected_parameter_count(const ModelSpec& spec);

// Fills `tensor` with truncated-normal values from a seeded stream.
void fill_truncated_normal(Tensor& tensor, std::uint64_t seed, float stddev);

// True when both stores share names and frozen flags and every tensor is
// bit-identical.
inline bool bitwise_equal(const ParameterStore& a, const ParameterStore& b) { return a == b; }

}  // namespace cllm

#endif  // CONTROLLLM_MODEL_HPP_
