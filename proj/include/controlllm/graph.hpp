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

// Define-by-run reverse-mode differentiation.
//
// Every op evaluates eagerly and appends a node to the tape, so the tape order
// is already a topological order; backward() walks it once in reverse.
// Parameters are bound by reference together with their version counter and
// backward() refuses to run if any of them was written in between.
//
// The graph is instantiated for float (training) and double (used by the
// gradient checker as a high-precision replay of identical code).

#ifndef CONTROLLLM_GRAPH_HPP_
#define CONTROLLLM_GRAPH_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "controlllm/tensor.hpp"

namespace cllm {

struct Var {
  std::int32_t id = -1;
  bool valid() const noexcept { return id >= 0; }
};

template <typename T>
using GradMap = std::map<std::string, BasicTensor<T>>;

template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  // Leaves.
  Var param(const std::string& name, const BasicTensor<T>& tensor,
            bool requires_grad);
  Var constant(BasicTensor<T> tensor, std::string label = "const");
  Var input(const std::string& name, BasicTensor<T> tensor,
            bool requires_grad);

  // Elementwise.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T s);
  Var add_bias(Var x, Var bias);
  Var gelu(Var x);
  Var sigmoid(Var x);

  // Row-wise over the last dimension.
  Var softmax(Var x);
  Var rmsnorm(Var x, Var gain, T eps);
  Var concat_last(Var a, Var b);
  Var linear(Var x, Var weight);
  Var embedding(Var table, std::span<const int> ids);
  Var causal_attention(Var q, Var k, Var v, int batch, int seq, int heads);

  // (1 - alpha) * a + alpha * b; alpha is [1] or one value per row.
  Var blend(Var a, Var b, Var alpha);

  // Hard per-row selection between a (index 0) and b (index 1) driven by
  // argmax of softmax(gate_logits); ties pick a. Selected rows are exact
  // copies. Gradients to a and b follow the hard choice; the gate logits
  // receive the gradient of the soft blend p0 * a + p1 * b.
  struct Selection {
    Var combined;
    Var chosen;  // 0/1 per row, constant
    std::vector<int> index;
  };
  Selection hard_select(Var a, Var b, Var gate_logits);

  Var row_mse(Var a, Var b);
  Var row_cosine_distance(Var a, Var b, T guard = T(1e-8));

  // Reductions to shape [1].
  Var sum(Var x);
  Var mean(Var x);
  Var cross_entropy(Var logits, std::span<const int> targets,
                    std::span<const T> weights);

  Var reshape(Var x, Shape shape);

  const Shape& shape(Var v) const { return node(v).shape; }
  std::span<const T> value(Var v) const;
  BasicTensor<T> tensor(Var v) const;
  T scalar(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  const std::string& op_name(Var v) const { return node(v).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient of a scalar node with respect to every bound parameter/input
  // that requires grad. Nothing is returned for frozen leaves.
  GradMap<T> backward(Var loss);

 private:
  struct Node {
    std::string op;
    Shape shape;
    std::vector<T> value;
    const BasicTensor<T>* leaf = nullptr;
    std::uint64_t leaf_version = 0;
    std::string name;
    bool requires_grad = false;
    std::vector<std::int32_t> inputs;
    std::function<void(Graph&, std::int32_t)> backward_fn;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  std::span<const T> data(std::int32_t id) const;
  std::vector<T>& grad(std::int32_t id);
  bool wants_grad(Var v) const { return nodes_[v.id].requires_grad; }

  Var emit(std::string op, Shape shape, std::vector<T> value,
           std::vector<std::int32_t> inputs,
           std::function<void(Graph&, std::int32_t)> backward_fn);
  void require_same_shape(const char* op, Var a, Var b) const;

  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  std::unordered_map<std::string, std::int32_t> bound_;
};

extern template class Graph<float>;
extern template class Graph<double>;

// Leading dimensions collapsed: rows * last == numel.
inline std::int64_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }
inline std::int64_t row_count(const Shape& s) {
  return shape_numel(s) / last_dim(s);
}

}  // namespace cllm

#endif  // CONTROLLLM_GRAPH_HPP_
