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

#include "controlllm/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace cllm {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;
template <typename T>
using HeadMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutHeadMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_slope(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

template <typename T>
T sigmoid_value(T x) {
  if (x >= 0) {
    const T z = std::exp(-x);
    return T(1) / (T(1) + z);
  }
  const T z = std::exp(x);
  return z / (T(1) + z);
}

}  // namespace

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    fail(ErrorKind::kContract, "graph: invalid node reference " + std::to_string(v.id));
  }
  return nodes_[v.id];
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    fail(ErrorKind::kContract, "graph: invalid node reference " + std::to_string(v.id));
  }
  return nodes_[v.id];
}

template <typename T>
std::span<const T> Graph<T>::data(std::int32_t id) const {
  const Node& n = nodes_[id];
  if (n.leaf != nullptr) return n.leaf->data();
  return n.value;
}

template <typename T>
std::span<const T> Graph<T>::value(Var v) const {
  node(v);
  return data(v.id);
}

template <typename T>
BasicTensor<T> Graph<T>::tensor(Var v) const {
  const auto d = value(v);
  return BasicTensor<T>(node(v).shape, std::vector<T>(d.begin(), d.end()));
}

template <typename T>
T Graph<T>::scalar(Var v) const {
  const auto d = value(v);
  if (d.size() != 1) {
    fail(ErrorKind::kShape, "graph: scalar() on node with shape " + shape_str(node(v).shape));
  }
  return d[0];
}

template <typename T>
std::vector<T>& Graph<T>::grad(std::int32_t id) {
  auto& g = grads_[id];
  if (g.empty()) g.assign(static_cast<std::size_t>(shape_numel(nodes_[id].shape)), T(0));
  return g;
}

template <typename T>
Var Graph<T>::emit(std::string op, Shape shape, std::vector<T> value,
                   std::vector<std::int32_t> inputs,
                   std::function<void(Graph&, std::int32_t)> backward_fn) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  for (const T x : value) {
    if (!std::isfinite(x)) {
      fail(ErrorKind::kNonFinite,
           "graph: non-finite output at node " + std::to_string(id) + " (" + op + ")");
    }
  }
  Node n;
  n.op = std::move(op);
  n.shape = std::move(shape);
  n.value = std::move(value);
  for (const auto in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  return Var{id};
}

template <typename T>
void Graph<T>::require_same_shape(const char* op, Var a, Var b) const {
  if (node(a).shape != node(b).shape) {
    fail(ErrorKind::kShape, std::string(op) + ": shape mismatch " +
                                shape_str(node(a).shape) + " vs " + shape_str(node(b).shape));
  }
}

template <typename T>
Var Graph<T>::param(const std::string& name, const BasicTensor<T>& tensor,
                    bool requires_grad) {
  if (auto it = bound_.find(name); it != bound_.end()) {
    if (nodes_[it->second].leaf != &tensor) {
      fail(ErrorKind::kContract, "graph: name '" + name + "' bound to two different tensors");
    }
    return Var{it->second};
  }
  if (!tensor.all_finite()) {
    fail(ErrorKind::kNonFinite, "graph: parameter '" + name + "' holds non-finite values");
  }
  const auto id = static_cast<std::int32_t>(nodes_.size());
  Node n;
  n.op = "param";
  n.shape = tensor.shape();
  n.leaf = &tensor;
  n.leaf_version = tensor.version();
  n.name = name;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  bound_.emplace(name, id);
  return Var{id};
}

template <typename T>
Var Graph<T>::constant(BasicTensor<T> tensor, std::string label) {
  Shape shape = tensor.shape();
  return emit(std::move(label), std::move(shape), tensor.vec(), {}, nullptr);
}

template <typename T>
Var Graph<T>::input(const std::string& name, BasicTensor<T> tensor, bool requires_grad) {
  if (bound_.count(name)) {
    fail(ErrorKind::kContract, "graph: input '" + name + "' already bound");
  }
  Var v = constant(std::move(tensor), "input");
  nodes_[v.id].name = name;
  nodes_[v.id].requires_grad = requires_grad;
  bound_.emplace(name, v.id);
  return v;
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  require_same_shape("add", a, b);
  const auto x = data(a.id), y = data(b.id);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return emit("add", node(a).shape, std::move(out), {a.id, b.id},
              [a, b](Graph& g, std::int32_t self) {
                const auto& go = g.grads_[self];
                for (const Var in : {a, b}) {
                  if (!g.wants_grad(in)) continue;
                  auto& gi = g.grad(in.id);
                  for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
                }
              });
}

template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  const auto x = data(a.id), y = data(b.id);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return emit("sub", node(a).shape, std::move(out), {a.id, b.id},
              [a, b](Graph& g, std::int32_t self) {
                const auto& go = g.grads_[self];
                if (g.wants_grad(a)) {
                  auto& ga = g.grad(a.id);
                  for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                }
                if (g.wants_grad(b)) {
                  auto& gb = g.grad(b.id);
                  for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
                }
              });
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  const auto x = data(a.id), y = data(b.id);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return emit("mul", node(a).shape, std::move(out), {a.id, b.id},
              [a, b](Graph& g, std::int32_t self) {
                const auto& go = g.grads_[self];
                const auto x = g.data(a.id), y = g.data(b.id);
                if (g.wants_grad(a)) {
                  auto& ga = g.grad(a.id);
                  for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i];
                }
                if (g.wants_grad(b)) {
                  auto& gb = g.grad(b.id);
                  for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * x[i];
                }
              });
}

template <typename T>
Var Graph<T>::scale(Var a, T s) {
  const auto x = data(a.id);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return emit("scale", node(a).shape, std::move(out), {a.id},
              [a, s](Graph& g, std::int32_t self) {
                const auto& go = g.grads_[self];
                auto& ga = g.grad(a.id);
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * s;
              });
}

template <typename T>
Var Graph<T>::add_bias(Var x, Var bias) {
  const auto cols = last_dim(node(x).shape);
  if (shape_numel(node(bias).shape) != cols) {
    fail(ErrorKind::kShape, "add_bias: shape mismatch " + shape_str(node(x).shape) + " vs " +
                                shape_str(node(bias).shape));
  }
  const auto xd = data(x.id), bd = data(bias.id);
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + bd[i % cols];
  return emit("add_bias", node(x).shape, std::move(out), {x.id, bias.id},
              [x, bias, cols](Graph& g, std::int32_t self) {
                const auto& go = g.grads_[self];
                if (g.wants_grad(x)) {
                  auto& gx = g.grad(x.id);
                  for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
                }
                if (g.wants_grad(bias)) {
                  auto& gb = g.grad(bias.id);
                  for (std::size_t i = 0; i < go.size(); ++i) gb[i % cols] += go[i];
                }
              });
}

template <typename T>
Var Graph<T>::gelu(Var x) {
  const auto xd = data(x.id);
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(xd[i]);
  return emit("gelu", node(x).shape, std::move(out), {x.id},
              [x](Graph& g, std::int32_t self) {
                const auto& go = g.grads_[self];
                const auto xd = g.data(x.id);
                auto& gx = g.grad(x.id);
                for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * gelu_slope(xd[i]);
              });
}

template <typename T>
Var Graph<T>::sigmoid(Var x) {
  const auto xd = data(x.id);
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(xd[i]);
  return emit("sigmoid", node(x).shape, std::move(out), {x.id},
              [x](Graph& g, std::int32_t self) {
                const auto& go = g.grads_[self];
                const auto y = g.data(self);
                auto& gx = g.grad(x.id);
                for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * y[i] * (T(1) - y[i]);
              });
}

template <typename T>
Var Graph<T>::softmax(Var x) {
  const auto cols = last_dim(node(x).shape);
  const auto rows = row_count(node(x).shape);
  const auto xd = data(x.id);
  std::vector<T> out(xd.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * cols;
    T* o = out.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T total = 0;
    for (std::int64_t c = 0; c < cols; ++c) total += (o[c] = std::exp(in[c] - mx));
    for (std::int64_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return emit("softmax", node(x).shape, std::move(out), {x.id},
              [x, rows, cols](Graph& g, std::int32_t self) {
                const auto& go = g.grads_[self];
                const auto y = g.data(self);
                auto& gx = g.grad(x.id);
                for (std::int64_t r = 0; r < rows; ++r) {
                  T dot = 0;
                  for (std::int64_t c = 0; c < cols; ++c) dot += go[r * cols + c] * y[r * cols + c];
                  for (std::int64_t c = 0; c < cols; ++c) {
                    gx[r * cols + c] += y[r * cols + c] * (go[r * cols + c] - dot);
                  }
                }
              });
}

template <typename T>
Var Graph<T>::rmsnorm(Var x, Var gain, T eps) {
  const auto cols = last_dim(node(x).shape);
  const auto rows = row_count(node(x).shape);
  if (shape_numel(node(gain).shape) != cols) {
    fail(ErrorKind::kShape, "rmsnorm: shape mismatch " + shape_str(node(x).shape) + " vs " +
                                shape_str(node(gain).shape));
  }
  const auto xd = data(x.id), gd = data(gain.id);
  std::vector<T> out(xd.size());
  std::vector<T> inv(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * cols;
    T ms = 0;
    for (std::int64_t c = 0; c < cols; ++c) ms += in[c] * in[c];
    ms /= static_cast<T>(cols);
    inv[r] = T(1) / std::sqrt(ms + eps);
    for (std::int64_t c = 0; c < cols; ++c) out[r * cols + c] = in[c] * inv[r] * gd[c];
  }
  return emit("rmsnorm", node(x).shape, std::move(out), {x.id, gain.id},
              [x, gain, rows, cols, inv = std::move(inv)](Graph& g, std::int32_t self) {
                const auto& go = g.grads_[self];
                const auto xd = g.data(x.id), gd = g.data(gain.id);
                if (g.wants_grad(gain)) {
                  auto& gg = g.grad(gain.id);
                  for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t c = 0; c < cols; ++c) {
                      gg[c] += go[r * cols + c] * xd[r * cols + c] * inv[r];
                    }
                  }
                }
                if (g.wants_grad(x)) {
                  auto& gx = g.grad(x.id);
                  for (std::int64_t r = 0; r < rows; ++r) {
                    const T* in = xd.data() + r * cols;
                    T dot = 0;  // sum_c go * gain * x
                    for (std::int64_t c = 0; c < cols; ++c) dot += go[r * cols + c] * gd[c] * in[c];
                    const T k = inv[r] * inv[r] * inv[r] * dot / static_cast<T>(cols);
                    for (std::int64_t c = 0; c < cols; ++c) {
                      gx[r * cols + c] += go[r * cols + c] * gd[c] * inv[r] - in[c] * k;
                    }
                  }
                }
              });
}

template <typename T>
Var Graph<T>::concat_last(Var a, Var b) {
  const Shape& sa = node(a).shape;
  const Shape& sb = node(b).shape;
  const auto rows = row_count(sa);
  if (rows != row_count(sb) || sa.size() != sb.size()) {
    fail(ErrorKind::kShape, "concat_last: shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  }
  const auto ca = last_dim(sa), cb = last_dim(sb);
  const auto ad = data(a.id), bd = data(b.id);
  std::vector<T> out(static_cast<std::size_t>(rows * (ca + cb)));
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy_n(ad.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(bd.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  Shape so = sa;
  so.back() = ca + cb;
  return emit("concat_last", std::move(so), std::move(out), {a.id, b.id},
              [a, b, rows, ca, cb](Graph& g, std::int32_t self) {
                const auto& go = g.grads_[self];
                if (g.wants_grad(a)) {
                  auto& ga = g.grad(a.id);
                  for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t c = 0; c < ca; ++c) ga[r * ca + c] += go[r * (ca + cb) + c];
                }
                if (g.wants_grad(b)) {
                  auto& gb = g.grad(b.id);
                  for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t c = 0; c < cb; ++c) gb[r * cb + c] += go[r * (ca + cb) + ca + c];
                }
              });
}

template <typename T>
Var Graph<T>::linear(Var x, Var weight) {
  const Shape& sx = node(x).shape;
  const Shape& sw = node(weight).shape;
  const auto in = last_dim(sx);
  if (sw.size() != 2 || sw[1] != in) {
    fail(ErrorKind::kShape, "linear: shape mismatch " + shape_str(sx) + " vs " + shape_str(sw));
  }
  const auto rows = row_count(sx);
  const auto outd = sw[0];
  std::vector<T> out(static_cast<std::size_t>(rows * outd));
  {
    ConstMap<T> X(data(x.id).data(), rows, in);
    ConstMap<T> W(data(weight.id).data(), outd, in);
    MutMap<T> Y(out.data(), rows, outd);
    Y.noalias() = X * W.transpose();
  }
  Shape so = sx;
  so.back() = outd;
  return emit("linear", std::move(so), std::move(out), {x.id, weight.id},
              [x, weight, rows, in, outd](Graph& g, std::int32_t self) {
                ConstMap<T> dY(g.grads_[self].data(), rows, outd);
                if (g.wants_grad(x)) {
                  ConstMap<T> W(g.data(weight.id).data(), outd, in);
                  MutMap<T> dX(g.grad(x.id).data(), rows, in);
                  dX.noalias() += dY * W;
                }
                if (g.wants_grad(weight)) {
                  ConstMap<T> X(g.data(x.id).data(), rows, in);
                  MutMap<T> dW(g.grad(weight.id).data(), outd, in);
                  dW.noalias() += dY.transpose() * X;
                }
              });
}

template <typename T>
Var Graph<T>::embedding(Var table, std::span<const int> ids) {
  const Shape& st = node(table).shape;
  if (st.size() != 2) {
    fail(ErrorKind::kShape, "embedding: table must be rank 2, got " + shape_str(st));
  }
  const auto rows = st[0], cols = st[1];
  const auto td = data(table.id);
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<T> out(idx.size() * static_cast<std::size_t>(cols));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= rows) {
      fail(ErrorKind::kShape, "embedding: id " + std::to_string(idx[i]) + " at position " +
                                  std::to_string(i) + " outside table " + shape_str(st));
    }
    std::copy_n(td.data() + idx[i] * cols, cols, out.data() + i * cols);
  }
  const Shape out_shape{static_cast<std::int64_t>(idx.size()), cols};
  return emit("embedding", out_shape, std::move(out),
              {table.id}, [table, cols, idx = std::move(idx)](Graph& g, std::int32_t self) {
                const auto& go = g.grads_[self];
                auto& gt = g.grad(table.id);
                for (std::size_t i = 0; i < idx.size(); ++i)
                  for (std::int64_t c = 0; c < cols; ++c) gt[idx[i] * cols + c] += go[i * cols + c];
              });
}

template <typename T>
Var Graph<T>::causal_attention(Var q, Var k, Var v, int batch, int seq, int heads) {
  require_same_shape("causal_attention", q, k);
  require_same_shape("causal_attention", q, v);
  const auto d = last_dim(node(q).shape);
  if (row_count(node(q).shape) != static_cast<std::int64_t>(batch) * seq || d % heads != 0) {
    fail(ErrorKind::kShape, "causal_attention: shape mismatch " + shape_str(node(q).shape) +
                                " vs batch " + std::to_string(batch) + " seq " +
                                std::to_string(seq) + " heads " + std::to_string(heads));
  }
  const auto hd = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
  const auto qd = data(q.id), kd = data(k.id), vd = data(v.id);
  // probs[b][h] is a seq x seq block, zero above the diagonal.
  std::vector<T> probs(static_cast<std::size_t>(batch) * heads * seq * seq, T(0));
  std::vector<T> out(qd.size(), T(0));
  const Eigen::OuterStride<> stride(d);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto off = static_cast<std::int64_t>(b) * seq * d + h * hd;
      const HeadMap<T> Q(qd.data() + off, seq, hd, stride);
      const HeadMap<T> K(kd.data() + off, seq, hd, stride);
      const HeadMap<T> V(vd.data() + off, seq, hd, stride);
      MutMap<T> P(probs.data() + ((static_cast<std::size_t>(b) * heads + h) * seq) * seq, seq,
                  seq);
      P.noalias() = (Q * K.transpose()) * inv_sqrt;
      for (int i = 0; i < seq; ++i) {
        const T mx = P.row(i).head(i + 1).maxCoeff();
        T total = 0;
        for (int j = 0; j <= i; ++j) total += (P(i, j) = std::exp(P(i, j) - mx));
        P.row(i).head(i + 1) /= total;
        P.row(i).tail(seq - i - 1).setZero();
      }
      MutHeadMap<T> O(out.data() + off, seq, hd, stride);
      O.noalias() = P * V;
    }
  }
  return emit(
      "causal_attention", node(q).shape, std::move(out), {q.id, k.id, v.id},
      [q, k, v, batch, seq, heads, d, hd, inv_sqrt, probs = std::move(probs)](Graph& g,
                                                                             std::int32_t self) {
        const auto& go = g.grads_[self];
        const auto qd = g.data(q.id), kd = g.data(k.id), vd = g.data(v.id);
        const bool need_q = g.wants_grad(q), need_k = g.wants_grad(k), need_v = g.wants_grad(v);
        std::vector<T>* gq = need_q ? &g.grad(q.id) : nullptr;
        std::vector<T>* gk = need_k ? &g.grad(k.id) : nullptr;
        std::vector<T>* gv = need_v ? &g.grad(v.id) : nullptr;
        const Eigen::OuterStride<> stride(d);
        RowMat<T> dP(seq, seq);
        for (int b = 0; b < batch; ++b) {
          for (int h = 0; h < heads; ++h) {
            const auto off = static_cast<std::int64_t>(b) * seq * d + h * hd;
            const ConstMap<T> P(probs.data() + ((static_cast<std::size_t>(b) * heads + h) * seq) * seq,
                                seq, seq);
            const HeadMap<T> dO(go.data() + off, seq, hd, stride);
            const HeadMap<T> V(vd.data() + off, seq, hd, stride);
            if (gv) MutHeadMap<T>(gv->data() + off, seq, hd, stride).noalias() += P.transpose() * dO;
            if (!gq && !gk) continue;
            dP.noalias() = dO * V.transpose();
            // Softmax backward; P is zero above the diagonal, which masks dS.
            for (int i = 0; i < seq; ++i) {
              const T dot = P.row(i).dot(dP.row(i));
              dP.row(i) = (P.row(i).array() * (dP.row(i).array() - dot) * inv_sqrt).matrix();
            }
            if (gq) {
              const HeadMap<T> K(kd.data() + off, seq, hd, stride);
              MutHeadMap<T>(gq->data() + off, seq, hd, stride).noalias() += dP * K;
            }
            if (gk) {
              const HeadMap<T> Q(qd.data() + off, seq, hd, stride);
              MutHeadMap<T>(gk->data() + off, seq, hd, stride).noalias() += dP.transpose() * Q;
            }
          }
        }
      });
}

template <typename T>
Var Graph<T>::blend(Var a, Var b, Var alpha) {
  require_same_shape("blend", a, b);
  const auto cols = last_dim(node(a).shape);
  const auto rows = row_count(node(a).shape);
  const auto na = shape_numel(node(alpha).shape);
  if (na != 1 && na != rows) {
    fail(ErrorKind::kShape, "blend: alpha shape " + shape_str(node(alpha).shape) +
                                " incompatible with " + shape_str(node(a).shape));
  }
  const auto ad = data(a.id), bd = data(b.id), al = data(alpha.id);
  std::vector<T> out(ad.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T w = al[na == 1 ? 0 : r];
    for (std::int64_t c = 0; c < cols; ++c) {
      const auto i = r * cols + c;
      out[i] = (T(1) - w) * ad[i] + w * bd[i];
    }
  }
  return emit("blend", node(a).shape, std::move(out), {a.id, b.id, alpha.id},
              [a, b, alpha, rows, cols, na](Graph& g, std::int32_t self) {
                const auto& go = g.grads_[self];
                const auto ad = g.data(a.id), bd = g.data(b.id), al = g.data(alpha.id);
                std::vector<T>* ga = g.wants_grad(a) ? &g.grad(a.id) : nullptr;
                std::vector<T>* gb = g.wants_grad(b) ? &g.grad(b.id) : nullptr;
                std::vector<T>* gal = g.wants_grad(alpha) ? &g.grad(alpha.id) : nullptr;
                for (std::int64_t r = 0; r < rows; ++r) {
                  const T w = al[na == 1 ? 0 : r];
                  T dw = 0;
                  for (std::int64_t c = 0; c < cols; ++c) {
                    const auto i = r * cols + c;
                    if (ga) (*ga)[i] += (T(1) - w) * go[i];
                    if (gb) (*gb)[i] += w * go[i];
                    dw += go[i] * (bd[i] - ad[i]);
                  }
                  if (gal) (*gal)[na == 1 ? 0 : r] += dw;
                }
              });
}

template <typename T>
typename Graph<T>::Selection Graph<T>::hard_select(Var a, Var b, Var gate_logits) {
  require_same_shape("hard_select", a, b);
  const auto cols = last_dim(node(a).shape);
  const auto rows = row_count(node(a).shape);
  const Shape& sg = node(gate_logits).shape;
  if (last_dim(sg) != 2 || row_count(sg) != rows) {
    fail(ErrorKind::kShape, "hard_select: gate shape " + shape_str(sg) + " incompatible with " +
                                shape_str(node(a).shape));
  }
  Var probs = softmax(gate_logits);
  const auto pd = data(probs.id);
  const auto ad = data(a.id), bd = data(b.id);
  std::vector<int> index(static_cast<std::size_t>(rows));
  std::vector<T> chosen(static_cast<std::size_t>(rows));
  std::vector<T> out(ad.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    index[r] = pd[2 * r + 1] > pd[2 * r] ? 1 : 0;  // ties keep branch a
    chosen[r] = static_cast<T>(index[r]);
    const T* src = (index[r] ? bd.data() : ad.data()) + r * cols;
    std::copy_n(src, cols, out.data() + r * cols);
  }
  Var combined = emit(
      "hard_select", node(a).shape, std::move(out), {a.id, b.id, probs.id},
      [a, b, probs, rows, cols, index](Graph& g, std::int32_t self) {
        const auto& go = g.grads_[self];
        const auto ad = g.data(a.id), bd = g.data(b.id);
        std::vector<T>* ga = g.wants_grad(a) ? &g.grad(a.id) : nullptr;
        std::vector<T>* gb = g.wants_grad(b) ? &g.grad(b.id) : nullptr;
        std::vector<T>* gp = g.wants_grad(probs) ? &g.grad(probs.id) : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
          std::vector<T>* dst = index[r] ? gb : ga;
          T da = 0, db = 0;
          for (std::int64_t c = 0; c < cols; ++c) {
            const auto i = r * cols + c;
            if (dst) (*dst)[i] += go[i];
            da += go[i] * ad[i];
            db += go[i] * bd[i];
          }
          if (gp) {
            (*gp)[2 * r] += da;
            (*gp)[2 * r + 1] += db;
          }
        }
      });
  Var chosen_var = emit("selection", Shape{rows}, std::move(chosen), {}, nullptr);
  return Selection{combined, chosen_var, std::move(index)};
}

template <typename T>
Var Graph<T>::row_mse(Var a, Var b) {
  require_same_shape("row_mse", a, b);
  const auto cols = last_dim(node(a).shape);
  const auto rows = row_count(node(a).shape);
  const auto ad = data(a.id), bd = data(b.id);
  std::vector<T> out(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    T s = 0;
    for (std::int64_t c = 0; c < cols; ++c) {
      const T diff = ad[r * cols + c] - bd[r * cols + c];
      s += diff * diff;
    }
    out[r] = s / static_cast<T>(cols);
  }
  return emit("row_mse", Shape{rows}, std::move(out), {a.id, b.id},
              [a, b, rows, cols](Graph& g, std::int32_t self) {
                const auto& go = g.grads_[self];
                const auto ad = g.data(a.id), bd = g.data(b.id);
                std::vector<T>* ga = g.wants_grad(a) ? &g.grad(a.id) : nullptr;
                std::vector<T>* gb = g.wants_grad(b) ? &g.grad(b.id) : nullptr;
                for (std::int64_t r = 0; r < rows; ++r) {
                  const T k = T(2) * go[r] / static_cast<T>(cols);
                  for (std::int64_t c = 0; c < cols; ++c) {
                    const auto i = r * cols + c;
                    const T diff = ad[i] - bd[i];
                    if (ga) (*ga)[i] += k * diff;
                    if (gb) (*gb)[i] -= k * diff;
                  }
                }
              });
}

template <typename T>
Var Graph<T>::row_cosine_distance(Var a, Var b, T guard) {
  require_same_shape("row_cosine_distance", a, b);
  const auto cols = last_dim(node(a).shape);
  const auto rows = row_count(node(a).shape);
  const auto ad = data(a.id), bd = data(b.id);
  std::vector<T> out(static_cast<std::size_t>(rows));
  std::vector<T> stats(static_cast<std::size_t>(rows) * 3);  // dot, |a|, |b|
  for (std::int64_t r = 0; r < rows; ++r) {
    T dot = 0, na = 0, nb = 0;
    for (std::int64_t c = 0; c < cols; ++c) {
      const T x = ad[r * cols + c], y = bd[r * cols + c];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    stats[3 * r] = dot;
    stats[3 * r + 1] = na;
    stats[3 * r + 2] = nb;
    if (na * nb > guard) {
      // 1 - cos as half the squared distance of the unit vectors: exactly 0
      // for equal rows and free of cancellation for nearly equal ones.
      T half = 0;
      for (std::int64_t c = 0; c < cols; ++c) {
        const T u = ad[r * cols + c] / na - bd[r * cols + c] / nb;
        half += u * u;
      }
      out[r] = half / 2;
    } else {
      out[r] = T(1) - dot / guard;
    }
  }
  return emit(
      "row_cosine_distance", Shape{rows}, std::move(out), {a.id, b.id},
      [a, b, rows, cols, guard, stats = std::move(stats)](Graph& g, std::int32_t self) {
        const auto& go = g.grads_[self];
        const auto ad = g.data(a.id), bd = g.data(b.id);
        std::vector<T>* ga = g.wants_grad(a) ? &g.grad(a.id) : nullptr;
        std::vector<T>* gb = g.wants_grad(b) ? &g.grad(b.id) : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T dot = stats[3 * r], na = stats[3 * r + 1], nb = stats[3 * r + 2];
          const T denom = na * nb;
          if (denom <= guard) {
            // Guarded branch: cos = dot / guard, linear in each input.
            for (std::int64_t c = 0; c < cols; ++c) {
              const auto i = r * cols + c;
              if (ga) (*ga)[i] -= go[r] * bd[i] / guard;
              if (gb) (*gb)[i] -= go[r] * ad[i] / guard;
            }
            continue;
          }
          const T cosv = dot / denom;
          for (std::int64_t c = 0; c < cols; ++c) {
            const auto i = r * cols + c;
            // d cos / da = b / (|a||b|) - cos * a / |a|^2
            if (ga) (*ga)[i] -= go[r] * (bd[i] / denom - cosv * ad[i] / (na * na));
            if (gb) (*gb)[i] -= go[r] * (ad[i] / denom - cosv * bd[i] / (nb * nb));
          }
        }
      });
}

template <typename T>
Var Graph<T>::sum(Var x) {
  const auto xd = data(x.id);
  T s = 0;
  for (const T v : xd) s += v;
  return emit("sum", Shape{1}, std::vector<T>{s}, {x.id}, [x](Graph& g, std::int32_t self) {
    const T go = g.grads_[self][0];
    for (auto& v : g.grad(x.id)) v += go;
  });
}

template <typename T>
Var Graph<T>::mean(Var x) {
  const auto xd = data(x.id);
  const T n = static_cast<T>(xd.size());
  T s = 0;
  for (const T v : xd) s += v;
  return emit("mean", Shape{1}, std::vector<T>{s / n}, {x.id},
              [x, n](Graph& g, std::int32_t self) {
                const T go = g.grads_[self][0] / n;
                for (auto& v : g.grad(x.id)) v += go;
              });
}

template <typename T>
Var Graph<T>::cross_entropy(Var logits, std::span<const int> targets,
                            std::span<const T> weights) {
  const auto classes = last_dim(node(logits).shape);
  const auto rows = row_count(node(logits).shape);
  if (static_cast<std::int64_t>(targets.size()) != rows ||
      (!weights.empty() && static_cast<std::int64_t>(weights.size()) != rows)) {
    fail(ErrorKind::kShape, "cross_entropy: logits " + shape_str(node(logits).shape) +
                                " vs " + std::to_string(targets.size()) + " targets");
  }
  std::vector<T> w(static_cast<std::size_t>(rows), T(1));
  if (!weights.empty()) std::copy(weights.begin(), weights.end(), w.begin());
  T wsum = 0;
  for (const T x : w) wsum += x;
  if (wsum <= 0) fail(ErrorKind::kContract, "cross_entropy: no weighted targets");
  const auto ld = data(logits.id);
  std::vector<T> probs(ld.size());
  std::vector<int> tgt(targets.begin(), targets.end());
  T loss = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (tgt[r] < 0 || tgt[r] >= classes) {
      fail(ErrorKind::kShape, "cross_entropy: target " + std::to_string(tgt[r]) +
                                  " outside " + std::to_string(classes) + " classes");
    }
    const T* in = ld.data() + r * classes;
    T* p = probs.data() + r * classes;
    const T mx = *std::max_element(in, in + classes);
    T total = 0;
    for (std::int64_t c = 0; c < classes; ++c) total += (p[c] = std::exp(in[c] - mx));
    for (std::int64_t c = 0; c < classes; ++c) p[c] /= total;
    if (w[r] != 0) loss += w[r] * (std::log(total) + mx - in[tgt[r]]);
  }
  loss /= wsum;
  return emit("cross_entropy", Shape{1}, std::vector<T>{loss}, {logits.id},
              [logits, rows, classes, wsum, w = std::move(w), tgt = std::move(tgt),
               probs = std::move(probs)](Graph& g, std::int32_t self) {
                const T go = g.grads_[self][0];
                auto& gl = g.grad(logits.id);
                for (std::int64_t r = 0; r < rows; ++r) {
                  if (w[r] == 0) continue;
                  const T k = go * w[r] / wsum;
                  for (std::int64_t c = 0; c < classes; ++c) {
                    gl[r * classes + c] += k * (probs[r * classes + c] - (c == tgt[r] ? T(1) : T(0)));
                  }
                }
              });
}

template <typename T>
Var Graph<T>::reshape(Var x, Shape shape) {
  if (shape_numel(shape) != shape_numel(node(x).shape)) {
    fail(ErrorKind::kShape, "reshape: shape mismatch " + shape_str(node(x).shape) + " vs " +
                                shape_str(shape));
  }
  const auto xd = data(x.id);
  return emit("reshape", std::move(shape), std::vector<T>(xd.begin(), xd.end()), {x.id},
              [x](Graph& g, std::int32_t self) {
                const auto& go = g.grads_[self];
                auto& gx = g.grad(x.id);
                for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
              });
}

template <typename T>
GradMap<T> Graph<T>::backward(Var loss) {
  const Node& ln = node(loss);
  if (shape_numel(ln.shape) != 1) {
    fail(ErrorKind::kShape, "backward: loss must be scalar, got " + shape_str(ln.shape));
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.leaf != nullptr && n.leaf->version() != n.leaf_version) {
      fail(ErrorKind::kContract,
           "backward: parameter '" + n.name + "' was modified after forward");
    }
  }
  for (auto& g : grads_) g.clear();
  GradMap<T> out;
  if (!ln.requires_grad) return out;
  grad(loss.id)[0] = T(1);
  for (std::int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || grads_[id].empty()) continue;
    if (n.backward_fn) n.backward_fn(*this, id);
  }
  for (const auto& [name, id] : bound_) {
    const Node& n = nodes_[id];
    if (!n.requires_grad) continue;
    auto& g = grads_[id];
    if (g.empty()) g.assign(static_cast<std::size_t>(shape_numel(n.shape)), T(0));
    for (const T v : g) {
      if (!std::isfinite(v)) {
        fail(ErrorKind::kNonFinite, "backward: non-finite gradient for '" + name + "'");
      }
    }
    out.emplace(name, BasicTensor<T>(n.shape, std::move(g)));
  }
  for (auto& g : grads_) g.clear();
  return out;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace cllm
