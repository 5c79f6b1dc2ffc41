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

// Pre-norm causal decoder with optional expanded branches.
//
//   x   = tok_emb[id] + pos_emb[t]
//   h   = x + o_proj(attn(rmsnorm(x)))
//   out = h + down_proj(gelu(up_proj(rmsnorm(h))))
//
// An expanded concat layer runs the frozen block and its branch copy on the
// same input and fuses both outputs; a stack layer feeds the frozen block's
// output through the branch block.

#ifndef CONTROLLLM_TRANSFORMER_HPP_
#define CONTROLLLM_TRANSFORMER_HPP_

#include <optional>
#include <span>
#include <vector>

#include "controlllm/expansion.hpp"
#include "controlllm/graph.hpp"

namespace cllm {

struct TokenBatch {
  int batch = 0;
  int seq = 0;
  std::vector<int> ids;  // row-major [batch, seq]
};

struct ForwardOptions {
  bool capture = false;
  // Bind unfrozen tensors as requiring grad.
  bool track_grad = false;
  // Replaces the lerp blend weight (alpha sweep).
  std::optional<double> alpha_override;
};

struct GraphTraceEntry {
  int layer = 0;
  BranchKind kind = BranchKind::kConcat;
  Var h_input, h_pre, h_exp, alpha, combined;
  std::vector<int> chosen;  // MoE selections
};

struct GraphForward {
  Var logits;  // [batch * seq, vocab]
  std::vector<GraphTraceEntry> trace;
};

template <typename T>
GraphForward build_forward(Graph<T>& g, const ModelSpec& spec, const BasicStore<T>& store,
                           const ExpansionPlan* plan, const TokenBatch& tokens,
                           const ForwardOptions& options);

// Divergence over the concat entries of a graph trace.
template <typename T>
Var trace_divergence(Graph<T>& g, const GraphForward& fwd, const DivergenceConfig& config);

struct TraceLayer {
  int layer = 0;
  BranchKind kind = BranchKind::kConcat;
  Tensor h_pre;     // [batch, seq, d_model]
  Tensor h_exp;     // [batch, seq, d_model]
  Tensor alpha;     // [batch, seq]
  Tensor combined;  // [batch, seq, d_model]
};

struct HiddenTrace {
  std::vector<TraceLayer> layers;
};

struct ForwardResult {
  Tensor logits;  // [batch, seq, vocab]
  std::optional<HiddenTrace> trace;
};

ForwardResult forward(const ModelSpec& spec, const ParameterStore& store,
                      const ExpansionPlan* plan, const TokenBatch& tokens,
                      const ForwardOptions& options = {});
ForwardResult forward(const Model& model, const TokenBatch& tokens, bool capture = false);
ForwardResult forward(const AlphaView& view, const TokenBatch& tokens, bool capture = false);

double divergence_loss(const HiddenTrace& trace, const DivergenceConfig& config);

struct DecodeResult {
  std::vector<int> tokens;  // prompt followed by generated ids
  bool truncated = false;   // max_new clipped by max_seq_len
};

// Argmax decoding, ties toward the lower id. Prompts in one call must share
// a length.
std::vector<DecodeResult> greedy_decode_batch(const ModelSpec& spec, const ParameterStore& store,
                                              const ExpansionPlan* plan,
                                              const std::vector<std::vector<int>>& prompts,
                                              int max_new,
                                              std::optional<double> alpha_override = {});
DecodeResult greedy_decode(const Model& model, std::span<const int> prompt, int max_new);

extern template GraphForward build_forward<float>(Graph<float>&, const ModelSpec&,
                                                  const BasicStore<float>&, const ExpansionPlan*,
                                                  const TokenBatch&, const ForwardOptions&);
extern template GraphForward build_forward<double>(Graph<double>&, const ModelSpec&,
                                                   const BasicStore<double>&,
                                                   const ExpansionPlan*, const TokenBatch&,
                                                   const ForwardOptions&);
extern template Var trace_divergence<float>(Graph<float>&, const GraphForward&,
                                            const DivergenceConfig&);
extern template Var trace_divergence<double>(Graph<double>&, const GraphForward&,
                                             const DivergenceConfig&);

}  // namespace cllm

#endif  // CONTROLLLM_TRANSFORMER_HPP_
