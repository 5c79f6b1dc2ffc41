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

#include "controlllm/transformer.hpp"

#include <functional>

namespace cllm {

namespace {

template <typename T>
class Builder {
 public:
  Builder(Graph<T>& g, const ModelSpec& spec, const BasicStore<T>& store,
          const ForwardOptions& options, int batch, int seq)
      : g_(g), spec_(spec), store_(store), options_(options), batch_(batch), seq_(seq) {}

  Var bind(const std::string& name) {
    const auto& e = store_.entry(name);
    return g_.param(name, e.tensor, options_.track_grad && !e.frozen);
  }

  Var norm(Var x, const std::string& gain) {
    if (!spec_.use_norm) return x;
    return g_.rmsnorm(x, bind(gain), static_cast<T>(kRmsNormEps));
  }

  // One residual block; `name` maps a tensor stem to its store name.
  Var block(Var x, const std::function<std::string(std::string_view)>& name) {
    Var h = x;
    if (spec_.use_attention) {
      const Var a = norm(x, name("attn_norm"));
      const Var q = g_.linear(a, bind(name("q_proj")));
      const Var k = g_.linear(a, bind(name("k_proj")));
      const Var v = g_.linear(a, bind(name("v_proj")));
      const Var att = g_.causal_attention(q, k, v, batch_, seq_, spec_.n_heads);
      h = g_.add(x, g_.linear(att, bind(name("o_proj"))));
    }
    const Var m = norm(h, name("mlp_norm"));
    Var up = g_.linear(m, bind(name("up_proj")));
    if (spec_.activation == Activation::kGelu) up = g_.gelu(up);
    return g_.add(h, g_.linear(up, bind(name("down_proj"))));
  }

  Graph<T>& g_;
  const ModelSpec& spec_;
  const BasicStore<T>& store_;
  const ForwardOptions& options_;
  int batch_;
  int seq_;
};

void validate_tokens(const ModelSpec& spec, const TokenBatch& tokens) {
  if (tokens.batch <= 0 || tokens.seq <= 0 ||
      tokens.ids.size() != static_cast<std::size_t>(tokens.batch) * tokens.seq) {
    fail(ErrorKind::kShape, "forward: token batch shape [" + std::to_string(tokens.batch) + ", " +
                                std::to_string(tokens.seq) + "] does not match " +
                                std::to_string(tokens.ids.size()) + " ids");
  }
  if (tokens.seq > spec.max_seq_len) {
    fail(ErrorKind::kShape, "forward: sequence length " + std::to_string(tokens.seq) +
                                " exceeds max_seq_len " + std::to_string(spec.max_seq_len));
  }
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const int id = tokens.ids[i];
    if (id < 0 || id >= spec.vocab_size) {
      fail(ErrorKind::kShape, "forward: token id " + std::to_string(id) + " out of range at batch " +
                                  std::to_string(i / tokens.seq) + " position " +
                                  std::to_string(i % tokens.seq));
    }
  }
}

}  // namespace

template <typename T>
GraphForward build_forward(Graph<T>& g, const ModelSpec& spec, const BasicStore<T>& store,
                           const ExpansionPlan* plan, const TokenBatch& tokens,
                           const ForwardOptions& options) {
  validate_tokens(spec, tokens);
  if (plan != nullptr && plan->n_layers != spec.n_layers) {
    fail(ErrorKind::kConfig, "forward: plan/model layer-count mismatch");
  }
  if (options.alpha_override &&
      (plan == nullptr || plan->interpolator.kind != InterpolatorKind::kLerp)) {
    fail(ErrorKind::kConfig, "forward: alpha override requires a lerp plan");
  }
  Builder<T> b(g, spec, store, options, tokens.batch, tokens.seq);
  std::vector<int> positions(tokens.ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    positions[i] = static_cast<int>(i % tokens.seq);
  }
  Var x = g.add(g.embedding(b.bind("tok_emb"), tokens.ids),
                g.embedding(b.bind("pos_emb"), positions));

  GraphForward out;
  for (int i = 0; i < spec.n_layers; ++i) {
    auto base = [i](std::string_view stem) { return base_name(stem, i); };
    auto branch = [i](std::string_view stem) { return branch_name(i, stem); };
    if (plan == nullptr || !plan->expands(i)) {
      x = b.block(x, base);
      continue;
    }
    GraphTraceEntry entry;
    entry.layer = i;
    entry.kind = plan->branch_kind(i);
    entry.h_input = x;
    if (entry.kind == BranchKind::kStack) {
      entry.h_pre = b.block(x, base);
      entry.h_exp = b.block(entry.h_pre, branch);
      entry.combined = entry.h_exp;
      entry.alpha = g.constant(BasicTensor<T>(Shape{1}, T(1)), "stack_alpha");
    } else {
      entry.h_pre = b.block(x, base);
      entry.h_exp = b.block(x, branch);
      auto interp = [&](std::string_view stem) { return b.bind(interp_name(i, stem)); };
      Fused fused;
      switch (plan->interpolator.kind) {
        case InterpolatorKind::kLerp: {
          const Var alpha =
              options.alpha_override
                  ? g.constant(BasicTensor<T>(Shape{1}, static_cast<T>(*options.alpha_override)),
                               "alpha_override")
                  : interp("alpha");
          fused = lerp_combine(g, entry.h_pre, entry.h_exp, alpha);
          break;
        }
        case InterpolatorKind::kDlerp:
          fused = dlerp_combine(g, entry.h_pre, entry.h_exp, interp("W"), interp("b"));
          break;
        case InterpolatorKind::kDlerpIn:
          fused = dlerpin_combine(g, x, entry.h_pre, entry.h_exp, interp("W_in"), interp("b_in"));
          break;
        case InterpolatorKind::kMoe:
          fused = moe_select(g, x, entry.h_pre, entry.h_exp, interp("W_g"), interp("b_g"));
          break;
        case InterpolatorKind::kPlerp:
          fused = plerp_combine(g, entry.h_pre, entry.h_exp, interp("W_lateral"), interp("alpha"));
          break;
      }
      entry.combined = fused.combined;
      entry.alpha = fused.alpha;
      entry.chosen = std::move(fused.chosen);
    }
    x = entry.combined;
    out.trace.push_back(std::move(entry));
  }
  x = b.norm(x, "final_norm");
  out.logits = g.linear(x, b.bind("lm_head"));
  return out;
}

template <typename T>
Var trace_divergence(Graph<T>& g, const GraphForward& fwd, const DivergenceConfig& config) {
  std::vector<DivergenceTerm> terms;
  for (const auto& e : fwd.trace) {
    if (e.kind == BranchKind::kConcat) terms.push_back({e.h_pre, e.h_exp, e.alpha});
  }
  if (terms.empty() && config.kind != DivergenceKind::kNone) {
    return g.constant(BasicTensor<T>(Shape{1}, T(0)), "div_empty");
  }
  return divergence_loss(g, std::span<const DivergenceTerm>(terms), config);
}

ForwardResult forward(const ModelSpec& spec, const ParameterStore& store,
                      const ExpansionPlan* plan, const TokenBatch& tokens,
                      const ForwardOptions& options) {
  Graph<float> g;
  ForwardOptions opts = options;
  opts.track_grad = false;
  const GraphForward fwd = build_forward(g, spec, store, plan, tokens, opts);
  ForwardResult result;
  const std::int64_t bsz = tokens.batch, seq = tokens.seq, d = spec.d_model;
  result.logits = Tensor({bsz, seq, spec.vocab_size},
                         std::vector<float>(g.value(fwd.logits).begin(), g.value(fwd.logits).end()));
  if (options.capture) {
    HiddenTrace trace;
    auto to3 = [&](Var v) {
      const auto data = g.value(v);
      return Tensor({bsz, seq, d}, std::vector<float>(data.begin(), data.end()));
    };
    for (const auto& e : fwd.trace) {
      TraceLayer layer;
      layer.layer = e.layer;
      layer.kind = e.kind;
      layer.h_pre = to3(e.h_pre);
      layer.h_exp = to3(e.h_exp);
      layer.combined = to3(e.combined);
      const auto a = g.value(e.alpha);
      std::vector<float> alpha(static_cast<std::size_t>(bsz * seq));
      for (std::size_t r = 0; r < alpha.size(); ++r) alpha[r] = a.size() == 1 ? a[0] : a[r];
      layer.alpha = Tensor({bsz, seq}, std::move(alpha));
      trace.layers.push_back(std::move(layer));
    }
    result.trace = std::move(trace);
  }
  return result;
}

ForwardResult forward(const Model& model, const TokenBatch& tokens, bool capture) {
  ForwardOptions opts;
  opts.capture = capture;
  return forward(model.spec, model.store, model.plan ? &*model.plan : nullptr, tokens, opts);
}

ForwardResult forward(const AlphaView& view, const TokenBatch& tokens, bool capture) {
  ForwardOptions opts;
  opts.capture = capture;
  opts.alpha_override = view.inference_alpha;
  const Model& m = *view.model;
  return forward(m.spec, m.store, m.plan ? &*m.plan : nullptr, tokens, opts);
}

double divergence_loss(const HiddenTrace& trace, const DivergenceConfig& config) {
  Graph<float> g;
  std::vector<DivergenceTerm> terms;
  for (const auto& layer : trace.layers) {
    if (layer.kind != BranchKind::kConcat) continue;
    const auto d = layer.h_pre.shape().back();
    const auto rows = layer.h_pre.numel() / d;
    const Var pre = g.constant(Tensor({rows, d}, layer.h_pre.vec()));
    const Var exp = g.constant(Tensor({rows, d}, layer.h_exp.vec()));
    Var alpha;
    if (layer.alpha.numel() > 0) alpha = g.constant(Tensor({rows}, layer.alpha.vec()));
    terms.push_back({pre, exp, alpha});
  }
  if (config.kind == DivergenceKind::kNone || terms.empty()) return 0.0;
  return g.scalar(divergence_loss(g, std::span<const DivergenceTerm>(terms), config));
}

std::vector<DecodeResult> greedy_decode_batch(const ModelSpec& spec, const ParameterStore& store,
                                              const ExpansionPlan* plan,
                                              const std::vector<std::vector<int>>& prompts,
                                              int max_new, std::optional<double> alpha_override) {
  std::vector<DecodeResult> out(prompts.size());
  if (prompts.empty()) return out;
  const std::size_t len = prompts.front().size();
  for (const auto& p : prompts) {
    if (p.empty()) fail(ErrorKind::kConfig, "greedy_decode: empty prompt");
    if (p.size() != len) fail(ErrorKind::kShape, "greedy_decode: prompts differ in length");
  }
  int steps = std::max(max_new, 0);
  bool truncated = false;
  if (static_cast<int>(len) + steps > spec.max_seq_len) {
    steps = std::max(0, spec.max_seq_len - static_cast<int>(len));
    truncated = true;
  }
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    out[i].tokens = prompts[i];
    out[i].truncated = truncated;
  }
  if (steps == 0) return out;
  ForwardOptions opts;
  opts.alpha_override = alpha_override;
  // Fixed-point decoding: feed the current guess for the whole continuation,
  // then accept predictions up to and including the first disagreement. Causal
  // masking makes every accepted position final, so this converges to the
  // token-by-token greedy output in at most `steps` passes (usually two once
  // the model is trained).
  const std::size_t v = static_cast<std::size_t>(spec.vocab_size);
  std::vector<std::vector<int>> guess(prompts.size(), std::vector<int>(steps, 0));
  std::vector<std::size_t> active(prompts.size());
  for (std::size_t i = 0; i < active.size(); ++i) active[i] = i;
  while (!active.empty()) {
    TokenBatch batch;
    batch.batch = static_cast<int>(active.size());
    batch.seq = static_cast<int>(len) + steps - 1;
    batch.ids.reserve(static_cast<std::size_t>(batch.batch) * batch.seq);
    for (const auto i : active) {
      batch.ids.insert(batch.ids.end(), prompts[i].begin(), prompts[i].end());
      batch.ids.insert(batch.ids.end(), guess[i].begin(), guess[i].end() - 1);
    }
    Graph<float> g;
    const GraphForward fwd = build_forward(g, spec, store, plan, batch, opts);
    const auto logits = g.value(fwd.logits);
    std::vector<std::size_t> next;
    for (std::size_t b = 0; b < active.size(); ++b) {
      auto& gs = guess[active[b]];
      bool agreed = true;
      for (int k = 0; k < steps; ++k) {
        const float* row =
            logits.data() + (b * static_cast<std::size_t>(batch.seq) + len - 1 + k) * v;
        int best = 0;
        for (std::size_t c = 1; c < v; ++c) {
          if (row[c] > row[best]) best = static_cast<int>(c);
        }
        if (best != gs[k]) agreed = false;
        gs[k] = best;
      }
      if (!agreed) next.push_back(active[b]);
    }
    active = std::move(next);
  }
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    out[i].tokens.insert(out[i].tokens.end(), guess[i].begin(), guess[i].end());
  }
  return out;
}

DecodeResult greedy_decode(const Model& model, std::span<const int> prompt, int max_new) {
  std::vector<std::vector<int>> prompts{std::vector<int>(prompt.begin(), prompt.end())};
  return greedy_decode_batch(model.spec, model.store, model.plan ? &*model.plan : nullptr, prompts,
                             max_new)
      .front();
}

template GraphForward build_forward<float>(Graph<float>&, const ModelSpec&,
                                           const BasicStore<float>&, const ExpansionPlan*,
                                           const TokenBatch&, const ForwardOptions&);
template GraphForward build_forward<double>(Graph<double>&, const ModelSpec&,
                                            const BasicStore<double>&, const ExpansionPlan*,
                                            const TokenBatch&, const ForwardOptions&);
template Var trace_divergence<float>(Graph<float>&, const GraphForward&, const DivergenceConfig&);
template Var trace_divergence<double>(Graph<double>&, const GraphForward&,
                                      const DivergenceConfig&);

}  // namespace cllm
