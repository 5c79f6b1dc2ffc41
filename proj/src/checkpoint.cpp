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

#include "controlllm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json_io.hpp"

namespace cllm {

namespace fs = std::filesystem;
using nlohmann::json;

json spec_to_json(const ModelSpec& s) {
  return json{{"vocab_size", s.vocab_size},   {"d_model", s.d_model},
              {"n_heads", s.n_heads},         {"n_layers", s.n_layers},
              {"d_ff", s.d_ff},               {"max_seq_len", s.max_seq_len},
              {"seed", s.seed},               {"use_norm", s.use_norm},
              {"use_attention", s.use_attention},
              {"activation", s.activation == Activation::kGelu ? "gelu" : "identity"}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.vocab_size = j.at("vocab_size").get<int>();
  s.d_model = j.at("d_model").get<int>();
  s.n_heads = j.at("n_heads").get<int>();
  s.n_layers = j.at("n_layers").get<int>();
  s.d_ff = j.at("d_ff").get<int>();
  s.max_seq_len = j.at("max_seq_len").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.use_norm = j.value("use_norm", true);
  s.use_attention = j.value("use_attention", true);
  s.activation = j.value("activation", std::string("gelu")) == "gelu" ? Activation::kGelu
                                                                      : Activation::kIdentity;
  s.validate();
  return s;
}

json plan_to_json(const ExpansionPlan& p) {
  return json{{"n_layers", p.n_layers},
              {"period", p.period},
              {"strategy", to_string(p.strategy)},
              {"expanded_indices", p.expanded_indices},
              {"interpolator",
               {{"kind", to_string(p.interpolator.kind)},
                {"fixed_alpha", p.interpolator.fixed_alpha},
                {"learnable_alpha", p.interpolator.learnable_alpha},
                {"freeze_bias", p.interpolator.freeze_bias}}},
              {"divergence",
               {{"kind", to_string(p.divergence.kind)},
                {"weighting", to_string(p.divergence.weighting)},
                {"lambda", p.divergence.lambda}}}};
}

ExpansionPlan plan_from_json(const json& j) {
  InterpolatorConfig ic;
  const auto& ji = j.at("interpolator");
  ic.kind = parse_interpolator(ji.at("kind").get<std::string>());
  ic.fixed_alpha = ji.at("fixed_alpha").get<double>();
  ic.learnable_alpha = ji.at("learnable_alpha").get<bool>();
  ic.freeze_bias = ji.at("freeze_bias").get<bool>();
  DivergenceConfig dc;
  const auto& jd = j.at("divergence");
  dc.kind = parse_divergence(jd.at("kind").get<std::string>());
  dc.weighting = parse_weighting(jd.at("weighting").get<std::string>());
  dc.lambda = jd.at("lambda").get<double>();
  ExpansionPlan plan = build_expansion_plan(j.at("n_layers").get<int>(), j.at("period").get<int>(),
                                            parse_strategy(j.at("strategy").get<std::string>()),
                                            ic, dc);
  if (j.contains("expanded_indices") &&
      j.at("expanded_indices").get<std::vector<int>>() != plan.expanded_indices) {
    fail(ErrorKind::kIo, "checkpoint: plan expanded_indices inconsistent with period");
  }
  return plan;
}

std::string plan_to_json_text(const ExpansionPlan& plan) { return plan_to_json(plan).dump(2); }

ExpansionPlan plan_from_json_text(const std::string& text) {
  try {
    return plan_from_json(json::parse(text));
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, std::string("plan json: ") + e.what());
  }
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorKind::kIo, "cannot create directory " + path.parent_path().string());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) fail(ErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::kIo, "cannot rename " + tmp.string() + ": " + ec.message());
}

namespace {

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Model& model) {
  json tensors = json::array();
  std::string blob;
  blob.reserve(static_cast<std::size_t>(model.store.parameter_count()) * 4);
  for (const auto& [name, e] : model.store) {
    const std::size_t offset = blob.size();
    for (const float v : e.tensor.data()) {
      const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(v));
      char bytes[4];
      std::memcpy(bytes, &bits, 4);
      blob.append(bytes, 4);
    }
    tensors.push_back(json{{"name", name},
                           {"shape", e.tensor.shape()},
                           {"dtype", "f32"},
                           {"offset", offset},
                           {"byte_length", blob.size() - offset},
                           {"frozen", e.frozen}});
  }
  json manifest{{"format", "controlllm-checkpoint"},
                {"version", 1},
                {"model", spec_to_json(model.spec)},
                {"tensors", std::move(tensors)}};
  if (model.plan) manifest["plan"] = plan_to_json(*model.plan);
  write_file_atomic(dir / "weights.bin", blob);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Model load_checkpoint(const fs::path& dir) {
  const std::string blob = read_file(dir / "weights.bin");
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, "checkpoint manifest: " + std::string(e.what()));
  }
  Model model;
  try {
    model.spec = spec_from_json(manifest.at("model"));
    if (manifest.contains("plan")) model.plan = plan_from_json(manifest.at("plan"));
    std::size_t covered = 0;
    for (const auto& t : manifest.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      if (t.at("dtype").get<std::string>() != "f32") {
        fail(ErrorKind::kIo, "checkpoint: tensor '" + name + "' has unsupported dtype");
      }
      const auto shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto length = t.at("byte_length").get<std::size_t>();
      if (length != static_cast<std::size_t>(shape_numel(shape)) * 4) {
        fail(ErrorKind::kIo, "checkpoint: tensor '" + name + "' byte_length disagrees with shape");
      }
      if (offset > blob.size() || length > blob.size() - offset) {
        fail(ErrorKind::kIo, "checkpoint: tensor '" + name + "' extends past end of weights.bin (" +
                                 std::to_string(blob.size()) + " bytes)");
      }
      std::vector<float> values(length / 4);
      for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, blob.data() + offset + 4 * i, 4);
        values[i] = std::bit_cast<float>(to_little(bits));
      }
      model.store.add(name, Tensor(shape, std::move(values)), t.at("frozen").get<bool>());
      covered += length;
    }
    if (covered != blob.size()) {
      fail(ErrorKind::kIo, "checkpoint: manifest covers " + std::to_string(covered) + " of " +
                               std::to_string(blob.size()) + " bytes in weights.bin");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, "checkpoint manifest: " + std::string(e.what()));
  }
  return model;
}

}  // namespace cllm
