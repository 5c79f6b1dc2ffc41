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

#include "controlllm/c_api.h"

#include <new>
#include <string>

#include "controlllm/checkpoint.hpp"
#include "controlllm/harness.hpp"

struct cllm_config {
  cllm::KeyValueConfig values;
};

struct cllm_model {
  cllm::Model model;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_output;

cllm_status status_of(cllm::ErrorKind kind) {
  switch (kind) {
    case cllm::ErrorKind::kConfig: return CLLM_ERR_CONFIG;
    case cllm::ErrorKind::kShape: return CLLM_ERR_SHAPE;
    case cllm::ErrorKind::kNonFinite: return CLLM_ERR_NON_FINITE;
    case cllm::ErrorKind::kContract: return CLLM_ERR_CONTRACT;
    case cllm::ErrorKind::kIo: return CLLM_ERR_IO;
    case cllm::ErrorKind::kRuntime: return CLLM_ERR_RUNTIME;
  }
  return CLLM_ERR_RUNTIME;
}

template <typename F>
cllm_status guarded(F&& f) {
  try {
    f();
    g_error.clear();
    return CLLM_OK;
  } catch (const cllm::Error& e) {
    g_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
    return CLLM_ERR_RUNTIME;
  } catch (const std::exception& e) {
    g_error = e.what();
    return CLLM_ERR_RUNTIME;
  }
}

cllm_status invalid(const char* what) {
  g_error = what;
  return CLLM_ERR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* cllm_version(void) { return "0.1.0"; }

const char* cllm_status_name(cllm_status status) {
  switch (status) {
    case CLLM_OK: return "ok";
    case CLLM_ERR_INVALID_ARGUMENT: return "invalid argument";
    case CLLM_ERR_CONFIG: return "config error";
    case CLLM_ERR_SHAPE: return "shape error";
    case CLLM_ERR_NON_FINITE: return "non-finite value";
    case CLLM_ERR_CONTRACT: return "contract violation";
    case CLLM_ERR_IO: return "i/o error";
    case CLLM_ERR_RUNTIME: return "runtime error";
  }
  return "unknown status";
}

const char* cllm_last_error(void) { return g_error.c_str(); }

cllm_status cllm_config_create(cllm_config** out) {
  if (out == nullptr) return invalid("cllm_config_create: null output");
  return guarded([&] { *out = new cllm_config(); });
}

void cllm_config_destroy(cllm_config* config) { delete config; }

cllm_status cllm_config_set(cllm_config* config, const char* key, const char* value) {
  if (config == nullptr || key == nullptr || value == nullptr) {
    return invalid("cllm_config_set: null argument");
  }
  return guarded([&] { config->values.set(key, value); });
}

cllm_status cllm_config_merge_file(cllm_config* config, const char* path) {
  if (config == nullptr || path == nullptr) return invalid("cllm_config_merge_file: null argument");
  return guarded([&] { config->values.merge_file(path); });
}

cllm_status cllm_run(const cllm_config* config, const char* command, const char** output) {
  if (config == nullptr || command == nullptr) return invalid("cllm_run: null argument");
  return guarded([&] {
    g_output = cllm::run_command(command, config->values);
    if (output != nullptr) *output = g_output.c_str();
  });
}

cllm_status cllm_model_load(const char* checkpoint_dir, cllm_model** out) {
  if (checkpoint_dir == nullptr || out == nullptr) return invalid("cllm_model_load: null argument");
  return guarded([&] { *out = new cllm_model{cllm::load_checkpoint(checkpoint_dir)}; });
}

void cllm_model_destroy(cllm_model* model) { delete model; }

cllm_status cllm_model_save(const cllm_model* model, const char* checkpoint_dir) {
  if (model == nullptr || checkpoint_dir == nullptr) return invalid("cllm_model_save: null argument");
  return guarded([&] { cllm::save_checkpoint(checkpoint_dir, model->model); });
}

cllm_status cllm_model_parameter_count(const cllm_model* model, int64_t* out) {
  if (model == nullptr || out == nullptr) return invalid("cllm_model_parameter_count: null argument");
  return guarded([&] { *out = model->model.store.parameter_count(); });
}

cllm_status cllm_model_vocab_size(const cllm_model* model, int32_t* out) {
  if (model == nullptr || out == nullptr) return invalid("cllm_model_vocab_size: null argument");
  *out = model->model.spec.vocab_size;
  g_error.clear();
  return CLLM_OK;
}

cllm_status cllm_model_expanded_layers(const cllm_model* model, int32_t* out) {
  if (model == nullptr || out == nullptr) return invalid("cllm_model_expanded_layers: null argument");
  const auto& plan = model->model.plan;
  *out = plan ? static_cast<int32_t>(plan->expanded_indices.size()) : 0;
  g_error.clear();
  return CLLM_OK;
}

cllm_status cllm_model_forward(const cllm_model* model, const int32_t* ids, int32_t batch,
                               int32_t seq, float* out, size_t out_len) {
  if (model == nullptr || ids == nullptr || out == nullptr) {
    return invalid("cllm_model_forward: null argument");
  }
  if (batch <= 0 || seq <= 0) return invalid("cllm_model_forward: batch and seq must be positive");
  const size_t need = static_cast<size_t>(batch) * static_cast<size_t>(seq) *
                      static_cast<size_t>(model->model.spec.vocab_size);
  if (out_len < need) return invalid("cllm_model_forward: output buffer too small");
  return guarded([&] {
    cllm::TokenBatch tokens{batch, seq, std::vector<int>(ids, ids + static_cast<size_t>(batch) * seq)};
    const cllm::Tensor logits = cllm::forward(model->model, tokens).logits;
    const auto data = logits.data();
    std::copy(data.begin(), data.end(), out);
  });
}

}  // extern "C"
