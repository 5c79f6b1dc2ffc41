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

/* C interface of libcontrolllm. All handles are opaque; every call that can
 * fail returns a cllm_status and records a message retrievable with
 * cllm_last_error() on the calling thread. */

#ifndef CONTROLLLM_C_API_H_
#define CONTROLLLM_C_API_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CLLM_API __declspec(dllexport)
#elif defined(CLLM_BUILDING_LIBRARY)
#define CLLM_API __attribute__((visibility("default")))
#else
#define CLLM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cllm_status {
  CLLM_OK = 0,
  CLLM_ERR_INVALID_ARGUMENT = 1,
  CLLM_ERR_CONFIG = 2,
  CLLM_ERR_SHAPE = 3,
  CLLM_ERR_NON_FINITE = 4,
  CLLM_ERR_CONTRACT = 5,
  CLLM_ERR_IO = 6,
  CLLM_ERR_RUNTIME = 7
} cllm_status;

typedef struct cllm_config cllm_config;
typedef struct cllm_model cllm_model;

CLLM_API const char* cllm_version(void);
CLLM_API const char* cllm_status_name(cllm_status status);
/* Message of the last failed call on this thread; "" if none. */
CLLM_API const char* cllm_last_error(void);

/* Flat key=value settings. Explicit cllm_config_set calls win over values
 * merged from a file, regardless of order. */
CLLM_API cllm_status cllm_config_create(cllm_config** out);
CLLM_API void cllm_config_destroy(cllm_config* config);
CLLM_API cllm_status cllm_config_set(cllm_config* config, const char* key, const char* value);
CLLM_API cllm_status cllm_config_merge_file(cllm_config* config, const char* path);

/* Runs a subcommand: pretrain, expand, finetune, eval, probe, merge, sweep,
 * cf-experiment. On success *output (may be NULL) receives a summary that
 * stays valid until the next call on this thread. */
CLLM_API cllm_status cllm_run(const cllm_config* config, const char* command,
                              const char** output);

CLLM_API cllm_status cllm_model_load(const char* checkpoint_dir, cllm_model** out);
CLLM_API void cllm_model_destroy(cllm_model* model);
CLLM_API cllm_status cllm_model_save(const cllm_model* model, const char* checkpoint_dir);
CLLM_API cllm_status cllm_model_parameter_count(const cllm_model* model, int64_t* out);
CLLM_API cllm_status cllm_model_vocab_size(const cllm_model* model, int32_t* out);
/* Number of expanded layers (0 for a plain model). */
CLLM_API cllm_status cllm_model_expanded_layers(const cllm_model* model, int32_t* out);
/* Logits for a [batch, seq] id array into out[batch * seq * vocab]. */
CLLM_API cllm_status cllm_model_forward(const cllm_model* model, const int32_t* ids,
                                        int32_t batch, int32_t seq, float* out,
                                        size_t out_len);

#ifdef __cplusplus
}
#endif

#endif /* CONTROLLLM_C_API_H_ */
