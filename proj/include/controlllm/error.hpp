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

#ifndef CONTROLLLM_ERROR_HPP_
#define CONTROLLLM_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace cllm {

enum class ErrorKind {
  kShape,       // operand shapes disagree
  kNonFinite,   // NaN or Inf produced
  kConfig,      // invalid user-supplied configuration
  kContract,    // API misuse (frozen gradient, stale graph, ...)
  kIo,          // filesystem or format failure
  kRuntime,     // training abort and similar
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace cllm

#endif  // CONTROLLLM_ERROR_HPP_
