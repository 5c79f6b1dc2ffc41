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

#ifndef CONTROLLLM_TENSOR_HPP_
#define CONTROLLLM_TENSOR_HPP_

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "controlllm/error.hpp"

namespace cllm {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major tensor. `version()` increments on every mutable access so
// that graphs holding a reference can detect writes made after forward.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
    validate_shape();
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape_)) {
      fail(ErrorKind::kShape, "tensor data length " +
                                  std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
    for (const T v : data) {
      if (!std::isfinite(v)) {
        fail(ErrorKind::kNonFinite, "non-finite value in tensor construction");
      }
    }
    data_ = std::move(data);
  }

  const Shape& shape() const noexcept { return shape_; }
  std::int64_t numel() const noexcept {
    return static_cast<std::int64_t>(data_.size());
  }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> mutable_data() noexcept {
    ++version_;
    return data_;
  }
  const std::vector<T>& vec() const noexcept { return data_; }

  T operator[](std::size_t i) const { return data_[i]; }

  std::uint64_t version() const noexcept { return version_; }

  bool all_finite() const {
    for (const T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape_);
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < data_.size(); ++i) {
      dst[i] = static_cast<U>(data_[i]);
    }
    return out;
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    for (const auto e : shape_) {
      if (e <= 0) {
        fail(ErrorKind::kShape,
             "tensor extents must be positive, got " + shape_str(shape_));
      }
    }
  }

  Shape shape_;
  std::vector<T> data_;
  std::uint64_t version_ = 0;
};

using Tensor = BasicTensor<float>;

}  // namespace cllm

#endif  // CONTROLLLM_TENSOR_HPP_
