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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "controlllm/tensor.hpp"

using cllm::Error;
using cllm::ErrorKind;
using cllm::Tensor;

TEST_CASE("shape and data length must agree") {
  Tensor t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.dim(1) == 3);
  CHECK(t[5] == 6.0f);
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>{1, 2}), Error);
}

TEST_CASE("non-positive extents are rejected") {
  CHECK_THROWS_AS(Tensor({0, 3}), Error);
  CHECK_THROWS_AS(Tensor({2, -1}), Error);
}

TEST_CASE("non-finite values are rejected at construction") {
  const float nan = std::numeric_limits<float>::quiet_NaN();
  const float inf = std::numeric_limits<float>::infinity();
  try {
    Tensor({2}, std::vector<float>{1.0f, nan});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNonFinite);
  }
  CHECK_THROWS_AS(Tensor({1}, std::vector<float>{inf}), Error);
}

TEST_CASE("mutation bumps the version counter") {
  Tensor t({3}, 1.0f);
  const auto v0 = t.version();
  t.mutable_data()[0] = 2.0f;
  CHECK(t.version() > v0);
  CHECK(t.all_finite());
}

TEST_CASE("casting preserves values") {
  Tensor t({2}, std::vector<float>{0.5f, -1.25f});
  const auto d = t.cast<double>();
  CHECK(d[0] == 0.5);
  CHECK(d[1] == -1.25);
  CHECK(d.cast<float>() == t);
}
