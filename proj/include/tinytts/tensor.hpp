// Copyright (c) 2026 The tinytts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tinytts {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& dims) {
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  return n;
}

inline std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << "]";
  return os.str();
}

// Dense row-major 64-bit tensor. Values are immutable once an op has produced
// them; only the gradient buffer is written after creation.
struct Tensor {
  Shape dims;
  std::vector<double> data;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

  Tensor() = default;

  Tensor(Shape d, std::vector<double> values, bool rg = false)
      : dims(std::move(d)), data(std::move(values)), requires_grad(rg) {
    if (shape_size(dims) != data.size())
      throw std::invalid_argument("tensor: shape " + shape_str(dims) + " does not match " +
                                  std::to_string(data.size()) + " values");
  }

  static Tensor zeros(Shape d, bool rg = false) {
    std::size_t n = shape_size(d);
    return Tensor(std::move(d), std::vector<double>(n, 0.0), rg);
  }

  static Tensor scalar(double v, bool rg = false) { return Tensor({1}, {v}, rg); }

  static Tensor row_vector(std::vector<double> v, bool rg = false) {
    std::size_t n = v.size();
    return Tensor({1, n}, std::move(v), rg);
  }

  static Tensor column_vector(std::vector<double> v, bool rg = false) {
    std::size_t n = v.size();
    return Tensor({n, 1}, std::move(v), rg);
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return dims.size(); }

  std::size_t rows() const {
    require_rank2("rows");
    return dims[0];
  }
  std::size_t cols() const {
    require_rank2("cols");
    return dims[1];
  }

  double at(std::size_t r, std::size_t c) const { return data[r * dims[1] + c]; }

  void ensure_grad() {
    if (!grad) grad.emplace(data.size(), 0.0);
  }

 private:
  void require_rank2(const char* what) const {
    if (dims.size() != 2)
      throw std::logic_error(std::string(what) + ": tensor rank is " + std::to_string(dims.size()));
  }
};

// Named persistent weight buffer. Lives across training steps; graphs bind to
// it by pointer and accumulate gradients into `grad` on backward.
struct Parameter {
  std::string name;
  Shape dims;
  std::vector<double> value;
  std::vector<double> grad;
  bool trainable = true;

  Parameter(std::string n, Shape d, std::vector<double> v)
      : name(std::move(n)), dims(std::move(d)), value(std::move(v)), grad(value.size(), 0.0) {
    if (shape_size(dims) != value.size())
      throw std::invalid_argument("parameter " + name + ": shape/value size mismatch");
  }

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

}  // namespace tinytts
