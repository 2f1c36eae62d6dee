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

// Test-side finite-difference oracle. Independent of the reverse-mode tape:
// it only re-evaluates a forward loss function under point perturbations.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

namespace tinytts::testing {

inline constexpr double kFdStep = 1e-6;

// Central difference d(loss)/d(x[i]) with the buffer restored afterwards.
template <class LossFn>
double central_difference(LossFn&& loss, std::vector<double>& x, std::size_t i,
                          double h = kFdStep) {
  const double orig = x[i];
  x[i] = orig + h;
  const double fp = loss();
  x[i] = orig - h;
  const double fm = loss();
  x[i] = orig;
  return (fp - fm) / (2.0 * h);
}

inline bool grad_close(double fd, double ad, double rel_tol = 1e-5, double abs_floor = 1e-8) {
  return std::abs(fd - ad) <= std::max(abs_floor, rel_tol * std::max(std::abs(fd), std::abs(ad)));
}

struct FdReport {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_rel_err = 0;

  void observe(double fd, double ad, double rel_tol = 1e-5, double abs_floor = 1e-8) {
    ++checked;
    if (!grad_close(fd, ad, rel_tol, abs_floor)) ++failures;
    const double denom = std::max({std::abs(fd), std::abs(ad), abs_floor});
    max_rel_err = std::max(max_rel_err, std::abs(fd - ad) / denom);
  }

  bool ok() const { return checked > 0 && failures == 0; }
};

// Checks every element of x against the reverse-mode gradient `ad`.
template <class LossFn>
FdReport check_gradient(LossFn&& loss, std::vector<double>& x, const std::vector<double>& ad,
                        double rel_tol = 1e-5, double abs_floor = 1e-8) {
  FdReport rep;
  for (std::size_t i = 0; i < x.size(); ++i)
    rep.observe(central_difference(loss, x, i), ad[i], rel_tol, abs_floor);
  return rep;
}

}  // namespace tinytts::testing
