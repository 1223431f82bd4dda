/*
 * wbseg : weakly-supervised soft-label segmentation for whole-body DWI
 *
 * Copyright 2026 the wbseg contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "wbseg/error.hpp"

namespace wbseg {

struct SimplexResult {
  Eigen::VectorXd x;
  double fmin = 0;
  int iterations = 0;
  bool converged = false;
};

struct SimplexOptions {
  int max_iterations = 200;
  double tolerance = 1e-6;  // relative simplex-size stopping rule
};

/// Nelder-Mead downhill simplex. The initial simplex is `x0` plus one vertex
/// per coordinate displaced by `steps[i]`. Deterministic; throws NumericError
/// on a non-finite objective value.
inline SimplexResult nelder_mead(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x0, const Eigen::VectorXd& steps,
    const SimplexOptions& opts = {}) {
  const int n = static_cast<int>(x0.size());
  if (steps.size() != n) throw InvalidInput("nelder_mead: step size mismatch");

  auto eval = [&](const Eigen::VectorXd& x) {
    const double v = f(x);
    if (!std::isfinite(v))
      throw NumericError("nelder_mead: objective returned a non-finite value");
    return v;
  };

  std::vector<Eigen::VectorXd> vertex(static_cast<std::size_t>(n) + 1, x0);
  std::vector<double> value(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i < n; ++i) vertex[static_cast<std::size_t>(i) + 1][i] += steps[i];
  for (std::size_t i = 0; i < vertex.size(); ++i) value[i] = eval(vertex[i]);

  std::vector<std::size_t> order(vertex.size());
  std::iota(order.begin(), order.end(), 0);

  constexpr double kReflect = 1.0, kExpand = 2.0, kContract = 0.5, kShrink = 0.5;
  SimplexResult result;

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return value[a] < value[b]; });
    const std::size_t best = order.front(), worst = order.back();

    // Relative simplex size against the characteristic steps.
    double spread = 0;
    for (std::size_t i = 1; i < order.size(); ++i)
      for (int d = 0; d < n; ++d)
        spread = std::max(spread, std::abs(vertex[order[i]][d] - vertex[best][d]) /
                                      std::max(std::abs(steps[d]), 1e-12));
    const double fspread = (value[worst] - value[best]) /
                           (std::abs(value[best]) + std::abs(value[worst]) + 1e-30);
    result.iterations = iter;
    if (spread < opts.tolerance || fspread < opts.tolerance) {
      result.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i + 1 < order.size(); ++i) centroid += vertex[order[i]];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd reflected = centroid + kReflect * (centroid - vertex[worst]);
    const double f_reflected = eval(reflected);

    if (f_reflected < value[order[0]]) {
      const Eigen::VectorXd expanded = centroid + kExpand * (reflected - centroid);
      const double f_expanded = eval(expanded);
      if (f_expanded < f_reflected) {
        vertex[worst] = expanded;
        value[worst] = f_expanded;
      } else {
        vertex[worst] = reflected;
        value[worst] = f_reflected;
      }
    } else if (f_reflected < value[order[order.size() - 2]]) {
      vertex[worst] = reflected;
      value[worst] = f_reflected;
    } else {
      const bool outside = f_reflected < value[worst];
      const Eigen::VectorXd contracted =
          outside ? centroid + kContract * (reflected - centroid)
                  : centroid - kContract * (centroid - vertex[worst]);
      const double f_contracted = eval(contracted);
      if (f_contracted < std::min(f_reflected, value[worst])) {
        vertex[worst] = contracted;
        value[worst] = f_contracted;
      } else {
        for (std::size_t i = 1; i < order.size(); ++i) {
          vertex[order[i]] = vertex[best] + kShrink * (vertex[order[i]] - vertex[best]);
          value[order[i]] = eval(vertex[order[i]]);
        }
      }
    }
  }

  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return value[a] < value[b]; });
  result.x = vertex[order.front()];
  result.fmin = value[order.front()];
  return result;
}

}  // namespace wbseg
