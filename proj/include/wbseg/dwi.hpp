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

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <vector>

#include "wbseg/parallel.hpp"
#include "wbseg/volume.hpp"

namespace wbseg {

/// Reference value for ADC normalisation, mm^2/s.
constexpr double kAdcScale = 3.5e-3;

/// Signal floor applied before taking logarithms in the model fit.
constexpr double kLogEps = 1e-6;

/// Co-registered diffusion-weighted acquisitions at two or more b-values.
struct BValueSeries {
  std::vector<double> bvalues;   // s/mm^2
  std::vector<VolumeF> volumes;  // one signal volume per b-value

  void validate() const {
    if (bvalues.size() != volumes.size())
      throw InvalidInput("b-value series: count mismatch between b-values and volumes");
    if (bvalues.size() < 2)
      throw InvalidInput("b-value series: at least 2 b-values required");
    std::set<double> distinct(bvalues.begin(), bvalues.end());
    if (distinct.size() < 2)
      throw InvalidInput("b-value series: at least 2 distinct b-values required");
    for (double b : bvalues)
      if (b < 0) throw InvalidInput("b-value series: b < 0");
    for (const auto& v : volumes)
      require_same_grid(v, volumes.front(), "b-value series");
  }
};

/// ADC and model intercept (extrapolated signal at b = 0). Negative ADC
/// values are preserved, never clipped.
struct FitResult {
  VolumeF adc;
  VolumeF s0;
};

/// Per-voxel least-squares line fit of ln(S) against b: slope = -ADC,
/// intercept = ln(S0). Exact inversion when only two b-values are present.
inline FitResult fit_monoexponential(const BValueSeries& series) {
  series.validate();
  const std::size_t nb = series.bvalues.size();
  const Grid& grid = series.volumes.front().grid;

  double mean_b = 0;
  for (double b : series.bvalues) mean_b += b;
  mean_b /= static_cast<double>(nb);
  double var_b = 0;
  for (double b : series.bvalues) var_b += (b - mean_b) * (b - mean_b);

  FitResult result{VolumeF(grid, Unit::adc), VolumeF(grid, Unit::signal)};
  parallel_for(grid.voxels(), [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      double mean_y = 0;
      for (std::size_t k = 0; k < nb; ++k)
        mean_y += std::log(std::max<double>(series.volumes[k].data[i], kLogEps));
      mean_y /= static_cast<double>(nb);
      double cov = 0;
      for (std::size_t k = 0; k < nb; ++k) {
        const double y =
            std::log(std::max<double>(series.volumes[k].data[i], kLogEps));
        cov += (series.bvalues[k] - mean_b) * (y - mean_y);
      }
      const double slope = cov / var_b;
      result.adc.data[i] = static_cast<float>(-slope);
      result.s0.data[i] = static_cast<float>(std::exp(mean_y - slope * mean_b));
    }
  });
  return result;
}

/// ADC normalisation: divide by 3.5e-3 mm^2/s.
inline VolumeF scale_adc(const VolumeF& adc) {
  if (adc.unit != Unit::adc)
    throw InvalidInput("scale_adc: input is not ADC-tagged");
  VolumeF out = adc;
  out.data = adc.data / static_cast<float>(kAdcScale);
  out.unit = Unit::dimensionless;
  return out;
}

/// S0 normalisation: ln(S0) divided by the volume-wide maximum of ln(S0);
/// S0 is clamped to >= 1 first so the logarithm is defined and non-negative.
/// When a body mask is given the maximum is taken over mask voxels only.
inline VolumeF scale_s0(const VolumeF& s0,
                        const std::optional<VolumeF>& body_mask = std::nullopt) {
  VolumeF out = s0;
  for (std::int64_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::log(std::max(1.0f, out.data[i]));

  double max_log = 0;
  if (body_mask) {
    require_same_grid(*body_mask, s0, "scale_s0");
    bool any = false;
    for (std::int64_t i = 0; i < out.data.size(); ++i) {
      if (body_mask->data[i] != 0) {
        max_log = any ? std::max<double>(max_log, out.data[i]) : out.data[i];
        any = true;
      }
    }
    if (!any) throw InvalidInput("scale_s0: empty body mask");
  } else {
    max_log = out.data.maxCoeff();
  }
  if (max_log <= 0)
    throw InvalidInput("scale_s0: degenerate S0 volume (max log <= 0)");

  out.data /= static_cast<float>(max_log);
  out.unit = Unit::dimensionless;
  return out;
}

}  // namespace wbseg
