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

#include <cmath>
#include <span>
#include <vector>

#include "wbseg/parallel.hpp"
#include "wbseg/volume.hpp"

namespace wbseg {

enum class Interp { trilinear, nearest };

/// Trilinear sample at continuous voxel index; corners outside the grid
/// contribute `oob`.
template <typename Scalar>
double sample_trilinear(const Volume<Scalar>& v, const Eigen::Vector3d& idx,
                        double oob = 0.0) {
  const int nx = v.grid.dims[0], ny = v.grid.dims[1], nz = v.grid.dims[2];
  const double fx = std::floor(idx[0]), fy = std::floor(idx[1]),
               fz = std::floor(idx[2]);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy),
            z0 = static_cast<int>(fz);
  const double wx = idx[0] - fx, wy = idx[1] - fy, wz = idx[2] - fz;

  auto value = [&](int x, int y, int z) -> double {
    if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return oob;
    return static_cast<double>(v.data[v.grid.index(x, y, z)]);
  };

  const double c00 = value(x0, y0, z0) * (1 - wx) + value(x0 + 1, y0, z0) * wx;
  const double c10 = value(x0, y0 + 1, z0) * (1 - wx) + value(x0 + 1, y0 + 1, z0) * wx;
  const double c01 = value(x0, y0, z0 + 1) * (1 - wx) + value(x0 + 1, y0, z0 + 1) * wx;
  const double c11 = value(x0, y0 + 1, z0 + 1) * (1 - wx) + value(x0 + 1, y0 + 1, z0 + 1) * wx;
  const double c0 = c00 * (1 - wy) + c10 * wy;
  const double c1 = c01 * (1 - wy) + c11 * wy;
  return c0 * (1 - wz) + c1 * wz;
}

template <typename Scalar>
double sample_nearest(const Volume<Scalar>& v, const Eigen::Vector3d& idx,
                      double oob = 0.0) {
  const int x = static_cast<int>(std::llround(idx[0]));
  const int y = static_cast<int>(std::llround(idx[1]));
  const int z = static_cast<int>(std::llround(idx[2]));
  if (x < 0 || y < 0 || z < 0 || x >= v.grid.dims[0] || y >= v.grid.dims[1] ||
      z >= v.grid.dims[2])
    return oob;
  return static_cast<double>(v.data[v.grid.index(x, y, z)]);
}

template <typename Scalar>
double sample(const Volume<Scalar>& v, const Eigen::Vector3d& idx, Interp interp,
              double oob = 0.0) {
  return interp == Interp::trilinear ? sample_trilinear(v, idx, oob)
                                     : sample_nearest(v, idx, oob);
}

/// True if the continuous index lies inside the voxel-centre hull.
inline bool index_in_bounds(const Grid& g, const Eigen::Vector3d& idx) {
  return idx[0] >= 0 && idx[1] >= 0 && idx[2] >= 0 && idx[0] <= g.dims[0] - 1 &&
         idx[1] <= g.dims[1] - 1 && idx[2] <= g.dims[2] - 1;
}

/// Sample `v` at the voxel centres of `target` mapped through world space.
/// Out-of-bounds voxels receive `oob` (default 0, background signal).
template <typename Scalar>
Volume<Scalar> resample(const Volume<Scalar>& v, const Grid& target,
                        Interp interp = Interp::trilinear, double oob = 0.0) {
  target.validate();
  v.grid.validate();
  Volume<Scalar> out(target, v.unit);
  const int nx = target.dims[0], ny = target.dims[1];
  std::atomic<std::int64_t> inside{0};
  parallel_for(target.voxels(), [&](std::int64_t b, std::int64_t e) {
    std::int64_t local_inside = 0;
    for (std::int64_t i = b; i < e; ++i) {
      const int x = static_cast<int>(i % nx);
      const int y = static_cast<int>((i / nx) % ny);
      const int z = static_cast<int>(i / (static_cast<std::int64_t>(nx) * ny));
      const Eigen::Vector3d world = target.index_to_world(x, y, z);
      const Eigen::Vector3d idx = v.grid.world_to_index(world);
      if (index_in_bounds(v.grid, idx)) ++local_inside;
      out.data[i] = static_cast<Scalar>(sample(v, idx, interp, oob));
    }
    inside.fetch_add(local_inside);
  });
  const std::int64_t n = target.voxels();
  if (inside.load() == 0)
    log_warn("resample: target grid does not overlap the source in world space");
  else if (inside.load() < n)
    log_warn("resample: partial world-space overlap (" +
             std::to_string(n - inside.load()) + "/" + std::to_string(n) +
             " voxels outside)");
  return out;
}

/// Normalised 1-D Gaussian taps with radius ceil(3*sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& w : k) w /= sum;
  return k;
}

enum class SigmaUnit { voxel, mm };

/// Separable Gaussian smoothing, clamp-to-edge boundaries; sigma 0 on an
/// axis is a pass-through.
template <typename Scalar>
Volume<Scalar> gaussian_smooth(const Volume<Scalar>& v, Eigen::Vector3d sigma,
                               SigmaUnit unit = SigmaUnit::voxel) {
  if ((sigma.array() < 0).any()) throw InvalidInput("gaussian_smooth: sigma < 0");
  if (unit == SigmaUnit::mm) sigma = (sigma.array() / v.grid.spacing.array()).matrix();

  Volume<Scalar> out = v;
  const int nx = v.grid.dims[0], ny = v.grid.dims[1], nz = v.grid.dims[2];
  const int n[3] = {nx, ny, nz};
  const std::int64_t stride[3] = {1, nx, static_cast<std::int64_t>(nx) * ny};

  for (int axis = 0; axis < 3; ++axis) {
    if (sigma[axis] <= 0) continue;
    const std::vector<double> kernel = gaussian_kernel(sigma[axis]);
    const int radius = static_cast<int>(kernel.size() / 2);
    const int len = n[axis];
    Volume<Scalar> tmp(v.grid, v.unit);
    const std::int64_t lines = v.grid.voxels() / len;
    parallel_for(lines, [&](std::int64_t b, std::int64_t e) {
      for (std::int64_t line = b; line < e; ++line) {
        // Decompose the line id into the two non-axis coordinates.
        const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
        const std::int64_t c1 = line % n[a1];
        const std::int64_t c2 = line / n[a1];
        const std::int64_t base = c1 * stride[a1] + c2 * stride[a2];
        for (int i = 0; i < len; ++i) {
          double acc = 0;
          for (int t = -radius; t <= radius; ++t) {
            const int j = std::clamp(i + t, 0, len - 1);
            acc += kernel[t + radius] *
                   static_cast<double>(out.data[base + j * stride[axis]]);
          }
          tmp.data[base + i * stride[axis]] = static_cast<Scalar>(acc);
        }
      }
    });
    out.data.swap(tmp.data);
  }
  return out;
}

/// Multi-resolution pyramid level: smoothed + shrunk copy of the input.
template <typename Scalar = float>
struct Pyramid {
  struct Level {
    Volume<Scalar> volume;
    int shrink = 1;
    double sigma = 0;
  };
  std::vector<Level> levels;  // coarsest first
};

/// Grid of a shrink-by-integer level: ceil(dims/shrink) voxels, spacing
/// scaled, voxel (0,0,0) centre kept in place.
inline Grid shrink_grid(const Grid& g, int shrink) {
  Grid out = g;
  for (int a = 0; a < 3; ++a) {
    out.dims[a] = (g.dims[a] + shrink - 1) / shrink;
    out.spacing[a] = g.spacing[a] * shrink;
  }
  return out;
}

template <typename Scalar>
Pyramid<Scalar> build_pyramid(const Volume<Scalar>& v, std::span<const int> shrinks,
                              std::span<const double> sigmas) {
  if (shrinks.size() != sigmas.size())
    throw InvalidInput("build_pyramid: shrink and sigma schedules differ in length");
  if (shrinks.empty()) throw InvalidInput("build_pyramid: empty schedule");
  for (std::size_t i = 0; i + 1 < shrinks.size(); ++i)
    if (shrinks[i] <= shrinks[i + 1])
      throw InvalidInput("build_pyramid: shrink factors must strictly decrease");
  if (shrinks.back() != 1)
    throw InvalidInput("build_pyramid: final shrink factor must be 1");

  Pyramid<Scalar> p;
  p.levels.reserve(shrinks.size());
  for (std::size_t i = 0; i < shrinks.size(); ++i) {
    typename Pyramid<Scalar>::Level level;
    level.shrink = shrinks[i];
    level.sigma = sigmas[i];
    if (shrinks[i] == 1 && sigmas[i] == 0) {
      level.volume = v;
    } else {
      const Volume<Scalar> smoothed =
          gaussian_smooth(v, Eigen::Vector3d::Constant(sigmas[i]), SigmaUnit::voxel);
      level.volume = shrinks[i] == 1
                         ? smoothed
                         : resample(smoothed, shrink_grid(v.grid, shrinks[i]));
    }
    p.levels.push_back(std::move(level));
  }
  return p;
}

}  // namespace wbseg
