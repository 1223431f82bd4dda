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
#include <cstdint>
#include <sstream>
#include <string>

#include "wbseg/error.hpp"

namespace wbseg {

/// Physical interpretation of voxel values.
enum class Unit {
  signal,         // raw DWI signal
  adc,            // apparent diffusion coefficient, mm^2/s
  probability,    // per-class probability in [0, 1]
  mask,           // binary {0, 1}
  displacement,   // displacement component, mm
  dimensionless,  // normalised/scaled quantities
};

inline std::string to_string(Unit u) {
  switch (u) {
    case Unit::signal: return "signal";
    case Unit::adc: return "adc";
    case Unit::probability: return "probability";
    case Unit::mask: return "mask";
    case Unit::displacement: return "displacement";
    case Unit::dimensionless: return "dimensionless";
  }
  return "signal";
}

inline Unit unit_from_string(const std::string& s) {
  if (s == "signal") return Unit::signal;
  if (s == "adc") return Unit::adc;
  if (s == "probability") return Unit::probability;
  if (s == "mask") return Unit::mask;
  if (s == "displacement") return Unit::displacement;
  if (s == "dimensionless") return Unit::dimensionless;
  throw FormatError("unknown unit tag '" + s + "'");
}

/// Voxel lattice with physical geometry. World coordinates are millimetres;
/// voxel (0,0,0) has its centre at `origin` and axis i advances along
/// orientation column i scaled by spacing[i].
struct Grid {
  Eigen::Vector3i dims = Eigen::Vector3i::Zero();
  Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Matrix3d orientation = Eigen::Matrix3d::Identity();

  Grid() = default;
  Grid(int nx, int ny, int nz, double sx = 1, double sy = 1, double sz = 1)
      : dims(nx, ny, nz), spacing(sx, sy, sz) {}

  std::int64_t voxels() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }

  std::int64_t index(int x, int y, int z) const {
    return x + static_cast<std::int64_t>(dims[0]) *
                   (y + static_cast<std::int64_t>(dims[1]) * z);
  }

  Eigen::Vector3d index_to_world(const Eigen::Vector3d& idx) const {
    return origin + orientation * (spacing.asDiagonal() * idx);
  }
  Eigen::Vector3d index_to_world(int x, int y, int z) const {
    return index_to_world(Eigen::Vector3d(x, y, z));
  }

  /// Continuous voxel index of a world point (orientation is orthonormal,
  /// so its transpose inverts it).
  Eigen::Vector3d world_to_index(const Eigen::Vector3d& world) const {
    return ((orientation.transpose() * (world - origin)).array() /
            spacing.array())
        .matrix();
  }

  Eigen::Vector3d world_center() const {
    return index_to_world((dims.cast<double>() - Eigen::Vector3d::Ones()) / 2.0);
  }

  bool same_geometry(const Grid& o, double tol_mm = 1e-5) const {
    return dims == o.dims &&
           ((spacing - o.spacing).cwiseAbs().maxCoeff() <= tol_mm) &&
           ((origin - o.origin).cwiseAbs().maxCoeff() <= tol_mm) &&
           ((orientation - o.orientation).cwiseAbs().maxCoeff() <= 1e-5);
  }

  void validate() const {
    if ((dims.array() < 1).any())
      throw InvalidInput("grid dims must be >= 1 per axis");
    if (!(spacing.array() > 0).all())
      throw InvalidInput("grid spacing must be > 0 per axis");
    const Eigen::Matrix3d gram =
        orientation.transpose() * orientation - Eigen::Matrix3d::Identity();
    if (gram.cwiseAbs().maxCoeff() > 1e-6)
      throw InvalidInput("grid orientation is not orthonormal within 1e-6");
  }
};

/// Dense scalar field over a Grid; x varies fastest, then y, then z.
/// Immutable by convention after construction: operations return new volumes.
template <typename Scalar = float>
struct Volume {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Grid grid;
  Array data;
  Unit unit = Unit::signal;

  Volume() = default;
  Volume(const Grid& g, Unit u) : grid(g), data(Array::Zero(g.voxels())), unit(u) {}

  static Volume zeros(const Grid& g, Unit u = Unit::signal) { return Volume(g, u); }
  static Volume constant(const Grid& g, Scalar value, Unit u = Unit::signal) {
    Volume v(g, u);
    v.data.setConstant(value);
    return v;
  }

  Scalar& at(int x, int y, int z) { return data[grid.index(x, y, z)]; }
  Scalar at(int x, int y, int z) const { return data[grid.index(x, y, z)]; }

  std::int64_t voxels() const { return grid.voxels(); }

  void validate() const {
    grid.validate();
    if (data.size() != grid.voxels())
      throw InvalidInput("volume data length does not match grid dims");
    if (unit == Unit::probability) {
      if (data.size() > 0 && (data.minCoeff() < Scalar(-1e-6) ||
                              data.maxCoeff() > Scalar(1) + Scalar(1e-6)))
        throw InvalidInput("probability volume has values outside [0, 1]");
    } else if (unit == Unit::mask) {
      for (std::int64_t i = 0; i < data.size(); ++i)
        if (data[i] != Scalar(0) && data[i] != Scalar(1))
          throw InvalidInput("mask volume has values outside {0, 1}");
    }
  }
};

using VolumeF = Volume<float>;
using VolumeD = Volume<double>;

template <typename Scalar>
void require_same_grid(const Volume<Scalar>& a, const Volume<Scalar>& b,
                       const std::string& what) {
  if (!a.grid.same_geometry(b.grid)) throw InvalidInput(what + ": grid mismatch");
}

}  // namespace wbseg
