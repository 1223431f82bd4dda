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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wbseg/error.hpp"

namespace wbseg {

/// World-coordinate affine map y = linear * x + translation (millimetres).
struct AffineTransform {
  Eigen::Matrix3d linear = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static AffineTransform identity() { return {}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return linear * p + translation;
  }

  /// this ∘ other: apply `other` first, then this.
  AffineTransform compose(const AffineTransform& other) const {
    AffineTransform out;
    out.linear = linear * other.linear;
    out.translation = linear * other.translation + translation;
    return out;
  }

  AffineTransform inverse() const {
    validate();
    AffineTransform out;
    out.linear = linear.inverse();
    out.translation = -out.linear * translation;
    return out;
  }

  void validate() const {
    if (std::abs(linear.determinant()) <= 1e-9)
      throw InvalidInput("affine transform is singular");
  }
};

/// 12-parameter encoding: 3 translations (mm), 3 rotations (rad, applied
/// Rz*Ry*Rx), 3 log-scales, 3 shears (xy, xz, yz). The map acts about a
/// fixed centre c: y = M (x - c) + c + t.
using AffineParams = Eigen::Matrix<double, 12, 1>;

/// Perturbation scale per parameter for simplex initialisation; multiplied
/// by the simplex delta.
inline AffineParams affine_characteristic_scales() {
  AffineParams s;
  s << 100, 100, 100, 0.5, 0.5, 0.5, 0.2, 0.2, 0.2, 0.1, 0.1, 0.1;
  return s;
}

inline AffineTransform affine_from_params(const AffineParams& p,
                                          const Eigen::Vector3d& center) {
  const Eigen::Vector3d t = p.segment<3>(0);
  const Eigen::Vector3d r = p.segment<3>(3);
  const Eigen::Vector3d ls = p.segment<3>(6);
  const Eigen::Vector3d h = p.segment<3>(9);

  const Eigen::Matrix3d rot =
      (Eigen::AngleAxisd(r[2], Eigen::Vector3d::UnitZ()) *
       Eigen::AngleAxisd(r[1], Eigen::Vector3d::UnitY()) *
       Eigen::AngleAxisd(r[0], Eigen::Vector3d::UnitX()))
          .toRotationMatrix();
  Eigen::Matrix3d shear = Eigen::Matrix3d::Identity();
  shear(0, 1) = h[0];
  shear(0, 2) = h[1];
  shear(1, 2) = h[2];
  const Eigen::Matrix3d m = rot * shear * ls.array().exp().matrix().asDiagonal();

  AffineTransform out;
  out.linear = m;
  out.translation = center + t - m * center;
  return out;
}

inline void save_affine(const AffineTransform& a, const AffineParams& params,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return std::string(buf);
  };
  out << "# tx ty tz rx ry rz log-sx log-sy log-sz shear-xy shear-xz shear-yz\n";
  for (int i = 0; i < 12; ++i) out << (i ? " " : "") << num(params[i]);
  out << "\n# 3x4 world affine (row-major), millimetres\n";
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out << num(a.linear(r, c)) << " ";
    out << num(a.translation[r]) << "\n";
  }
  if (!out) throw FormatError("short write to '" + path.string() + "'");
}

struct AffineFile {
  AffineTransform transform;
  AffineParams params = AffineParams::Zero();
};

inline AffineFile load_affine(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::vector<double> numbers;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    double v;
    while (ls >> v) numbers.push_back(v);
  }
  if (numbers.size() != 24)
    throw FormatError("affine file '" + path.string() + "': expected 12 parameters + 3x4 matrix");
  AffineFile f;
  for (int i = 0; i < 12; ++i) f.params[i] = numbers[static_cast<std::size_t>(i)];
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c)
      f.transform.linear(r, c) = numbers[12 + static_cast<std::size_t>(r) * 4 + c];
    f.transform.translation[r] = numbers[12 + static_cast<std::size_t>(r) * 4 + 3];
  }
  f.transform.validate();
  return f;
}

}  // namespace wbseg
