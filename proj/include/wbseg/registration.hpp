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

#include <array>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "wbseg/affine.hpp"
#include "wbseg/nelder_mead.hpp"
#include "wbseg/nifti.hpp"
#include "wbseg/resample.hpp"

namespace wbseg {

/// Dense displacement (mm) on the fixed-image grid, one volume per axis.
struct DeformationField {
  Grid grid;
  VolumeF dx, dy, dz;

  DeformationField() = default;
  explicit DeformationField(const Grid& g)
      : grid(g),
        dx(g, Unit::displacement),
        dy(g, Unit::displacement),
        dz(g, Unit::displacement) {}

  Eigen::Vector3d displacement_at_index(const Eigen::Vector3d& idx) const {
    return {sample_trilinear(dx, idx), sample_trilinear(dy, idx),
            sample_trilinear(dz, idx)};
  }

  Eigen::Vector3d displacement_at_world(const Eigen::Vector3d& w) const {
    return displacement_at_index(grid.world_to_index(w));
  }

  double max_abs() const {
    double m = 0;
    if (dx.data.size()) m = std::max<double>(m, dx.data.abs().maxCoeff());
    if (dy.data.size()) m = std::max<double>(m, dy.data.abs().maxCoeff());
    if (dz.data.size()) m = std::max<double>(m, dz.data.abs().maxCoeff());
    return m;
  }

  void validate() const {
    require_same_grid(dx, dy, "deformation field");
    require_same_grid(dx, dz, "deformation field");
    if (!dx.data.isFinite().all() || !dy.data.isFinite().all() ||
        !dz.data.isFinite().all())
      throw NumericError("deformation field has non-finite values");
  }
};

struct ChainProvenance {
  int affine_iterations = 0;
  int demons_iterations = 0;
  double initial_mse = 0;
  double after_affine_mse = 0;
  double final_mse = 0;
};

/// initial -> affine -> field, estimated in that order. Mapping a fixed-grid
/// point applies the stages in reverse: displace, then affine, then initial.
struct TransformChain {
  std::optional<AffineTransform> initial;
  AffineTransform affine;
  std::optional<DeformationField> field;
  AffineParams affine_params = AffineParams::Zero();
  ChainProvenance provenance;

  static TransformChain identity() { return {}; }

  Eigen::Vector3d map_point(const Eigen::Vector3d& w) const {
    Eigen::Vector3d p = w;
    if (field) p += field->displacement_at_world(w);
    p = affine.apply(p);
    if (initial) p = initial->apply(p);
    return p;
  }
};

/// Optimiser settings for both registration stages. The shrink factors,
/// smoothing schedule, iteration caps and tolerances follow the pipeline's
/// standard multi-resolution recipe.
struct RegistrationConfig {
  double simplex_delta = 0.005;
  std::vector<int> affine_shrinks{4, 2, 1};
  std::vector<double> affine_sigmas{4, 2, 0};
  int affine_max_iterations = 200;

  double demons_learning_rate = 2.0;
  std::vector<int> demons_shrinks{4, 2, 1};
  std::vector<double> demons_smoothing{4, 2, 0};
  int demons_convergence_window = 20;
  int demons_max_iterations = 200;
  int demons_squarings = 6;

  double tolerance = 1e-6;

  void validate() const {
    if (simplex_delta <= 0 || demons_learning_rate <= 0 || tolerance <= 0 ||
        affine_max_iterations <= 0 || demons_max_iterations <= 0 ||
        demons_convergence_window <= 0 || demons_squarings < 0)
      throw ConfigError("registration config: values must be positive");
    if (affine_shrinks.size() != affine_sigmas.size())
      throw ConfigError("registration config: affine schedules differ in length");
    if (demons_shrinks.size() != demons_smoothing.size())
      throw ConfigError("registration config: demons schedules differ in length");
  }
};

namespace detail {

struct MseAccumulator {
  double sum = 0;
  std::int64_t count = 0;
};

/// Mean squared difference between `fixed` voxels and `moving` sampled
/// through `map`; voxels whose mapped point leaves the moving grid are
/// excluded from the mean.
template <typename MapFn>
MseAccumulator mse_over_grid(const VolumeF& fixed, const VolumeF& moving,
                             MapFn&& map) {
  const Grid& g = fixed.grid;
  const int nx = g.dims[0], ny = g.dims[1];
  const std::int64_t n = g.voxels();
  const std::int64_t chunks = (n + detail::kChunk - 1) / detail::kChunk;
  std::vector<MseAccumulator> partial(static_cast<std::size_t>(chunks));
  parallel_for(n, [&](std::int64_t b, std::int64_t e) {
    MseAccumulator acc;
    for (std::int64_t i = b; i < e; ++i) {
      const int x = static_cast<int>(i % nx);
      const int y = static_cast<int>((i / nx) % ny);
      const int z = static_cast<int>(i / (static_cast<std::int64_t>(nx) * ny));
      const Eigen::Vector3d p = map(g.index_to_world(x, y, z));
      const Eigen::Vector3d idx = moving.grid.world_to_index(p);
      if (!index_in_bounds(moving.grid, idx)) continue;
      const double d = static_cast<double>(fixed.data[i]) - sample_trilinear(moving, idx);
      acc.sum += d * d;
      ++acc.count;
    }
    partial[static_cast<std::size_t>(b / detail::kChunk)] = acc;
  });
  MseAccumulator total;
  for (const auto& p : partial) {
    total.sum += p.sum;
    total.count += p.count;
  }
  return total;
}

}  // namespace detail

/// MSE between the fixed image and the transformed moving image over the
/// fixed grid, trilinear sampling, out-of-bounds voxels excluded.
inline double mse_metric(const VolumeF& fixed, const VolumeF& moving,
                         const TransformChain& chain) {
  const auto acc = detail::mse_over_grid(
      fixed, moving, [&](const Eigen::Vector3d& w) { return chain.map_point(w); });
  if (acc.count == 0)
    throw InvalidInput("mse_metric: no overlapping voxels between the grids");
  return acc.sum / static_cast<double>(acc.count);
}

struct AffineResult {
  AffineTransform transform;
  AffineParams params = AffineParams::Zero();  // optimiser-frame parameters
  int iterations = 0;
  double initial_mse = 0;
  double final_mse = 0;
};

/// Multi-resolution affine registration: Nelder-Mead over 12 parameters
/// minimising the MSE metric, coarse to fine. The optimised affine acts as
/// a correction composed onto `init`, so the returned transform can never
/// score worse than the initial one (monotone acceptance at full
/// resolution).
inline AffineResult register_affine(
    const VolumeF& fixed, const VolumeF& moving,
    const std::optional<AffineTransform>& init = std::nullopt,
    const RegistrationConfig& cfg = {}) {
  cfg.validate();
  const AffineTransform base = init.value_or(AffineTransform::identity());
  const Eigen::Vector3d center = fixed.grid.world_center();

  const auto fixed_pyr = build_pyramid(fixed, cfg.affine_shrinks, cfg.affine_sigmas);
  const auto moving_pyr = build_pyramid(moving, cfg.affine_shrinks, cfg.affine_sigmas);

  auto chain_for = [&](const AffineParams& p) {
    TransformChain chain;
    chain.affine = base.compose(affine_from_params(p, center));
    return chain;
  };

  AffineResult result;
  result.initial_mse = mse_metric(fixed, moving, chain_for(AffineParams::Zero()));

  AffineParams params = AffineParams::Zero();
  const AffineParams scales = affine_characteristic_scales();
  int total_iterations = 0;

  for (std::size_t level = 0; level < fixed_pyr.levels.size(); ++level) {
    const VolumeF& f = fixed_pyr.levels[level].volume;
    const VolumeF& m = moving_pyr.levels[level].volume;
    auto objective = [&](const Eigen::VectorXd& x) -> double {
      try {
        return mse_metric(f, m, chain_for(AffineParams(x)));
      } catch (const InvalidInput&) {
        return 1e30;  // lost all overlap; repel the simplex
      }
    };
    SimplexOptions opts;
    opts.max_iterations = cfg.affine_max_iterations;
    opts.tolerance = cfg.tolerance;
    const SimplexResult r =
        nelder_mead(objective, params, cfg.simplex_delta * scales, opts);
    params = r.x;
    total_iterations += r.iterations;
  }

  result.params = params;
  result.iterations = total_iterations;
  result.transform = base.compose(affine_from_params(params, center));
  result.final_mse = mse_metric(fixed, moving, chain_for(params));
  if (result.final_mse > result.initial_mse) {
    result.transform = base;
    result.params = AffineParams::Zero();
    result.final_mse = result.initial_mse;
  }
  return result;
}

namespace detail {

/// Displacement-field composition (u2 after u1): out(x) = u2(x + u1(x)) + u1(x).
inline DeformationField compose_fields(const DeformationField& u2,
                                       const DeformationField& u1) {
  DeformationField out(u1.grid);
  const Grid& g = u1.grid;
  const int nx = g.dims[0], ny = g.dims[1];
  const Eigen::Matrix3d to_index =
      g.spacing.cwiseInverse().asDiagonal() * g.orientation.transpose();
  parallel_for(g.voxels(), [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      const int x = static_cast<int>(i % nx);
      const int y = static_cast<int>((i / nx) % ny);
      const int z = static_cast<int>(i / (static_cast<std::int64_t>(nx) * ny));
      const Eigen::Vector3d u1v(u1.dx.data[i], u1.dy.data[i], u1.dz.data[i]);
      const Eigen::Vector3d idx = Eigen::Vector3d(x, y, z) + to_index * u1v;
      const Eigen::Vector3d u2v = u2.displacement_at_index(idx);
      out.dx.data[i] = static_cast<float>(u1v[0] + u2v[0]);
      out.dy.data[i] = static_cast<float>(u1v[1] + u2v[1]);
      out.dz.data[i] = static_cast<float>(u1v[2] + u2v[2]);
    }
  });
  return out;
}

}  // namespace detail

/// Exponential of a stationary velocity field by scaling and squaring:
/// u = exp(v) with 2^squarings integration steps.
inline DeformationField field_exponential(const DeformationField& velocity,
                                          int squarings) {
  DeformationField u(velocity.grid);
  const float scale = 1.0f / static_cast<float>(1u << squarings);
  u.dx.data = velocity.dx.data * scale;
  u.dy.data = velocity.dy.data * scale;
  u.dz.data = velocity.dz.data * scale;
  for (int s = 0; s < squarings; ++s) u = detail::compose_fields(u, u);
  return u;
}

/// Jacobian determinant of (identity + field) by central differences;
/// positive everywhere means the map preserves orientation.
inline VolumeF jacobian_determinant(const DeformationField& field) {
  const Grid& g = field.grid;
  VolumeF out(g, Unit::dimensionless);
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
  const VolumeF* comp[3] = {&field.dx, &field.dy, &field.dz};
  parallel_for(g.voxels(), [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      const int x = static_cast<int>(i % nx);
      const int y = static_cast<int>((i / nx) % ny);
      const int z = static_cast<int>(i / (static_cast<std::int64_t>(nx) * ny));
      Eigen::Matrix3d jac = Eigen::Matrix3d::Identity();
      for (int c = 0; c < 3; ++c) {
        for (int a = 0; a < 3; ++a) {
          int lo[3] = {x, y, z}, hi[3] = {x, y, z};
          hi[a] = std::min(hi[a] + 1, g.dims[a] - 1);
          lo[a] = std::max(lo[a] - 1, 0);
          const double dv = comp[c]->at(hi[0], hi[1], hi[2]) -
                            comp[c]->at(lo[0], lo[1], lo[2]);
          const double dx = (hi[a] - lo[a]) * g.spacing[a];
          jac(c, a) += dx > 0 ? dv / dx : 0.0;
        }
      }
      out.data[i] = static_cast<float>(jac.determinant());
    }
  });
  return out;
}

/// Thirion demons with a diffeomorphic (exponentiated velocity) update,
/// multi-resolution. Per level the update force is
///   s = lr * (f - m) * grad(f) / (|grad(f)|^2 + (f - m)^2),
/// smoothed by the level's width, accumulated into the velocity, and the
/// displacement taken as exp(velocity). Stops when the relative MSE
/// improvement over the convergence window drops below the tolerance.
inline DeformationField register_demons(const VolumeF& fixed, const VolumeF& moving,
                                        const TransformChain& init,
                                        const RegistrationConfig& cfg = {},
                                        int* iterations_out = nullptr) {
  cfg.validate();
  if (init.field)
    throw InvalidInput("register_demons: init chain already carries a field");

  // The level width doubles as the pyramid anti-alias sigma and as the
  // update regularisation width (both in voxels at the level's resolution).
  const auto fixed_pyr = build_pyramid(fixed, cfg.demons_shrinks, cfg.demons_smoothing);
  const auto moving_pyr = build_pyramid(moving, cfg.demons_shrinks, cfg.demons_smoothing);

  std::optional<DeformationField> velocity;
  int total_iterations = 0;

  for (std::size_t level = 0; level < fixed_pyr.levels.size(); ++level) {
    const VolumeF& f = fixed_pyr.levels[level].volume;
    const VolumeF& m = moving_pyr.levels[level].volume;
    const Grid& g = f.grid;
    const double sigma = cfg.demons_smoothing[level];
    const int nx = g.dims[0], ny = g.dims[1];

    // Carry the velocity up from the previous level.
    DeformationField v(g);
    if (velocity) {
      v.dx = resample(velocity->dx, g);
      v.dy = resample(velocity->dy, g);
      v.dz = resample(velocity->dz, g);
    }

    // Fixed-image spatial gradient (world mm), computed once per level.
    std::array<VolumeF, 3> grad = {VolumeF(g, Unit::dimensionless),
                                   VolumeF(g, Unit::dimensionless),
                                   VolumeF(g, Unit::dimensionless)};
    parallel_for(g.voxels(), [&](std::int64_t b, std::int64_t e) {
      for (std::int64_t i = b; i < e; ++i) {
        const int x = static_cast<int>(i % nx);
        const int y = static_cast<int>((i / nx) % ny);
        const int z = static_cast<int>(i / (static_cast<std::int64_t>(nx) * ny));
        Eigen::Vector3d local;
        for (int a = 0; a < 3; ++a) {
          int lo[3] = {x, y, z}, hi[3] = {x, y, z};
          hi[a] = std::min(hi[a] + 1, g.dims[a] - 1);
          lo[a] = std::max(lo[a] - 1, 0);
          const double dv = f.at(hi[0], hi[1], hi[2]) - f.at(lo[0], lo[1], lo[2]);
          const double dist = (hi[a] - lo[a]) * g.spacing[a];
          local[a] = dist > 0 ? dv / dist : 0.0;
        }
        const Eigen::Vector3d world = g.orientation * local;
        grad[0].data[i] = static_cast<float>(world[0]);
        grad[1].data[i] = static_cast<float>(world[1]);
        grad[2].data[i] = static_cast<float>(world[2]);
      }
    });

    DeformationField best_v = v;
    double best_mse = std::numeric_limits<double>::infinity();
    std::deque<double> window;

    for (int iter = 0; iter < cfg.demons_max_iterations; ++iter) {
      const DeformationField u = field_exponential(v, cfg.demons_squarings);

      DeformationField step(g);
      const std::int64_t n = g.voxels();
      const std::int64_t chunks = (n + detail::kChunk - 1) / detail::kChunk;
      std::vector<detail::MseAccumulator> partial(static_cast<std::size_t>(chunks));
      parallel_for(n, [&](std::int64_t b, std::int64_t e) {
        detail::MseAccumulator acc;
        for (std::int64_t i = b; i < e; ++i) {
          const int x = static_cast<int>(i % nx);
          const int y = static_cast<int>((i / nx) % ny);
          const int z = static_cast<int>(i / (static_cast<std::int64_t>(nx) * ny));
          Eigen::Vector3d p = g.index_to_world(x, y, z);
          p += Eigen::Vector3d(u.dx.data[i], u.dy.data[i], u.dz.data[i]);
          p = init.affine.apply(p);
          if (init.initial) p = init.initial->apply(p);
          const Eigen::Vector3d idx = m.grid.world_to_index(p);
          if (!index_in_bounds(m.grid, idx)) continue;
          const double diff =
              static_cast<double>(f.data[i]) - sample_trilinear(m, idx);
          acc.sum += diff * diff;
          ++acc.count;
          const Eigen::Vector3d gv(grad[0].data[i], grad[1].data[i], grad[2].data[i]);
          const double denom = gv.squaredNorm() + diff * diff;
          if (denom < 1e-9) continue;
          const Eigen::Vector3d s = cfg.demons_learning_rate * diff / denom * gv;
          step.dx.data[i] = static_cast<float>(s[0]);
          step.dy.data[i] = static_cast<float>(s[1]);
          step.dz.data[i] = static_cast<float>(s[2]);
        }
        partial[static_cast<std::size_t>(b / detail::kChunk)] = acc;
      });
      detail::MseAccumulator total;
      for (const auto& pt : partial) {
        total.sum += pt.sum;
        total.count += pt.count;
      }
      if (total.count == 0)
        throw NumericError("register_demons: transform lost all image overlap");
      const double mse = total.sum / static_cast<double>(total.count);
      if (!std::isfinite(mse))
        throw NumericError("register_demons: non-finite metric value");
      ++total_iterations;

      if (mse < best_mse) {
        best_mse = mse;
        best_v = v;
      }
      if (mse == 0) break;
      window.push_back(mse);
      if (static_cast<int>(window.size()) > cfg.demons_convergence_window)
        window.pop_front();
      if (static_cast<int>(window.size()) == cfg.demons_convergence_window) {
        const double improvement = (window.front() - mse) / std::max(window.front(), 1e-30);
        if (improvement < cfg.tolerance) break;
      }

      if (sigma > 0) {
        const Eigen::Vector3d s3 = Eigen::Vector3d::Constant(sigma);
        step.dx = gaussian_smooth(step.dx, s3);
        step.dy = gaussian_smooth(step.dy, s3);
        step.dz = gaussian_smooth(step.dz, s3);
      }
      v.dx.data += step.dx.data;
      v.dy.data += step.dy.data;
      v.dz.data += step.dz.data;
      if (!v.dx.data.isFinite().all() || !v.dy.data.isFinite().all() ||
          !v.dz.data.isFinite().all())
        throw NumericError("register_demons: velocity field became non-finite");
    }
    velocity = best_v;
  }

  DeformationField field = field_exponential(*velocity, cfg.demons_squarings);
  field.validate();

  // Monotone acceptance at full resolution: never return a field that
  // scores worse than the affine-only chain.
  TransformChain with_field = init;
  with_field.field = field;
  const double mse_with = mse_metric(fixed, moving, with_field);
  const double mse_without = mse_metric(fixed, moving, init);
  if (mse_with > mse_without) {
    field = DeformationField(fixed.grid);
    log_warn("register_demons: field rejected (no improvement over affine)");
  }
  if (iterations_out) *iterations_out = total_iterations;
  return field;
}

/// Coarse alignment file. Two forms:
///   affine            followed by 12 numbers (3x4 world matrix, row-major)
///   zlabels           followed by two per-slice label tables:
///                       target <slice_thickness_mm>
///                       <slice_index> <label>        (label: legs|pelvis|spine|head)
///                       ...
///                       atlas <slice_thickness_mm>
///                       ...
/// The zlabels form produces a z-translation + z-scale mapping target slice
/// positions onto atlas slice positions by aligning the centroids of the
/// per-region slice ranges.
inline AffineTransform load_initial_alignment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");

  auto next_line = [&](std::string& line) -> bool {
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t\r\n") != std::string::npos) return true;
    }
    return false;
  };

  std::string line;
  if (!next_line(line)) throw FormatError("alignment file '" + path.string() + "' is empty");
  std::istringstream head(line);
  std::string kind;
  head >> kind;

  if (kind == "affine") {
    std::vector<double> numbers;
    double v;
    while (head >> v) numbers.push_back(v);
    while (numbers.size() < 12 && next_line(line)) {
      std::istringstream ls(line);
      while (ls >> v) numbers.push_back(v);
    }
    if (numbers.size() != 12)
      throw FormatError("alignment file '" + path.string() + "': expected 12 matrix entries");
    AffineTransform t;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) t.linear(r, c) = numbers[static_cast<std::size_t>(r) * 4 + c];
      t.translation[r] = numbers[static_cast<std::size_t>(r) * 4 + 3];
    }
    t.validate();
    return t;
  }

  if (kind != "zlabels")
    throw FormatError("alignment file '" + path.string() + "': unknown kind '" + kind + "'");

  struct Table {
    double thickness = 0;
    std::map<std::string, std::pair<int, int>> range;  // label -> [min, max] slice
  };
  const std::set<std::string> labels{"legs", "pelvis", "spine", "head"};
  std::map<std::string, Table> tables;
  Table* current = nullptr;
  while (next_line(line)) {
    std::istringstream ls(line);
    std::string first;
    ls >> first;
    if (first == "target" || first == "atlas") {
      Table t;
      if (!(ls >> t.thickness) || t.thickness <= 0)
        throw FormatError("alignment file: '" + first + "' needs a positive slice thickness");
      current = &(tables[first] = t);
      continue;
    }
    if (!current)
      throw FormatError("alignment file: slice row before a target/atlas header");
    int slice = 0;
    std::string label;
    try {
      slice = std::stoi(first);
    } catch (const std::exception&) {
      throw FormatError("alignment file: bad slice index '" + first + "'");
    }
    if (!(ls >> label) || !labels.count(label))
      throw FormatError("alignment file: bad region label in line '" + line + "'");
    auto [it, fresh] = current->range.try_emplace(label, slice, slice);
    if (!fresh) {
      it->second.first = std::min(it->second.first, slice);
      it->second.second = std::max(it->second.second, slice);
    }
  }
  if (!tables.count("target") || !tables.count("atlas"))
    throw FormatError("alignment file: needs both a target and an atlas table");

  const Table& target = tables["target"];
  const Table& atlas = tables["atlas"];
  std::vector<std::pair<double, double>> pairs;  // (target z, atlas z) mm
  for (const auto& [label, trange] : target.range) {
    const auto it = atlas.range.find(label);
    if (it == atlas.range.end()) continue;
    const double tz = 0.5 * (trange.first + trange.second) * target.thickness;
    const double az = 0.5 * (it->second.first + it->second.second) * atlas.thickness;
    pairs.emplace_back(tz, az);
  }
  if (pairs.empty())
    throw FormatError("alignment file: target and atlas share no region labels");

  // z_atlas = a * z_target + b (this transform maps fixed/target points into
  // the atlas frame, the direction used when resampling the atlas).
  double a = 1.0, b = 0.0;
  if (pairs.size() == 1) {
    b = pairs[0].second - pairs[0].first;
  } else {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [tz, az] : pairs) {
      sx += tz;
      sy += az;
      sxx += tz * tz;
      sxy += tz * az;
    }
    const double n = static_cast<double>(pairs.size());
    const double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-12) {
      b = (sy - sx) / n;
    } else {
      a = (n * sxy - sx * sy) / denom;
      b = (sy - a * sx) / n;
    }
    if (a <= 0.1 || a >= 10.0)
      throw FormatError("alignment file: implausible z-scale " + std::to_string(a));
  }
  AffineTransform t;
  t.linear(2, 2) = a;
  t.translation[2] = b;
  return t;
}

/// Persist a chain: <base>.affine.txt (+ optional .initial.txt and
/// .field.nii) plus <base>.chain.json tying them together.
inline void save_transform_chain(const TransformChain& chain,
                                 const std::filesystem::path& base) {
  namespace fs = std::filesystem;
  const fs::path affine_path = base.string() + ".affine.txt";
  save_affine(chain.affine, chain.affine_params, affine_path);

  nlohmann::json j;
  j["affine"] = affine_path.filename().string();
  if (chain.initial) {
    const fs::path initial_path = base.string() + ".initial.txt";
    save_affine(*chain.initial, AffineParams::Zero(), initial_path);
    j["initial"] = initial_path.filename().string();
  }
  if (chain.field) {
    const fs::path field_path = base.string() + ".field.nii";
    write_stack_channels({chain.field->dx, chain.field->dy, chain.field->dz},
                         field_path);
    j["field"] = field_path.filename().string();
  }
  j["provenance"] = {{"affine_iterations", chain.provenance.affine_iterations},
                     {"demons_iterations", chain.provenance.demons_iterations},
                     {"initial_mse", chain.provenance.initial_mse},
                     {"after_affine_mse", chain.provenance.after_affine_mse},
                     {"final_mse", chain.provenance.final_mse}};
  std::ofstream out(base.string() + ".chain.json");
  if (!out) throw FormatError("cannot write '" + base.string() + ".chain.json'");
  out << j.dump(2) << "\n";
}

inline TransformChain load_transform_chain(const std::filesystem::path& base) {
  namespace fs = std::filesystem;
  const fs::path json_path = base.string() + ".chain.json";
  std::ifstream in(json_path);
  if (!in) throw FormatError("cannot open '" + json_path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad chain file '" + json_path.string() + "': " + e.what());
  }
  const fs::path dir = json_path.parent_path();

  TransformChain chain;
  const AffineFile af = load_affine(dir / j.at("affine").get<std::string>());
  chain.affine = af.transform;
  chain.affine_params = af.params;
  if (j.contains("initial"))
    chain.initial = load_affine(dir / j.at("initial").get<std::string>()).transform;
  if (j.contains("field")) {
    const auto channels = read_stack_channels(dir / j.at("field").get<std::string>());
    if (channels.size() != 3)
      throw FormatError("deformation field must have exactly 3 channels");
    DeformationField field;
    field.grid = channels[0].grid;
    field.dx = channels[0];
    field.dy = channels[1];
    field.dz = channels[2];
    field.validate();
    chain.field = std::move(field);
  }
  if (j.contains("provenance")) {
    const auto& p = j["provenance"];
    chain.provenance.affine_iterations = p.value("affine_iterations", 0);
    chain.provenance.demons_iterations = p.value("demons_iterations", 0);
    chain.provenance.initial_mse = p.value("initial_mse", 0.0);
    chain.provenance.after_affine_mse = p.value("after_affine_mse", 0.0);
    chain.provenance.final_mse = p.value("final_mse", 0.0);
  }
  return chain;
}

/// Resample `moving` onto `target` through the full chain.
inline VolumeF apply_transform(const VolumeF& moving, const TransformChain& chain,
                               const Grid& target, Interp interp = Interp::trilinear,
                               double oob = 0.0) {
  target.validate();
  VolumeF out(target, moving.unit);
  const int nx = target.dims[0], ny = target.dims[1];
  parallel_for(target.voxels(), [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      const int x = static_cast<int>(i % nx);
      const int y = static_cast<int>((i / nx) % ny);
      const int z = static_cast<int>(i / (static_cast<std::int64_t>(nx) * ny));
      const Eigen::Vector3d p = chain.map_point(target.index_to_world(x, y, z));
      out.data[i] =
          static_cast<float>(sample(moving, moving.grid.world_to_index(p), interp, oob));
    }
  });
  return out;
}

}  // namespace wbseg
