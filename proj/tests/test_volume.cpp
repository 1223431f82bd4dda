#include <doctest.h>

#include <wbseg/resample.hpp>
#include <wbseg/rng.hpp>
#include <wbseg/volume.hpp>

using namespace wbseg;

namespace {

VolumeF ramp_volume(const Grid& g) {
  // f(world) = world.x, exactly representable by trilinear interpolation.
  VolumeF v(g, Unit::signal);
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x)
        v.at(x, y, z) = static_cast<float>(g.index_to_world(x, y, z)[0]);
  return v;
}

Grid random_grid(Rng& rng, int max_dim = 9) {
  Grid g;
  for (int a = 0; a < 3; ++a) {
    g.dims[a] = 2 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(max_dim - 1)));
    g.spacing[a] = rng.uniform(0.5, 6.0);
    g.origin[a] = rng.uniform(-80.0, 80.0);
  }
  return g;
}

}  // namespace

TEST_SUITE("volume") {

TEST_CASE("grid invariants are enforced") {
  Grid g(4, 4, 4);
  CHECK_NOTHROW(g.validate());

  Grid bad_dims = g;
  bad_dims.dims[1] = 0;
  CHECK_THROWS_AS(bad_dims.validate(), InvalidInput);

  Grid bad_spacing = g;
  bad_spacing.spacing[0] = 0;
  CHECK_THROWS_AS(bad_spacing.validate(), InvalidInput);

  Grid skewed = g;
  skewed.orientation(0, 1) = 0.01;
  CHECK_THROWS_AS(skewed.validate(), InvalidInput);
}

TEST_CASE("world/index transforms invert each other") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const Grid g = random_grid(rng);
    const Eigen::Vector3d idx(rng.uniform(0, g.dims[0] - 1.0),
                              rng.uniform(0, g.dims[1] - 1.0),
                              rng.uniform(0, g.dims[2] - 1.0));
    const Eigen::Vector3d back = g.world_to_index(g.index_to_world(idx));
    CHECK((back - idx).norm() < 1e-10);
  }
}

TEST_CASE("resample to the identical grid is the identity") {
  Rng rng(7);
  Grid g(6, 5, 4, 1.6, 1.6, 5.0);
  VolumeF v(g, Unit::signal);
  for (std::int64_t i = 0; i < v.voxels(); ++i)
    v.data[i] = static_cast<float>(rng.uniform(0, 100));
  const VolumeF out = resample(v, g, Interp::trilinear);
  for (std::int64_t i = 0; i < v.voxels(); ++i)
    CHECK(out.data[i] == doctest::Approx(v.data[i]).epsilon(1e-6));
}

TEST_CASE("constant volume stays constant on any overlapping grid") {
  Grid g(8, 8, 8, 2, 2, 2);
  const VolumeF v = VolumeF::constant(g, 3.25f);
  Grid target(5, 5, 5, 2.5, 2.5, 2.5);
  target.origin = Eigen::Vector3d(1, 1, 1);
  const VolumeF out = resample(v, target);
  for (int z = 0; z < 5; ++z)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) {
        const Eigen::Vector3d idx = g.world_to_index(target.index_to_world(x, y, z));
        if (index_in_bounds(g, idx)) CHECK(out.at(x, y, z) == doctest::Approx(3.25f));
      }
}

TEST_CASE("linear ramp resampled at half spacing reproduces the ramp") {
  Grid g(12, 4, 4, 2.0, 2.0, 2.0);
  const VolumeF v = ramp_volume(g);
  Grid target(22, 4, 4, 1.0, 2.0, 2.0);
  const VolumeF out = resample(v, target);
  // Interior target centres sit inside the source hull, where trilinear
  // interpolation is exact for a linear field.
  for (int z = 0; z < target.dims[2]; ++z)
    for (int y = 0; y < target.dims[1]; ++y)
      for (int x = 0; x < target.dims[0]; ++x) {
        const double expected = target.index_to_world(x, y, z)[0];
        CHECK(std::abs(out.at(x, y, z) - expected) < 1e-5);
      }
}

TEST_CASE("trilinear resampling never leaves the source value range") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Grid g = random_grid(rng);
    VolumeF v(g, Unit::signal);
    for (std::int64_t i = 0; i < v.voxels(); ++i)
      v.data[i] = static_cast<float>(rng.uniform(-5, 5));
    // Target strictly inside the source hull so no out-of-bounds constant mixes in.
    Grid target = g;
    target.dims = Eigen::Vector3i(3, 3, 3);
    target.spacing *= 0.4;
    target.origin = g.index_to_world(Eigen::Vector3d(0.3, 0.3, 0.3));
    const VolumeF out = resample(v, target);
    const float lo = v.data.minCoeff(), hi = v.data.maxCoeff();
    CHECK(out.data.minCoeff() >= lo - 1e-5f);
    CHECK(out.data.maxCoeff() <= hi + 1e-5f);
  }
}

TEST_CASE("nearest-neighbour resampling picks exact voxel values") {
  Grid g(4, 4, 4);
  VolumeF v(g, Unit::mask);
  v.at(1, 2, 3) = 1.0f;
  Grid shifted = g;
  shifted.origin = Eigen::Vector3d(0.4, 0.4, 0.4);  // rounds back to the same voxel
  const VolumeF out = resample(v, shifted, Interp::nearest);
  CHECK(out.at(1, 2, 3) == 1.0f);
  CHECK(out.data.sum() == 1.0f);
}

TEST_CASE("gaussian smoothing with sigma 0 is a pass-through") {
  Rng rng(3);
  Grid g(5, 6, 7);
  VolumeF v(g, Unit::signal);
  for (std::int64_t i = 0; i < v.voxels(); ++i)
    v.data[i] = static_cast<float>(rng.uniform(0, 1));
  const VolumeF out = gaussian_smooth(v, Eigen::Vector3d::Zero());
  CHECK((out.data == v.data).all());
}

TEST_CASE("gaussian smoothing preserves constants") {
  Grid g(9, 9, 9);
  const VolumeF v = VolumeF::constant(g, 7.5f);
  const VolumeF out = gaussian_smooth(v, Eigen::Vector3d(2.0, 1.0, 0.5));
  for (std::int64_t i = 0; i < out.voxels(); ++i)
    CHECK(out.data[i] == doctest::Approx(7.5f).epsilon(1e-6));
}

TEST_CASE("impulse response matches the normalised kernel") {
  const auto kernel = gaussian_kernel(1.0);
  double sum = 0;
  for (double k : kernel) sum += k;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

  Grid g(9, 9, 9);
  VolumeF v(g, Unit::signal);
  v.at(4, 4, 4) = 1.0f;
  const VolumeF out = gaussian_smooth(v, Eigen::Vector3d(1, 0, 0));
  const int radius = static_cast<int>(kernel.size() / 2);
  CHECK(out.at(4, 4, 4) == doctest::Approx(kernel[static_cast<std::size_t>(radius)]).epsilon(1e-6));
  CHECK(out.at(3, 4, 4) == doctest::Approx(kernel[static_cast<std::size_t>(radius - 1)]).epsilon(1e-6));
}

TEST_CASE("smoothing preserves the mean of interior-dominated volumes") {
  Rng rng(17);
  Grid g(24, 24, 24);
  VolumeF v(g, Unit::signal);
  // Bulk away from the faces so clamp-to-edge does not skew the mean.
  for (int z = 4; z < 20; ++z)
    for (int y = 4; y < 20; ++y)
      for (int x = 4; x < 20; ++x)
        v.at(x, y, z) = static_cast<float>(rng.uniform(0.5, 1.5));
  const double before = v.data.cast<double>().mean();
  const VolumeF out = gaussian_smooth(v, Eigen::Vector3d(1, 1, 1));
  const double after = out.data.cast<double>().mean();
  CHECK(std::abs(after - before) / before < 1e-4);
}

TEST_CASE("pyramid level grids follow ceil(dims / shrink)") {
  Grid g(256, 256, 256, 1.6, 1.6, 1.6);
  CHECK(shrink_grid(g, 4).dims == Eigen::Vector3i(64, 64, 64));
  CHECK(shrink_grid(g, 2).dims == Eigen::Vector3i(128, 128, 128));
  CHECK(shrink_grid(g, 1).dims == Eigen::Vector3i(256, 256, 256));
  CHECK(shrink_grid(g, 4).spacing.isApprox(Eigen::Vector3d(6.4, 6.4, 6.4)));
}

TEST_CASE("pyramid with a single unit level is the input volume") {
  Rng rng(23);
  Grid g(6, 6, 6);
  VolumeF v(g, Unit::signal);
  for (std::int64_t i = 0; i < v.voxels(); ++i)
    v.data[i] = static_cast<float>(rng.uniform(0, 1));
  const int shrinks[] = {1};
  const double sigmas[] = {0.0};
  const auto p = build_pyramid(v, shrinks, sigmas);
  REQUIRE(p.levels.size() == 1);
  CHECK((p.levels[0].volume.data == v.data).all());
}

TEST_CASE("standard three-level pyramid on a 64-cube") {
  Grid g(64, 64, 64, 2, 2, 2);
  const VolumeF v = VolumeF::constant(g, 2.0f);
  const int shrinks[] = {4, 2, 1};
  const double sigmas[] = {4, 2, 0};
  const auto p = build_pyramid(v, shrinks, sigmas);
  REQUIRE(p.levels.size() == 3);
  CHECK(p.levels[0].volume.grid.dims == Eigen::Vector3i(16, 16, 16));
  CHECK(p.levels[1].volume.grid.dims == Eigen::Vector3i(32, 32, 32));
  CHECK(p.levels[2].volume.grid.dims == Eigen::Vector3i(64, 64, 64));

  // Voxel counts increase monotonically coarse to fine.
  for (std::size_t i = 1; i < p.levels.size(); ++i)
    CHECK(p.levels[i].volume.voxels() > p.levels[i - 1].volume.voxels());

  // Constant input stays constant at every level.
  for (const auto& level : p.levels) {
    CHECK(level.volume.data.minCoeff() == doctest::Approx(2.0f).epsilon(1e-6));
    CHECK(level.volume.data.maxCoeff() == doctest::Approx(2.0f).epsilon(1e-6));
  }
}

TEST_CASE("pyramid schedule validation") {
  Grid g(8, 8, 8);
  const VolumeF v = VolumeF::constant(g, 1.0f);
  {
    const int shrinks[] = {4, 2, 1};
    const double sigmas[] = {4, 2};
    CHECK_THROWS_AS(build_pyramid(v, shrinks, sigmas), InvalidInput);
  }
  {
    const int shrinks[] = {2, 4, 1};
    const double sigmas[] = {4, 2, 0};
    CHECK_THROWS_AS(build_pyramid(v, shrinks, sigmas), InvalidInput);
  }
  {
    const int shrinks[] = {4, 2};
    const double sigmas[] = {4, 2};
    CHECK_THROWS_AS(build_pyramid(v, shrinks, sigmas), InvalidInput);
  }
}

TEST_CASE("probability and mask unit validation") {
  Grid g(2, 2, 2);
  VolumeF p(g, Unit::probability);
  p.data.setConstant(0.5f);
  CHECK_NOTHROW(p.validate());
  p.data[3] = 1.5f;
  CHECK_THROWS_AS(p.validate(), InvalidInput);

  VolumeF m(g, Unit::mask);
  m.data.setZero();
  m.data[1] = 1.0f;
  CHECK_NOTHROW(m.validate());
  m.data[2] = 0.5f;
  CHECK_THROWS_AS(m.validate(), InvalidInput);
}

}  // TEST_SUITE
