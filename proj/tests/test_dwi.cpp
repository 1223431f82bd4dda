#include <doctest.h>

#include <wbseg/dwi.hpp>
#include <wbseg/rng.hpp>

using namespace wbseg;

namespace {

BValueSeries two_point_series(const Grid& g, float s_low, float s_high,
                              double b_low = 50, double b_high = 900) {
  BValueSeries series;
  series.bvalues = {b_low, b_high};
  series.volumes = {VolumeF::constant(g, s_low), VolumeF::constant(g, s_high)};
  return series;
}

}  // namespace

TEST_SUITE("dwi") {

TEST_CASE("flat signal fits to zero ADC") {
  Grid g(3, 3, 3);
  const FitResult r = fit_monoexponential(two_point_series(g, 800, 800));
  CHECK(r.adc.data[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.s0.data[0] == doctest::Approx(800.0).epsilon(1e-9));
  CHECK(r.adc.unit == Unit::adc);
}

TEST_CASE("two-point fit inverts the closed form") {
  Grid g(2, 2, 2);
  const FitResult r = fit_monoexponential(two_point_series(g, 1000, 100));
  const double adc = std::log(10.0) / 850.0;  // = ln(S50/S900) / (900-50)
  const double s0 = 1000.0 * std::exp(50.0 * adc);
  CHECK(r.adc.data[0] == doctest::Approx(adc).epsilon(1e-6));
  CHECK(r.adc.data[0] == doctest::Approx(2.7089e-3).epsilon(1e-4));
  CHECK(r.s0.data[0] == doctest::Approx(s0).epsilon(1e-6));
  CHECK(r.s0.data[0] == doctest::Approx(1145.0).epsilon(1e-3));
}

TEST_CASE("rising signal yields a negative ADC, preserved unclipped") {
  Grid g(2, 2, 2);
  const FitResult r = fit_monoexponential(two_point_series(g, 100, 1000));
  CHECK(r.adc.data[0] == doctest::Approx(-std::log(10.0) / 850.0).epsilon(1e-6));
  CHECK(r.adc.data.minCoeff() < 0);
}

TEST_CASE("noiseless synthetic signals round-trip the generator values") {
  Rng rng(77);
  Grid g(4, 4, 4);
  SUBCASE("two b-values: exact inversion") {
    for (int trial = 0; trial < 30; ++trial) {
      const double adc = rng.uniform(-1e-3, 3.5e-3);
      const double s0 = rng.uniform(50, 2000);
      BValueSeries series;
      series.bvalues = {50, 900};
      for (double b : series.bvalues)
        series.volumes.push_back(
            VolumeF::constant(g, static_cast<float>(s0 * std::exp(-b * adc))));
      const FitResult r = fit_monoexponential(series);
      // float32 storage of the signals limits agreement; the fit itself is
      // exact, so compare against the float-quantised closed form.
      const double s50 = static_cast<double>(static_cast<float>(s0 * std::exp(-50 * adc)));
      const double s900 = static_cast<double>(static_cast<float>(s0 * std::exp(-900 * adc)));
      const double adc_q = std::log(s50 / s900) / 850.0;
      const double s0_q = s50 * std::exp(50.0 * adc_q);
      CHECK(std::abs(r.adc.data[0] - adc_q) <= 1e-9 * std::max(1.0, std::abs(adc_q)));
      CHECK(std::abs(r.s0.data[0] - s0_q) / s0_q < 1e-6);
    }
  }
  SUBCASE("three b-values: least squares recovers within 1e-6 relative") {
    for (int trial = 0; trial < 30; ++trial) {
      const double adc = rng.uniform(0.2e-3, 3.5e-3);
      const double s0 = rng.uniform(100, 2000);
      BValueSeries series;
      series.bvalues = {50, 600, 900};
      for (double b : series.bvalues)
        series.volumes.push_back(
            VolumeF::constant(g, static_cast<float>(s0 * std::exp(-b * adc))));
      const FitResult r = fit_monoexponential(series);
      CHECK(std::abs(r.adc.data[0] - adc) / adc < 1e-6);
      CHECK(std::abs(r.s0.data[0] - s0) / s0 < 1e-5);
    }
  }
}

TEST_CASE("series validation rejects bad inputs") {
  Grid g(2, 2, 2);
  {
    BValueSeries one;
    one.bvalues = {50};
    one.volumes = {VolumeF::constant(g, 1)};
    CHECK_THROWS_AS(fit_monoexponential(one), InvalidInput);
  }
  {
    BValueSeries dup;
    dup.bvalues = {50, 50};
    dup.volumes = {VolumeF::constant(g, 1), VolumeF::constant(g, 2)};
    CHECK_THROWS_AS(fit_monoexponential(dup), InvalidInput);
  }
  {
    BValueSeries mismatch = two_point_series(g, 1, 2);
    mismatch.volumes[1] = VolumeF::constant(Grid(3, 3, 3), 2);
    CHECK_THROWS_AS(fit_monoexponential(mismatch), InvalidInput);
  }
  {
    BValueSeries negative = two_point_series(g, 1, 2, -10, 900);
    CHECK_THROWS_AS(fit_monoexponential(negative), InvalidInput);
  }
}

TEST_CASE("scale_adc divides by 3.5e-3 and is linear") {
  Grid g(2, 2, 1);
  VolumeF adc(g, Unit::adc);
  adc.data << 3.5e-3f, 0.0f, -1.75e-3f, 7e-3f;
  const VolumeF scaled = scale_adc(adc);
  CHECK(scaled.data[0] == doctest::Approx(1.0));
  CHECK(scaled.data[1] == doctest::Approx(0.0));
  CHECK(scaled.data[2] == doctest::Approx(-0.5));
  CHECK(scaled.data[3] == doctest::Approx(2.0));
  CHECK(scaled.unit == Unit::dimensionless);

  // Linearity: scale_adc(alpha * v) = alpha * scale_adc(v).
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const float alpha = static_cast<float>(rng.uniform(-3, 3));
    VolumeF scaled_input = adc;
    scaled_input.data *= alpha;
    const VolumeF lhs = scale_adc(scaled_input);
    for (std::int64_t i = 0; i < lhs.data.size(); ++i)
      CHECK(lhs.data[i] == doctest::Approx(alpha * scaled.data[i]).epsilon(1e-5));
  }

  VolumeF wrong_unit(g, Unit::signal);
  CHECK_THROWS_AS(scale_adc(wrong_unit), InvalidInput);
}

TEST_CASE("scale_s0 normalises by the maximum log") {
  Grid g(2, 1, 1);

  SUBCASE("constant volume maps to all ones") {
    const VolumeF s0 = VolumeF::constant(g, static_cast<float>(std::exp(1.0)));
    const VolumeF out = scale_s0(s0);
    CHECK(out.data[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(out.data[1] == doctest::Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("two-level volume maps to 0.5 and 1") {
    VolumeF s0(g, Unit::signal);
    s0.data << static_cast<float>(std::exp(1.0)), static_cast<float>(std::exp(2.0));
    const VolumeF out = scale_s0(s0);
    CHECK(out.data[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(out.data[1] == doctest::Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("zero voxels clamp to log(1) = 0") {
    VolumeF s0(g, Unit::signal);
    s0.data << 0.0f, static_cast<float>(std::exp(2.0));
    const VolumeF out = scale_s0(s0);
    CHECK(out.data[0] == 0.0f);
    CHECK(out.data[1] == doctest::Approx(1.0).epsilon(1e-6));
  }

  SUBCASE("all-zero volume is degenerate") {
    const VolumeF s0 = VolumeF::constant(g, 0.0f);
    CHECK_THROWS_AS(scale_s0(s0), InvalidInput);
  }

  SUBCASE("output maximum is exactly 1 and order is preserved") {
    Rng rng(13);
    Grid big(6, 6, 6);
    VolumeF s0(big, Unit::signal);
    for (std::int64_t i = 0; i < s0.voxels(); ++i)
      s0.data[i] = static_cast<float>(rng.uniform(1.0, 5000.0));
    const VolumeF out = scale_s0(s0);
    CHECK(out.data.maxCoeff() == doctest::Approx(1.0).epsilon(1e-6));
    for (int trial = 0; trial < 200; ++trial) {
      const auto i = static_cast<std::int64_t>(
          rng.uniform_index(static_cast<std::uint64_t>(s0.voxels())));
      const auto j = static_cast<std::int64_t>(
          rng.uniform_index(static_cast<std::uint64_t>(s0.voxels())));
      if (s0.data[i] <= s0.data[j]) CHECK(out.data[i] <= out.data[j] + 1e-7f);
    }
  }

  SUBCASE("body mask restricts the normaliser") {
    VolumeF s0(g, Unit::signal);
    s0.data << static_cast<float>(std::exp(2.0)), static_cast<float>(std::exp(4.0));
    VolumeF mask(g, Unit::mask);
    mask.data << 1.0f, 0.0f;  // bright voxel excluded from the max
    const VolumeF out = scale_s0(s0, mask);
    CHECK(out.data[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(out.data[1] == doctest::Approx(2.0).epsilon(1e-6));

    VolumeF empty(g, Unit::mask);
    CHECK_THROWS_AS(scale_s0(s0, empty), InvalidInput);
  }
}

}  // TEST_SUITE
