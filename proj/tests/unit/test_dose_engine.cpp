#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "../support.hpp"
#include "beamplan/dose_engine.hpp"

using namespace beamplan;
using testsupport::TempDir;

namespace {

std::shared_ptr<const Phantom> water_cube(int n, double spacing, double r_vox, float hu = 0.0f) {
  return std::make_shared<const Phantom>(testsupport::uniform_phantom({n, n, n}, spacing, r_vox, hu));
}

// Rotates an in-plane grid by the gantry step of +90 degrees: (i, j) -> (j, n-1-i).
std::vector<double> rotate90(const DoseGrid& d) {
  const auto& g = d.geometry;
  std::vector<double> out(d.dose_gy.size());
  for (int k = 0; k < g.dims.z; ++k)
    for (int j = 0; j < g.dims.y; ++j)
      for (int i = 0; i < g.dims.x; ++i) out[g.index(j, g.dims.x - 1 - i, k)] = d.dose_gy[g.index(i, j, k)];
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("angle helpers") {
  CHECK(normalize_angle_deg(-90.0) == 270.0);
  CHECK(normalize_angle_deg(720.0) == 0.0);
  CHECK(normalize_angle_deg(359.5) == 359.5);
  CHECK(angle_key_deg(359.6) == 0);
  CHECK(angle_key_deg(10.4) == 10);
  CHECK(BeamSpec(-10.0).gantry_angle_deg == 350.0);
}

TEST_CASE("beam frame convention") {
  const auto f0 = beam_frame(0.0);
  CHECK(f0.direction == Vec3{0.0, -1.0, 0.0});
  const auto f90 = beam_frame(90.0);
  CHECK(f90.direction == Vec3{-1.0, 0.0, 0.0});
  const auto f180 = beam_frame(180.0);
  CHECK(f180.direction == Vec3{0.0, 1.0, 0.0});
  const auto f30 = beam_frame(30.0);
  CHECK(norm(f30.direction) == doctest::Approx(1.0));
  CHECK(dot(f30.direction, f30.lateral) == doctest::Approx(0.0));
}

TEST_CASE("plan validation") {
  CHECK_NOTHROW(Plan::from_angles(std::vector<double>{0, 90}).validate(5));
  CHECK_THROWS(Plan{}.validate(5));
  CHECK_THROWS(Plan::from_angles(std::vector<double>{0, 0.3}).validate(5));
  CHECK_THROWS(Plan::from_angles(std::vector<double>{0, 10, 20}).validate(2));
  Plan bad = Plan::from_angles(std::vector<double>{0});
  bad.beams[0].weight = 0.0;
  CHECK_THROWS(bad.validate(5));
}

TEST_CASE("central-axis dose falls off as exp(-mu d) in water") {
  EngineConfig cfg;
  cfg.mu_water_per_mm = 0.02;
  cfg.penumbra_sigma_mm = 0.0;
  const int n = 31;
  const auto ph = water_cube(n, 2.0, 4.0);
  const DoseGrid d = compute_beam_dose(*ph, BeamSpec(0.0), cfg);
  const int c = n / 2;
  // beam enters from +y: depth grows as j decreases
  const double ref = d.dose_gy[ph->geometry().index(c, n - 2, c)];
  REQUIRE(ref > 0.0);
  for (int j = n - 3; j >= 1; j -= 3) {
    const double depth = (n - 2 - j) * 2.0;
    const double ratio = d.dose_gy[ph->geometry().index(c, j, c)] / ref;
    CHECK(ratio == doctest::Approx(std::exp(-cfg.mu_water_per_mm * depth)).epsilon(0.02));
  }
}

TEST_CASE("air gives zero dose, weight scales linearly") {
  EngineConfig cfg;
  const auto air = water_cube(17, 2.0, 3.0, -1000.0f);
  const DoseGrid z = compute_beam_dose(*air, BeamSpec(40.0), cfg);
  CHECK(std::all_of(z.dose_gy.begin(), z.dose_gy.end(), [](double v) { return v == 0.0; }));

  const auto ph = water_cube(17, 2.0, 3.0);
  const DoseGrid one = compute_beam_dose(*ph, BeamSpec(40.0, 1.0), cfg);
  const DoseGrid two = compute_beam_dose(*ph, BeamSpec(40.0, 2.0), cfg);
  for (std::size_t i = 0; i < one.dose_gy.size(); ++i) CHECK(two.dose_gy[i] == 2.0 * one.dose_gy[i]);
  for (double v : one.dose_gy) CHECK((std::isfinite(v) && v >= 0.0));
}

TEST_CASE("empty PTV cannot size a field") {
  Phantom p = testsupport::uniform_phantom({9, 9, 9}, 2.0, 2.0);
  std::fill(p.structures[0].mask.begin(), p.structures[0].mask.end(), 0);
  CHECK_THROWS(DoseEngine(std::make_shared<const Phantom>(p), EngineConfig{}));
}

TEST_CASE("beam dose commutes with 90 degree rotation on a symmetric cube") {
  EngineConfig cfg;
  cfg.ray_spacing_mm = 2.0 / 3.0;
  const auto ph = water_cube(21, 2.0, 4.0);
  const DoseEngine engine(ph, cfg);
  for (double theta : {0.0, 25.0, 90.0, 200.0}) {
    CAPTURE(theta);
    const DoseGrid a = engine.beam_dose(BeamSpec(theta));
    const DoseGrid b = engine.beam_dose(BeamSpec(theta + 90.0));
    CHECK(max_abs_diff(rotate90(a), b.dose_gy) <= 1e-6);
  }
  const auto plan = Plan::from_angles(std::vector<double>{0, 90, 180, 270});
  const auto pd = engine.plan_dose(plan, 100.0);
  CHECK(max_abs_diff(rotate90(pd.dose), pd.dose.dose_gy) <= 1e-6);
}

TEST_CASE("plan dose: normalisation, single beam and order invariance") {
  const auto ph = testsupport::standard_phantom();
  const DoseEngine engine(ph, EngineConfig{});
  const auto single = engine.plan_dose(Plan::from_angles(std::vector<double>{30}), 100.0);
  const DoseGrid beam = engine.beam_dose(BeamSpec(30.0));
  for (std::size_t i = 0; i < beam.dose_gy.size(); i += 97)
    CHECK(single.dose.dose_gy[i] == doctest::Approx(beam.dose_gy[i] * single.scale).epsilon(1e-12));
  CHECK(mean_over_mask(single.dose, ph->ptv().mask) == doctest::Approx(100.0).epsilon(1e-12));

  Plan p1 = Plan::from_angles(std::vector<double>{300, 10, 145.5});
  Plan p2 = Plan::from_angles(std::vector<double>{145.5, 300, 10});
  CHECK(engine.plan_dose(p1, 100.0).dose == engine.plan_dose(p2, 100.0).dose);

  const auto raw = engine.plan_dose(p1, 100.0, false);
  CHECK(raw.scale == 1.0);
  CHECK(raw.unscaled_ptv_mean == doctest::Approx(mean_over_mask(raw.dose, ph->ptv().mask)));
}

TEST_CASE("cached and uncached engines agree") {
  const auto ph = testsupport::standard_phantom();
  const DoseEngine engine(ph, EngineConfig{});
  const auto plan = Plan::from_angles(std::vector<double>{20, 140, 260});
  const auto a = engine.plan_dose(plan, 100.0);
  const auto b = compute_plan_dose(*ph, plan, EngineConfig{}, 100.0);
  CHECK(a.dose == b.dose);
  CHECK(engine.plan_dose(plan, 100.0).dose == a.dose);
}

TEST_CASE("zero PTV dose is a flagged result") {
  Phantom p = testsupport::uniform_phantom({15, 15, 15}, 2.0, 3.0, -1000.0f);
  const auto pd = compute_plan_dose(p, Plan::from_angles(std::vector<double>{0}), EngineConfig{}, 100.0);
  CHECK(pd.degenerate);
  CHECK(pd.scale == 1.0);
}

TEST_CASE("dose is roughly independent of ray spacing") {
  const auto ph = water_cube(21, 2.0, 4.0);
  EngineConfig coarse, fine;
  coarse.ray_spacing_mm = 2.0;
  fine.ray_spacing_mm = 0.5;
  const auto a = compute_beam_dose(*ph, BeamSpec(30.0), coarse);
  const auto b = compute_beam_dose(*ph, BeamSpec(30.0), fine);
  CHECK(mean_over_mask(a, ph->ptv().mask) == doctest::Approx(mean_over_mask(b, ph->ptv().mask)).epsilon(0.05));
}

TEST_CASE("in-plane blur preserves the total away from edges") {
  DoseGrid d = DoseGrid::zeros(testsupport::centred_grid({21, 21, 3}, {2, 2, 2}));
  d.dose_gy[d.geometry.index(10, 10, 1)] = 1.0;
  gaussian_blur_inplane(d, 3.0);
  double total = 0.0;
  for (double v : d.dose_gy) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.dose_gy[d.geometry.index(10, 10, 0)] == 0.0);
  CHECK(d.dose_gy[d.geometry.index(11, 10, 1)] == doctest::Approx(d.dose_gy[d.geometry.index(10, 11, 1)]));
}

TEST_CASE("dose files round-trip at float precision") {
  TempDir dir("dose");
  const auto ph = testsupport::standard_phantom();
  const auto pd = compute_plan_dose(*ph, Plan::from_angles(std::vector<double>{0, 120}), EngineConfig{}, 100.0);
  const std::vector<double> angles{0, 120};
  save_dose(pd.dose, 100.0, angles, dir.path());
  const DoseGrid back = load_dose(dir.path());
  CHECK(back.geometry == pd.dose.geometry);
  for (std::size_t i = 0; i < back.dose_gy.size(); ++i)
    CHECK(back.dose_gy[i] == static_cast<double>(static_cast<float>(pd.dose.dose_gy[i])));
}
