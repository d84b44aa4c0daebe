#include <doctest.h>

#include <cmath>
#include <random>
#include <map>
#include <set>

#include "../oracles.hpp"
#include "../support.hpp"
#include "beamplan/dose_engine.hpp"

using namespace beamplan;

namespace {

double total_length(const std::vector<RaySegment>& segs) {
  double s = 0.0;
  for (const auto& x : segs) s += x.length_mm;
  return s;
}

Vec3 unit(Vec3 v) { return (1.0 / norm(v)) * v; }

}  // namespace

TEST_CASE("axis-aligned ray through a row of unit voxels") {
  const auto g = testsupport::centred_grid({10, 1, 1}, {1, 1, 1});
  const auto segs = trace_ray(g, {-20.0, 0.0, 0.0}, {1, 0, 0});
  REQUIRE(segs.size() == 10);
  for (std::size_t i = 0; i < segs.size(); ++i) {
    CHECK(segs[i].voxel == i);
    CHECK(segs[i].length_mm == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("diagonal ray matches the analytic chord") {
  const auto g = testsupport::centred_grid({12, 12, 3}, {2, 2, 2});
  const auto segs = trace_ray(g, {-30.0, -30.0, 0.3}, unit({1, 1, 0}));
  const double diag = std::sqrt(2.0) * 24.0;
  CHECK(total_length(segs) == doctest::Approx(diag).epsilon(1e-9));
}

TEST_CASE("rays that miss the grid give no segments") {
  const auto g = testsupport::centred_grid({8, 8, 8}, {1, 1, 1});
  CHECK(trace_ray(g, {100, 100, 100}, {1, 0, 0}).empty());
  CHECK(trace_ray(g, {-10, 0, 0}, {-1, 0, 0}).empty());
  CHECK(trace_ray(g, {-10, 20, 0}, {1, 0, 0}).empty());
}

TEST_CASE("direction must be a unit vector") {
  const auto g = testsupport::centred_grid({8, 8, 8}, {1, 1, 1});
  CHECK_THROWS_AS(trace_ray(g, {0, 0, 0}, {1, 1, 0}), std::invalid_argument);
}

TEST_CASE("random rays: chord length, ordering and no revisits") {
  const auto g = testsupport::centred_grid({9, 7, 5}, {1.5, 2.0, 2.5});
  const Vec3 lo = g.box_min(), hi = g.box_max();
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int r = 0; r < 1000; ++r) {
    const Vec3 start{u(rng) * 25.0, u(rng) * 25.0, u(rng) * 25.0};
    Vec3 d{u(rng), u(rng), u(rng)};
    if (norm(d) < 1e-3) continue;
    d = unit(d);
    const auto segs = trace_ray(g, start, d);
    const double p[3] = {start.x, start.y, start.z}, dd[3] = {d.x, d.y, d.z};
    const double l[3] = {lo.x, lo.y, lo.z}, h[3] = {hi.x, hi.y, hi.z};
    const double chord = oracle::chord_length(p, dd, l, h);
    CHECK(std::abs(total_length(segs) - chord) <= 1e-9 * std::max(1.0, chord));
    std::set<std::size_t> seen;
    double along = -1.0;
    for (const auto& s : segs) {
      CHECK(seen.insert(s.voxel).second);
      CHECK(s.length_mm > 0.0);
      const Index3 v = g.unflatten(s.voxel);
      const double t = dot(g.voxel_center(v.x, v.y, v.z) - start, d);
      // voxel centres project in non-decreasing order up to one voxel diagonal
      CHECK(t > along - 2.0 * norm(g.spacing_mm));
      along = std::max(along, t);
    }
  }
}

TEST_CASE("splitting a ray in two preserves the segment multiset") {
  const auto g = testsupport::centred_grid({11, 11, 3}, {1, 1, 1});
  const Vec3 start{-9.0, -4.3, 0.2};
  const Vec3 d = unit({1.0, 0.37, 0.0});
  const double cut = 7.31;
  const auto whole = trace_ray(g, start, d);
  auto first = trace_ray(g, start, d, cut);
  const auto second = trace_ray(g, start + cut * d, d);
  std::map<std::size_t, double> a, b;
  for (const auto& s : whole) a[s.voxel] += s.length_mm;
  for (const auto& s : first) b[s.voxel] += s.length_mm;
  for (const auto& s : second) b[s.voxel] += s.length_mm;
  REQUIRE(a.size() == b.size());
  for (const auto& [voxel, len] : a) CHECK(std::abs(b[voxel] - len) <= 1e-9);
}
