#include <doctest.h>

#include <cmath>

#include "../support.hpp"
#include "beamplan/phantom.hpp"
#include "beamplan/raw_io.hpp"

using namespace beamplan;
using testsupport::TempDir;

TEST_CASE("generated phantom has one PTV and three disjoint OARs") {
  const Phantom p = generate_prostate_phantom({32, 32, 16}, {4, 4, 4}, 0);
  CHECK_NOTHROW(p.validate());
  REQUIRE(p.structures.size() == 4);
  const Structure& ptv = p.ptv();
  CHECK(ptv.name == "prostate");
  CHECK(ptv.voxel_count() > 0);
  CHECK(ptv.target_dose_gy == 100.0);
  for (const char* name : {"rectum", "bladder", "femoral_heads"}) {
    const Structure* s = p.find(name);
    REQUIRE(s != nullptr);
    CHECK(s->kind == StructureKind::oar);
    CHECK(s->dose_limit_gy.has_value());
    CHECK(s->voxel_count() > 0);
    for (std::size_t i = 0; i < s->mask.size(); ++i) CHECK_FALSE((s->mask[i] && ptv.mask[i]));
  }
  CHECK(p.find("rectum")->dose_limit_gy == 50.0);
  CHECK(p.find("bladder")->dose_limit_gy == 65.0);
  CHECK(p.find("femoral_heads")->dose_limit_gy == 45.0);
}

TEST_CASE("anatomy sits where it should") {
  const Phantom p = generate_prostate_phantom({32, 32, 32}, {4, 4, 4}, 3);
  const auto& g = p.geometry();
  const Vec3 ptv = mask_centroid_mm(g, p.ptv().mask);
  CHECK(mask_centroid_mm(g, p.find("bladder")->mask).y > ptv.y);
  CHECK(mask_centroid_mm(g, p.find("rectum")->mask).y < ptv.y);
  const auto& fh = p.find("femoral_heads")->mask;
  bool left = false, right = false;
  for (std::size_t i = 0; i < fh.size(); ++i) {
    if (!fh[i]) continue;
    const Index3 v = g.unflatten(i);
    const double x = g.voxel_center(v.x, v.y, v.z).x;
    left = left || x < ptv.x - 20.0;
    right = right || x > ptv.x + 20.0;
    CHECK(p.ct.hu[i] == doctest::Approx(700.0));
  }
  CHECK(left);
  CHECK(right);
  CHECK(p.ct.hu[0] == -1000.0f);
  CHECK(p.ct.hu[g.index(16, 16, 16)] == 0.0f);
}

TEST_CASE("generation is deterministic and seeds move the target a little") {
  const Phantom a = generate_prostate_phantom({32, 32, 16}, {4, 4, 4}, 0);
  const Phantom b = generate_prostate_phantom({32, 32, 16}, {4, 4, 4}, 0);
  CHECK(a == b);
  const Phantom c = generate_prostate_phantom({32, 32, 16}, {4, 4, 4}, 1);
  const double shift = norm(mask_centroid_mm(a.geometry(), a.ptv().mask) - mask_centroid_mm(c.geometry(), c.ptv().mask));
  CHECK(shift > 0.0);
  CHECK(shift <= 0.10 * body_radius_mm({32, 32, 16}, {4, 4, 4}));
}

TEST_CASE("too-small grids are rejected") {
  CHECK_THROWS_AS(generate_prostate_phantom({8, 32, 32}, {4, 4, 4}, 0), std::invalid_argument);
  CHECK_THROWS_AS(generate_prostate_phantom({32, 32, 32}, {0, 4, 4}, 0), std::invalid_argument);
}

TEST_CASE("HU to attenuation") {
  CHECK(hu_to_attenuation(0.0, 0.005) == 0.005);
  CHECK(hu_to_attenuation(-1000.0, 0.005) == 0.0);
  CHECK(hu_to_attenuation(-1500.0, 0.005) == 0.0);
  CHECK(hu_to_attenuation(1000.0, 0.005) == doctest::Approx(0.010).epsilon(1e-15));
  double prev = 0.0;
  for (double hu = -1200.0; hu <= 2000.0; hu += 37.5) {
    const double mu = hu_to_attenuation(hu, 0.005);
    CHECK(mu >= prev);
    prev = mu;
  }
  CHECK_THROWS(hu_to_attenuation(std::nan(""), 0.005));
  CHECK_THROWS(hu_to_attenuation(0.0, 0.0));
}

TEST_CASE("phantom files round-trip bit-exactly") {
  TempDir dir("phantom");
  Phantom p = generate_prostate_phantom({20, 18, 16}, {3.5, 4, 4.5}, 11);
  p.ct.hu[5] = 12.345678f;
  save_phantom(p, dir.path());
  CHECK(load_phantom(dir.path()) == p);
}

TEST_CASE("loader errors are typed") {
  TempDir dir("badphantom");
  const Phantom p = generate_prostate_phantom({32, 32, 16}, {4, 4, 4}, 0);
  auto kind_of = [&](const std::filesystem::path& d) {
    try {
      load_phantom(d);
    } catch (const PhantomError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };

  save_phantom(p, dir.path());
  rawio::write_f32(dir / "ct.raw", std::vector<float>(100, 0.0f));
  CHECK(kind_of(dir.path()) == static_cast<int>(PhantomError::Kind::size_mismatch));

  save_phantom(p, dir.path());
  auto manifest = nlohmann::json::parse(testsupport::slurp(dir / "manifest.json"));
  manifest["format_version"] = 7;
  rawio::write_json(dir / "manifest.json", manifest);
  CHECK(kind_of(dir.path()) == static_cast<int>(PhantomError::Kind::unknown_version));

  save_phantom(p, dir.path());
  manifest = nlohmann::json::parse(testsupport::slurp(dir / "manifest.json"));
  manifest["structures"].erase(0);
  rawio::write_json(dir / "manifest.json", manifest);
  CHECK(kind_of(dir.path()) == static_cast<int>(PhantomError::Kind::validation));

  rawio::write_text(dir / "manifest.json", "{ not json");
  CHECK(kind_of(dir.path()) == static_cast<int>(PhantomError::Kind::malformed_manifest));
}

TEST_CASE("CT values below air are clamped on load") {
  TempDir dir("clamp");
  Phantom p = generate_prostate_phantom({16, 16, 16}, {4, 4, 4}, 0);
  save_phantom(p, dir.path());
  auto hu = rawio::read_f32(dir / "ct.raw");
  hu[0] = -3000.0f;
  rawio::write_f32(dir / "ct.raw", hu);
  CHECK(load_phantom(dir.path()).ct.hu[0] == -1000.0f);
}
