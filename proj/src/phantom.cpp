#include "beamplan/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "beamplan/raw_io.hpp"

namespace beamplan {

void GridGeometry::validate() const {
  if (dims.x < 1 || dims.y < 1 || dims.z < 1)
    throw std::invalid_argument("grid dims must be >= 1, got " + to_string(dims));
  for (int a = 0; a < 3; ++a) {
    if (!(spacing_mm[a] > 0.0) || !std::isfinite(spacing_mm[a]))
      throw std::invalid_argument("grid spacing must be positive and finite");
    if (!std::isfinite(origin_mm[a])) throw std::invalid_argument("grid origin must be finite");
  }
  const auto limit = std::numeric_limits<std::size_t>::max();
  const auto nx = static_cast<std::size_t>(dims.x), ny = static_cast<std::size_t>(dims.y),
             nz = static_cast<std::size_t>(dims.z);
  if (nx > limit / ny || nx * ny > limit / nz)
    throw std::invalid_argument("grid voxel count overflows");
}

std::string to_string(Index3 v) {
  return std::to_string(v.x) + "," + std::to_string(v.y) + "," + std::to_string(v.z);
}

std::size_t Structure::voxel_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

const Structure& Phantom::ptv() const {
  for (const auto& s : structures)
    if (s.kind == StructureKind::ptv) return s;
  throw PhantomError(PhantomError::Kind::validation, "phantom '" + label + "' has no PTV");
}

const Structure* Phantom::find(const std::string& name) const {
  for (const auto& s : structures)
    if (s.name == name) return &s;
  return nullptr;
}

void Phantom::validate() const {
  using K = PhantomError::Kind;
  try {
    ct.geometry.validate();
  } catch (const std::invalid_argument& e) {
    throw PhantomError(K::validation, e.what());
  }
  const std::size_t n = ct.geometry.voxel_count();
  if (ct.hu.size() != n) throw PhantomError(K::validation, "CT length does not match geometry");
  for (float v : ct.hu)
    if (!std::isfinite(v)) throw PhantomError(K::validation, "CT contains non-finite HU");

  const Structure* ptv_found = nullptr;
  for (const auto& s : structures) {
    if (s.mask.size() != n)
      throw PhantomError(K::validation, "mask of '" + s.name + "' is not congruent with the CT");
    if (std::any_of(s.mask.begin(), s.mask.end(), [](std::uint8_t b) { return b > 1; }))
      throw PhantomError(K::validation, "mask of '" + s.name + "' holds values other than 0/1");
    if (s.voxel_count() == 0) throw PhantomError(K::validation, "mask of '" + s.name + "' is empty");
    if (s.kind == StructureKind::ptv) {
      if (ptv_found) throw PhantomError(K::validation, "more than one PTV");
      ptv_found = &s;
      if (!s.target_dose_gy || !(*s.target_dose_gy > 0.0))
        throw PhantomError(K::validation, "PTV '" + s.name + "' needs a positive target dose");
    } else if (!s.dose_limit_gy || !(*s.dose_limit_gy > 0.0)) {
      throw PhantomError(K::validation, "OAR '" + s.name + "' needs a positive dose limit");
    }
  }
  if (!ptv_found) throw PhantomError(K::validation, "phantom has no PTV");
  for (const auto& s : structures) {
    if (s.kind != StructureKind::oar) continue;
    for (std::size_t i = 0; i < n; ++i)
      if (s.mask[i] && ptv_found->mask[i])
        throw PhantomError(K::validation, "OAR '" + s.name + "' overlaps the PTV");
  }
}

double hu_to_attenuation(double hu, double mu_water_per_mm) {
  if (!std::isfinite(hu)) throw std::invalid_argument("hu_to_attenuation: non-finite HU");
  if (!(mu_water_per_mm > 0.0)) throw std::invalid_argument("hu_to_attenuation: mu_water must be > 0");
  return mu_water_per_mm * std::max(0.0, 1.0 + hu / 1000.0);
}

Vec3 mask_centroid_index(const GridGeometry& g, const std::vector<std::uint8_t>& mask) {
  // Integer sums keep the centroid exact for symmetric masks.
  std::int64_t sx = 0, sy = 0, sz = 0, count = 0;
  for (int k = 0; k < g.dims.z; ++k)
    for (int j = 0; j < g.dims.y; ++j)
      for (int i = 0; i < g.dims.x; ++i)
        if (mask[g.index(i, j, k)]) {
          sx += i;
          sy += j;
          sz += k;
          ++count;
        }
  if (count == 0) throw std::invalid_argument("centroid of an empty mask");
  const auto c = static_cast<double>(count);
  return {static_cast<double>(sx) / c, static_cast<double>(sy) / c, static_cast<double>(sz) / c};
}

Vec3 mask_centroid_mm(const GridGeometry& g, const std::vector<std::uint8_t>& mask) {
  const Vec3 c = mask_centroid_index(g, mask);
  return {g.origin_mm.x + c.x * g.spacing_mm.x, g.origin_mm.y + c.y * g.spacing_mm.y,
          g.origin_mm.z + c.z * g.spacing_mm.z};
}

namespace {

struct Ellipsoid {
  Vec3 center;
  Vec3 radii;

  bool contains(Vec3 p) const {
    const double dx = (p.x - center.x) / radii.x;
    const double dy = (p.y - center.y) / radii.y;
    const double dz = (p.z - center.z) / radii.z;
    return dx * dx + dy * dy + dz * dz <= 1.0;
  }
};

struct BodyShape {
  double semi_x;
  double semi_y;
  bool contains(double x, double y) const {
    return (x / semi_x) * (x / semi_x) + (y / semi_y) * (y / semi_y) <= 1.0;
  }
};

constexpr double kBodySemiX = 0.46;  // fraction of in-plane extent
constexpr double kBodySemiY = 0.40;
constexpr double kBoneHu = 700.0;

BodyShape body_for(Vec3 extent) { return {kBodySemiX * extent.x, kBodySemiY * extent.y}; }

Vec3 extent_of(Index3 dims, Vec3 spacing) {
  return {dims.x * spacing.x, dims.y * spacing.y, dims.z * spacing.z};
}

// Throws naming `name` unless the ellipsoid's bounding box lies inside both
// the grid box and the body cross-section.
void require_fits(const std::string& name, const Ellipsoid& e, const GridGeometry& g,
                  const BodyShape& body) {
  const Vec3 lo = g.box_min(), hi = g.box_max();
  for (int a = 0; a < 3; ++a) {
    if (e.center[a] - e.radii[a] <= lo[a] || e.center[a] + e.radii[a] >= hi[a]) {
      std::ostringstream msg;
      msg << "grid " << to_string(g.dims) << " too small to fit structure '" << name << "'";
      throw PhantomError(PhantomError::Kind::construction, msg.str());
    }
  }
  for (double sx : {-1.0, 1.0})
    for (double sy : {-1.0, 1.0})
      if (!body.contains(e.center.x + sx * e.radii.x, e.center.y + sy * e.radii.y))
        throw PhantomError(PhantomError::Kind::construction,
                           "structure '" + name + "' does not fit inside the body outline");
}

}  // namespace

double body_radius_mm(Index3 dims, Vec3 spacing_mm) {
  const BodyShape body = body_for(extent_of(dims, spacing_mm));
  return std::min(body.semi_x, body.semi_y);
}

Phantom generate_prostate_phantom(Index3 dims, Vec3 spacing_mm, std::uint64_t seed,
                                  const PhantomOptions& options) {
  if (dims.x < 16 || dims.y < 16 || dims.z < 16)
    throw std::invalid_argument("phantom dims must each be >= 16, got " + to_string(dims));

  GridGeometry g;
  g.dims = dims;
  g.spacing_mm = spacing_mm;
  g.origin_mm = {-0.5 * (dims.x - 1) * spacing_mm.x, -0.5 * (dims.y - 1) * spacing_mm.y,
                 -0.5 * (dims.z - 1) * spacing_mm.z};
  g.validate();

  const Vec3 extent = extent_of(dims, spacing_mm);
  const BodyShape body = body_for(extent);
  const double body_radius = std::min(body.semi_x, body.semi_y);
  const double in_plane = std::min(extent.x, extent.y);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  // Offset of Euclidean length <= max_len.
  auto jitter = [&](double max_len) {
    const double s = max_len / std::sqrt(3.0);
    const double x = unit(rng), y = unit(rng), z = unit(rng);
    return Vec3{s * x, s * y, s * z};
  };
  auto radius = [&](double nominal) { return nominal * (1.0 + 0.1 * unit(rng)); };

  const double r_ptv = radius(0.12 * in_plane);
  const Ellipsoid ptv{jitter(0.04 * body_radius), {r_ptv, r_ptv, r_ptv}};

  const double r_bladder = radius(0.13 * in_plane);
  const Ellipsoid bladder{
      ptv.center + Vec3{0.0, r_ptv + 0.75 * r_bladder, 0.1 * r_bladder} + jitter(0.1 * r_bladder),
      {r_bladder, r_bladder, r_bladder}};

  const double r_rectum = radius(0.085 * in_plane);
  const Ellipsoid rectum{ptv.center + Vec3{0.0, -(r_ptv + 0.8 * r_rectum), 0.0} +
                             jitter(0.1 * r_rectum),
                         {r_rectum, r_rectum, 2.0 * r_rectum}};

  const double r_femur = radius(0.09 * in_plane);
  std::array<Ellipsoid, 2> femurs{};
  for (int side = 0; side < 2; ++side) {
    const double sign = side == 0 ? -1.0 : 1.0;
    femurs[side] = {Vec3{sign * 0.30 * extent.x, ptv.center.y, ptv.center.z} + jitter(0.1 * r_femur),
                    {r_femur, r_femur, r_femur}};
  }

  require_fits("prostate", ptv, g, body);
  require_fits("bladder", bladder, g, body);
  require_fits("rectum", rectum, g, body);
  require_fits("femoral_heads", femurs[0], g, body);
  require_fits("femoral_heads", femurs[1], g, body);

  const std::size_t n = g.voxel_count();
  Phantom p;
  p.label = "prostate_seed" + std::to_string(seed);
  p.ct.geometry = g;
  p.ct.hu.assign(n, -1000.0f);

  Structure s_ptv{"prostate", StructureKind::ptv, std::vector<std::uint8_t>(n, 0), std::nullopt,
                  options.target_dose_gy};
  Structure s_rectum{"rectum", StructureKind::oar, std::vector<std::uint8_t>(n, 0),
                     options.rectum_limit_gy, std::nullopt};
  Structure s_bladder{"bladder", StructureKind::oar, std::vector<std::uint8_t>(n, 0),
                      options.bladder_limit_gy, std::nullopt};
  Structure s_femur{"femoral_heads", StructureKind::oar, std::vector<std::uint8_t>(n, 0),
                    options.femoral_heads_limit_gy, std::nullopt};

  for (int k = 0; k < dims.z; ++k)
    for (int j = 0; j < dims.y; ++j)
      for (int i = 0; i < dims.x; ++i) {
        const std::size_t idx = g.index(i, j, k);
        const Vec3 c = g.voxel_center(i, j, k);
        if (!body.contains(c.x, c.y)) continue;
        p.ct.hu[idx] = 0.0f;
        const bool in_ptv = ptv.contains(c);
        s_ptv.mask[idx] = in_ptv;
        if (femurs[0].contains(c) || femurs[1].contains(c)) {
          p.ct.hu[idx] = static_cast<float>(kBoneHu);
          s_femur.mask[idx] = !in_ptv;
        }
        // OARs abut the target; the target wins shared voxels.
        s_rectum.mask[idx] = rectum.contains(c) && !in_ptv;
        s_bladder.mask[idx] = bladder.contains(c) && !in_ptv;
      }

  for (const Structure* s : {&s_ptv, &s_rectum, &s_bladder, &s_femur})
    if (s->voxel_count() == 0)
      throw PhantomError(PhantomError::Kind::construction,
                         "grid " + to_string(dims) + " too coarse: structure '" + s->name +
                             "' has no voxels");

  p.structures = {std::move(s_ptv), std::move(s_rectum), std::move(s_bladder), std::move(s_femur)};
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// File format

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json vec_json(Vec3 v) { return json::array({v.x, v.y, v.z}); }

std::string kind_name(StructureKind k) { return k == StructureKind::ptv ? "PTV" : "OAR"; }

}  // namespace

void save_phantom(const Phantom& phantom, const fs::path& dir) {
  phantom.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw PhantomError(PhantomError::Kind::io, "cannot create " + dir.string() + ": " + ec.message());

  const auto& g = phantom.geometry();
  json manifest;
  manifest["format_version"] = kPhantomFormatVersion;
  manifest["label"] = phantom.label;
  manifest["dims"] = json::array({g.dims.x, g.dims.y, g.dims.z});
  manifest["spacing_mm"] = vec_json(g.spacing_mm);
  manifest["origin_mm"] = vec_json(g.origin_mm);
  manifest["ct_file"] = "ct.raw";
  json structures = json::array();
  for (const auto& s : phantom.structures) {
    json entry{{"name", s.name}, {"kind", kind_name(s.kind)}, {"mask_file", "mask_" + s.name + ".raw"}};
    if (s.dose_limit_gy) entry["dose_limit_gy"] = *s.dose_limit_gy;
    if (s.target_dose_gy) entry["target_dose_gy"] = *s.target_dose_gy;
    structures.push_back(entry);
  }
  manifest["structures"] = structures;

  try {
    rawio::write_f32(dir / "ct.raw", phantom.ct.hu);
    for (const auto& s : phantom.structures) rawio::write_u8(dir / ("mask_" + s.name + ".raw"), s.mask);
    rawio::write_json(dir / "manifest.json", manifest);
  } catch (const std::runtime_error& e) {
    throw PhantomError(PhantomError::Kind::io, e.what());
  }
}

Phantom load_phantom(const fs::path& dir) {
  using K = PhantomError::Kind;
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path))
    throw PhantomError(K::malformed_manifest, "missing " + manifest_path.string());

  json m;
  try {
    m = json::parse(rawio::read_text(manifest_path));
  } catch (const json::exception& e) {
    throw PhantomError(K::malformed_manifest, manifest_path.string() + ": " + e.what());
  }
  if (!m.is_object()) throw PhantomError(K::malformed_manifest, "manifest is not a JSON object");
  if (!m.contains("format_version") || !m["format_version"].is_number_integer())
    throw PhantomError(K::malformed_manifest, "manifest lacks an integer format_version");
  if (m["format_version"].get<int>() != kPhantomFormatVersion)
    throw PhantomError(K::unknown_version,
                       "unsupported phantom format_version " + m["format_version"].dump());

  Phantom p;
  try {
    p.label = m.at("label").get<std::string>();
    const auto dims = m.at("dims").get<std::array<int, 3>>();
    const auto spacing = m.at("spacing_mm").get<std::array<double, 3>>();
    const auto origin = m.at("origin_mm").get<std::array<double, 3>>();
    p.ct.geometry = {{dims[0], dims[1], dims[2]},
                     {spacing[0], spacing[1], spacing[2]},
                     {origin[0], origin[1], origin[2]}};
    p.ct.geometry.validate();

    const std::size_t n = p.ct.geometry.voxel_count();
    std::vector<float> hu = rawio::read_f32(dir / m.at("ct_file").get<std::string>());
    if (hu.size() != n)
      throw PhantomError(K::size_mismatch, "CT payload has " + std::to_string(hu.size()) +
                                               " values, manifest dims need " + std::to_string(n));
    for (float& v : hu) {
      if (!std::isfinite(v)) throw PhantomError(K::malformed_manifest, "CT payload holds non-finite HU");
      v = std::max(v, -1000.0f);
    }
    p.ct.hu = std::move(hu);

    for (const auto& entry : m.at("structures")) {
      Structure s;
      s.name = entry.at("name").get<std::string>();
      const auto kind = entry.at("kind").get<std::string>();
      if (kind == "PTV") s.kind = StructureKind::ptv;
      else if (kind == "OAR") s.kind = StructureKind::oar;
      else throw PhantomError(K::malformed_manifest, "unknown structure kind '" + kind + "'");
      if (entry.contains("dose_limit_gy")) s.dose_limit_gy = entry["dose_limit_gy"].get<double>();
      if (entry.contains("target_dose_gy")) s.target_dose_gy = entry["target_dose_gy"].get<double>();
      s.mask = rawio::read_u8(dir / entry.at("mask_file").get<std::string>());
      if (s.mask.size() != n)
        throw PhantomError(K::size_mismatch, "mask '" + s.name + "' has " + std::to_string(s.mask.size()) +
                                                 " bytes, manifest dims need " + std::to_string(n));
      p.structures.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw PhantomError(K::malformed_manifest, std::string("manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw PhantomError(K::malformed_manifest, std::string("manifest: ") + e.what());
  } catch (const std::length_error& e) {
    throw PhantomError(K::size_mismatch, e.what());
  } catch (const PhantomError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw PhantomError(K::io, e.what());
  }

  p.validate();
  return p;
}

}  // namespace beamplan
