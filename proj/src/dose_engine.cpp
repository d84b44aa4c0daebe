#include "beamplan/dose_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "beamplan/kernels.hpp"
#include "beamplan/raw_io.hpp"

namespace beamplan {

double normalize_angle_deg(double degrees) {
  if (!std::isfinite(degrees)) throw std::invalid_argument("gantry angle must be finite");
  double a = std::fmod(degrees, 360.0);
  if (a < 0.0) a += 360.0;
  if (a >= 360.0) a = 0.0;  // -tiny + 360 rounds up
  return a;
}

int angle_key_deg(double degrees) {
  return static_cast<int>(std::lround(normalize_angle_deg(degrees))) % 360;
}

BeamSpec::BeamSpec(double angle_deg, double w) : gantry_angle_deg(normalize_angle_deg(angle_deg)), weight(w) {}

Plan Plan::from_angles(std::span<const double> angles_deg) {
  Plan p;
  p.beams.reserve(angles_deg.size());
  for (double a : angles_deg) p.beams.emplace_back(a);
  return p;
}

std::vector<double> Plan::angles() const {
  std::vector<double> out;
  out.reserve(beams.size());
  for (const auto& b : beams) out.push_back(b.gantry_angle_deg);
  return out;
}

void Plan::validate(int max_beams) const {
  if (beams.empty()) throw std::invalid_argument("plan has no beams");
  if (static_cast<int>(beams.size()) > max_beams)
    throw std::invalid_argument("plan has " + std::to_string(beams.size()) + " beams, max is " +
                                std::to_string(max_beams));
  std::vector<int> keys;
  for (const auto& b : beams) {
    if (!(b.weight > 0.0) || !std::isfinite(b.weight))
      throw std::invalid_argument("beam weight must be positive and finite");
    if (!(b.gantry_angle_deg >= 0.0 && b.gantry_angle_deg < 360.0))
      throw std::invalid_argument("beam angle not normalised to [0, 360)");
    keys.push_back(angle_key_deg(b.gantry_angle_deg));
  }
  std::sort(keys.begin(), keys.end());
  if (std::adjacent_find(keys.begin(), keys.end()) != keys.end())
    throw std::invalid_argument("plan angles must be distinct at 1 degree resolution");
}

void EngineConfig::validate(const GridGeometry& g) const {
  auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!(mu_water_per_mm > 0.0) || !std::isfinite(mu_water_per_mm))
    throw std::invalid_argument("engine: mu_water_per_mm must be positive");
  if (!finite_nonneg(beam_margin_mm)) throw std::invalid_argument("engine: beam_margin_mm must be >= 0");
  if (!finite_nonneg(penumbra_sigma_mm)) throw std::invalid_argument("engine: penumbra_sigma_mm must be >= 0");
  if (!(ray_spacing_mm > 0.0) || !std::isfinite(ray_spacing_mm))
    throw std::invalid_argument("engine: ray_spacing_mm must be positive");
  if (ray_spacing_mm > g.min_spacing())
    throw std::invalid_argument("engine: ray_spacing_mm exceeds the smallest voxel spacing");
}

// ---------------------------------------------------------------------------
// Ray traversal

std::vector<RaySegment> trace_ray(const GridGeometry& g, Vec3 start, Vec3 dir, double max_length) {
  if (std::abs(norm(dir) - 1.0) > 1e-9) throw std::invalid_argument("trace_ray: direction must be a unit vector");
  const Vec3 lo = g.box_min(), hi = g.box_max();

  double t_enter = 0.0, t_exit = max_length;
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (start[a] < lo[a] || start[a] >= hi[a]) return {};
      continue;
    }
    const double ta = (lo[a] - start[a]) / dir[a];
    const double tb = (hi[a] - start[a]) / dir[a];
    t_enter = std::max(t_enter, std::min(ta, tb));
    t_exit = std::min(t_exit, std::max(ta, tb));
  }
  if (!(t_enter < t_exit)) return {};

  const int n[3] = {g.dims.x, g.dims.y, g.dims.z};
  int idx[3], step[3];
  double t_next[3];
  auto boundary_t = [&](int a) {
    if (step[a] == 0) return std::numeric_limits<double>::infinity();
    const int face = step[a] > 0 ? idx[a] + 1 : idx[a];
    return (lo[a] + face * g.spacing_mm[a] - start[a]) / dir[a];
  };
  for (int a = 0; a < 3; ++a) {
    const double p = start[a] + t_enter * dir[a];
    idx[a] = std::clamp(static_cast<int>(std::floor((p - lo[a]) / g.spacing_mm[a])), 0, n[a] - 1);
    step[a] = dir[a] > 0.0 ? 1 : (dir[a] < 0.0 ? -1 : 0);
  }
  for (int a = 0; a < 3; ++a) t_next[a] = boundary_t(a);

  std::vector<RaySegment> segments;
  segments.reserve(static_cast<std::size_t>(n[0] + n[1] + n[2]));
  double t = t_enter;
  for (;;) {
    int axis = 0;
    if (t_next[1] < t_next[axis]) axis = 1;
    if (t_next[2] < t_next[axis]) axis = 2;
    const double t_end = std::min(t_next[axis], t_exit);
    if (t_end > t) segments.push_back({g.index(idx[0], idx[1], idx[2]), t_end - t});
    if (t_next[axis] >= t_exit) break;
    idx[axis] += step[axis];
    if (idx[axis] < 0 || idx[axis] >= n[axis]) break;
    t = std::max(t, t_end);
    t_next[axis] = boundary_t(axis);
  }
  return segments;
}

BeamFrame beam_frame(double gantry_angle_deg) {
  const double a = normalize_angle_deg(gantry_angle_deg);
  const int quadrant = std::min(static_cast<int>(a / 90.0), 3);
  const double rem = a - 90.0 * quadrant;  // exact
  const double rad = rem * std::numbers::pi / 180.0;
  const double s = rem == 0.0 ? 0.0 : std::sin(rad);
  const double c = rem == 0.0 ? 1.0 : std::cos(rad);
  // Source position on the unit circle, rotated a quadrant at a time with
  // exact swaps: R(x, y) = (y, -x).
  Vec3 source{s, c, 0.0};
  for (int q = 0; q < quadrant; ++q) source = {source.y, -source.x, 0.0};
  return {{-source.x, -source.y, 0.0}, {source.y, -source.x, 0.0}};
}

// ---------------------------------------------------------------------------
// Engine

DoseEngine::DoseEngine(std::shared_ptr<const Phantom> phantom, EngineConfig cfg)
    : phantom_(std::move(phantom)), cfg_(cfg) {
  if (!phantom_) throw std::invalid_argument("DoseEngine: null phantom");
  const GridGeometry& g = phantom_->geometry();
  cfg_.validate(g);
  const Structure& ptv = phantom_->ptv();
  if (ptv.mask.size() != g.voxel_count()) throw std::invalid_argument("DoseEngine: PTV mask not congruent");

  ptv_lo_ = {g.dims.x, g.dims.y, g.dims.z};
  ptv_hi_ = {-1, -1, -1};
  for (int k = 0; k < g.dims.z; ++k)
    for (int j = 0; j < g.dims.y; ++j)
      for (int i = 0; i < g.dims.x; ++i)
        if (ptv.mask[g.index(i, j, k)]) {
          ++ptv_count_;
          ptv_lo_ = {std::min(ptv_lo_.x, i), std::min(ptv_lo_.y, j), std::min(ptv_lo_.z, k)};
          ptv_hi_ = {std::max(ptv_hi_.x, i), std::max(ptv_hi_.y, j), std::max(ptv_hi_.z, k)};
        }
  if (ptv_count_ == 0) throw std::invalid_argument("DoseEngine: empty PTV, beam field cannot be sized");

  iso_index_ = mask_centroid_index(g, ptv.mask);
  iso_mm_ = mask_centroid_mm(g, ptv.mask);
  mu_.resize(g.voxel_count());
  kernels::hu_to_mu(phantom_->ct.hu, cfg_.mu_water_per_mm, mu_);
}

DoseGrid DoseEngine::trace_unit_beam(double angle_deg) const {
  const GridGeometry& g = phantom_->geometry();
  const BeamFrame frame = beam_frame(angle_deg);
  const Vec3 sp = g.spacing_mm;

  // PTV box corners relative to the isocentre, in index space first so that
  // symmetric targets give exactly antisymmetric extents.
  double lat_lo = std::numeric_limits<double>::infinity();
  double lat_hi = -lat_lo;
  for (double cx : {ptv_lo_.x - 0.5, ptv_hi_.x + 0.5})
    for (double cy : {ptv_lo_.y - 0.5, ptv_hi_.y + 0.5}) {
      const Vec3 rel{(cx - iso_index_.x) * sp.x, (cy - iso_index_.y) * sp.y, 0.0};
      const double u = dot(rel, frame.lateral);
      lat_lo = std::min(lat_lo, u);
      lat_hi = std::max(lat_hi, u);
    }
  lat_lo -= cfg_.beam_margin_mm;
  lat_hi += cfg_.beam_margin_mm;
  const double rs = cfg_.ray_spacing_mm;
  const auto first_ray = static_cast<long>(std::ceil(lat_lo / rs));
  const auto last_ray = static_cast<long>(std::floor(lat_hi / rs));

  const double margin_slices = cfg_.beam_margin_mm / sp.z;
  const int k_lo = std::max(0, static_cast<int>(std::ceil(ptv_lo_.z - 0.5 - margin_slices)));
  const int k_hi = std::min(g.dims.z - 1, static_cast<int>(std::floor(ptv_hi_.z + 0.5 + margin_slices)));

  const double standoff = norm(g.box_max() - g.box_min()) + 1.0;
  // Each ray stands for a tube of cross-section rs * sz; dividing by the voxel
  // volume turns deposited energy per unit fluence into dose.
  const double tube_per_volume = (rs * sp.z) / (sp.x * sp.y * sp.z);

  DoseGrid out = DoseGrid::zeros(g);
  for (int k = k_lo; k <= k_hi; ++k) {
    const double z = g.origin_mm.z + k * sp.z;
    for (long r = first_ray; r <= last_ray; ++r) {
      const double offset = static_cast<double>(r) * rs;
      const Vec3 start{iso_mm_.x + offset * frame.lateral.x - standoff * frame.direction.x,
                       iso_mm_.y + offset * frame.lateral.y - standoff * frame.direction.y, z};
      double depth = 0.0;
      for (const RaySegment& seg : trace_ray(g, start, frame.direction)) {
        const double mu = mu_[seg.voxel];
        if (mu > 0.0) {
          out.dose_gy[seg.voxel] += mu * std::exp(-depth) * seg.length_mm * tube_per_volume;
          depth += mu * seg.length_mm;
        }
      }
    }
  }
  if (cfg_.penumbra_sigma_mm > 0.0) gaussian_blur_inplane(out, cfg_.penumbra_sigma_mm);
  return out;
}

std::shared_ptr<const DoseGrid> DoseEngine::unit_beam_dose(double angle_deg) const {
  const double a = normalize_angle_deg(angle_deg);
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(a); it != cache_.end()) return it->second;
  }
  auto grid = std::make_shared<const DoseGrid>(trace_unit_beam(a));
  std::lock_guard lock(cache_mutex_);
  return cache_.emplace(a, std::move(grid)).first->second;
}

DoseGrid DoseEngine::beam_dose(const BeamSpec& beam) const {
  DoseGrid out = *unit_beam_dose(beam.gantry_angle_deg);
  if (beam.weight != 1.0) kernels::scale(beam.weight, out.dose_gy);
  return out;
}

DoseEngine::PlanDose DoseEngine::plan_dose(const Plan& plan, double prescription_gy, bool normalize) const {
  if (plan.beams.empty()) throw std::invalid_argument("plan_dose: plan has no beams");
  if (!(prescription_gy > 0.0)) throw std::invalid_argument("plan_dose: prescription must be positive");

  std::vector<BeamSpec> ordered = plan.beams;
  std::sort(ordered.begin(), ordered.end(), [](const BeamSpec& a, const BeamSpec& b) {
    return a.gantry_angle_deg != b.gantry_angle_deg ? a.gantry_angle_deg < b.gantry_angle_deg
                                                    : a.weight < b.weight;
  });

  PlanDose result{DoseGrid::zeros(phantom_->geometry())};
  for (const BeamSpec& beam : ordered)
    kernels::axpy(beam.weight, unit_beam_dose(beam.gantry_angle_deg)->dose_gy, result.dose.dose_gy);

  result.unscaled_ptv_mean = mean_over_mask(result.dose, phantom_->ptv().mask);
  if (!normalize) return result;
  if (!(result.unscaled_ptv_mean > 0.0)) {
    result.degenerate = true;
    return result;
  }
  result.scale = prescription_gy / result.unscaled_ptv_mean;
  kernels::scale(result.scale, result.dose.dose_gy);
  return result;
}

namespace {
std::shared_ptr<const Phantom> borrow(const Phantom& p) {
  return std::shared_ptr<const Phantom>(&p, [](const Phantom*) {});
}
}  // namespace

DoseGrid compute_beam_dose(const Phantom& phantom, const BeamSpec& beam, const EngineConfig& cfg) {
  return DoseEngine(borrow(phantom), cfg).beam_dose(beam);
}

DoseEngine::PlanDose compute_plan_dose(const Phantom& phantom, const Plan& plan, const EngineConfig& cfg,
                                       double prescription_gy, bool normalize) {
  return DoseEngine(borrow(phantom), cfg).plan_dose(plan, prescription_gy, normalize);
}

void gaussian_blur_inplane(DoseGrid& grid, double sigma_mm) {
  if (!(sigma_mm > 0.0)) return;
  const GridGeometry& g = grid.geometry;
  const auto nx = static_cast<std::size_t>(g.dims.x), ny = static_cast<std::size_t>(g.dims.y);
  const std::size_t slice = nx * ny;

  auto taps_for = [&](double spacing) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma_mm / spacing));
    std::vector<double> w(2 * radius + 1);
    double total = 0.0;
    for (int t = -radius; t <= radius; ++t) {
      const double x = t * spacing / sigma_mm;
      w[t + radius] = std::exp(-0.5 * x * x);
      total += w[t + radius];
    }
    for (double& v : w) v /= total;
    return w;
  };
  const std::vector<double> wx = taps_for(g.spacing_mm.x);
  const std::vector<double> wy = taps_for(g.spacing_mm.y);
  const long rx = static_cast<long>(wx.size() / 2), ry = static_cast<long>(wy.size() / 2);

  std::vector<double> tmp(grid.dose_gy.size(), 0.0);
  // Along x: each tap is an axpy of a shifted row.
  for (std::size_t row = 0; row < ny * static_cast<std::size_t>(g.dims.z); ++row) {
    const double* in = grid.dose_gy.data() + row * nx;
    double* out = tmp.data() + row * nx;
    for (long t = -rx; t <= rx; ++t) {
      const long lo = std::max(0L, -t), hi = std::min(static_cast<long>(nx), static_cast<long>(nx) - t);
      if (hi <= lo) continue;
      kernels::axpy(wx[t + rx], std::span<const double>(in + lo + t, hi - lo), std::span<double>(out + lo, hi - lo));
    }
  }
  // Along y: whole rows.
  std::fill(grid.dose_gy.begin(), grid.dose_gy.end(), 0.0);
  for (std::size_t k = 0; k < static_cast<std::size_t>(g.dims.z); ++k)
    for (long j = 0; j < static_cast<long>(ny); ++j) {
      double* out = grid.dose_gy.data() + k * slice + j * nx;
      for (long t = -ry; t <= ry; ++t) {
        const long src = j + t;
        if (src < 0 || src >= static_cast<long>(ny)) continue;
        kernels::axpy(wy[t + ry], std::span<const double>(tmp.data() + k * slice + src * nx, nx),
                      std::span<double>(out, nx));
      }
    }
}

double mean_over_mask(const DoseGrid& dose, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != dose.dose_gy.size()) throw std::invalid_argument("mean_over_mask: size mismatch");
  const auto count = std::count(mask.begin(), mask.end(), std::uint8_t{1});
  if (count == 0) throw std::invalid_argument("mean_over_mask: empty mask");
  return kernels::masked_sum(dose.dose_gy, mask) / static_cast<double>(count);
}

void save_dose(const DoseGrid& dose, double prescription_gy, std::span<const double> plan_angles_deg,
               const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& g = dose.geometry;
  nlohmann::json m;
  m["format_version"] = 1;
  m["dims"] = {g.dims.x, g.dims.y, g.dims.z};
  m["spacing_mm"] = {g.spacing_mm.x, g.spacing_mm.y, g.spacing_mm.z};
  m["origin_mm"] = {g.origin_mm.x, g.origin_mm.y, g.origin_mm.z};
  m["prescription_gy"] = prescription_gy;
  m["plan_angles_deg"] = std::vector<double>(plan_angles_deg.begin(), plan_angles_deg.end());
  m["dose_file"] = "dose.raw";
  std::vector<float> values(dose.dose_gy.begin(), dose.dose_gy.end());
  rawio::write_f32(dir / "dose.raw", values);
  rawio::write_json(dir / "manifest.json", m);
}

DoseGrid load_dose(const std::filesystem::path& dir) {
  const auto m = nlohmann::json::parse(rawio::read_text(dir / "manifest.json"));
  const auto dims = m.at("dims").get<std::array<int, 3>>();
  const auto sp = m.at("spacing_mm").get<std::array<double, 3>>();
  const auto org = m.at("origin_mm").get<std::array<double, 3>>();
  DoseGrid d;
  d.geometry = {{dims[0], dims[1], dims[2]}, {sp[0], sp[1], sp[2]}, {org[0], org[1], org[2]}};
  d.geometry.validate();
  const auto values = rawio::read_f32(dir / m.at("dose_file").get<std::string>());
  if (values.size() != d.geometry.voxel_count())
    throw std::runtime_error("dose payload size does not match manifest dims");
  d.dose_gy.assign(values.begin(), values.end());
  return d;
}

}  // namespace beamplan
