#pragma once
// Deterministic first-order photon dose surrogate: parallel coplanar beams,
// exponential attenuation of primary fluence along voxel-traversed rays and an
// optional in-plane Gaussian penumbra. No scatter.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "beamplan/geometry.hpp"
#include "beamplan/phantom.hpp"

namespace beamplan {

// Maps any finite angle into [0, 360).
double normalize_angle_deg(double degrees);
// Angle rounded to the nearest whole degree, mod 360. Two beams clash when
// their keys are equal.
int angle_key_deg(double degrees);

struct BeamSpec {
  double gantry_angle_deg = 0.0;
  double weight = 1.0;

  BeamSpec() = default;
  BeamSpec(double angle_deg, double w = 1.0);
  friend bool operator==(const BeamSpec&, const BeamSpec&) = default;
};

struct Plan {
  std::vector<BeamSpec> beams;

  static Plan from_angles(std::span<const double> angles_deg);
  std::vector<double> angles() const;
  // Throws std::invalid_argument unless 1 <= size <= max_beams, weights are
  // positive and angles are distinct at 1 degree resolution.
  void validate(int max_beams) const;
  friend bool operator==(const Plan&, const Plan&) = default;
};

struct DoseGrid {
  GridGeometry geometry;
  std::vector<double> dose_gy;  // x-fastest

  static DoseGrid zeros(const GridGeometry& g) { return {g, std::vector<double>(g.voxel_count(), 0.0)}; }
  friend bool operator==(const DoseGrid&, const DoseGrid&) = default;
};

struct EngineConfig {
  double mu_water_per_mm = 0.005;
  double beam_margin_mm = 5.0;
  double penumbra_sigma_mm = 3.0;  // 0 disables the blur
  double ray_spacing_mm = 1.0;

  void validate(const GridGeometry& g) const;
  friend bool operator==(const EngineConfig&, const EngineConfig&) = default;
};

struct RaySegment {
  std::size_t voxel = 0;
  double length_mm = 0.0;
};

// Voxels crossed by the ray start + t*direction for 0 <= t < max_length_mm,
// in traversal order, with the chord length inside each. Incremental
// voxel-boundary stepping; a miss yields an empty list.
std::vector<RaySegment> trace_ray(const GridGeometry& geometry, Vec3 start_mm, Vec3 direction,
                                  double max_length_mm = std::numeric_limits<double>::infinity());

// Beam frame for a gantry angle. Angle 0 enters from +y; the source turns
// clockwise seen from +z, so 90 degrees enters from +x. Multiples of 90 are exact.
struct BeamFrame {
  Vec3 direction;  // unit propagation direction (source -> isocentre)
  Vec3 lateral;    // in-plane unit vector across the field
};
BeamFrame beam_frame(double gantry_angle_deg);

// Caches the attenuation map and field geometry of one phantom and, per angle,
// the unit-weight beam dose. Safe for concurrent use.
class DoseEngine {
 public:
  DoseEngine(std::shared_ptr<const Phantom> phantom, EngineConfig cfg);

  const Phantom& phantom() const { return *phantom_; }
  const EngineConfig& config() const { return cfg_; }
  Vec3 isocenter_mm() const { return iso_mm_; }

  DoseGrid beam_dose(const BeamSpec& beam) const;

  struct PlanDose {
    DoseGrid dose;
    double scale = 1.0;            // applied normalisation factor
    double unscaled_ptv_mean = 0.0;
    bool degenerate = false;       // unscaled PTV mean was 0; grid left unscaled
  };
  // Beams are summed in ascending angle order, then the whole grid is scaled so
  // the PTV mean equals prescription_gy (skipped when normalize is false).
  PlanDose plan_dose(const Plan& plan, double prescription_gy, bool normalize = true) const;

 private:
  std::shared_ptr<const DoseGrid> unit_beam_dose(double angle_deg) const;
  DoseGrid trace_unit_beam(double angle_deg) const;

  std::shared_ptr<const Phantom> phantom_;
  EngineConfig cfg_;
  std::vector<double> mu_;
  Vec3 iso_mm_;
  Vec3 iso_index_;
  Index3 ptv_lo_;
  Index3 ptv_hi_;
  std::size_t ptv_count_ = 0;

  mutable std::mutex cache_mutex_;
  mutable std::map<double, std::shared_ptr<const DoseGrid>> cache_;
};

// One-shot wrappers without caching.
DoseGrid compute_beam_dose(const Phantom& phantom, const BeamSpec& beam, const EngineConfig& cfg);
DoseEngine::PlanDose compute_plan_dose(const Phantom& phantom, const Plan& plan, const EngineConfig& cfg,
                                       double prescription_gy, bool normalize = true);

// In-place separable Gaussian blur in the x-y plane of every slice; zero
// outside the grid.
void gaussian_blur_inplane(DoseGrid& grid, double sigma_mm);

double mean_over_mask(const DoseGrid& dose, const std::vector<std::uint8_t>& mask);

// Dose export: manifest.json + dose.raw (little-endian float32, x-fastest).
void save_dose(const DoseGrid& dose, double prescription_gy, std::span<const double> plan_angles_deg,
               const std::filesystem::path& dir);
DoseGrid load_dose(const std::filesystem::path& dir);

}  // namespace beamplan
