#pragma once
// Voxel phantoms: CT numbers plus dense structure masks on one lattice.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "beamplan/geometry.hpp"

namespace beamplan {

class PhantomError : public std::runtime_error {
 public:
  enum class Kind {
    construction,        // generator could not place a structure
    validation,          // a phantom invariant does not hold
    malformed_manifest,  // manifest missing, unparsable or missing fields
    size_mismatch,       // raw payload length disagrees with manifest dims
    unknown_version,     // manifest format_version is not supported
    io,                  // filesystem failure
  };

  PhantomError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct CtVolume {
  GridGeometry geometry;
  std::vector<float> hu;  // x-fastest, length geometry.voxel_count()

  friend bool operator==(const CtVolume&, const CtVolume&) = default;
};

enum class StructureKind { ptv, oar };

struct Structure {
  std::string name;
  StructureKind kind = StructureKind::oar;
  std::vector<std::uint8_t> mask;  // 0/1 per voxel
  std::optional<double> dose_limit_gy;   // OAR only
  std::optional<double> target_dose_gy;  // PTV only

  std::size_t voxel_count() const;
  friend bool operator==(const Structure&, const Structure&) = default;
};

struct Phantom {
  CtVolume ct;
  std::vector<Structure> structures;
  std::string label;

  const GridGeometry& geometry() const { return ct.geometry; }
  const Structure& ptv() const;
  const Structure* find(const std::string& name) const;

  // Throws PhantomError(validation) on the first violated invariant.
  void validate() const;

  friend bool operator==(const Phantom&, const Phantom&) = default;
};

// Clinical-style default OAR limits; all configurable.
struct PhantomOptions {
  double target_dose_gy = 100.0;
  double rectum_limit_gy = 50.0;
  double bladder_limit_gy = 65.0;
  double femoral_heads_limit_gy = 45.0;
};

// Water-equivalent elliptical body in air with a spherical "prostate" PTV at
// the isocentre, bladder anterior (+y), rectum posterior (-y) and two bony
// femoral heads at +-x. The seed moves centres and scales radii by at most 10%.
// Equal inputs give bit-identical phantoms.
Phantom generate_prostate_phantom(Index3 dims, Vec3 spacing_mm, std::uint64_t seed,
                                  const PhantomOptions& options = {});

// The smallest body semi-axis of a generated phantom with these dims.
double body_radius_mm(Index3 dims, Vec3 spacing_mm);

// Linear HU model through (-1000, 0) and (0, mu_water); clipped at 0.
double hu_to_attenuation(double hu, double mu_water_per_mm);

// Centroid of a mask in voxel-index space (exact for symmetric masks).
Vec3 mask_centroid_index(const GridGeometry& geometry, const std::vector<std::uint8_t>& mask);
Vec3 mask_centroid_mm(const GridGeometry& geometry, const std::vector<std::uint8_t>& mask);

inline constexpr int kPhantomFormatVersion = 1;

// Directory holding manifest.json, ct.raw and one mask_<name>.raw per structure.
void save_phantom(const Phantom& phantom, const std::filesystem::path& dir);
Phantom load_phantom(const std::filesystem::path& dir);

}  // namespace beamplan
