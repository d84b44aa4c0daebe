#pragma once
// Shared helpers for the unit and acceptance binaries.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

#include "beamplan/phantom.hpp"

namespace testsupport {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("beamplan_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline beamplan::GridGeometry centred_grid(beamplan::Index3 dims, beamplan::Vec3 spacing) {
  beamplan::GridGeometry g;
  g.dims = dims;
  g.spacing_mm = spacing;
  g.origin_mm = {-0.5 * (dims.x - 1) * spacing.x, -0.5 * (dims.y - 1) * spacing.y, -0.5 * (dims.z - 1) * spacing.z};
  return g;
}

// Uniform HU block with a spherical PTV of radius r_vox voxels at the centre voxel.
inline beamplan::Phantom uniform_phantom(beamplan::Index3 dims, double spacing, double r_vox, float hu = 0.0f) {
  beamplan::Phantom p;
  p.label = "uniform";
  p.ct.geometry = centred_grid(dims, {spacing, spacing, spacing});
  p.ct.hu.assign(p.ct.geometry.voxel_count(), hu);
  beamplan::Structure ptv{"target", beamplan::StructureKind::ptv, {}, std::nullopt, 100.0};
  ptv.mask.assign(p.ct.geometry.voxel_count(), 0);
  const double cx = (dims.x - 1) / 2.0, cy = (dims.y - 1) / 2.0, cz = (dims.z - 1) / 2.0;
  for (int k = 0; k < dims.z; ++k)
    for (int j = 0; j < dims.y; ++j)
      for (int i = 0; i < dims.x; ++i) {
        const double d2 = (i - cx) * (i - cx) + (j - cy) * (j - cy) + (k - cz) * (k - cz);
        if (d2 <= r_vox * r_vox) ptv.mask[p.ct.geometry.index(i, j, k)] = 1;
      }
  p.structures.push_back(std::move(ptv));
  return p;
}

inline std::shared_ptr<const beamplan::Phantom> standard_phantom() {
  static const auto ph = std::make_shared<const beamplan::Phantom>(
      beamplan::generate_prostate_phantom({32, 32, 32}, {4.0, 4.0, 4.0}, 0));
  return ph;
}

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(BEAMPLAN_FIXTURE_DIR) / name;
}

}  // namespace testsupport
