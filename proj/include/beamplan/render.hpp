#pragma once
// State renderings: the two-channel volume fed to the Q-network and the 2D
// slice images attached to language-model prompts.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "beamplan/environment.hpp"

namespace beamplan {

// Channel-major volume: data[(c * nz + z) * ny * nx + y * nx + x].
struct StateTensor {
  Index3 dims;
  int channels = 2;
  std::vector<double> data;

  std::size_t channel_size() const { return static_cast<std::size_t>(dims.x) * dims.y * dims.z; }
  friend bool operator==(const StateTensor&, const StateTensor&) = default;
};

// Channel 0: clamp((HU + 1000) / 2000, 0, 1). Channel 1: clamp(dose / Rx, 0, 2) / 2.
// Nearest-neighbour resampling to `dims`, each no larger than the grid.
StateTensor render_state(const EnvState& state, Index3 dims, double prescription_gy);

struct SliceImage {
  std::string view;  // axial, coronal or sagittal
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;      // row-major, 3 bytes per pixel
  std::vector<std::uint8_t> overlay;  // 1 where the dose colour ramp was blended in
};

inline constexpr int kPromptImageSize = 256;

// Axial, coronal and sagittal mid-slices through the PTV centroid: CT
// greyscale, dose blended through a fixed colour ramp wherever dose >= 5% of
// the prescription, and structure outlines.
std::vector<SliceImage> render_slices_for_prompt(const EnvState& state, double prescription_gy);

// 8-bit RGB PNG, fixed compression level.
std::string encode_png(const SliceImage& image);
void write_png(const SliceImage& image, const std::filesystem::path& path);

}  // namespace beamplan
