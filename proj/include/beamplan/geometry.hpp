#pragma once

#include <cmath>
#include <cstddef>
#include <string>

namespace beamplan {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;

  double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  double& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
};

inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

struct Index3 {
  int x = 0;
  int y = 0;
  int z = 0;

  friend bool operator==(const Index3&, const Index3&) = default;
  int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
};

// Regular voxel lattice. origin_mm is the world position of the centre of
// voxel (0,0,0); voxel (i,j,k) occupies [centre - spacing/2, centre + spacing/2).
// Flat storage is x-fastest: index = i + nx * (j + ny * k).
struct GridGeometry {
  Index3 dims{1, 1, 1};
  Vec3 spacing_mm{1.0, 1.0, 1.0};
  Vec3 origin_mm{};

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims.x) * static_cast<std::size_t>(dims.y) *
           static_cast<std::size_t>(dims.z);
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims.x) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims.y) * static_cast<std::size_t>(k));
  }
  Index3 unflatten(std::size_t flat) const {
    const auto nx = static_cast<std::size_t>(dims.x);
    const auto ny = static_cast<std::size_t>(dims.y);
    return {static_cast<int>(flat % nx), static_cast<int>((flat / nx) % ny),
            static_cast<int>(flat / (nx * ny))};
  }
  Vec3 voxel_center(int i, int j, int k) const {
    return {origin_mm.x + i * spacing_mm.x, origin_mm.y + j * spacing_mm.y,
            origin_mm.z + k * spacing_mm.z};
  }
  // Lower corner of the lattice box.
  Vec3 box_min() const { return origin_mm - 0.5 * spacing_mm; }
  Vec3 box_max() const {
    return {box_min().x + dims.x * spacing_mm.x, box_min().y + dims.y * spacing_mm.y,
            box_min().z + dims.z * spacing_mm.z};
  }
  double min_spacing() const {
    return std::fmin(spacing_mm.x, std::fmin(spacing_mm.y, spacing_mm.z));
  }

  // Throws std::invalid_argument when dims < 1, spacing is not positive and
  // finite, or the voxel count overflows.
  void validate() const;
};

std::string to_string(Index3 v);

}  // namespace beamplan
