#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "beamplan/dose_engine.hpp"

namespace beamplan {

// Cumulative dose-volume histogram: volume_fraction[k] is the fraction of
// mask voxels receiving at least dose_edges_gy[k].
struct DvhCurve {
  std::string structure_name;
  std::vector<double> dose_edges_gy;
  std::vector<double> volume_fraction;
};

// bins + 1 edges, uniform on [0, max_dose_gy].
DvhCurve dvh(const DoseGrid& dose, const std::vector<std::uint8_t>& mask, int bins, double max_dose_gy,
             std::string structure_name = {});

}  // namespace beamplan
