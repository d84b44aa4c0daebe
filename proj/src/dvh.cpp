#include "beamplan/dvh.hpp"

#include <stdexcept>

#include "beamplan/kernels.hpp"

namespace beamplan {

DvhCurve dvh(const DoseGrid& dose, const std::vector<std::uint8_t>& mask, int bins, double max_dose_gy,
             std::string structure_name) {
  if (mask.size() != dose.dose_gy.size()) throw std::invalid_argument("dvh: mask not congruent with dose");
  if (bins < 1) throw std::invalid_argument("dvh: bins must be >= 1");
  if (!(max_dose_gy > 0.0)) throw std::invalid_argument("dvh: max_dose_gy must be > 0");

  std::vector<double> inside;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) inside.push_back(dose.dose_gy[i]);
  if (inside.empty()) throw std::invalid_argument("dvh: empty mask");

  DvhCurve c{std::move(structure_name), {}, {}};
  c.dose_edges_gy.reserve(bins + 1);
  c.volume_fraction.reserve(bins + 1);
  const auto n = static_cast<double>(inside.size());
  for (int k = 0; k <= bins; ++k) {
    const double edge = max_dose_gy * k / bins;
    c.dose_edges_gy.push_back(edge);
    c.volume_fraction.push_back(static_cast<double>(kernels::count_at_least(inside, edge)) / n);
  }
  return c;
}

}  // namespace beamplan
