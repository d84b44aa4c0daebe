#pragma once
// Data-parallel inner loops shared by the dose engine, the reward, the DVH
// and the Q-network. Every kernel has a scalar reference implementation and,
// on x86-64, an AVX2 variant. The variant is picked once at runtime from the
// CPU feature bits; BEAMPLAN_SIMD=scalar in the environment forces the
// reference path.
//
// Elementwise kernels (axpy, scale, hu_to_mu, count_at_least) are bit-exact
// between variants: the AVX2 code performs the same IEEE operations in the
// same order and never fuses multiply-add. Reductions (dot, masked_sum,
// masked_excess_sum) use four-lane partial sums and agree with the scalar
// path only to rounding.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace beamplan::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // y[i] *= a
  void (*scale)(double a, double* y, std::size_t n);
  // out[i] = mu_water * max(0, 1 + hu[i] / 1000)
  void (*hu_to_mu)(const float* hu, double mu_water, double* out, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  // sum of values[i] where mask[i] != 0
  double (*masked_sum)(const double* values, const std::uint8_t* mask, std::size_t n);
  // sum of max(0, values[i] - limit) where mask[i] != 0
  double (*masked_excess_sum)(const double* values, const std::uint8_t* mask, double limit,
                              std::size_t n);
  // number of values[i] >= threshold
  std::size_t (*count_at_least)(const double* values, double threshold, std::size_t n);
};

const KernelTable& scalar_table();
// Null when the build or the CPU lacks AVX2.
const KernelTable* avx2_table();

// The table used by the library. Resolved on first call.
const KernelTable& active();
Isa active_isa();
std::string_view isa_name(Isa isa);

// Span front-ends over active().

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}
inline void scale(double a, std::span<double> y) { active().scale(a, y.data(), y.size()); }
inline void hu_to_mu(std::span<const float> hu, double mu_water, std::span<double> out) {
  active().hu_to_mu(hu.data(), mu_water, out.data(), hu.size());
}
inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline double masked_sum(std::span<const double> v, std::span<const std::uint8_t> mask) {
  return active().masked_sum(v.data(), mask.data(), v.size());
}
inline double masked_excess_sum(std::span<const double> v, std::span<const std::uint8_t> mask,
                                double limit) {
  return active().masked_excess_sum(v.data(), mask.data(), limit, v.size());
}
inline std::size_t count_at_least(std::span<const double> v, double threshold) {
  return active().count_at_least(v.data(), threshold, v.size());
}

}  // namespace beamplan::kernels
