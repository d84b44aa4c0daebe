#pragma once
// Internal declarations for the per-ISA kernel translation units.

#include <cstddef>
#include <cstdint>

namespace beamplan::kernels::scalar {
void axpy(double a, const double* x, double* y, std::size_t n);
void scale(double a, double* y, std::size_t n);
void hu_to_mu(const float* hu, double mu_water, double* out, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
double masked_sum(const double* v, const std::uint8_t* mask, std::size_t n);
double masked_excess_sum(const double* v, const std::uint8_t* mask, double limit, std::size_t n);
std::size_t count_at_least(const double* v, double threshold, std::size_t n);
}  // namespace beamplan::kernels::scalar

#if defined(BEAMPLAN_HAVE_AVX2)
namespace beamplan::kernels::avx2 {
void axpy(double a, const double* x, double* y, std::size_t n);
void scale(double a, double* y, std::size_t n);
void hu_to_mu(const float* hu, double mu_water, double* out, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
double masked_sum(const double* v, const std::uint8_t* mask, std::size_t n);
double masked_excess_sum(const double* v, const std::uint8_t* mask, double limit, std::size_t n);
std::size_t count_at_least(const double* v, double threshold, std::size_t n);
}  // namespace beamplan::kernels::avx2
#endif
