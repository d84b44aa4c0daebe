#include "kernels_impl.hpp"

namespace beamplan::kernels::scalar {

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double p = a * x[i];
    y[i] = y[i] + p;
  }
}

void scale(double a, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] * a;
}

void hu_to_mu(const float* hu, double mu_water, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double rel = static_cast<double>(hu[i]) / 1000.0 + 1.0;
    out[i] = (rel > 0.0 ? rel : 0.0) * mu_water;
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double masked_sum(const double* v, const std::uint8_t* mask, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) s += v[i];
  return s;
}

double masked_excess_sum(const double* v, const std::uint8_t* mask, double limit, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) {
      const double d = v[i] - limit;
      s += d > 0.0 ? d : 0.0;
    }
  return s;
}

std::size_t count_at_least(const double* v, double threshold, std::size_t n) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < n; ++i) c += v[i] >= threshold ? 1 : 0;
  return c;
}

}  // namespace beamplan::kernels::scalar
