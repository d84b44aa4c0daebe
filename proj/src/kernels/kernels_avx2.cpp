// Compiled with -mavx2 only; nothing here may run before the dispatcher has
// checked the CPU. No FMA: mul and add stay separate so elementwise results
// match the scalar reference bit for bit.
#include "kernels_impl.hpp"

#include <immintrin.h>

#include <bit>
#include <cstring>

namespace beamplan::kernels::avx2 {
namespace {

inline __m256d load_mask4(const std::uint8_t* mask) {
  std::int32_t packed;
  std::memcpy(&packed, mask, sizeof(packed));
  const __m256i wide = _mm256_cvtepu8_epi64(_mm_cvtsi32_si128(packed));
  const __m256i is_zero = _mm256_cmpeq_epi64(wide, _mm256_setzero_si256());
  // all-ones where mask != 0
  return _mm256_castsi256_pd(_mm256_xor_si256(is_zero, _mm256_set1_epi64x(-1)));
}

inline double hsum(__m256d v) {
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, v);
  return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
}

}  // namespace

void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d p = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), p));
  }
  scalar::axpy(a, x + i, y + i, n - i);
}

void scale(double a, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(y + i), va));
  scalar::scale(a, y + i, n - i);
}

void hu_to_mu(const float* hu, double mu_water, double* out, std::size_t n) {
  const __m256d thousand = _mm256_set1_pd(1000.0);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d zero = _mm256_setzero_pd();
  const __m256d mu = _mm256_set1_pd(mu_water);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d h = _mm256_cvtps_pd(_mm_loadu_ps(hu + i));
    const __m256d rel = _mm256_add_pd(_mm256_div_pd(h, thousand), one);
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_max_pd(rel, zero), mu));
  }
  scalar::hu_to_mu(hu + i, mu_water, out + i, n - i);
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  return hsum(acc) + scalar::dot(a + i, b + i, n - i);
}

double masked_sum(const double* v, const std::uint8_t* mask, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_add_pd(acc, _mm256_and_pd(load_mask4(mask + i), _mm256_loadu_pd(v + i)));
  return hsum(acc) + scalar::masked_sum(v + i, mask + i, n - i);
}

double masked_excess_sum(const double* v, const std::uint8_t* mask, double limit, std::size_t n) {
  const __m256d lim = _mm256_set1_pd(limit);
  const __m256d zero = _mm256_setzero_pd();
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d excess = _mm256_max_pd(_mm256_sub_pd(_mm256_loadu_pd(v + i), lim), zero);
    acc = _mm256_add_pd(acc, _mm256_and_pd(load_mask4(mask + i), excess));
  }
  return hsum(acc) + scalar::masked_excess_sum(v + i, mask + i, limit, n - i);
}

std::size_t count_at_least(const double* v, double threshold, std::size_t n) {
  const __m256d thr = _mm256_set1_pd(threshold);
  std::size_t c = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const int bits = _mm256_movemask_pd(_mm256_cmp_pd(_mm256_loadu_pd(v + i), thr, _CMP_GE_OQ));
    c += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(bits)));
  }
  return c + scalar::count_at_least(v + i, threshold, n - i);
}

}  // namespace beamplan::kernels::avx2
