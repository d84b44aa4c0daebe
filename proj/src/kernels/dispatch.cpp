#include "beamplan/kernels.hpp"

#include "kernels_impl.hpp"

#include <cstdlib>
#include <string>

namespace beamplan::kernels {
namespace {

constexpr KernelTable kScalar{scalar::axpy,       scalar::scale,
                              scalar::hu_to_mu,   scalar::dot,
                              scalar::masked_sum, scalar::masked_excess_sum,
                              scalar::count_at_least};

#if defined(BEAMPLAN_HAVE_AVX2)
constexpr KernelTable kAvx2{avx2::axpy,       avx2::scale,
                            avx2::hu_to_mu,   avx2::dot,
                            avx2::masked_sum, avx2::masked_excess_sum,
                            avx2::count_at_least};
#endif

bool cpu_has_avx2() {
#if defined(BEAMPLAN_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Isa resolve() {
  if (const char* forced = std::getenv("BEAMPLAN_SIMD")) {
    if (std::string(forced) == "scalar") return Isa::scalar;
  }
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

const KernelTable* avx2_table() {
#if defined(BEAMPLAN_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

Isa active_isa() {
  static const Isa isa = resolve();
  return isa;
}

const KernelTable& active() {
  static const KernelTable& table = active_isa() == Isa::avx2 ? *avx2_table() : kScalar;
  return table;
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

}  // namespace beamplan::kernels
