#include "projlens/kernels.hpp"

#include <atomic>

#include "kernels_impl.hpp"

namespace projlens::kernels {

const KernelTable& scalar() {
  static const KernelTable table{"scalar", detail::gemm_scalar, detail::dot_scalar,
                                 detail::axpy_scalar, detail::dot_f64_scalar,
                                 detail::rotate_f64_scalar};
  return table;
}

const KernelTable* avx2() {
#if defined(PROJLENS_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2");
  static const KernelTable table{"avx2", detail::gemm_avx2, detail::dot_avx2, detail::axpy_avx2,
                                 detail::dot_f64_avx2, detail::rotate_f64_avx2};
  return supported ? &table : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon() {
#if defined(PROJLENS_HAVE_NEON)
  static const KernelTable table{"neon", detail::gemm_neon, detail::dot_neon, detail::axpy_neon,
                                 detail::dot_f64_neon, detail::rotate_f64_neon};
  return &table;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* detect() {
  if (const KernelTable* t = avx2()) return t;
  if (const KernelTable* t = neon()) return t;
  return &scalar();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{detect()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(const KernelTable& table) { current().store(&table, std::memory_order_release); }

}  // namespace projlens::kernels
