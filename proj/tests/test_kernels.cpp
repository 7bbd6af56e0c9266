#include <doctest.h>

#include <cstring>
#include <vector>

#include "projlens/kernels.hpp"
#include "projlens/rng.hpp"

using namespace projlens;

namespace {

std::vector<const kernels::KernelTable*> simd_variants() {
  std::vector<const kernels::KernelTable*> out;
  if (auto* t = kernels::avx2()) out.push_back(t);
  if (auto* t = kernels::neon()) out.push_back(t);
  return out;
}

std::vector<float> random_floats(Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.normal() * 10.0);
  return v;
}

std::vector<double> random_doubles(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("active kernel is one of the compiled variants") {
  const auto& a = kernels::active();
  MESSAGE("active kernels: " << a.name);
  CHECK((a.name == "scalar" || a.name == "avx2" || a.name == "neon"));
}

TEST_CASE("SIMD variants are bit-identical to the scalar reference") {
  const auto& ref = kernels::scalar();
  const auto variants = simd_variants();
  if (variants.empty()) MESSAGE("no SIMD variant on this host; equivalence is vacuous");
  Rng rng(1234);
  for (const auto* simd : variants) {
    CAPTURE(simd->name);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t m = 1 + rng.below(13), k = 1 + rng.below(40), n = 1 + rng.below(45);
      const auto a = random_floats(rng, m * k), b = random_floats(rng, k * n);
      std::vector<float> c_ref(m * n), c_simd(m * n);
      ref.gemm(a.data(), b.data(), c_ref.data(), m, k, n);
      simd->gemm(a.data(), b.data(), c_simd.data(), m, k, n);
      REQUIRE(same_bits(c_ref, c_simd));

      const std::size_t len = rng.below(101);
      const auto x = random_floats(rng, len), y = random_floats(rng, len);
      const double d_ref = ref.dot(x.data(), y.data(), len);
      const double d_simd = simd->dot(x.data(), y.data(), len);
      REQUIRE(std::memcmp(&d_ref, &d_simd, sizeof(double)) == 0);

      auto y_ref = y, y_simd = y;
      const float alpha = static_cast<float>(rng.normal());
      ref.axpy(alpha, x.data(), y_ref.data(), len);
      simd->axpy(alpha, x.data(), y_simd.data(), len);
      REQUIRE(same_bits(y_ref, y_simd));

      const auto p = random_doubles(rng, len), q = random_doubles(rng, len);
      const double e_ref = ref.dot_f64(p.data(), q.data(), len);
      const double e_simd = simd->dot_f64(p.data(), q.data(), len);
      REQUIRE(std::memcmp(&e_ref, &e_simd, sizeof(double)) == 0);

      auto p_ref = p, q_ref = q, p_simd = p, q_simd = q;
      const double angle = rng.uniform(0.0, 6.28);
      ref.rotate_f64(p_ref.data(), q_ref.data(), len, std::cos(angle), std::sin(angle));
      simd->rotate_f64(p_simd.data(), q_simd.data(), len, std::cos(angle), std::sin(angle));
      REQUIRE(same_bits(p_ref, p_simd));
      REQUIRE(same_bits(q_ref, q_simd));
    }
  }
}

TEST_CASE("select overrides the active variant") {
  const auto& before = kernels::active();
  kernels::select(kernels::scalar());
  CHECK(kernels::active().name == "scalar");
  kernels::select(before);
  CHECK(kernels::active().name == before.name);
}
