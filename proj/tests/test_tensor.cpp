#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "projlens/error.hpp"
#include "projlens/rng.hpp"
#include "projlens/tensor.hpp"

using namespace projlens;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "projlens_test_tensor";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Tensor random_matrix(Rng& rng, std::size_t m, std::size_t n, double stddev = 1.0) {
  return rng.normal_tensor({m, n}, stddev);
}

}  // namespace

TEST_CASE("matmul examples") {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(matmul(Tensor::identity(2), a) == a);
  CHECK(matmul(a, Tensor::identity(2)) == a);

  const Tensor p = Tensor::matrix({{1, 0}, {0, 0}});
  CHECK(matmul(p, Tensor::matrix({{5}, {7}})) == Tensor::matrix({{5}, {0}}));

  Rng rng(11);
  const Tensor x = random_matrix(rng, 3, 4), y = random_matrix(rng, 4, 2);
  const Tensor z = matmul(x, y);
  const auto expected = oracle::naive_matmul(x, y);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == doctest::Approx(double(expected[i])).epsilon(1e-6));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor({2, 3}), Tensor({2, 3}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul is bit-identical across repeated runs and identity is exact") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(20), k = 1 + rng.below(20);
    const Tensor a = random_matrix(rng, m, k, 100.0);
    CHECK(matmul(Tensor::identity(m), a) == a);
    CHECK(matmul(a, Tensor::identity(k)) == a);
    const Tensor b = random_matrix(rng, k, 7);
    CHECK(matmul(a, b) == matmul(a, b));
  }
}

TEST_CASE("gelu") {
  CHECK(gelu(0.0f) == 0.0f);
  CHECK(std::abs(gelu(10.0f) - 10.0f) <= 1e-6);
  const double expected = 1.0 * static_cast<double>(oracle::normal_cdf_quadrature(1.0L));
  CHECK(std::abs(gelu(1.0f) - expected) <= 1e-6);

  Rng rng(3);
  float prev = gelu(-8.0f);
  for (float x = -8.0f; x <= 8.0f; x += 0.01f) {
    // x*Phi(x) is not monotone below about -0.75; check the identity there
    // and monotonicity above
    const float g = gelu(x);
    CHECK(std::abs(double(g) - gelu(-x) - x) <= 1e-5);
    if (x > -0.7f) CHECK(g >= prev);
    prev = g;
  }
}

TEST_CASE("gelu derivative matches central differences") {
  for (float x = -4.0f; x <= 4.0f; x += 0.25f) {
    const double h = 1e-3;
    const double fd = (0.5 * (x + h) * std::erfc(-(x + h) / std::sqrt(2.0)) -
                       0.5 * (x - h) * std::erfc(-(x - h) / std::sqrt(2.0))) /
                      (2 * h);
    CHECK(gelu_derivative(x) == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("row_l2_norms") {
  CHECK(row_l2_norms(Tensor::matrix({{3, 4}})) == Tensor::vector({5}));
  CHECK(row_l2_norms(Tensor({2, 5})) == Tensor::vector({0, 0}));
  Rng rng(8);
  const Tensor m = random_matrix(rng, 4, 8);
  const Tensor n = row_l2_norms(m);
  for (std::size_t r = 0; r < 4; ++r) CHECK(std::abs(n[r] - double(oracle::row_norm(m, r))) <= 1e-6);
}

TEST_CASE("mean_pool_rows") {
  CHECK(mean_pool_rows(Tensor::matrix({{1, 1}, {3, 3}})) == Tensor::vector({2, 2}));
  CHECK(mean_pool_rows(Tensor::matrix({{4, -1, 2}})) == Tensor::vector({4, -1, 2}));
  CHECK_THROWS_AS(mean_pool_rows(Tensor({0, 3})), EmptyInputError);
  Rng rng(9);
  const Tensor m = random_matrix(rng, 6, 3);
  const Tensor p = mean_pool_rows(m);
  for (std::size_t c = 0; c < 3; ++c) {
    long double s = 0;
    for (std::size_t r = 0; r < 6; ++r) s += m(r, c);
    CHECK(std::abs(p[c] - double(s / 6)) <= 1e-6);
  }
}

TEST_CASE("softmax") {
  const Tensor u = softmax(Tensor::vector({0, 0, 0}));
  for (float v : u.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-7));

  const Tensor s = softmax(Tensor::vector({1000, 0}));
  CHECK(s.all_finite());
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] < 1e-30);

  const Tensor t = softmax(Tensor::vector({1, 2, 3}));
  const auto ref = oracle::softmax_extended({1, 2, 3});
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(t[i] - double(ref[i])) <= 1e-7);
}

TEST_CASE("softmax sums to one and preserves argmax on 10^4 random vectors") {
  Rng rng(21);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng.below(64);
    const double magnitude = std::pow(10.0, rng.uniform(-2.0, 4.0));
    Tensor v({n});
    for (float& x : v.values()) x = static_cast<float>(rng.uniform(-magnitude, magnitude));
    const Tensor s = softmax(v);
    double sum = 0;
    for (float x : s.values()) {
      CHECK_MESSAGE(x >= 0.0f, "negative probability");
      sum += x;
    }
    REQUIRE(std::abs(sum - 1.0) <= 1e-6);
    const auto in_max = std::max_element(v.values().begin(), v.values().end()) - v.values().begin();
    CHECK(s[in_max] == *std::max_element(s.values().begin(), s.values().end()));
  }
}

TEST_CASE("tensor file round-trip is byte-identical") {
  Rng rng(4);
  const Tensor t = random_matrix(rng, 7, 5);
  const auto path = temp_path("rt.pltf");
  write_tensor(path, t);
  const Tensor back = read_tensor(path);
  CHECK(back == t);
  CHECK(encode_tensor(back) == encode_tensor(t));

  const auto bytes = encode_tensor(t);
  REQUIRE(bytes.size() == 13 + 2 * 8 + 4 * 35);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PLTF");
  CHECK(bytes[4] == 1);   // version, little-endian
  CHECK(bytes[8] == 0);   // float32
  CHECK(bytes[9] == 2);   // rank
  CHECK(bytes[13] == 7);  // dims[0]
  CHECK(bytes[21] == 5);  // dims[1]
}

TEST_CASE("tensor file parse errors are distinct") {
  auto bytes = encode_tensor(Tensor::matrix({{1, 2}, {3, 4}}));

  auto bad_magic = bytes;
  std::copy_n("XXXX", 4, bad_magic.begin());
  try {
    decode_tensor(bad_magic);
    FAIL("expected bad magic");
  } catch (const ParseError& e) {
    CHECK(e.kind() == ParseError::Kind::BadMagic);
  }

  auto truncated = bytes;
  truncated.resize(truncated.size() - 4);  // 12-byte payload for a 2x2 header
  try {
    decode_tensor(truncated);
    FAIL("expected truncation");
  } catch (const ParseError& e) {
    CHECK(e.kind() == ParseError::Kind::Truncated);
  }

  auto bad_version = bytes;
  bad_version[4] = 9;
  try {
    decode_tensor(bad_version);
    FAIL("expected version error");
  } catch (const ParseError& e) {
    CHECK(e.kind() == ParseError::Kind::UnsupportedVersion);
  }

  auto bad_dtype = bytes;
  bad_dtype[8] = 1;
  try {
    decode_tensor(bad_dtype);
    FAIL("expected dtype error");
  } catch (const ParseError& e) {
    CHECK(e.kind() == ParseError::Kind::UnsupportedDtype);
  }

  const auto path = temp_path("xxxx.pltf");
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bad_magic.data()), static_cast<std::streamsize>(bad_magic.size()));
  }
  CHECK_THROWS_AS(read_tensor(path), ParseError);
}

TEST_CASE("tensor construction checks length against shape") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3)), DimensionError);
}
