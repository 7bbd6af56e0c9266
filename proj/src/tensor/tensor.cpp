#include "projlens/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "projlens/error.hpp"
#include "projlens/kernels.hpp"

namespace projlens {

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(product(shape_), 0.0f) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != product(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::vector(std::initializer_list<float> values) {
  return Tensor({values.size()}, std::vector<float>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t n = rows.size();
  const std::size_t m = n ? rows.begin()->size() : 0;
  std::vector<float> data;
  data.reserve(n * m);
  for (const auto& r : rows) {
    if (r.size() != m) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({n, m}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0f;
  return t;
}

std::span<const float> Tensor::row(std::size_t r) const {
  return std::span<const float>(data_).subspan(r * shape_[1], shape_[1]);
}

std::span<float> Tensor::row(std::size_t r) {
  return std::span<float>(data_).subspan(r * shape_[1], shape_[1]);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (a.shape_ != b.shape_) return false;
  return a.data_.empty() ||
         std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0;
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  kernels::active().gemm(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

Tensor transpose(const Tensor& m) {
  require_rank(m, 2, "transpose");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  Tensor t({cols, rows});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t(j, i) = m(i, j);
  return t;
}

Tensor matvec(const Tensor& m, const Tensor& v) {
  if (m.rank() != 2 || v.rank() != 1 || m.dim(1) != v.dim(0)) {
    throw DimensionError("matvec: cannot apply " + shape_string(m.shape()) + " to " +
                         shape_string(v.shape()));
  }
  const auto& k = kernels::active();
  Tensor out({m.dim(0)});
  for (std::size_t i = 0; i < m.dim(0); ++i)
    out[i] = static_cast<float>(k.dot(m.row(i).data(), v.data(), v.size()));
  return out;
}

float gelu(float x) {
  const double xd = x;
  return static_cast<float>(0.5 * xd * (1.0 + std::erf(xd / std::sqrt(2.0))));
}

float gelu_derivative(float x) {
  const double xd = x;
  const double cdf = 0.5 * (1.0 + std::erf(xd / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * M_PI);
  return static_cast<float>(cdf + xd * pdf);
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (float& v : out.values()) v = gelu(v);
  return out;
}

Tensor row_l2_norms(const Tensor& m) {
  require_rank(m, 2, "row_l2_norms");
  const auto& k = kernels::active();
  Tensor out({m.dim(0)});
  for (std::size_t r = 0; r < m.dim(0); ++r) {
    const float* row = m.row(r).data();
    out[r] = static_cast<float>(std::sqrt(k.dot(row, row, m.dim(1))));
  }
  return out;
}

Tensor mean_pool_rows(const Tensor& m) {
  require_rank(m, 2, "mean_pool_rows");
  const std::size_t n = m.dim(0), d = m.dim(1);
  if (n == 0) throw EmptyInputError("mean_pool_rows: no rows to pool");
  std::vector<double> acc(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) acc[c] += m(r, c);
  Tensor out({d});
  for (std::size_t c = 0; c < d; ++c) out[c] = static_cast<float>(acc[c] / static_cast<double>(n));
  return out;
}

Tensor softmax(const Tensor& v) {
  require_rank(v, 1, "softmax");
  if (v.empty()) throw EmptyInputError("softmax: empty vector");
  const float mx = *std::max_element(v.values().begin(), v.values().end());
  std::vector<double> e(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    e[i] = std::exp(static_cast<double>(v[i]) - mx);
    sum += e[i];
  }
  Tensor out({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(e[i] / sum);
  return out;
}

Tensor log_softmax(const Tensor& v) {
  require_rank(v, 1, "log_softmax");
  if (v.empty()) throw EmptyInputError("log_softmax: empty vector");
  const float mx = *std::max_element(v.values().begin(), v.values().end());
  double sum = 0.0;
  for (float x : v.values()) sum += std::exp(static_cast<double>(x) - mx);
  const double lse = mx + std::log(sum);
  Tensor out({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] - lse);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "subtract");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor scale(const Tensor& a, float factor) {
  Tensor out = a;
  for (float& v : out.values()) v *= factor;
  return out;
}

double frobenius_norm(const Tensor& a) {
  return std::sqrt(kernels::active().dot(a.data(), a.data(), a.size()));
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: length mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  return kernels::active().dot(a.data(), b.data(), a.size());
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace projlens
