#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace projlens {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

// Dense row-major float32 array. The shape is fixed at construction; element
// storage is owned by value, so copies are deep and independent.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<float> data);

  static Tensor vector(std::initializer_list<float> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const float> values() const noexcept { return data_; }
  std::span<float> values() noexcept { return data_; }
  const float* data() const noexcept { return data_.data(); }
  float* data() noexcept { return data_.data(); }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  float& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  // Row r of a rank-2 tensor.
  std::span<const float> row(std::size_t r) const;
  std::span<float> row(std::size_t r);

  bool all_finite() const noexcept;

  // Element-wise bit equality (shape included).
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Shape checks shared by modules.
void require_rank(const Tensor& t, std::size_t rank, const char* what);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// --- elementary kernels --------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);
// m[n x k] * v[k] for a rank-2 m and rank-1 v.
Tensor matvec(const Tensor& m, const Tensor& v);

// Exact x * Phi(x) with Phi via erf.
Tensor gelu(const Tensor& x);
float gelu(float x);
// d/dx [x * Phi(x)] = Phi(x) + x * phi(x).
float gelu_derivative(float x);

Tensor row_l2_norms(const Tensor& m);
Tensor mean_pool_rows(const Tensor& m);
Tensor softmax(const Tensor& v);
Tensor log_softmax(const Tensor& v);

Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
double frobenius_norm(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
// Largest |a - b| over matching elements.
double max_abs_diff(const Tensor& a, const Tensor& b);

// --- .pltf file format ---------------------------------------------------
//
//   offset  size      field
//   0       4         magic "PLTF"
//   4       4         version (u32 LE), currently 1
//   8       1         dtype (u8), 0 = float32
//   9       4         rank (u32 LE)
//   13      8*rank    dims (u64 LE each)
//   ...     4*prod    float32 LE payload, row-major

inline constexpr std::uint32_t kTensorFileVersion = 1;

std::vector<unsigned char> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const unsigned char> bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace projlens
