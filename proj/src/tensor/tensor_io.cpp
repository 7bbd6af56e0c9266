#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "projlens/error.hpp"
#include "projlens/tensor.hpp"

namespace projlens {

namespace {

constexpr unsigned char kMagic[4] = {'P', 'L', 'T', 'F'};
constexpr std::uint8_t kDtypeFloat32 = 0;

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

template <typename T>
T get_le(std::span<const unsigned char> bytes, std::size_t offset) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[offset + i]) << (8 * i);
  return value;
}

ParseError truncated(const std::string& what) {
  return ParseError(ParseError::Kind::Truncated, "truncated tensor file: " + what);
}

}  // namespace

std::vector<unsigned char> encode_tensor(const Tensor& t) {
  std::vector<unsigned char> out;
  out.reserve(13 + 8 * t.rank() + 4 * t.size());
  for (unsigned char m : kMagic) out.push_back(m);
  put_le<std::uint32_t>(out, kTensorFileVersion);
  put_le<std::uint8_t>(out, kDtypeFloat32);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
  for (float v : t.values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_tensor(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4) throw truncated("missing magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw ParseError(ParseError::Kind::BadMagic, "bad magic: not a PLTF tensor file");
  if (bytes.size() < 13) throw truncated("incomplete header");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kTensorFileVersion)
    throw ParseError(ParseError::Kind::UnsupportedVersion,
                     "unsupported tensor file version " + std::to_string(version));
  const auto dtype = get_le<std::uint8_t>(bytes, 8);
  if (dtype != kDtypeFloat32)
    throw ParseError(ParseError::Kind::UnsupportedDtype,
                     "unsupported dtype code " + std::to_string(dtype));
  const auto rank = get_le<std::uint32_t>(bytes, 9);
  std::size_t offset = 13;
  if (bytes.size() < offset + 8ull * rank) throw truncated("incomplete dims");
  Shape shape(rank);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i, offset += 8) {
    shape[i] = static_cast<std::size_t>(get_le<std::uint64_t>(bytes, offset));
    count *= shape[i];
  }
  const std::size_t payload = bytes.size() - offset;
  if (payload < 4 * count)
    throw truncated("payload has " + std::to_string(payload) + " bytes, header declares " +
                    std::to_string(4 * count));
  if (payload > 4 * count)
    throw ParseError(ParseError::Kind::TrailingBytes,
                     "tensor file has " + std::to_string(payload - 4 * count) + " trailing bytes");
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i, offset += 4)
    data[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, offset));
  Tensor t(std::move(shape), std::move(data));
  if (!t.all_finite())
    throw ParseError(ParseError::Kind::NonFinite, "tensor file contains non-finite values");
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError(ParseError::Kind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParseError(ParseError::Kind::Io, "write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(ParseError::Kind::Io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

}  // namespace projlens
