#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "projlens/tensor.hpp"

namespace projlens {

// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);
// Hash of the tensor's .pltf encoding.
std::string tensor_hash(const Tensor& t);

}  // namespace projlens
