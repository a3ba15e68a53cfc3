#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace avdg {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
// Throws IoError when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace avdg
