#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace dialog_forge {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
/// Throws Io when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

std::string base64_encode(std::string_view bytes);

}  // namespace dialog_forge
