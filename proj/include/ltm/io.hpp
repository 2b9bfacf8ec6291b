#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ltm::io {

/// Throws IoError.
std::string read_text(const std::filesystem::path& path);
/// Writes via a temporary file and rename so readers never see partial files.
void write_text(const std::filesystem::path& path, std::string_view content);
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace ltm::io
