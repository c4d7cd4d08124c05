#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace cbr {

/// Whole-file read. Throws IoError.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file then renames over path.
void atomic_write(const std::filesystem::path& path, std::string_view content);

void warn(std::string_view message);

}  // namespace cbr
