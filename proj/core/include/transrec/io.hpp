#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace transrec::io {

/// Writes `contents` to a sibling temp file and renames it over `path`, so
/// readers see either the old file or the complete new one.
void atomic_write(const std::filesystem::path& path, std::string_view contents);

/// Whole-file read. Throws IoFailure.
std::string read_file(const std::filesystem::path& path);

}  // namespace transrec::io
