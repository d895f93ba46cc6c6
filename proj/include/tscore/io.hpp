#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace tscore::io {

/// Reads a whole file. Throws tscore::Error when it cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written file. Creates parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view bytes,
                              std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (const char c : bytes) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

/// Shortest decimal that round-trips the double ("inf"/"-inf"/"nan" for
/// non-finite values).
std::string format_double(double value);

/// Quotes a CSV field when it contains a separator, quote or newline.
std::string csv_field(std::string_view field);

}  // namespace tscore::io
