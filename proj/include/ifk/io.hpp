#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ifk {

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text);

/// Writes to `<path>.tmp` and renames over `path`. Throws IoError naming the
/// path when the parent directory is missing or the write fails.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

std::vector<std::string> split(std::string_view line, char sep);

}  // namespace ifk
