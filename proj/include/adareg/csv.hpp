#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace adareg::csv {

/// Shortest decimal form that parses back to the same double.
std::string format(double value);

std::vector<std::string> split(std::string_view line, char sep = ',');
std::string_view trim(std::string_view s);

double parse_double(std::string_view text, std::string_view what);
std::int64_t parse_int(std::string_view text, std::string_view what);

/// Lines of a text file without trailing newline characters. Throws IoError.
std::vector<std::string> read_lines(const std::filesystem::path& path);
/// Throws IoError with the path on failure.
void write_text(const std::filesystem::path& path, std::string_view text);

/// Reads a CSV whose first line must equal `header`; returns the data rows.
std::vector<std::vector<std::string>> read_table(const std::filesystem::path& path, std::string_view header);

}  // namespace adareg::csv
