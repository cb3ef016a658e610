#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace hbnn::app {

/// Shortest decimal string that parses back to the same double.
std::string format_double(double value);
/// Strict parse of a whole field; throws std::invalid_argument.
double parse_double(std::string_view text);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

/// Throws std::runtime_error when the file cannot be written.
void write_csv(const std::filesystem::path& path, const CsvTable& table);
/// Numeric CSV with a header line. Throws std::runtime_error on unreadable
/// files and std::invalid_argument on malformed content.
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace hbnn::app
