#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace trinet::io {

// Writes via a sibling temporary file and rename.
void write_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// Shortest text that parses back to the identical double.
std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // IoError when absent
};

// Header row, data rows, then "# config_hash=<hash>".
std::string to_csv(const CsvTable& table, const std::string& config_hash);
void write_csv(const std::filesystem::path& path, const CsvTable& table,
               const std::string& config_hash);
// Skips blank lines and lines starting with '#'. Fields are comma separated
// without quoting.
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace trinet::io
