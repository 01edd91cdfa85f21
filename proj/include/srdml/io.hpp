#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace srdml {

/// Decimal with 17 significant digits, which round-trips any double exactly.
std::string format_double(double v);

/// A file could not be read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// Matrix rows as comma-separated 17-digit decimals, one line per row.
std::string matrix_csv(const std::vector<std::vector<double>>& rows);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

/// Parses numeric CSV; `has_header` takes the first line as column names.
CsvTable read_csv(const std::filesystem::path& path, bool has_header);

}  // namespace srdml
