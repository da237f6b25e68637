#pragma once

#include <string>
#include <vector>

namespace npiv {

// Minimal CSV: UTF-8, comma-delimited, one header row, '#'-prefixed comment
// lines before the header carry the schema tag. Values never contain commas
// or quotes in our outputs; the reader additionally accepts quoted fields.
struct CsvTable {
  std::vector<std::string> comments;  // without the leading '#'
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const;  // -1 if absent
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

// shortest representation that round-trips a double exactly
std::string format_double(double v);

}  // namespace npiv
