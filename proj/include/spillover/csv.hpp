#pragma once

#include <string>
#include <vector>

namespace spillover {

/// Full-precision float formatting (%.17g) so CSV artifacts round-trip
/// exactly and reruns are byte-identical.
std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 if absent
  std::string to_string() const;
};

CsvTable read_csv(const std::string& path);
CsvTable parse_csv(const std::string& text);
void write_csv(const std::string& path, const CsvTable& table);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace spillover
