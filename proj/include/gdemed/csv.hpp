#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace gdemed::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Plain comma-separated text without quoting. Every row must have as many
/// fields as the header.
Table read(std::istream& in);

/// Shortest round-trip decimal representation ("27", "0.1", "-5.8312...").
std::string format_number(double v);

double parse_number(const std::string& field, const std::string& column, std::size_t line);

}  // namespace gdemed::csv
