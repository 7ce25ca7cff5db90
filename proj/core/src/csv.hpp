#pragma once

// Minimal CSV reading for the flat, unquoted artifact files this library emits.

#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace evcma::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;  // 1-based source line of each row
};

/// Reads a comma-separated table. Blank lines are skipped; trailing '\r' is stripped.
/// Throws Error(kParse) when a row's arity differs from the header or the header
/// does not match `expected_header` (when non-empty).
Table read(std::istream& in, const std::vector<std::string>& expected_header,
           std::string_view what);

Table read_file(const std::string& path, const std::vector<std::string>& expected_header,
                std::string_view what);

double parse_double(std::string_view field, std::string_view what, int line);
long long parse_int(std::string_view field, std::string_view what, int line);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double value);

}  // namespace evcma::csv
