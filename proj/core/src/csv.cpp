#include "csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "evcma/error.hpp"

namespace evcma::csv {
namespace {

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  for (auto& field : out) {
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t')) field.pop_back();
    std::size_t lead = 0;
    while (lead < field.size() && (field[lead] == ' ' || field[lead] == '\t')) ++lead;
    field.erase(0, lead);
  }
  return out;
}

std::string where(std::string_view what, int line) {
  return std::string(what) + " line " + std::to_string(line);
}

}  // namespace

Table read(std::istream& in, const std::vector<std::string>& expected_header,
           std::string_view what) {
  Table table;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto fields = split(line);
    if (!have_header) {
      if (!expected_header.empty() && fields != expected_header) {
        std::string want;
        for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
        throw Error(ErrorKind::kParse,
                    std::string(what) + ": expected header '" + want + "', got '" + line + "'");
      }
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw Error(ErrorKind::kParse, where(what, line_no) + ": expected " +
                                         std::to_string(table.header.size()) + " fields, got " +
                                         std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(line_no);
  }
  if (!have_header) throw Error(ErrorKind::kParse, std::string(what) + ": empty file");
  return table;
}

Table read_file(const std::string& path, const std::vector<std::string>& expected_header,
                std::string_view what) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  return read(in, expected_header, what);
}

double parse_double(std::string_view field, std::string_view what, int line) {
  double value = 0.0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw Error(ErrorKind::kParse,
                where(what, line) + ": not a number: '" + std::string(field) + "'");
  }
  return value;
}

long long parse_int(std::string_view field, std::string_view what, int line) {
  long long value = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw Error(ErrorKind::kParse,
                where(what, line) + ": not an integer: '" + std::string(field) + "'");
  }
  return value;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace evcma::csv
