#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "xalign/error.hpp"

namespace xalign::detail {

inline std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    fields.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

struct TsvRow {
  std::size_t line_no;
  std::vector<std::string> fields;
};

/// Reads a TSV with a fixed column count. A first line whose first field equals
/// `header_first` is treated as a header and skipped. Blank lines are ignored.
inline std::vector<TsvRow> read_tsv(const std::filesystem::path& path, std::size_t columns,
                                    std::string_view header_first) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::vector<TsvRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (rows.empty() && line_no == 1 && !header_first.empty() && fields.front() == header_first) continue;
    if (fields.size() != columns) {
      throw Error(ErrorKind::format, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                         std::to_string(columns) + " columns, got " +
                                         std::to_string(fields.size()));
    }
    rows.push_back({line_no, std::move(fields)});
  }
  return rows;
}

inline long long parse_int(const std::string& text, const std::filesystem::path& path, std::size_t line_no) {
  std::size_t used = 0;
  long long value = 0;
  try {
    value = std::stoll(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) {
    throw Error(ErrorKind::format, path.string() + ":" + std::to_string(line_no) + ": not an integer: '" + text + "'");
  }
  return value;
}

inline double parse_double(const std::string& text, const std::filesystem::path& path, std::size_t line_no) {
  std::size_t used = 0;
  double value = 0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) {
    throw Error(ErrorKind::format, path.string() + ":" + std::to_string(line_no) + ": not a number: '" + text + "'");
  }
  return value;
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace xalign::detail
