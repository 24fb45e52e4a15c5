// SPDX-License-Identifier: Apache-2.0
//
// Small helpers shared by the comma-separated file readers and writers.

#ifndef ATTNMPC_SRC_CSV_H_
#define ATTNMPC_SRC_CSV_H_

#include <charconv>
#include <cstddef>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "attnmpc/errors.h"

namespace attnmpc::csv {

// 17 significant digits round-trips any double.
inline std::string num(double v) { return fmt::format("{:.17g}", v); }

inline std::vector<std::string> split(std::string_view line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& fields) {
  std::string s;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) s += ',';
    s += fields[i];
  }
  return s;
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw FormatError(fmt::format("{}: cannot parse number '{}'", where, s));
  }
  return v;
}

// A parsed table: header names plus rows, each tagged with its 1-based line.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
  std::vector<std::string> comments;

  std::map<std::string, std::size_t> column_index() const {
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < header.size(); ++i) idx[header[i]] = i;
    return idx;
  }
};

// Lines starting with '#' before the header are collected as comments.
inline Table read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open {}", path));
  Table table;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (table.header.empty() && line.front() == '#') {
      table.comments.push_back(line);
      continue;
    }
    auto fields = split(line);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw FormatError(fmt::format("{}:{}: expected {} columns, found {}",
                                    path, number, table.header.size(),
                                    fields.size()));
    }
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(number);
  }
  if (table.header.empty()) {
    throw FormatError(fmt::format("{}: missing header row", path));
  }
  return table;
}

}  // namespace attnmpc::csv

#endif  // ATTNMPC_SRC_CSV_H_
