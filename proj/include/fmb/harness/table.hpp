#pragma once

// Numeric tables with canonical text output: shortest round-trip decimal for
// every binary64 value, mandatory header row.

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmb/error.hpp"

namespace fmb::harness {

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add(std::vector<double> row) {
    if (row.size() != columns.size()) throw NumericalError("table row has the wrong number of columns");
    rows.push_back(std::move(row));
  }
};

inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (x == 0.0) return std::signbit(x) ? "-0" : "0";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string to_csv(const Table& t) {
  std::string out;
  for (std::size_t j = 0; j < t.columns.size(); ++j) out += (j ? "," : "") + t.columns[j];
  out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ',';
      out += format_double(row[j]);
    }
    out += '\n';
  }
  return out;
}

/// Array of row objects. Non-finite values become null.
inline nlohmann::json to_json_rows(const Table& t) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& row : t.rows) {
    nlohmann::json obj = nlohmann::json::object();
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (std::isfinite(row[j])) obj[t.columns[j]] = row[j];
      else obj[t.columns[j]] = nullptr;
    }
    arr.push_back(std::move(obj));
  }
  return arr;
}

inline std::string render(const Table& t, const std::string& format) {
  if (format == "json") return to_json_rows(t).dump(1) + "\n";
  return to_csv(t);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << text;
  if (!out) throw ConfigError("failed writing file: " + path);
}

}  // namespace fmb::harness
