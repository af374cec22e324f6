#pragma once

// Versioned CSV reports. Every row starts with schema, method, t, seed, S so
// tables can be merged without out-of-band state. Numbers use the shortest
// round-tripping decimal form; wall-clock figures belong in the metadata file.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "flowvar/error.hpp"

namespace flowvar {

inline constexpr int kCsvSchemaVersion = 1;

inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  require(res.ec == std::errc{}, "number formatting failed");
  return {buf, res.ptr};
}

inline std::string format_number(std::uint64_t v) { return std::to_string(v); }
inline std::string format_number(std::int64_t v) { return std::to_string(v); }

/// Empty field for a missing value.
inline std::string format_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

struct RowKey {
  std::string method;
  std::optional<double> t;
  std::uint64_t seed = 0;
  std::optional<std::int64_t> probes;  // S
};

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  void add(const RowKey& key, std::vector<std::string> values) {
    require(values.size() == columns_.size(), "CSV row has the wrong number of columns");
    std::vector<std::string> row{std::to_string(kCsvSchemaVersion), key.method, format_number(key.t),
                                 format_number(key.seed),
                                 key.probes ? format_number(*key.probes) : std::string()};
    row.insert(row.end(), std::make_move_iterator(values.begin()), std::make_move_iterator(values.end()));
    rows_.push_back(std::move(row));
  }

  [[nodiscard]] std::size_t size() const { return rows_.size(); }

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    std::vector<std::string> header{"schema", "method", "t", "seed", "S"};
    header.insert(header.end(), columns_.begin(), columns_.end());
    write_line(os, header);
    for (const auto& row : rows_) write_line(os, row);
    return os.str();
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path);
    out << str();
    if (!out) throw RuntimeFailure("write failed: " + path);
  }

 private:
  static void write_line(std::ostream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << ',';
      os << csv_escape(cells[i]);
    }
    os << '\n';
  }

  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

/// key=value lines, sorted by key. Holds anything that is allowed to differ
/// between reruns (timings).
inline void write_meta(const std::string& path, const std::map<std::string, std::string>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path);
  for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
}

}  // namespace flowvar
