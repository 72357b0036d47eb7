#pragma once

#include <charconv>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "avdml/scores.hpp"

namespace avdml::cli {

/// Header problems: wrong or missing columns. Maps to a usage failure.
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A data row that cannot be parsed. Maps to a runtime failure.
struct RowError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CsvSchema {
  bool has_z = false;
  std::size_t x_dim = 0;
};

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

/// Header must read y,a[,z],x1,...,xd in that order.
inline CsvSchema parse_header(std::string_view line) {
  const auto fields = split_fields(line);
  if (fields.size() < 2 || trim(fields[0]) != "y" || trim(fields[1]) != "a") {
    throw SchemaError("header must start with columns y,a");
  }
  CsvSchema schema;
  std::size_t next = 2;
  if (next < fields.size() && trim(fields[next]) == "z") {
    schema.has_z = true;
    ++next;
  }
  for (std::size_t j = 1; next < fields.size(); ++next, ++j) {
    if (trim(fields[next]) != "x" + std::to_string(j)) {
      throw SchemaError("unexpected header column '" + std::string(trim(fields[next])) +
                        "', expected x" + std::to_string(j));
    }
    schema.x_dim = j;
  }
  return schema;
}

inline double parse_number(std::string_view field, std::size_t line_no, const char* column) {
  field = trim(field);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
    throw RowError("line " + std::to_string(line_no) + ": cannot parse " + column + " value '" +
                   std::string(field) + "'");
  }
  return v;
}

inline int parse_binary(std::string_view field, std::size_t line_no, const char* column) {
  const double v = parse_number(field, line_no, column);
  if (v != 0.0 && v != 1.0) {
    throw RowError("line " + std::to_string(line_no) + ": " + column + " must be 0 or 1");
  }
  return static_cast<int>(v);
}

inline Observation parse_row(std::string_view line, const CsvSchema& schema, std::size_t line_no) {
  const auto fields = split_fields(line);
  const std::size_t expected = 2 + (schema.has_z ? 1 : 0) + schema.x_dim;
  if (fields.size() != expected) {
    throw RowError("line " + std::to_string(line_no) + ": expected " + std::to_string(expected) +
                   " fields, found " + std::to_string(fields.size()));
  }
  Observation o;
  o.y = parse_number(fields[0], line_no, "y");
  o.a = parse_binary(fields[1], line_no, "a");
  std::size_t next = 2;
  if (schema.has_z) o.z = parse_binary(fields[next++], line_no, "z");
  o.x.reserve(schema.x_dim);
  for (; next < fields.size(); ++next) o.x.push_back(parse_number(fields[next], line_no, "x"));
  return o;
}

/// Row-at-a-time reader; line numbers count the header as line 1.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {
    std::string line;
    if (!std::getline(in_, line)) throw SchemaError("input is empty; expected a header row");
    line_no_ = 1;
    schema_ = parse_header(line);
  }

  const CsvSchema& schema() const { return schema_; }

  std::optional<Observation> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (trim(line).empty()) continue;
      return parse_row(line, schema_, line_no_);
    }
    return std::nullopt;
  }

 private:
  std::istream& in_;
  CsvSchema schema_;
  std::size_t line_no_ = 0;
};

}  // namespace avdml::cli
