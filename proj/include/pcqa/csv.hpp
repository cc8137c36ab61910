#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pcqa {

struct CsvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Header plus string rows. RFC-4180-style: comma separated, double-quote
/// escaping, LF or CRLF line endings; the header row is mandatory.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column position by name, -1 when absent.
  int column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }

  int require_column(std::string_view name) const {
    const int c = column(name);
    if (c < 0) throw CsvError("missing required column '" + std::string(name) + "'");
    return c;
  }
};

inline CsvTable parse_csv(std::string_view text, const std::string& origin = "csv") {
  CsvTable table;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;

  const auto end_field = [&] {
    record.push_back(field);
    field.clear();
    field_started = false;
  };
  const auto end_record = [&] {
    end_field();
    const bool blank = record.size() == 1 && record[0].empty();
    if (!blank) {
      if (table.header.empty()) table.header = record;
      else {
        if (record.size() != table.header.size())
          throw CsvError(origin + ":" + std::to_string(line) + ": expected " +
                         std::to_string(table.header.size()) + " fields, got " +
                         std::to_string(record.size()));
        table.rows.push_back(record);
      }
    }
    record.clear();
  };

  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') { field += '"'; i += 2; continue; }
        in_quotes = false;
        ++i;
        continue;
      }
      if (c == '\n') ++line;
      field += c;
      ++i;
      continue;
    }
    switch (c) {
      case '"':
        if (!field_started && field.empty()) in_quotes = true;
        else field += c;
        field_started = true;
        ++i;
        break;
      case ',':
        end_field();
        ++i;
        break;
      case '\r':
        ++i;
        break;
      case '\n':
        end_record();
        ++line;
        ++i;
        break;
      default:
        field += c;
        field_started = true;
        ++i;
        break;
    }
  }
  if (in_quotes) throw CsvError(origin + ":" + std::to_string(line) + ": unterminated quoted field");
  if (field_started || !field.empty() || !record.empty()) end_record();
  if (table.header.empty()) throw CsvError(origin + ": missing header row");
  return table;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvError(path + ": cannot open file");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_csv(data, path);
}

/// Quotes a field only when it needs quoting.
inline std::string csv_escape(std::string_view field) {
  const bool needs = field.find_first_of(",\"\r\n") != std::string_view::npos;
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

inline std::string join_csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_escape(fields[i]);
  }
  out += '\n';
  return out;
}

inline void write_csv_file(const std::string& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CsvError(path + ": cannot open file for writing");
  out << join_csv_row(table.header);
  for (const auto& row : table.rows) out << join_csv_row(row);
  if (!out.flush()) throw CsvError(path + ": write failed");
}

/// Full-precision decimal form; parses back to exactly the same double.
inline std::string format_double(double v) {
  char buf[40];
  const int len = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(len));
}

inline double parse_double_field(const std::string& field, const std::string& context) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw CsvError(context + ": invalid number '" + field + "'");
  return v;
}

}  // namespace pcqa
