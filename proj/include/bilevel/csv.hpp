#pragma once

// Minimal RFC-4180 CSV: UTF-8, comma separator, header row, '.' decimal,
// quoting only where needed. Doubles are emitted with round-trip precision.

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bilevel {

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v,
                                 std::chars_format::general, 17);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return {buf, ptr};
}

inline void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t k = 0; k < fields.size(); ++k) {
    if (k) out << ',';
    out << csv_escape(fields[k]);
  }
  out << '\n';
}

// Parse one CSV record. Handles quoted fields (including embedded newlines
// continued from the stream).
inline bool read_csv_row(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string line;
  if (!std::getline(in, line)) return false;
  std::string field;
  bool in_quotes = false;
  std::size_t pos = 0;
  while (true) {
    if (pos == line.size()) {
      if (in_quotes) {
        if (!std::getline(in, line))
          throw std::runtime_error("csv: unterminated quoted field");
        field += '\n';
        pos = 0;
        continue;
      }
      break;
    }
    const char c = line[pos];
    if (in_quotes) {
      if (c == '"') {
        if (pos + 1 < line.size() && line[pos + 1] == '"') {
          field += '"';
          pos += 2;
        } else {
          in_quotes = false;
          ++pos;
        }
      } else {
        field += c;
        ++pos;
      }
    } else if (c == '"' && field.empty()) {
      in_quotes = true;
      ++pos;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      ++pos;
    } else if (c == '\r' && pos + 1 == line.size()) {
      ++pos;
    } else {
      field += c;
      ++pos;
    }
  }
  fields.push_back(std::move(field));
  return true;
}

}  // namespace bilevel
