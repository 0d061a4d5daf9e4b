#pragma once

// libsvm text format: one sample per line, "label index:value ...", indices
// 1-based and strictly ascending. Parsed rows are 0-based.

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "bilevel/data/dataset.hpp"

namespace bilevel {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("libsvm parse error at line " + std::to_string(line) +
                           ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline SparseDataset parse_libsvm(std::istream& in) {
  SparseDataset ds;
  std::vector<std::vector<std::uint32_t>> row_idx;
  std::vector<std::vector<double>> row_val;
  std::string line;
  std::size_t lineno = 0;
  std::uint32_t max_index = 0;

  while (std::getline(in, line)) {
    ++lineno;
    // strip trailing CR and comments
    if (auto pos = line.find('#'); pos != std::string::npos) line.resize(pos);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
      line.pop_back();
    if (line.empty()) continue;

    std::istringstream ls(line);
    double raw_label;
    if (!(ls >> raw_label))
      throw ParseError(lineno, "missing or malformed label");
    if (raw_label != std::floor(raw_label))
      throw ParseError(lineno, "non-integer label");

    std::vector<std::uint32_t> idx;
    std::vector<double> val;
    std::string tok;
    while (ls >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == tok.size())
        throw ParseError(lineno, "malformed token '" + tok + "'");
      long index;
      double value;
      try {
        std::size_t used = 0;
        index = std::stol(tok.substr(0, colon), &used);
        if (used != colon) throw std::invalid_argument("trailing");
        used = 0;
        value = std::stod(tok.substr(colon + 1), &used);
        if (used != tok.size() - colon - 1) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError(lineno, "malformed token '" + tok + "'");
      }
      if (index < 1) throw ParseError(lineno, "index must be >= 1");
      const auto zero_based = static_cast<std::uint32_t>(index - 1);
      if (!idx.empty() && zero_based <= idx.back())
        throw ParseError(lineno, "indices not strictly ascending");
      idx.push_back(zero_based);
      val.push_back(value);
      max_index = std::max(max_index, zero_based);
    }
    ds.labels.push_back(static_cast<int>(raw_label));
    row_idx.push_back(std::move(idx));
    row_val.push_back(std::move(val));
  }

  ds.num_features = ds.labels.empty() ? 0 : static_cast<std::size_t>(max_index) + 1;
  for (std::size_t r = 0; r < row_idx.size(); ++r) {
    ds.indices.insert(ds.indices.end(), row_idx[r].begin(), row_idx[r].end());
    ds.values.insert(ds.values.end(), row_val[r].begin(), row_val[r].end());
    ds.offsets.push_back(ds.indices.size());
  }
  return ds;
}

inline SparseDataset parse_libsvm(const std::string& text) {
  std::istringstream in(text);
  return parse_libsvm(in);
}

inline void serialize_libsvm(const SparseDataset& ds, std::ostream& out) {
  out.precision(17);
  for (std::size_t r = 0; r < ds.num_rows(); ++r) {
    out << ds.labels[r];
    for (std::size_t k = ds.offsets[r]; k < ds.offsets[r + 1]; ++k)
      out << ' ' << (ds.indices[k] + 1) << ':' << ds.values[k];
    out << '\n';
  }
}

}  // namespace bilevel
