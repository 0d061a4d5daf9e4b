#pragma once

// Sparse row-major dataset (CSR) with integer labels. Data matrices are
// stored sparse; model and hyperparameter vectors stay dense.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bilevel/hash.hpp"
#include "bilevel/vec.hpp"

namespace bilevel {

struct SparseDataset {
  std::vector<std::size_t> offsets{0};  // size num_rows + 1
  std::vector<std::uint32_t> indices;   // strictly increasing within a row
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t num_features = 0;

  std::size_t num_rows() const { return labels.size(); }

  void add_row(int label, const std::vector<std::uint32_t>& idx,
               const std::vector<double>& val) {
    if (idx.size() != val.size())
      throw std::invalid_argument("SparseDataset: index/value length mismatch");
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (k > 0 && idx[k] <= idx[k - 1])
        throw std::invalid_argument("SparseDataset: indices must be increasing");
      if (idx[k] >= num_features)
        throw std::invalid_argument("SparseDataset: index beyond num_features");
    }
    indices.insert(indices.end(), idx.begin(), idx.end());
    values.insert(values.end(), val.begin(), val.end());
    labels.push_back(label);
    offsets.push_back(indices.size());
  }

  // <row_i, w>
  double row_dot(std::size_t i, const Vec& w) const {
    double s = 0.0;
    for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k)
      s += values[k] * w[indices[k]];
    return s;
  }

  // w += alpha * row_i
  void row_axpy(std::size_t i, double alpha, Vec& w) const {
    for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k)
      w[indices[k]] += alpha * values[k];
  }

  // <row_i, w[stride*c .. stride*c+stride)> for matrix-shaped parameters
  double row_dot_strided(std::size_t i, const Vec& w, std::size_t base) const {
    double s = 0.0;
    for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k)
      s += values[k] * w[base + indices[k]];
    return s;
  }

  void row_axpy_strided(std::size_t i, double alpha, Vec& w, std::size_t base) const {
    for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k)
      w[base + indices[k]] += alpha * values[k];
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = fnv1a("dataset");
    h = fnv1a_u64(num_rows(), h);
    h = fnv1a_u64(num_features, h);
    for (int lab : labels) h = fnv1a_u64(static_cast<std::uint64_t>(lab), h);
    for (std::uint32_t i : indices) h = fnv1a_u64(i, h);
    for (double v : values) h = fnv1a_double(v, h);
    return h;
  }
};

}  // namespace bilevel
