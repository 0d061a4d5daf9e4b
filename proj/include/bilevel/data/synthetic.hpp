#pragma once

// Synthetic dataset generators. CI and acceptance runs use these in place of
// the full-scale downloads, keeping the dimensional structure of the real
// tasks.

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bilevel/data/dataset.hpp"
#include "bilevel/rng.hpp"

namespace bilevel {

// Two Gaussian clouds at +/- separation/sqrt(p), labels in {-1, +1},
// alternating for exact balance. Rows are stored sparse but dense in content.
inline SparseDataset make_binary_blobs(std::uint64_t seed, std::size_t count,
                                       std::size_t num_features,
                                       double separation = 1.5,
                                       double noise = 1.0) {
  RngStream rng(seed, /*stream=*/0xB10B);
  SparseDataset ds;
  ds.num_features = num_features;
  Vec center(num_features);
  for (double& c : center)
    c = separation * rng.normal() / std::sqrt(static_cast<double>(num_features));
  std::vector<std::uint32_t> idx(num_features);
  for (std::size_t k = 0; k < num_features; ++k)
    idx[k] = static_cast<std::uint32_t>(k);
  std::vector<double> val(num_features);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = (i % 2 == 0) ? 1 : -1;
    for (std::size_t k = 0; k < num_features; ++k)
      val[k] = label * center[k] + noise * rng.normal();
    ds.add_row(label, idx, val);
  }
  return ds;
}

// num_classes Gaussian clusters with labels 0..num_classes-1, cycled for
// balance.
inline SparseDataset make_multiclass_blobs(std::uint64_t seed, std::size_t count,
                                           std::size_t num_features,
                                           std::size_t num_classes,
                                           double separation = 2.0,
                                           double noise = 1.0) {
  if (num_classes < 1) throw std::invalid_argument("make_multiclass_blobs: classes");
  RngStream rng(seed, /*stream=*/0xB10C);
  std::vector<Vec> centers(num_classes, Vec(num_features));
  for (auto& c : centers)
    for (double& v : c) v = separation * rng.normal();
  SparseDataset ds;
  ds.num_features = num_features;
  std::vector<std::uint32_t> idx(num_features);
  for (std::size_t k = 0; k < num_features; ++k)
    idx[k] = static_cast<std::uint32_t>(k);
  std::vector<double> val(num_features);
  for (std::size_t i = 0; i < count; ++i) {
    const auto label = static_cast<int>(i % num_classes);
    const Vec& c = centers[static_cast<std::size_t>(label)];
    for (std::size_t k = 0; k < num_features; ++k) val[k] = c[k] + noise * rng.normal();
    ds.add_row(label, idx, val);
  }
  return ds;
}

// Splits of one blob population: class centers are drawn once and shared, so
// train/validation/test see the same geometry.
inline std::vector<SparseDataset> make_multiclass_blob_splits(
    std::uint64_t seed, const std::vector<std::size_t>& counts,
    std::size_t num_features, std::size_t num_classes, double separation = 2.0,
    double noise = 1.0) {
  if (num_classes < 1)
    throw std::invalid_argument("make_multiclass_blob_splits: classes");
  RngStream rng(seed, /*stream=*/0xB10D);
  std::vector<Vec> centers(num_classes, Vec(num_features));
  for (auto& c : centers)
    for (double& v : c) v = separation * rng.normal();
  std::vector<std::uint32_t> idx(num_features);
  for (std::size_t k = 0; k < num_features; ++k)
    idx[k] = static_cast<std::uint32_t>(k);
  std::vector<double> val(num_features);
  std::vector<SparseDataset> splits;
  for (std::size_t count : counts) {
    SparseDataset ds;
    ds.num_features = num_features;
    for (std::size_t i = 0; i < count; ++i) {
      const auto label = static_cast<int>(i % num_classes);
      const Vec& c = centers[static_cast<std::size_t>(label)];
      for (std::size_t k = 0; k < num_features; ++k)
        val[k] = c[k] + noise * rng.normal();
      ds.add_row(label, idx, val);
    }
    splits.push_back(std::move(ds));
  }
  return splits;
}

// Binary variant with labels in {-1, +1} and mirrored centers.
inline std::vector<SparseDataset> make_binary_blob_splits(
    std::uint64_t seed, const std::vector<std::size_t>& counts,
    std::size_t num_features, double separation = 1.5, double noise = 1.0) {
  RngStream rng(seed, /*stream=*/0xB10E);
  Vec center(num_features);
  for (double& c : center)
    c = separation * rng.normal() / std::sqrt(static_cast<double>(num_features));
  std::vector<std::uint32_t> idx(num_features);
  for (std::size_t k = 0; k < num_features; ++k)
    idx[k] = static_cast<std::uint32_t>(k);
  std::vector<double> val(num_features);
  std::vector<SparseDataset> splits;
  for (std::size_t count : counts) {
    SparseDataset ds;
    ds.num_features = num_features;
    for (std::size_t i = 0; i < count; ++i) {
      const int label = (i % 2 == 0) ? 1 : -1;
      for (std::size_t k = 0; k < num_features; ++k)
        val[k] = label * center[k] + noise * rng.normal();
      ds.add_row(label, idx, val);
    }
    splits.push_back(std::move(ds));
  }
  return splits;
}

// Each label is independently resampled uniformly from {0,...,num_classes-1}
// with probability p_corrupt. The mask marks resampled positions; a resampled
// label may coincide with the original.
inline std::pair<std::vector<int>, std::vector<bool>> corrupt_labels(
    const std::vector<int>& labels, double p_corrupt, std::size_t num_classes,
    std::uint64_t seed) {
  if (!(p_corrupt >= 0.0 && p_corrupt <= 1.0))
    throw std::invalid_argument("corrupt_labels: p_corrupt must be in [0, 1]");
  if (num_classes < 1)
    throw std::invalid_argument("corrupt_labels: num_classes must be >= 1");
  for (int lab : labels)
    if (lab < 0 || static_cast<std::size_t>(lab) >= num_classes)
      throw std::invalid_argument("corrupt_labels: label out of range");
  RngStream rng(seed, /*stream=*/0xC0FF);
  std::vector<int> out = labels;
  std::vector<bool> mask(labels.size(), false);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (rng.uniform() < p_corrupt) {
      out[i] = static_cast<int>(rng.uniform_index(num_classes));
      mask[i] = true;
    }
  }
  return {std::move(out), std::move(mask)};
}

}  // namespace bilevel
