#pragma once

// IDX binary format reader (MNIST distribution format). Big-endian header:
// magic 0x00000803 for uint8 image tensors, 0x00000801 for uint8 label
// vectors.

#include <cstdint>
#include <istream>
#include <stdexcept>
#include <vector>

#include "bilevel/data/dataset.hpp"

namespace bilevel {

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("idx: truncated header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
};

inline IdxImages read_idx_images(std::istream& in) {
  const auto magic = detail::read_be_u32(in);
  if (magic != kIdxImagesMagic)
    throw std::runtime_error("idx: bad image magic " + std::to_string(magic));
  IdxImages img;
  img.count = detail::read_be_u32(in);
  img.rows = detail::read_be_u32(in);
  img.cols = detail::read_be_u32(in);
  img.pixels.resize(img.count * img.rows * img.cols);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw std::runtime_error("idx: truncated image data");
  return img;
}

inline std::vector<int> read_idx_labels(std::istream& in) {
  const auto magic = detail::read_be_u32(in);
  if (magic != kIdxLabelsMagic)
    throw std::runtime_error("idx: bad label magic " + std::to_string(magic));
  const auto count = detail::read_be_u32(in);
  std::vector<std::uint8_t> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
  if (!in) throw std::runtime_error("idx: truncated label data");
  return {raw.begin(), raw.end()};
}

// Pixels are scaled to [0, 1]; zero pixels are dropped from the sparse rows.
inline SparseDataset idx_to_dataset(const IdxImages& img, const std::vector<int>& labels) {
  if (labels.size() != img.count)
    throw std::invalid_argument("idx_to_dataset: image/label count mismatch");
  SparseDataset ds;
  ds.num_features = img.rows * img.cols;
  const std::size_t stride = ds.num_features;
  for (std::size_t i = 0; i < img.count; ++i) {
    std::vector<std::uint32_t> idx;
    std::vector<double> val;
    for (std::size_t k = 0; k < stride; ++k) {
      const std::uint8_t px = img.pixels[i * stride + k];
      if (px != 0) {
        idx.push_back(static_cast<std::uint32_t>(k));
        val.push_back(px / 255.0);
      }
    }
    ds.add_row(labels[i], idx, val);
  }
  return ds;
}

}  // namespace bilevel
