#pragma once

// IDX container used by the MNIST distribution: a big-endian u32 magic
// (0x00000803 for u8 rank-3 images, 0x00000801 for u8 rank-1 labels), one
// big-endian u32 per dimension, then raw unsigned bytes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lrd/core/error.hpp"
#include "lrd/core/io.hpp"
#include "lrd/data/dataset.hpp"

namespace lrd::data {

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major
};

struct IdxLabels {
  std::vector<std::uint8_t> labels;
};

namespace detail {

inline std::uint32_t read_be32(std::string_view bytes, std::size_t offset, const std::string& what) {
  if (bytes.size() < offset + 4)
    throw FormatError("truncated " + what + ": expected 4 header bytes", offset);
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

inline void write_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

inline std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace detail

inline IdxImages parse_idx_images(std::string_view bytes, const std::string& name = "image file") {
  const auto magic = detail::read_be32(bytes, 0, name);
  if (magic != idx_images_magic)
    throw FormatError(name + ": bad magic " + detail::hex32(magic) + ", expected " + detail::hex32(idx_images_magic), 0);
  IdxImages img;
  img.count = detail::read_be32(bytes, 4, name);
  img.rows = detail::read_be32(bytes, 8, name);
  img.cols = detail::read_be32(bytes, 12, name);
  const std::size_t need = static_cast<std::size_t>(img.count) * img.rows * img.cols;
  if (bytes.size() - 16 < need)
    throw FormatError(name + ": truncated pixel data, expected " + std::to_string(need) + " bytes, found " +
                          std::to_string(bytes.size() - 16),
                      bytes.size());
  if (bytes.size() - 16 > need) throw FormatError(name + ": trailing bytes after pixel data", 16 + need);
  img.pixels.assign(reinterpret_cast<const std::uint8_t*>(bytes.data()) + 16,
                    reinterpret_cast<const std::uint8_t*>(bytes.data()) + 16 + need);
  return img;
}

inline IdxLabels parse_idx_labels(std::string_view bytes, const std::string& name = "label file") {
  const auto magic = detail::read_be32(bytes, 0, name);
  if (magic != idx_labels_magic)
    throw FormatError(name + ": bad magic " + detail::hex32(magic) + ", expected " + detail::hex32(idx_labels_magic), 0);
  const std::size_t count = detail::read_be32(bytes, 4, name);
  if (bytes.size() - 8 < count)
    throw FormatError(name + ": truncated label data, expected " + std::to_string(count) + " bytes, found " +
                          std::to_string(bytes.size() - 8),
                      bytes.size());
  if (bytes.size() - 8 > count) throw FormatError(name + ": trailing bytes after label data", 8 + count);
  IdxLabels out;
  out.labels.assign(reinterpret_cast<const std::uint8_t*>(bytes.data()) + 8,
                    reinterpret_cast<const std::uint8_t*>(bytes.data()) + 8 + count);
  return out;
}

inline std::string encode_idx_images(const IdxImages& img) {
  std::string out;
  detail::write_be32(out, idx_images_magic);
  detail::write_be32(out, img.count);
  detail::write_be32(out, img.rows);
  detail::write_be32(out, img.cols);
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

inline std::string encode_idx_labels(const IdxLabels& lab) {
  std::string out;
  detail::write_be32(out, idx_labels_magic);
  detail::write_be32(out, static_cast<std::uint32_t>(lab.labels.size()));
  out.append(reinterpret_cast<const char*>(lab.labels.data()), lab.labels.size());
  return out;
}

struct IdxOptions {
  int num_classes = 10;
  /// Subtract `mean` and divide by `stddev` after the /255 scaling.
  bool standardize = false;
  double mean = 0.1307;
  double stddev = 0.3081;
  /// Keep only the first `max_samples` samples (0 keeps all).
  std::size_t max_samples = 0;
};

/// Images become an n x (rows*cols) tensor of pixel/255; labels must lie in
/// [0, num_classes).
inline Dataset to_dataset(const IdxImages& img, const IdxLabels& lab, const IdxOptions& opt = {}) {
  if (img.count != lab.labels.size())
    throw FormatError("image count " + std::to_string(img.count) + " does not match label count " +
                          std::to_string(lab.labels.size()),
                      4);
  const std::size_t d = static_cast<std::size_t>(img.rows) * img.cols;
  if (img.count == 0 || d == 0) throw FormatError("IDX file holds no samples", 4);
  const std::size_t n = opt.max_samples ? std::min<std::size_t>(opt.max_samples, img.count) : img.count;
  Dataset ds;
  ds.num_classes = opt.num_classes;
  ds.inputs = Tensor({n, d});
  auto x = ds.inputs.data();
  for (std::size_t i = 0; i < n * d; ++i) {
    double v = static_cast<double>(img.pixels[i]) / 255.0;
    if (opt.standardize) v = (v - opt.mean) / opt.stddev;
    x[i] = v;
  }
  ds.labels.assign(lab.labels.begin(), lab.labels.begin() + static_cast<std::ptrdiff_t>(n));
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    if (ds.labels[i] >= opt.num_classes)
      throw FormatError("label " + std::to_string(ds.labels[i]) + " outside [0," + std::to_string(opt.num_classes) + ")",
                        8 + i);
  return ds;
}

inline Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        const IdxOptions& opt = {}) {
  for (const auto& p : {images, labels})
    if (!std::filesystem::exists(p)) throw Error("IDX file not found: " + p.string());
  const auto img = parse_idx_images(read_file(images), images.string());
  const auto lab = parse_idx_labels(read_file(labels), labels.string());
  return to_dataset(img, lab, opt);
}

/// Quantizes a [0,1]-scaled dataset back to IDX bytes (round(x * 255)).
inline std::pair<IdxImages, IdxLabels> to_idx(const Dataset& ds, std::uint32_t rows, std::uint32_t cols) {
  if (static_cast<std::size_t>(rows) * cols != ds.dims())
    throw ShapeError("to_idx: " + std::to_string(rows) + "x" + std::to_string(cols) + " does not match " +
                     std::to_string(ds.dims()) + " input columns");
  IdxImages img{static_cast<std::uint32_t>(ds.size()), rows, cols, {}};
  img.pixels.reserve(ds.inputs.size());
  for (double v : ds.inputs.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("to_idx: input value outside [0,1]");
    img.pixels.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  }
  IdxLabels lab;
  for (int l : ds.labels) {
    if (l < 0 || l > 255) throw DomainError("to_idx: label does not fit in a byte");
    lab.labels.push_back(static_cast<std::uint8_t>(l));
  }
  return {std::move(img), std::move(lab)};
}

inline void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels, const Dataset& ds,
                      std::uint32_t rows, std::uint32_t cols) {
  const auto [img, lab] = to_idx(ds, rows, cols);
  write_file_atomic(images, encode_idx_images(img));
  write_file_atomic(labels, encode_idx_labels(lab));
}

/// Standard MNIST file names under a root directory.
struct MnistPaths {
  std::filesystem::path train_images, train_labels, test_images, test_labels;

  static MnistPaths under(const std::filesystem::path& root) {
    return {root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte", root / "t10k-images-idx3-ubyte",
            root / "t10k-labels-idx1-ubyte"};
  }

  std::vector<std::filesystem::path> missing() const {
    std::vector<std::filesystem::path> out;
    for (const auto& p : {train_images, train_labels, test_images, test_labels})
      if (!std::filesystem::exists(p)) out.push_back(p);
    return out;
  }
};

}  // namespace lrd::data
