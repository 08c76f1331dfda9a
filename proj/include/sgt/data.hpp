#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "sgt/error.hpp"
#include "sgt/matrix.hpp"
#include "sgt/random.hpp"

namespace sgt {

enum class Split { train, test };

/// N examples of D features with labels in [0, classes).
struct Dataset {
  Matrix inputs;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  Split split = Split::train;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return inputs.cols; }

  void validate() const {
    if (labels.empty()) throw InputError("dataset is empty");
    if (inputs.rows != labels.size()) throw InputError("dataset has mismatched input and label counts");
    if (classes < 2) throw InputError("dataset needs at least 2 classes");
    for (std::size_t n = 0; n < labels.size(); ++n)
      if (labels[n] >= classes)
        throw InputError("label " + std::to_string(labels[n]) + " at example " + std::to_string(n) +
                         " is out of range");
    for (double v : inputs.data)
      if (!std::isfinite(v)) throw InputError("dataset contains a non-finite feature");
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

/// Gaussian clusters: class centers ~ N(0, I_D), points = center + spread * N(0, I_D),
/// all features divided by sqrt(1 + spread^2) for unit per-coordinate scale.
/// Per class, the first round(0.8 * per_class) points (clamped to
/// [1, per_class - 1]) go to train, the rest to test.
inline DatasetPair synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread,
                               std::uint64_t seed) {
  if (classes < 2) throw InputError("synth_blobs: need at least 2 classes");
  if (per_class < 2) throw InputError("synth_blobs: need at least 2 points per class");
  if (dim < 1) throw InputError("synth_blobs: dimension must be positive");
  if (!(spread > 0.0) || !std::isfinite(spread)) throw InputError("synth_blobs: spread must be positive");

  Rng rng(seed);
  Matrix centers(classes, dim);
  for (auto& c : centers.data) c = standard_normal(rng);

  auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(per_class)));
  n_train = std::clamp<std::size_t>(n_train, 1, per_class - 1);
  const std::size_t n_test = per_class - n_train;
  const double scale = 1.0 / std::sqrt(1.0 + spread * spread);

  DatasetPair out;
  out.train = {Matrix(classes * n_train, dim), std::vector<std::size_t>(classes * n_train), classes, Split::train};
  out.test = {Matrix(classes * n_test, dim), std::vector<std::size_t>(classes * n_test), classes, Split::test};
  std::size_t tr = 0, te = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = 0; k < per_class; ++k) {
      const bool to_train = k < n_train;
      Dataset& ds = to_train ? out.train : out.test;
      const std::size_t row = to_train ? tr++ : te++;
      for (std::size_t d = 0; d < dim; ++d)
        ds.inputs(row, d) = (centers(c, d) + spread * standard_normal(rng)) * scale;
      ds.labels[row] = c;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX files (the MNIST container format). All integers are big-endian.
//
//   images: u32 magic 0x00000803, u32 count, u32 rows, u32 cols, count*rows*cols u8
//   labels: u32 magic 0x00000801, u32 count, count u8

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& file,
                               const char* field) {
  if (offset + 4 > bytes.size())
    throw FormatError(file + ": truncated header while reading " + field, bytes.size());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void check_magic(std::uint32_t got, std::uint32_t want, const std::string& file) {
  if (got != want) {
    char buf[96];
    std::snprintf(buf, sizeof buf, ": bad magic 0x%08X, expected 0x%08X", got, want);
    throw FormatError(file + buf, 0);
  }
}

inline void check_payload(const std::vector<std::uint8_t>& bytes, std::size_t header, std::uint64_t expected,
                          const std::string& file) {
  const std::uint64_t have = bytes.size() - header;
  if (have < expected)
    throw FormatError(file + ": truncated payload, expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(have),
                      bytes.size());
  if (have > expected) throw FormatError(file + ": trailing bytes after payload", header + expected);
}

}  // namespace detail

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline IdxImages parse_idx_images(const std::vector<std::uint8_t>& bytes, const std::string& name = "images") {
  detail::check_magic(detail::read_be32(bytes, 0, name, "magic"), kIdxImagesMagic, name);
  IdxImages img;
  img.count = detail::read_be32(bytes, 4, name, "count");
  img.rows = detail::read_be32(bytes, 8, name, "rows");
  img.cols = detail::read_be32(bytes, 12, name, "cols");
  const std::uint64_t n = std::uint64_t{img.count} * img.rows * img.cols;
  detail::check_payload(bytes, 16, n, name);
  img.pixels.assign(bytes.begin() + 16, bytes.end());
  return img;
}

inline std::vector<std::uint8_t> parse_idx_labels(const std::vector<std::uint8_t>& bytes,
                                                  const std::string& name = "labels") {
  detail::check_magic(detail::read_be32(bytes, 0, name, "magic"), kIdxLabelsMagic, name);
  const std::uint32_t count = detail::read_be32(bytes, 4, name, "count");
  detail::check_payload(bytes, 8, count, name);
  return {bytes.begin() + 8, bytes.end()};
}

/// Joins parsed images and labels into a dataset with pixels scaled to
/// [0, 1]. `classes` = 0 means max label + 1 (at least 2).
inline Dataset idx_to_dataset(const IdxImages& images, const std::vector<std::uint8_t>& labels,
                              std::size_t classes = 0, Split split = Split::train) {
  if (labels.size() != images.count)
    throw FormatError("image count " + std::to_string(images.count) + " does not match label count " +
                          std::to_string(labels.size()),
                      4);
  if (images.count == 0) throw FormatError("IDX files contain no examples", 4);
  const std::size_t dim = std::size_t{images.rows} * images.cols;
  Dataset ds;
  ds.inputs = Matrix(images.count, dim);
  for (std::size_t k = 0; k < images.pixels.size(); ++k) ds.inputs.data[k] = images.pixels[k] / 255.0;
  std::size_t top = 0;
  ds.labels.reserve(labels.size());
  for (auto l : labels) {
    ds.labels.push_back(l);
    top = std::max<std::size_t>(top, l);
  }
  ds.classes = classes != 0 ? classes : std::max<std::size_t>(2, top + 1);
  ds.split = split;
  ds.validate();
  return ds;
}

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t classes = 0,
                        Split split = Split::train) {
  return idx_to_dataset(parse_idx_images(read_file_bytes(images_path), images_path),
                        parse_idx_labels(read_file_bytes(labels_path), labels_path), classes, split);
}

/// Serializes a dataset back to IDX. Features are mapped to bytes by
/// round(255 x), which inverts the scaling done on load.
inline std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> encode_idx(const Dataset& ds,
                                                                                  std::uint32_t rows,
                                                                                  std::uint32_t cols) {
  if (std::size_t{rows} * cols != ds.dim())
    throw InputError("encode_idx: rows*cols = " + std::to_string(std::size_t{rows} * cols) +
                     " does not match dataset dimension " + std::to_string(ds.dim()));
  std::vector<std::uint8_t> img;
  img.reserve(16 + ds.inputs.data.size());
  detail::put_be32(img, kIdxImagesMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(ds.size()));
  detail::put_be32(img, rows);
  detail::put_be32(img, cols);
  for (double v : ds.inputs.data) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("encode_idx: feature outside [0, 1]");
    img.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  }
  std::vector<std::uint8_t> lab;
  lab.reserve(8 + ds.size());
  detail::put_be32(lab, kIdxLabelsMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (auto l : ds.labels) {
    if (l > 255) throw InputError("encode_idx: label does not fit in a byte");
    lab.push_back(static_cast<std::uint8_t>(l));
  }
  return {std::move(img), std::move(lab)};
}

inline void write_idx(const Dataset& ds, std::uint32_t rows, std::uint32_t cols, const std::string& images_path,
                      const std::string& labels_path) {
  auto [img, lab] = encode_idx(ds, rows, cols);
  write_file_bytes(images_path, img);
  write_file_bytes(labels_path, lab);
}

}  // namespace sgt
