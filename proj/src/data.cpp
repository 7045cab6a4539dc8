#include "softdiamond/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "softdiamond/binary_io.hpp"
#include "softdiamond/error.hpp"
#include "softdiamond/rng.hpp"

namespace softdiamond::data {

using net::Shape;
using net::Tensor;
using net::shape_size;

net::Shape LabeledDataset::sample_shape() const {
  return Shape(images.shape().begin() + 1, images.shape().end());
}

void LabeledDataset::validate() const {
  if (images.rank() != 4) throw ShapeMismatch("dataset images must be [n, C, H, W], got " + net::shape_string(images.shape()));
  if (labels.empty()) throw ShapeMismatch("dataset is empty");
  if (images.dim(0) != labels.size())
    throw ShapeMismatch("image count " + std::to_string(images.dim(0)) + " != label count " +
                        std::to_string(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw LabelOutOfRange("sample " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                            " but K = " + std::to_string(classes));
  }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  const std::size_t per = shape_size(sample_shape());
  Shape shape = images.shape();
  shape[0] = indices.size();
  std::vector<double> values(indices.size() * per);
  std::vector<int> out_labels(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    if (i >= size()) throw ShapeMismatch("subset index " + std::to_string(i) + " out of range");
    std::copy_n(images.ptr() + i * per, per, values.data() + r * per);
    out_labels[r] = labels[i];
  }
  LabeledDataset out;
  out.images = Tensor(shape, std::move(values));
  out.labels = std::move(out_labels);
  out.classes = classes;
  out.split = split;
  out.stats = stats;
  out.normalized = normalized;
  return out;
}

ChannelStats compute_channel_stats(const Tensor& images) {
  if (images.rank() != 4) throw ShapeMismatch("channel stats need [n, C, H, W]");
  const std::size_t n = images.dim(0), c = images.dim(1), hw = images.dim(2) * images.dim(3);
  ChannelStats st;
  st.mean.assign(c, 0.0);
  st.stddev.assign(c, 0.0);
  const double count = static_cast<double>(n * hw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = images.ptr() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) sum += p[j];
    }
    const double mean = sum / count;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = images.ptr() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) ss += (p[j] - mean) * (p[j] - mean);
    }
    const double sd = std::sqrt(ss / count);
    st.mean[ch] = mean;
    st.stddev[ch] = sd > 0.0 ? sd : 1.0;  // constant channel: only centre it
  }
  return st;
}

namespace {

void normalize_images(Tensor& images, const ChannelStats& stats) {
  const std::size_t n = images.dim(0), c = images.dim(1), hw = images.dim(2) * images.dim(3);
  if (stats.mean.size() != c || stats.stddev.size() != c)
    throw ShapeMismatch("channel stats cover " + std::to_string(stats.mean.size()) +
                        " channels, images have " + std::to_string(c));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = images.ptr() + (i * c + ch) * hw;
      const double m = stats.mean[ch], inv = 1.0 / stats.stddev[ch];
      for (std::size_t j = 0; j < hw; ++j) p[j] = (p[j] - m) * inv;
    }
  }
}

std::string offset_text(const std::string& path, std::size_t offset) {
  return "file '" + path + "' at byte offset " + std::to_string(offset);
}

}  // namespace

void apply_channel_normalization(LabeledDataset& dataset, const ChannelStats& stats) {
  normalize_images(dataset.images, stats);
  dataset.stats = stats;
  dataset.normalized = true;
}

RawRecord parse_record(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kCifarRecordBytes)
    throw MalformedRecord("record has " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(kCifarRecordBytes));
  if (bytes[0] >= kCifarClasses)
    throw LabelOutOfRange("label byte " + std::to_string(bytes[0]) + " (K = 10)");
  RawRecord r;
  r.label = bytes[0];
  std::copy(bytes.begin() + 1, bytes.end(), r.pixels.begin());
  return r;
}

std::array<std::uint8_t, kCifarRecordBytes> serialize_record(const RawRecord& record) {
  std::array<std::uint8_t, kCifarRecordBytes> out{};
  out[0] = record.label;
  std::copy(record.pixels.begin(), record.pixels.end(), out.begin() + 1);
  return out;
}

std::vector<RawRecord> read_cifar_batch(const std::string& path, std::size_t max_records) {
  const io::Bytes bytes = io::read_file(path);
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t offset = bytes.size() / kCifarRecordBytes * kCifarRecordBytes;
    throw MalformedRecord("incomplete record in " + offset_text(path, offset) + " (file length " +
                          std::to_string(bytes.size()) + " is not a multiple of 3073)");
  }
  std::size_t count = bytes.size() / kCifarRecordBytes;
  if (max_records > 0) count = std::min(count, max_records);
  std::vector<RawRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t offset = i * kCifarRecordBytes;
    if (bytes[offset] >= kCifarClasses)
      throw LabelOutOfRange("label byte " + std::to_string(bytes[offset]) + " in " + offset_text(path, offset));
    out.push_back(parse_record(std::span(bytes).subspan(offset, kCifarRecordBytes)));
  }
  return out;
}

LabeledDataset records_to_dataset(const std::vector<RawRecord>& records, std::string split) {
  if (records.empty()) throw ShapeMismatch("no records in split '" + split + "'");
  std::vector<double> values(records.size() * kCifarPixels);
  std::vector<int> labels(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    labels[i] = records[i].label;
    for (std::size_t j = 0; j < kCifarPixels; ++j)
      values[i * kCifarPixels + j] = static_cast<double>(records[i].pixels[j]) / 255.0;
  }
  LabeledDataset d;
  d.images = Tensor({records.size(), 3, 32, 32}, std::move(values));
  d.labels = std::move(labels);
  d.classes = kCifarClasses;
  d.split = std::move(split);
  return d;
}

TrainTestSplit load_cifar10(const std::string& dir, std::size_t max_per_file) {
  namespace fs = std::filesystem;
  std::vector<RawRecord> train_records;
  for (int b = 1; b <= 5; ++b) {
    const auto path = (fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin")).string();
    auto part = read_cifar_batch(path, max_per_file);
    train_records.insert(train_records.end(), part.begin(), part.end());
  }
  const auto test_records = read_cifar_batch((fs::path(dir) / "test_batch.bin").string(), max_per_file);
  TrainTestSplit out{records_to_dataset(train_records, "train"), records_to_dataset(test_records, "test")};
  const ChannelStats stats = compute_channel_stats(out.train.images);
  apply_channel_normalization(out.train, stats);
  apply_channel_normalization(out.test, stats);
  return out;
}

namespace {

LabeledDataset synthetic_raw(std::size_t n, std::size_t classes, const Shape& input_shape,
                             double difficulty, std::uint64_t seed, std::uint64_t split_index) {
  if (n == 0) throw InvalidParameter("n: synthetic dataset needs at least one sample");
  if (classes == 0) throw InvalidParameter("classes: must be >= 1");
  if (input_shape.size() != 3) throw ShapeMismatch("input_shape must be [C, H, W]");
  if (!(difficulty >= 0.0) || !std::isfinite(difficulty)) throw InvalidParameter("difficulty: must be finite and >= 0");
  const std::size_t per = shape_size(input_shape);

  Rng proto_rng = make_rng(seed, "synthetic.prototypes");
  std::vector<double> prototypes(classes * per);
  for (double& v : prototypes) v = standard_normal(proto_rng);

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  Rng order_rng = make_rng(seed, "synthetic.order", split_index);
  for (std::size_t i = n; i > 1; --i) {  // Fisher-Yates with our own uniform draw
    const auto j = static_cast<std::size_t>(uniform01(order_rng) * static_cast<double>(i));
    std::swap(labels[i - 1], labels[j]);
  }

  Rng noise_rng = make_rng(seed, "synthetic.noise", split_index);
  std::vector<double> values(n * per);
  for (std::size_t i = 0; i < n; ++i) {
    const double* proto = prototypes.data() + static_cast<std::size_t>(labels[i]) * per;
    for (std::size_t j = 0; j < per; ++j)
      values[i * per + j] = proto[j] + (difficulty > 0.0 ? difficulty * standard_normal(noise_rng) : 0.0);
  }

  LabeledDataset d;
  Shape shape{n};
  shape.insert(shape.end(), input_shape.begin(), input_shape.end());
  d.images = Tensor(shape, std::move(values));
  d.labels = std::move(labels);
  d.classes = classes;
  d.split = "synthetic";
  return d;
}

}  // namespace

LabeledDataset make_synthetic(std::size_t n, std::size_t classes, const Shape& input_shape,
                              double difficulty, std::uint64_t seed, std::uint64_t split_index) {
  LabeledDataset d = synthetic_raw(n, classes, input_shape, difficulty, seed, split_index);
  apply_channel_normalization(d, compute_channel_stats(d.images));
  return d;
}

SyntheticSplits make_synthetic_splits(std::size_t n_train, std::size_t n_validation, std::size_t n_test,
                                      std::size_t classes, const Shape& input_shape, double difficulty,
                                      std::uint64_t seed) {
  auto raw = [&](std::size_t n, std::uint64_t idx, const char* name) {
    LabeledDataset d = synthetic_raw(n, classes, input_shape, difficulty, seed, idx);
    d.split = name;
    return d;
  };
  SyntheticSplits out{raw(n_train, 0, "train"), raw(n_validation, 1, "validation"), raw(n_test, 2, "test")};
  const ChannelStats stats = compute_channel_stats(out.train.images);
  apply_channel_normalization(out.train, stats);
  apply_channel_normalization(out.validation, stats);
  apply_channel_normalization(out.test, stats);
  return out;
}

void write_dataset_csv(const LabeledDataset& dataset, std::ostream& out) {
  const std::size_t per = shape_size(dataset.sample_shape());
  out << "label";
  for (std::size_t j = 0; j < per; ++j) out << ",p" << j;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out << dataset.labels[i];
    for (std::size_t j = 0; j < per; ++j) out << ',' << dataset.images[i * per + j];
    out << '\n';
  }
}

Batch augment(Batch batch, const AugmentFlags& flags, const ChannelStats& stats, std::uint64_t seed,
              std::uint64_t batch_index) {
  if (!flags.any()) return batch;
  Tensor& x = batch.images;
  if (x.rank() != 4) throw ShapeMismatch("augment expects [n, C, H, W]");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);

  if (flags.channel_norm && !batch.normalized) {
    normalize_images(x, stats);
    batch.normalized = true;
  }

  Rng rng = make_rng(seed, "augment", batch_index);
  for (std::size_t i = 0; i < n; ++i) {
    // draws are made unconditionally so each image consumes a fixed amount of the stream
    const double flip_u = uniform01(rng);
    const double cy_u = uniform01(rng), cx_u = uniform01(rng);
    if (flags.flip && flip_u < flags.flip_probability) {
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t r = 0; r < h; ++r) {
          double* row = x.ptr() + ((i * c + ch) * h + r) * w;
          std::reverse(row, row + w);
        }
    }
    if (flags.cutout && flags.cutout_size > 0) {
      // centre anywhere in the image; the square is clipped at the borders
      const auto cy = static_cast<std::int64_t>(cy_u * static_cast<double>(h));
      const auto cx = static_cast<std::int64_t>(cx_u * static_cast<double>(w));
      const auto half = static_cast<std::int64_t>(flags.cutout_size / 2);
      const auto size = static_cast<std::int64_t>(flags.cutout_size);
      const std::size_t y0 = static_cast<std::size_t>(std::max<std::int64_t>(0, cy - half));
      const std::size_t y1 = static_cast<std::size_t>(std::min<std::int64_t>(static_cast<std::int64_t>(h), cy - half + size));
      const std::size_t x0 = static_cast<std::size_t>(std::max<std::int64_t>(0, cx - half));
      const std::size_t x1 = static_cast<std::size_t>(std::min<std::int64_t>(static_cast<std::int64_t>(w), cx - half + size));
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double fill = batch.normalized ? 0.0 : (ch < stats.mean.size() ? stats.mean[ch] : 0.0);
        for (std::size_t r = y0; r < y1; ++r)
          for (std::size_t q = x0; q < x1; ++q) x[((i * c + ch) * h + r) * w + q] = fill;
      }
    }
  }
  return batch;
}

}  // namespace softdiamond::data
