#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "softdiamond/tensor.hpp"

namespace softdiamond::data {

/// Per-channel mean and standard deviation of image tensors.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  bool operator==(const ChannelStats&) const = default;
};

struct LabeledDataset {
  net::Tensor images;  // [n, C, H, W]
  std::vector<int> labels;
  std::size_t classes = 0;
  std::string split;
  ChannelStats stats;       // statistics the images were normalized with
  bool normalized = false;

  std::size_t size() const noexcept { return labels.size(); }
  net::Shape sample_shape() const;
  /// Throws LabelOutOfRange / ShapeMismatch when an invariant is broken.
  void validate() const;
  /// Rows `indices`, in order, as a new dataset sharing stats and classes.
  LabeledDataset subset(std::span<const std::size_t> indices) const;
};

ChannelStats compute_channel_stats(const net::Tensor& images);
/// x <- (x - mean) / stddev per channel; records `stats` on the dataset.
void apply_channel_normalization(LabeledDataset& dataset, const ChannelStats& stats);

// ---- CIFAR-10 binary format ----------------------------------------------

inline constexpr std::size_t kCifarPixels = 3 * 32 * 32;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarPixels;
inline constexpr std::size_t kCifarClasses = 10;

/// One record: label byte followed by 1024 R, 1024 G, 1024 B bytes.
struct RawRecord {
  std::uint8_t label = 0;
  std::array<std::uint8_t, kCifarPixels> pixels{};
  bool operator==(const RawRecord&) const = default;
};

RawRecord parse_record(std::span<const std::uint8_t> bytes);
std::array<std::uint8_t, kCifarRecordBytes> serialize_record(const RawRecord& record);

/// Parses a batch file. Throws MalformedRecord when the length is not a
/// multiple of 3073 and LabelOutOfRange for labels >= 10, naming file and
/// byte offset. `max_records` = 0 reads everything.
std::vector<RawRecord> read_cifar_batch(const std::string& path, std::size_t max_records = 0);

/// Pixels scaled to [0, 1], no normalization.
LabeledDataset records_to_dataset(const std::vector<RawRecord>& records, std::string split);

struct TrainTestSplit {
  LabeledDataset train;
  LabeledDataset test;
};

/// Reads data_batch_1..5.bin and test_batch.bin from `dir`, normalizes both
/// splits with statistics of the training split. `max_per_file` = 0 keeps all.
TrainTestSplit load_cifar10(const std::string& dir, std::size_t max_per_file = 0);

// ---- synthetic data ---------------------------------------------------------

/// K Gaussian class prototypes plus isotropic noise of standard deviation
/// `difficulty`. Labels are balanced (sample i has class i mod K before a
/// seeded shuffle). Prototypes depend only on `seed`; the noise stream also
/// depends on `split_index`, so splits share prototypes. The result is
/// normalized with its own channel statistics.
LabeledDataset make_synthetic(std::size_t n, std::size_t classes, const net::Shape& input_shape,
                              double difficulty, std::uint64_t seed, std::uint64_t split_index = 0);

struct SyntheticSplits {
  LabeledDataset train;
  LabeledDataset validation;
  LabeledDataset test;
};

/// Train/validation/test from the same prototypes; validation and test are
/// normalized with the training statistics.
SyntheticSplits make_synthetic_splits(std::size_t n_train, std::size_t n_validation,
                                      std::size_t n_test, std::size_t classes,
                                      const net::Shape& input_shape, double difficulty,
                                      std::uint64_t seed);

/// label,p0,p1,... one row per sample.
void write_dataset_csv(const LabeledDataset& dataset, std::ostream& out);

// ---- augmentation -------------------------------------------------------------

struct AugmentFlags {
  bool flip = false;
  double flip_probability = 0.5;
  bool cutout = false;
  std::size_t cutout_size = 8;
  bool channel_norm = false;

  bool any() const noexcept { return flip || cutout || channel_norm; }
};

struct Batch {
  net::Tensor images;  // [n, C, H, W]
  std::vector<int> labels;
  bool normalized = false;
};

/// Horizontal flip, cutout (square filled with the per-channel mean) and
/// channel normalization with frozen `stats`. Normalization is applied only
/// to batches not yet normalized, so it is idempotent. Deterministic in
/// (seed, batch_index).
Batch augment(Batch batch, const AugmentFlags& flags, const ChannelStats& stats,
              std::uint64_t seed, std::uint64_t batch_index);

}  // namespace softdiamond::data
