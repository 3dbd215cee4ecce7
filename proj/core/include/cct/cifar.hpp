#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cct/tensor.hpp"

namespace cct {

inline constexpr std::int64_t kCifarSide = 32;
inline constexpr std::int64_t kCifarChannels = 3;
inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::size_t kCifarRecordBytes = 3074;
inline constexpr std::size_t kCifarTrainRecords = 50000;
inline constexpr std::size_t kCifarTestRecords = 10000;
inline constexpr int kCifarFineClasses = 100;
inline constexpr int kCifarCoarseClasses = 20;

using CifarImage = std::array<std::uint8_t, kCifarImageBytes>;

// One record of the official binary format: coarse label, fine label, then
// 1024 red, 1024 green, 1024 blue bytes, each plane row-major.
struct Cifar100Record {
  std::uint8_t coarse_label = 0;
  std::uint8_t fine_label = 0;
  CifarImage pixels{};

  bool operator==(const Cifar100Record&) const = default;
};

struct Cifar100 {
  std::vector<Cifar100Record> train;
  std::vector<Cifar100Record> test;
};

// Reads a file of back-to-back records. The size is validated before any
// record buffer is allocated.
std::vector<Cifar100Record> read_cifar_records(const std::filesystem::path& path,
                                               std::optional<std::size_t> expected_records = {});
void write_cifar_records(const std::filesystem::path& path, std::span<const Cifar100Record> records);

// Loads train.bin (50000 records) and test.bin (10000 records) from `dir`.
Cifar100 load_cifar100(const std::filesystem::path& dir);

struct NormStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

// Per-channel mean/std of pixel/255. A zero std is replaced by 1.
NormStats compute_norm_stats(std::span<const Cifar100Record> records);
void save_norm_stats(const std::filesystem::path& path, const NormStats& stats);
std::optional<NormStats> load_norm_stats(const std::filesystem::path& path);

inline float normalize_pixel(std::uint8_t v, int channel, const NormStats& s) {
  return static_cast<float>((v / 255.0 - s.mean[channel]) / s.std[channel]);
}
inline double denormalize_pixel(double x, int channel, const NormStats& s) {
  return (x * s.std[channel] + s.mean[channel]) * 255.0;
}

// Reflect-pad by 4, crop 32x32 at (dx, dy) in [0, 8], optionally mirror.
struct AugmentParams {
  int dx = 4;
  int dy = 4;
  bool flip = false;
};

inline constexpr int kAugmentPad = 4;

AugmentParams sample_augment(std::uint64_t seed, std::uint64_t sample_index, std::uint64_t epoch);
CifarImage augment(const CifarImage& image, const AugmentParams& params);
CifarImage augment(const CifarImage& image, std::uint64_t seed, std::uint64_t sample_index,
                   std::uint64_t epoch, bool enabled);

template <typename T>
struct Batch {
  Tensor<T> images;                  // [B, 3, 32, 32], normalized
  std::vector<std::int32_t> labels;  // fine labels
  std::vector<std::size_t> indices;  // positions in the source record list
};

// Order in which an epoch visits `n` records; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

struct BatchOptions {
  std::int64_t batch_size = 1024;
  bool shuffle = true;
  std::uint64_t shuffle_seed = 0;
  bool augment = false;
  std::uint64_t augment_seed = 0;
};

// Streams one epoch of batches; the final short batch is emitted.
class BatchIterator {
 public:
  BatchIterator(std::span<const Cifar100Record> records, const NormStats& norm,
                BatchOptions options, std::uint64_t epoch);

  std::optional<Batch<float>> next();
  std::size_t batches() const noexcept;

 private:
  std::span<const Cifar100Record> records_;
  NormStats norm_;
  BatchOptions options_;
  std::uint64_t epoch_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Assembles a normalized batch from records at the given positions.
Batch<float> make_batch(std::span<const Cifar100Record> records, std::span<const std::size_t> indices,
                        const NormStats& norm, const BatchOptions& options = {},
                        std::uint64_t epoch = 0);

// Class-conditional images: each class has its own mean colour, pixels add
// Gaussian noise. Labels cycle through the classes in a shuffled order.
std::vector<Cifar100Record> synthetic_dataset(std::size_t n, int n_classes, std::uint64_t seed);

}  // namespace cct
