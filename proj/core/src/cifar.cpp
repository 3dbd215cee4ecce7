#include "cct/cifar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>

#include "cct/errors.hpp"
#include "cct/random.hpp"

namespace cct {

namespace fs = std::filesystem;

std::vector<Cifar100Record> read_cifar_records(const fs::path& path,
                                               std::optional<std::size_t> expected_records) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) {
    throw DatasetError(DatasetError::Kind::kNotFound,
                       "dataset file not found: " + path.string() + " (expected '" +
                           path.filename().string() + "')");
  }
  const std::uintmax_t bytes = fs::file_size(path, ec);
  if (ec) throw DatasetError(DatasetError::Kind::kNotFound, "cannot stat " + path.string());
  if (expected_records) {
    const std::uintmax_t want = *expected_records * kCifarRecordBytes;
    if (bytes != want) {
      throw DatasetError(DatasetError::Kind::kCorrupt,
                         "corrupt dataset file " + path.string() + ": expected " +
                             std::to_string(want) + " bytes, found " + std::to_string(bytes));
    }
  } else if (bytes == 0 || bytes % kCifarRecordBytes != 0) {
    throw DatasetError(DatasetError::Kind::kCorrupt,
                       "corrupt dataset file " + path.string() + ": " + std::to_string(bytes) +
                           " bytes is not a positive multiple of " +
                           std::to_string(kCifarRecordBytes));
  }

  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(DatasetError::Kind::kNotFound, "cannot open " + path.string());
  const std::size_t n = static_cast<std::size_t>(bytes / kCifarRecordBytes);
  std::vector<Cifar100Record> records(n);
  std::array<char, kCifarRecordBytes> buf{};
  for (std::size_t i = 0; i < n; ++i) {
    if (!in.read(buf.data(), buf.size())) {
      throw DatasetError(DatasetError::Kind::kCorrupt,
                         "corrupt dataset file " + path.string() + ": short read at record " +
                             std::to_string(i));
    }
    Cifar100Record& r = records[i];
    r.coarse_label = static_cast<std::uint8_t>(buf[0]);
    r.fine_label = static_cast<std::uint8_t>(buf[1]);
    if (r.coarse_label >= kCifarCoarseClasses || r.fine_label >= kCifarFineClasses) {
      throw DatasetError(DatasetError::Kind::kRange,
                         path.string() + ": record " + std::to_string(i) + " has labels (" +
                             std::to_string(r.coarse_label) + ", " + std::to_string(r.fine_label) +
                             ") outside coarse [0,20) / fine [0,100)");
    }
    std::copy(buf.begin() + 2, buf.end(), reinterpret_cast<char*>(r.pixels.data()));
  }
  return records;
}

void write_cifar_records(const fs::path& path, std::span<const Cifar100Record> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) {
    out.put(static_cast<char>(r.coarse_label));
    out.put(static_cast<char>(r.fine_label));
    out.write(reinterpret_cast<const char*>(r.pixels.data()), r.pixels.size());
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Cifar100 load_cifar100(const fs::path& dir) {
  Cifar100 data;
  data.train = read_cifar_records(dir / "train.bin", kCifarTrainRecords);
  data.test = read_cifar_records(dir / "test.bin", kCifarTestRecords);
  return data;
}

// ---------------------------------------------------------------------------

NormStats compute_norm_stats(std::span<const Cifar100Record> records) {
  NormStats s;
  if (records.empty()) return s;
  constexpr std::size_t plane = kCifarImageBytes / 3;
  // Integer sums keep the variance exact, so a constant channel gets std 1.
  for (int c = 0; c < 3; ++c) {
    unsigned __int128 sum = 0, sq = 0;
    for (const auto& r : records) {
      for (std::size_t p = 0; p < plane; ++p) {
        const unsigned v = r.pixels[c * plane + p];
        sum += v;
        sq += v * v;
      }
    }
    const unsigned __int128 n = records.size() * plane;
    const auto spread = static_cast<long double>(n * sq - sum * sum);
    const long double nn = static_cast<long double>(n);
    s.mean[c] = static_cast<double>(static_cast<long double>(sum) / nn / 255.0L);
    s.std[c] = spread > 0 ? static_cast<double>(std::sqrt(spread) / nn / 255.0L) : 1.0;
  }
  return s;
}

void save_norm_stats(const fs::path& path, const NormStats& stats) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  out << "mean " << stats.mean[0] << ' ' << stats.mean[1] << ' ' << stats.mean[2] << '\n';
  out << "std " << stats.std[0] << ' ' << stats.std[1] << ' ' << stats.std[2] << '\n';
}

std::optional<NormStats> load_norm_stats(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  NormStats s;
  std::string key;
  bool have_mean = false, have_std = false;
  while (in >> key) {
    if (key == "mean") {
      have_mean = static_cast<bool>(in >> s.mean[0] >> s.mean[1] >> s.mean[2]);
    } else if (key == "std") {
      have_std = static_cast<bool>(in >> s.std[0] >> s.std[1] >> s.std[2]);
    } else {
      return std::nullopt;
    }
  }
  if (!have_mean || !have_std) return std::nullopt;
  for (double v : s.std)
    if (!(v > 0.0)) return std::nullopt;
  return s;
}

// ---------------------------------------------------------------------------

AugmentParams sample_augment(std::uint64_t seed, std::uint64_t sample_index, std::uint64_t epoch) {
  Rng rng(derive_seed(seed, sample_index, epoch, 0xa09));
  AugmentParams p;
  p.dx = static_cast<int>(rng.below(2 * kAugmentPad + 1));
  p.dy = static_cast<int>(rng.below(2 * kAugmentPad + 1));
  p.flip = rng.uniform() < 0.5;
  return p;
}

CifarImage augment(const CifarImage& image, const AugmentParams& params) {
  constexpr int side = static_cast<int>(kCifarSide);
  // Reflection without repeating the edge pixel: -1 -> 1, side -> side - 2.
  auto reflect = [](int i) {
    if (i < 0) return -i;
    if (i >= side) return 2 * (side - 1) - i;
    return i;
  };
  CifarImage out{};
  for (int c = 0; c < 3; ++c) {
    const std::uint8_t* src = image.data() + c * side * side;
    std::uint8_t* dst = out.data() + c * side * side;
    for (int y = 0; y < side; ++y) {
      const int sy = reflect(y + params.dy - kAugmentPad);
      for (int x = 0; x < side; ++x) {
        const int cx = params.flip ? side - 1 - x : x;
        const int sx = reflect(cx + params.dx - kAugmentPad);
        dst[y * side + x] = src[sy * side + sx];
      }
    }
  }
  return out;
}

CifarImage augment(const CifarImage& image, std::uint64_t seed, std::uint64_t sample_index,
                   std::uint64_t epoch, bool enabled) {
  if (!enabled) return image;
  return augment(image, sample_augment(seed, sample_index, epoch));
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, epoch, 0x5f));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Batch<float> make_batch(std::span<const Cifar100Record> records, std::span<const std::size_t> indices,
                        const NormStats& norm, const BatchOptions& options, std::uint64_t epoch) {
  const auto B = static_cast<std::int64_t>(indices.size());
  if (B == 0) throw ConfigError("make_batch: empty batch");
  constexpr std::size_t plane = kCifarImageBytes / 3;
  std::vector<float> pixels(static_cast<std::size_t>(B) * kCifarImageBytes);
  Batch<float> batch;
  batch.labels.reserve(indices.size());
  batch.indices.assign(indices.begin(), indices.end());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Cifar100Record& r = records[indices[b]];
    const CifarImage img =
        augment(r.pixels, options.augment_seed, indices[b], epoch, options.augment);
    float* dst = pixels.data() + b * kCifarImageBytes;
    for (int c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p) dst[c * plane + p] = normalize_pixel(img[c * plane + p], c, norm);
    batch.labels.push_back(r.fine_label);
  }
  batch.images = Tensor<float>(Shape{B, kCifarChannels, kCifarSide, kCifarSide}, std::move(pixels));
  return batch;
}

BatchIterator::BatchIterator(std::span<const Cifar100Record> records, const NormStats& norm,
                             BatchOptions options, std::uint64_t epoch)
    : records_(records), norm_(norm), options_(options), epoch_(epoch) {
  if (options_.batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (options_.shuffle) {
    order_ = epoch_order(records.size(), options_.shuffle_seed, epoch);
  } else {
    order_.resize(records.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }
}

std::size_t BatchIterator::batches() const noexcept {
  const auto bs = static_cast<std::size_t>(options_.batch_size);
  return (order_.size() + bs - 1) / bs;
}

std::optional<Batch<float>> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(options_.batch_size));
  std::span<const std::size_t> idx(order_.data() + cursor_, end - cursor_);
  cursor_ = end;
  return make_batch(records_, idx, norm_, options_, epoch_);
}

// ---------------------------------------------------------------------------

std::vector<Cifar100Record> synthetic_dataset(std::size_t n, int n_classes, std::uint64_t seed) {
  if (n < 1) throw ConfigError("synthetic_dataset: n must be at least 1");
  if (n_classes < 1 || n_classes > kCifarFineClasses) {
    throw ConfigError("synthetic_dataset: n_classes must lie in [1, 100]");
  }
  std::vector<std::array<double, 3>> colours(static_cast<std::size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) {
    Rng rng(derive_seed(seed, 0xc010, static_cast<std::uint64_t>(c)));
    for (double& v : colours[static_cast<std::size_t>(c)]) v = rng.uniform(32.0, 224.0);
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(n_classes));
  {
    Rng rng(derive_seed(seed, 0x1abe1));
    for (std::size_t i = n; i > 1; --i) std::swap(labels[i - 1], labels[rng.below(i)]);
  }
  constexpr double noise = 24.0;
  constexpr std::size_t plane = kCifarImageBytes / 3;
  std::vector<Cifar100Record> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, 0x91c, i));
    const int label = labels[i];
    Cifar100Record& r = out[i];
    r.fine_label = static_cast<std::uint8_t>(label);
    r.coarse_label = static_cast<std::uint8_t>(label * kCifarCoarseClasses / kCifarFineClasses);
    for (int c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = colours[static_cast<std::size_t>(label)][static_cast<std::size_t>(c)] +
                         noise * rng.normal();
        r.pixels[c * plane + p] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
  }
  return out;
}

}  // namespace cct
