#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "cct/cifar.hpp"
#include "cct/errors.hpp"
#include "cct/random.hpp"

using namespace cct;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("cct_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Cifar100Record random_record(Rng& rng) {
  Cifar100Record r;
  r.coarse_label = static_cast<std::uint8_t>(rng.below(20));
  r.fine_label = static_cast<std::uint8_t>(rng.below(100));
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return r;
}

void write_bytes(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

DatasetError::Kind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DatasetError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no DatasetError thrown";
  return DatasetError::Kind::kNotFound;
}

}  // namespace

TEST(Cifar, OfficialFileSizes) {
  EXPECT_EQ(kCifarRecordBytes, 2u + 3u * 32u * 32u);
  EXPECT_EQ(kCifarTrainRecords * kCifarRecordBytes, 153700000u);
  EXPECT_EQ(kCifarTestRecords * kCifarRecordBytes, 30740000u);
}

TEST(Cifar, TwoRecordRoundtripKeepsBytes) {
  TempDir dir;
  Rng rng(1);
  const std::vector<Cifar100Record> recs{random_record(rng), random_record(rng)};
  write_cifar_records(dir.path() / "two.bin", recs);
  EXPECT_EQ(fs::file_size(dir.path() / "two.bin"), 2 * 3074u);
  EXPECT_EQ(read_cifar_records(dir.path() / "two.bin"), recs);
  EXPECT_EQ(read_cifar_records(dir.path() / "two.bin", 2).size(), 2u);

  // Byte layout: labels first, then red, green, blue planes.
  std::ifstream in(dir.path() / "two.bin", std::ios::binary);
  std::vector<unsigned char> raw(3074);
  in.read(reinterpret_cast<char*>(raw.data()), 3074);
  EXPECT_EQ(raw[0], recs[0].coarse_label);
  EXPECT_EQ(raw[1], recs[0].fine_label);
  EXPECT_EQ(raw[2 + 1024 + 5], recs[0].pixels[1024 + 5]);
}

TEST(Cifar, OutOfRangeLabelsAreRejected) {
  TempDir dir;
  Rng rng(2);
  std::vector<Cifar100Record> recs{random_record(rng), random_record(rng)};
  recs[1].fine_label = 120;
  write_cifar_records(dir.path() / "bad.bin", recs);
  EXPECT_EQ(kind_of([&] { read_cifar_records(dir.path() / "bad.bin"); }), DatasetError::Kind::kRange);
  recs[1].fine_label = 99;
  recs[0].coarse_label = 20;
  write_cifar_records(dir.path() / "bad.bin", recs);
  EXPECT_EQ(kind_of([&] { read_cifar_records(dir.path() / "bad.bin"); }), DatasetError::Kind::kRange);
}

TEST(Cifar, TruncatedOrPaddedFilesAreCorrupt) {
  TempDir dir;
  Rng rng(3);
  std::vector<Cifar100Record> recs{random_record(rng), random_record(rng), random_record(rng)};
  write_cifar_records(dir.path() / "full.bin", recs);
  std::vector<char> bytes(3 * 3074);
  std::ifstream(dir.path() / "full.bin", std::ios::binary).read(bytes.data(), bytes.size());
  for (std::size_t cut : {1ul, 2ul, 1000ul, 3073ul, 3074ul + 17, 2 * 3074ul - 1}) {
    std::vector<char> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    write_bytes(dir.path() / "cut.bin", part);
    EXPECT_EQ(kind_of([&] { read_cifar_records(dir.path() / "cut.bin"); }), DatasetError::Kind::kCorrupt) << cut;
  }
  write_bytes(dir.path() / "empty.bin", {});
  EXPECT_EQ(kind_of([&] { read_cifar_records(dir.path() / "empty.bin"); }), DatasetError::Kind::kCorrupt);
  // Right shape, wrong declared count.
  EXPECT_EQ(kind_of([&] { read_cifar_records(dir.path() / "full.bin", 4); }), DatasetError::Kind::kCorrupt);
}

TEST(Cifar, SplitSizeErrorsNameExpectedAndActualBytes) {
  TempDir dir;
  Rng rng(4);
  std::vector<Cifar100Record> recs{random_record(rng), random_record(rng)};
  write_cifar_records(dir.path() / "train.bin", recs);
  try {
    load_cifar100(dir.path());
    FAIL() << "no error";
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.kind(), DatasetError::Kind::kCorrupt);
    EXPECT_NE(std::string(e.what()).find("153700000"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("6148"), std::string::npos) << e.what();
  }
}

TEST(Cifar, MissingFileNamesTheFile) {
  TempDir dir;
  try {
    load_cifar100(dir.path());
    FAIL() << "no error";
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.kind(), DatasetError::Kind::kNotFound);
    EXPECT_NE(std::string(e.what()).find("train.bin"), std::string::npos) << e.what();
  }
}

TEST(NormStats, DegenerateAndConstantImages) {
  std::vector<Cifar100Record> zeros(3);
  const auto z = compute_norm_stats(zeros);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(z.mean[c], 0.0);
    EXPECT_EQ(z.std[c], 1.0);
  }
  std::vector<Cifar100Record> grey(2);
  for (auto& r : grey) r.pixels.fill(128);
  const auto g = compute_norm_stats(grey);
  for (int c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(g.mean[c], 128.0 / 255.0);
    EXPECT_EQ(g.std[c], 1.0);
  }
}

TEST(NormStats, TwoImagesByHand) {
  // Image A: red 0, green 255, blue half 0 / half 255. Image B: red 51 everywhere,
  // green 0, blue 255.
  std::vector<Cifar100Record> recs(2);
  for (std::size_t p = 0; p < 1024; ++p) {
    recs[0].pixels[p] = 0;
    recs[0].pixels[1024 + p] = 255;
    recs[0].pixels[2048 + p] = p < 512 ? 0 : 255;
    recs[1].pixels[p] = 51;
    recs[1].pixels[1024 + p] = 0;
    recs[1].pixels[2048 + p] = 255;
  }
  const auto s = compute_norm_stats(recs);
  EXPECT_NEAR(s.mean[0], 0.1, 1e-12);  // (0 + 0.2) / 2
  EXPECT_NEAR(s.std[0], 0.1, 1e-12);
  EXPECT_NEAR(s.mean[1], 0.5, 1e-12);
  EXPECT_NEAR(s.std[1], 0.5, 1e-12);
  EXPECT_NEAR(s.mean[2], 0.75, 1e-12);  // three quarters of the pixels are 1
  EXPECT_NEAR(s.std[2], std::sqrt(0.75 * 0.25), 1e-12);
}

TEST(NormStats, CacheRoundtripAndValidation) {
  TempDir dir;
  NormStats s;
  s.mean = {0.1, 0.2, 0.3};
  s.std = {0.25, 1.0 / 3.0, 0.5};
  save_norm_stats(dir.path() / "n.txt", s);
  const auto back = load_norm_stats(dir.path() / "n.txt");
  ASSERT_TRUE(back);
  EXPECT_EQ(back->mean, s.mean);
  EXPECT_EQ(back->std, s.std);
  std::ofstream(dir.path() / "bad.txt") << "mean 0 0 0\nstd 1 0 1\n";
  EXPECT_FALSE(load_norm_stats(dir.path() / "bad.txt"));
  EXPECT_FALSE(load_norm_stats(dir.path() / "absent.txt"));
}

TEST(Augment, DisabledIsIdentity) {
  Rng rng(5);
  const auto r = random_record(rng);
  for (std::uint64_t i = 0; i < 10; ++i) EXPECT_EQ(augment(r.pixels, 9, i, 3, false), r.pixels);
}

TEST(Augment, CentredCropIsIdentityAndFlipIsAnInvolution) {
  Rng rng(6);
  const auto r = random_record(rng);
  EXPECT_EQ(augment(r.pixels, AugmentParams{4, 4, false}), r.pixels);
  const auto once = augment(r.pixels, AugmentParams{4, 4, true});
  EXPECT_NE(once, r.pixels);
  EXPECT_EQ(once[5 * 32 + 0], r.pixels[5 * 32 + 31]);
  EXPECT_EQ(augment(once, AugmentParams{4, 4, true}), r.pixels);
}

TEST(Augment, ShiftUsesReflectPadding) {
  Rng rng(7);
  const auto r = random_record(rng);
  // dx = 0 shifts the window 4 left: output column x reads source column x - 4,
  // reflected about column 0 for x < 4.
  const auto out = augment(r.pixels, AugmentParams{0, 4, false});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const int sx = std::abs(x - 4);
        ASSERT_EQ(out[c * 1024 + y * 32 + x], r.pixels[c * 1024 + y * 32 + sx]);
      }
  const auto down = augment(r.pixels, AugmentParams{4, 8, false});
  for (int x = 0; x < 32; ++x) {
    EXPECT_EQ(down[31 * 32 + x], r.pixels[(2 * 31 - 35) * 32 + x]);
    EXPECT_EQ(down[0 * 32 + x], r.pixels[4 * 32 + x]);
  }
}

TEST(Augment, DeterministicPerSampleAndEpoch) {
  std::set<std::tuple<int, int, bool>> seen;
  int flips = 0;
  for (std::uint64_t i = 0; i < 400; ++i) {
    const auto a = sample_augment(11, i, 2), b = sample_augment(11, i, 2);
    EXPECT_EQ(std::tie(a.dx, a.dy, a.flip), std::tie(b.dx, b.dy, b.flip));
    ASSERT_GE(a.dx, 0);
    ASSERT_LE(a.dx, 8);
    ASSERT_GE(a.dy, 0);
    ASSERT_LE(a.dy, 8);
    seen.insert({a.dx, a.dy, a.flip});
    flips += a.flip;
  }
  EXPECT_GT(seen.size(), 100u);
  EXPECT_NEAR(flips, 200, 40);
  bool epoch_differs = false;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto a = sample_augment(11, i, 2), b = sample_augment(11, i, 3);
    epoch_differs |= std::tie(a.dx, a.dy, a.flip) != std::tie(b.dx, b.dy, b.flip);
  }
  EXPECT_TRUE(epoch_differs);
}

TEST(Batches, FinalShortBatchIsEmitted) {
  const auto recs = synthetic_dataset(10, 5, 1);
  BatchOptions opt;
  opt.batch_size = 4;
  BatchIterator it(recs, NormStats{}, opt, 0);
  EXPECT_EQ(it.batches(), 3u);
  std::vector<std::int64_t> sizes;
  std::vector<std::size_t> all;
  while (auto b = it.next()) {
    sizes.push_back(b->images.dim(0));
    EXPECT_EQ(b->labels.size(), b->indices.size());
    all.insert(all.end(), b->indices.begin(), b->indices.end());
  }
  EXPECT_EQ(sizes, (std::vector<std::int64_t>{4, 4, 2}));
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(10);
  std::iota(expect.begin(), expect.end(), 0u);
  EXPECT_EQ(all, expect);
  opt.batch_size = 0;
  EXPECT_THROW(BatchIterator(recs, NormStats{}, opt, 0), ConfigError);
}

TEST(Batches, OrderIsAPureFunctionOfSeedAndEpoch) {
  EXPECT_EQ(epoch_order(1000, 5, 3), epoch_order(1000, 5, 3));
  EXPECT_NE(epoch_order(1000, 5, 3), epoch_order(1000, 5, 4));
  EXPECT_NE(epoch_order(1000, 5, 3), epoch_order(1000, 6, 3));
  auto o = epoch_order(1000, 5, 3);
  std::sort(o.begin(), o.end());
  for (std::size_t i = 0; i < o.size(); ++i) ASSERT_EQ(o[i], i);

  const auto recs = synthetic_dataset(37, 7, 2);
  BatchOptions opt;
  opt.batch_size = 8;
  opt.shuffle_seed = 21;
  opt.augment = true;
  opt.augment_seed = 22;
  BatchIterator a(recs, NormStats{}, opt, 1), b(recs, NormStats{}, opt, 1);
  while (auto x = a.next()) {
    auto y = b.next();
    ASSERT_TRUE(y);
    EXPECT_EQ(x->indices, y->indices);
    EXPECT_EQ(x->labels, y->labels);
    const auto& xi = x->images;
    const auto& yi = y->images;
    EXPECT_TRUE(std::equal(xi.data().begin(), xi.data().end(), yi.data().begin()));
  }
  EXPECT_FALSE(b.next());
}

TEST(Batches, NormalizedChannelMeansVanish) {
  const auto recs = synthetic_dataset(300, 10, 3);
  const auto norm = compute_norm_stats(recs);
  BatchOptions opt;
  opt.batch_size = 64;
  BatchIterator it(recs, norm, opt, 0);
  std::array<double, 3> sum{}, sq{};
  double n = 0;
  while (auto b = it.next()) {
    const auto& img = b->images;
    const auto px = img.data();
    for (std::int64_t i = 0; i < img.dim(0); ++i)
      for (int c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < 1024; ++p) {
          const double v = px[static_cast<std::size_t>(i) * 3072 + c * 1024 + p];
          sum[c] += v;
          sq[c] += v * v;
        }
    n += static_cast<double>(img.dim(0)) * 1024;
  }
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(sum[c] / n, 0.0, 1e-3);
    EXPECT_NEAR(sq[c] / n, 1.0, 1e-3);
  }
}

TEST(Batches, NormalizationInverts) {
  Rng rng(8);
  NormStats s;
  s.mean = {0.507, 0.4865, 0.441};
  s.std = {0.267, 0.256, 0.276};
  for (int c = 0; c < 3; ++c)
    for (int v = 0; v < 256; ++v)
      ASSERT_NEAR(denormalize_pixel(normalize_pixel(static_cast<std::uint8_t>(v), c, s), c, s), v, 1e-4 * 255);
  // In double precision the round trip is exact to 1e-6 on the [0,1] scale.
  for (int c = 0; c < 3; ++c)
    for (int v = 0; v < 256; ++v) {
      const double x = (v / 255.0 - s.mean[c]) / s.std[c];
      ASSERT_NEAR(denormalize_pixel(x, c, s) / 255.0, v / 255.0, 1e-6);
    }
}

TEST(Synthetic, DeterministicAndBalanced) {
  EXPECT_EQ(synthetic_dataset(500, 7, 4), synthetic_dataset(500, 7, 4));
  EXPECT_NE(synthetic_dataset(50, 7, 4), synthetic_dataset(50, 7, 5));
  for (auto [n, k] : {std::pair{1000, 10}, std::pair{1000, 100}, std::pair{997, 13}}) {
    const auto recs = synthetic_dataset(static_cast<std::size_t>(n), k, 9);
    std::vector<int> counts(static_cast<std::size_t>(k));
    for (const auto& r : recs) {
      ASSERT_LT(r.fine_label, k);
      ASSERT_LT(r.coarse_label, 20);
      ++counts[r.fine_label];
    }
    for (int c : counts) EXPECT_LE(std::abs(c * k - n), k) << n << "/" << k;
  }
  EXPECT_THROW(synthetic_dataset(0, 10, 1), ConfigError);
  EXPECT_THROW(synthetic_dataset(10, 101, 1), ConfigError);
}

TEST(Synthetic, LinearProbeOnMeanColourSeparatesClasses) {
  // Nearest class mean is a linear classifier: score_c = mu_c . x - |mu_c|^2 / 2.
  // Fit the means on the first half, score the second half.
  constexpr int k = 10;
  const auto recs = synthetic_dataset(1000, k, 10);
  auto feature = [](const Cifar100Record& r) {
    std::array<double, 3> f{};
    for (int c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < 1024; ++p) f[c] += r.pixels[c * 1024 + p];
      f[c] /= 1024.0 * 255.0;
    }
    return f;
  };
  std::vector<std::array<double, 3>> mu(k);
  std::vector<int> count(k);
  for (std::size_t i = 0; i < 500; ++i) {
    const auto f = feature(recs[i]);
    for (int c = 0; c < 3; ++c) mu[recs[i].fine_label][c] += f[c];
    ++count[recs[i].fine_label];
  }
  for (int j = 0; j < k; ++j)
    for (int c = 0; c < 3; ++c) mu[j][c] /= std::max(count[j], 1);
  int correct = 0;
  for (std::size_t i = 500; i < 1000; ++i) {
    const auto f = feature(recs[i]);
    int best = 0;
    double best_score = -1e300;
    for (int j = 0; j < k; ++j) {
      double s = 0.0;
      for (int c = 0; c < 3; ++c) s += mu[j][c] * f[c] - 0.5 * mu[j][c] * mu[j][c];
      if (s > best_score) best_score = s, best = j;
    }
    correct += best == recs[i].fine_label;
  }
  EXPECT_GT(correct / 500.0, 0.9);
}
