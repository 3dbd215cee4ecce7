#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cct/tensor.hpp"

namespace cct {

enum class Split { kTrain, kVal };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct MetricsRow {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  Split split = Split::kTrain;
  double loss = 0.0;
  double top1 = 0.0;  // percent
  double top5 = 0.0;  // percent
  double lr = 0.0;
  double wall_time_s = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

inline constexpr std::string_view kMetricsHeader = "epoch,step,split,loss,top1,top5,lr,wall_time_s";

std::string format_metrics_row(const MetricsRow& row);
MetricsRow parse_metrics_row(const std::string& line);

// Append-only CSV; every row is flushed as soon as it is written.
class MetricsWriter {
 public:
  // Truncates unless `append` is set and the file already has the header.
  MetricsWriter(const std::filesystem::path& path, bool append);
  void write(const MetricsRow& row);
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

// Number of rows whose label ranks among the k largest logits; ties are
// broken towards the lower class index.
template <typename T>
std::int64_t topk_correct(const Tensor<T>& logits, std::span<const std::int32_t> labels, int k);

// Same, as a percentage of the batch.
template <typename T>
double topk_accuracy(const Tensor<T>& logits, std::span<const std::int32_t> labels, int k);

}  // namespace cct
