#include "cct/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "cct/errors.hpp"

namespace cct {

std::string_view to_string(Split split) { return split == Split::kTrain ? "train" : "val"; }

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val" || name == "test") return Split::kVal;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

std::string format_metrics_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld,%lld,%s,%.17g,%.17g,%.17g,%.17g,%.6f",
                static_cast<long long>(r.epoch), static_cast<long long>(r.step),
                std::string(to_string(r.split)).c_str(), r.loss, r.top1, r.top5, r.lr, r.wall_time_s);
  return buf;
}

MetricsRow parse_metrics_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (cells.size() != 8) throw IoError("metrics row has " + std::to_string(cells.size()) + " fields: " + line);
  try {
    MetricsRow r;
    r.epoch = std::stoll(cells[0]);
    r.step = std::stoll(cells[1]);
    r.split = parse_split(cells[2]);
    r.loss = std::stod(cells[3]);
    r.top1 = std::stod(cells[4]);
    r.top5 = std::stod(cells[5]);
    r.lr = std::stod(cells[6]);
    r.wall_time_s = std::stod(cells[7]);
    return r;
  } catch (const std::logic_error&) {
    throw IoError("malformed metrics row: " + line);
  }
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, bool append) : path_(path) {
  bool has_header = false;
  if (append) {
    std::ifstream in(path);
    std::string first;
    has_header = in && std::getline(in, first) && first == kMetricsHeader;
  }
  out_.open(path, has_header ? std::ios::app : std::ios::trunc);
  if (!out_) throw IoError("cannot open metrics file " + path.string());
  if (!has_header) {
    out_ << kMetricsHeader << '\n';
    out_.flush();
  }
}

void MetricsWriter::write(const MetricsRow& row) {
  out_ << format_metrics_row(row) << '\n';
  out_.flush();
  if (!out_) throw IoError("failed writing metrics to " + path_.string());
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw IoError("metrics file " + path.string() + " lacks the expected header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(parse_metrics_row(line));
  }
  return rows;
}

template <typename T>
std::int64_t topk_correct(const Tensor<T>& logits, std::span<const std::int32_t> labels, int k) {
  if (logits.rank() != 2) throw ShapeError("topk: expected [B,C] logits, got " + to_string(logits.shape()));
  const std::int64_t B = logits.dim(0), C = logits.dim(1);
  if (k < 1 || k > C) {
    throw ConfigError("topk: k = " + std::to_string(k) + " outside [1, " + std::to_string(C) + "]");
  }
  if (static_cast<std::int64_t>(labels.size()) != B) {
    throw ShapeError("topk: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(B));
  }
  const T* v = logits.data().data();
  std::int64_t correct = 0;
  for (std::int64_t r = 0; r < B; ++r) {
    const std::int32_t y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= C) throw IndexError("topk: label " + std::to_string(y) + " out of range");
    const T* row = v + r * C;
    const T target = row[y];
    std::int64_t ahead = 0;
    for (std::int64_t j = 0; j < C; ++j) {
      if (row[j] > target || (row[j] == target && j < y)) ++ahead;
    }
    if (ahead < k) ++correct;
  }
  return correct;
}

template <typename T>
double topk_accuracy(const Tensor<T>& logits, std::span<const std::int32_t> labels, int k) {
  const auto correct = topk_correct(logits, labels, k);
  return 100.0 * static_cast<double>(correct) / static_cast<double>(logits.dim(0));
}

template std::int64_t topk_correct(const Tensor<float>&, std::span<const std::int32_t>, int);
template std::int64_t topk_correct(const Tensor<double>&, std::span<const std::int32_t>, int);
template double topk_accuracy(const Tensor<float>&, std::span<const std::int32_t>, int);
template double topk_accuracy(const Tensor<double>&, std::span<const std::int32_t>, int);

}  // namespace cct
