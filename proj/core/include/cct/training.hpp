#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cct/checkpoint.hpp"
#include "cct/cifar.hpp"
#include "cct/config_file.hpp"
#include "cct/metrics.hpp"
#include "cct/model.hpp"
#include "cct/optimizer.hpp"

namespace cct {

enum class DatasetKind { kCifar100, kSynthetic };

std::string_view to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(std::string_view name);

// Everything a training run depends on. Defaults follow the reference
// recipe: 75 epochs, batch 1024, constant-lr AdamW.
struct RunConfig {
  ModelConfig model;
  AdamWHyper optimizer;
  std::int64_t epochs = 75;
  std::int64_t batch_size = 1024;
  // Samples per forward/backward pass; grads are summed over micro-batches
  // before one optimizer step. 0 means the whole batch at once.
  std::int64_t micro_batch = 0;
  bool augment = true;
  std::int64_t checkpoint_every = 5;  // epochs; 0 writes only the final checkpoint
  DatasetKind dataset = DatasetKind::kCifar100;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir = "run";
  std::int64_t train_subset = 0;  // first N training records; 0 keeps all
  std::int64_t test_subset = 0;
  std::int64_t synthetic_train = 1000;
  std::int64_t synthetic_test = 1000;
  std::int64_t synthetic_classes = 100;
  std::int64_t eval_batch_size = 250;
  // When false the wall_time_s column is written as 0 so repeated runs
  // produce byte-identical CSVs.
  bool record_wall_time = true;
  std::uint64_t seed = 0;
  std::filesystem::path resume_from;

  void validate() const;
};

// Run keys understood on top of the model and optimizer keys.
const std::vector<std::string>& run_config_keys();

// Builds a run from a key-value file. Unknown keys are rejected.
RunConfig run_config_from(const KeyValueConfig& kv, RunConfig base = {});
void put_run_config(KeyValueConfig& kv, const RunConfig& cfg);

// `explicit_dir` if set, else $CCT_DATA_DIR, else empty.
std::filesystem::path resolve_data_dir(const std::filesystem::path& explicit_dir);

struct RunData {
  std::vector<Cifar100Record> train;
  std::vector<Cifar100Record> test;  // the held-out split doubles as validation
};

RunData load_run_data(const RunConfig& cfg);

struct EvalResult {
  double loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  std::int64_t samples = 0;
};

// Eval-mode pass (no dropout, no augmentation) in fixed record order.
EvalResult evaluate(const ParameterSet<float>& params, const ModelConfig& cfg,
                    std::span<const Cifar100Record> records, const NormStats& norm,
                    std::int64_t batch_size = 250);

// Rebuilds the dataset recorded in the checkpoint; `data_dir` overrides the
// stored directory when non-empty.
EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                               Split split);

struct TrainResult {
  Checkpoint<float> final;
  std::vector<MetricsRow> rows;  // rows written by this call
  std::filesystem::path metrics_path;
  std::filesystem::path final_checkpoint;
};

// Writes <out_dir>/metrics.csv, checkpoint_epoch<N>.ccts every
// checkpoint_every epochs, final.ccts, and norm_stats.txt. Resuming
// truncates metrics rows past the checkpoint's epoch and continues the
// same seed stream, so the trajectory matches an uninterrupted run.
TrainResult train(const RunConfig& cfg);

// Full-batch memorization of a few samples.
struct OverfitOptions {
  ModelConfig model;
  AdamWHyper optimizer;
  std::int64_t samples = 64;
  std::int64_t max_steps = 300;
  double target_top1 = 99.0;
  DatasetKind dataset = DatasetKind::kSynthetic;
  std::filesystem::path data_dir;
  std::uint64_t seed = 0;
};

struct OverfitResult {
  bool reached = false;
  std::int64_t steps = 0;    // optimizer updates applied before the target was met
  double final_top1 = 0.0;   // train top-1 of the final parameters
  std::vector<double> losses;
};

// Small model used by the overfit and smoke checks.
ModelConfig desk_model_config(AttentionKind kind = AttentionKind::kSuper);

OverfitResult overfit(const OverfitOptions& options);

}  // namespace cct
