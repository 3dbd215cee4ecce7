#include "cct/training.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <set>

#include "cct/errors.hpp"
#include "cct/ops.hpp"
#include "cct/random.hpp"
#include "cct/tape.hpp"

namespace cct {

namespace fs = std::filesystem;

namespace {

// Independent random streams derived from the run seed.
enum Stream : std::uint64_t {
  kInitStream = 0x1,
  kShuffleStream = 0x2,
  kAugmentStream = 0x3,
  kDropoutStream = 0x4,
  kSyntheticStream = 0x5,
};

constexpr const char* kNormKeys[2][3] = {{"norm.mean0", "norm.mean1", "norm.mean2"},
                                         {"norm.std0", "norm.std1", "norm.std2"}};

void put_norm(KeyValueConfig& kv, const NormStats& s) {
  for (int c = 0; c < 3; ++c) {
    kv.set(kNormKeys[0][c], s.mean[c]);
    kv.set(kNormKeys[1][c], s.std[c]);
  }
}

NormStats take_norm(KeyValueConfig& kv) {
  NormStats s;
  for (int c = 0; c < 3; ++c) {
    if (!kv.has(kNormKeys[0][c]) || !kv.has(kNormKeys[1][c])) {
      throw CheckpointError("checkpoint lacks normalization statistics");
    }
    s.mean[c] = kv.get_double(kNormKeys[0][c]);
    s.std[c] = kv.get_double(kNormKeys[1][c]);
    kv.erase(kNormKeys[0][c]);
    kv.erase(kNormKeys[1][c]);
  }
  return s;
}

int top5_k(const ModelConfig& m) { return static_cast<int>(std::min<std::int64_t>(5, m.n_classes)); }

Tensor<float> slice_batch(const Tensor<float>& images, std::int64_t begin, std::int64_t end) {
  const std::int64_t per = images.numel() / images.dim(0);
  const auto data = images.data();
  std::vector<float> out(data.begin() + begin * per, data.begin() + end * per);
  Shape shape = images.shape();
  shape[0] = end - begin;
  return Tensor<float>(std::move(shape), std::move(out));
}

Checkpoint<float> make_checkpoint(const RunConfig& cfg, const NormStats& norm, std::uint64_t epoch,
                                  std::uint64_t step, const ParameterSet<float>& params,
                                  const AdamWState<float>& state) {
  Checkpoint<float> ck;
  ck.model = cfg.model;
  ck.optimizer = cfg.optimizer;
  put_run_config(ck.extras, cfg);
  put_norm(ck.extras, norm);
  ck.seed = cfg.seed;
  ck.epoch = epoch;
  ck.step = step;
  ck.params = params;
  ck.optimizer_state = state;
  return ck;
}

}  // namespace

std::string_view to_string(DatasetKind kind) {
  return kind == DatasetKind::kCifar100 ? "cifar100" : "synthetic";
}

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "cifar100") return DatasetKind::kCifar100;
  if (name == "synthetic") return DatasetKind::kSynthetic;
  throw ConfigError("unknown dataset '" + std::string(name) + "' (expected cifar100 or synthetic)");
}

void RunConfig::validate() const {
  model.validate();
  if (epochs < 1) throw ConfigError("run config: epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("run config: batch_size must be at least 1");
  if (micro_batch < 0) throw ConfigError("run config: micro_batch must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("run config: checkpoint_every must be non-negative");
  if (eval_batch_size < 1) throw ConfigError("run config: eval_batch_size must be at least 1");
  if (train_subset < 0 || test_subset < 0) throw ConfigError("run config: subsets must be non-negative");
  if (model.img_size != kCifarSide || model.in_channels != kCifarChannels) {
    throw ConfigError("run config: the datasets provide 3x32x32 images");
  }
  if (dataset == DatasetKind::kCifar100 && model.n_classes != kCifarFineClasses) {
    throw ConfigError("run config: cifar100 needs n_classes = 100");
  }
  if (dataset == DatasetKind::kSynthetic) {
    if (synthetic_train < 1 || synthetic_test < 1) throw ConfigError("run config: synthetic sizes must be positive");
    if (synthetic_classes < 1 || synthetic_classes > model.n_classes) {
      throw ConfigError("run config: synthetic_classes must lie in [1, n_classes]");
    }
  }
}

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys{
      "epochs",          "batch_size",      "micro_batch",       "augment",         "checkpoint_every",
      "dataset",         "data_dir",        "out_dir",           "train_subset",    "test_subset",
      "synthetic_train", "synthetic_test",  "synthetic_classes", "eval_batch_size", "record_wall_time",
      "run_seed",        "resume_from"};
  return keys;
}

RunConfig run_config_from(const KeyValueConfig& kv, RunConfig c) {
  std::set<std::string> known(run_config_keys().begin(), run_config_keys().end());
  known.insert(model_config_keys().begin(), model_config_keys().end());
  known.insert(adamw_hyper_keys().begin(), adamw_hyper_keys().end());
  for (const auto& [key, value] : kv.values()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  c.model = model_config_from(kv, c.model);
  c.optimizer = adamw_hyper_from(kv, c.optimizer);
  auto i64 = [&](const char* key, std::int64_t& field) {
    if (kv.has(key)) field = kv.get_int(key);
  };
  i64("epochs", c.epochs);
  i64("batch_size", c.batch_size);
  i64("micro_batch", c.micro_batch);
  i64("checkpoint_every", c.checkpoint_every);
  i64("train_subset", c.train_subset);
  i64("test_subset", c.test_subset);
  i64("synthetic_train", c.synthetic_train);
  i64("synthetic_test", c.synthetic_test);
  i64("synthetic_classes", c.synthetic_classes);
  i64("eval_batch_size", c.eval_batch_size);
  if (kv.has("augment")) c.augment = kv.get_bool("augment");
  if (kv.has("record_wall_time")) c.record_wall_time = kv.get_bool("record_wall_time");
  if (kv.has("dataset")) c.dataset = parse_dataset_kind(kv.get("dataset"));
  if (kv.has("data_dir")) c.data_dir = kv.get("data_dir");
  if (kv.has("out_dir")) c.out_dir = kv.get("out_dir");
  if (kv.has("resume_from")) c.resume_from = kv.get("resume_from");
  // The model seed and the run seed are one value; "seed" sets both.
  if (kv.has("run_seed")) c.seed = kv.get_uint("run_seed");
  if (kv.has("seed")) c.seed = kv.get_uint("seed");
  c.model.seed = c.seed;
  return c;
}

void put_run_config(KeyValueConfig& kv, const RunConfig& c) {
  put_model_config(kv, c.model);
  put_adamw_hyper(kv, c.optimizer);
  kv.set("epochs", c.epochs);
  kv.set("batch_size", c.batch_size);
  kv.set("micro_batch", c.micro_batch);
  kv.set("augment", c.augment);
  kv.set("checkpoint_every", c.checkpoint_every);
  kv.set("dataset", std::string(to_string(c.dataset)));
  kv.set("data_dir", c.data_dir.string());
  kv.set("out_dir", c.out_dir.string());
  kv.set("train_subset", c.train_subset);
  kv.set("test_subset", c.test_subset);
  kv.set("synthetic_train", c.synthetic_train);
  kv.set("synthetic_test", c.synthetic_test);
  kv.set("synthetic_classes", c.synthetic_classes);
  kv.set("eval_batch_size", c.eval_batch_size);
  kv.set("record_wall_time", c.record_wall_time);
  kv.set("run_seed", std::to_string(c.seed));
  kv.set("seed", std::to_string(c.seed));
}

fs::path resolve_data_dir(const fs::path& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("CCT_DATA_DIR"); env && *env) return env;
  return {};
}

RunData load_run_data(const RunConfig& cfg) {
  RunData data;
  if (cfg.dataset == DatasetKind::kSynthetic) {
    const auto n_train = static_cast<std::size_t>(cfg.synthetic_train);
    const auto n_test = static_cast<std::size_t>(cfg.synthetic_test);
    // One draw split in two, so both halves share the class colours.
    auto all = synthetic_dataset(n_train + n_test, static_cast<int>(cfg.synthetic_classes),
                                 derive_seed(cfg.seed, kSyntheticStream));
    data.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
    all.resize(n_train);
    data.train = std::move(all);
    return data;
  }
  const fs::path dir = resolve_data_dir(cfg.data_dir);
  if (dir.empty()) {
    throw DatasetError(DatasetError::Kind::kNotFound,
                       "no CIFAR-100 directory: pass --data-dir or set CCT_DATA_DIR (expected train.bin, test.bin)");
  }
  Cifar100 full = load_cifar100(dir);
  data.train = std::move(full.train);
  data.test = std::move(full.test);
  if (cfg.train_subset > 0 && static_cast<std::size_t>(cfg.train_subset) < data.train.size()) {
    data.train.resize(static_cast<std::size_t>(cfg.train_subset));
  }
  if (cfg.test_subset > 0 && static_cast<std::size_t>(cfg.test_subset) < data.test.size()) {
    data.test.resize(static_cast<std::size_t>(cfg.test_subset));
  }
  return data;
}

EvalResult evaluate(const ParameterSet<float>& params, const ModelConfig& cfg,
                    std::span<const Cifar100Record> records, const NormStats& norm, std::int64_t batch_size) {
  if (batch_size < 1) throw ConfigError("evaluate: batch size must be at least 1");
  NoGradScope<float> no_grad;
  BatchOptions bo;
  bo.batch_size = batch_size;
  bo.shuffle = false;
  bo.augment = false;
  BatchIterator it(records, norm, bo, 0);
  double loss_sum = 0.0;
  std::int64_t top1 = 0, top5 = 0, n = 0;
  while (auto batch = it.next()) {
    const auto logits = forward(batch->images, params, cfg, false);
    const auto count = static_cast<std::int64_t>(batch->labels.size());
    loss_sum += static_cast<double>(ops::cross_entropy(logits, batch->labels).item()) * static_cast<double>(count);
    top1 += topk_correct(logits, batch->labels, 1);
    top5 += topk_correct(logits, batch->labels, top5_k(cfg));
    n += count;
  }
  EvalResult r;
  r.samples = n;
  if (n > 0) {
    r.loss = loss_sum / static_cast<double>(n);
    r.top1 = 100.0 * static_cast<double>(top1) / static_cast<double>(n);
    r.top5 = 100.0 * static_cast<double>(top5) / static_cast<double>(n);
  }
  return r;
}

EvalResult evaluate_checkpoint(const fs::path& checkpoint, const fs::path& data_dir, Split split) {
  Checkpoint<float> ck = load_checkpoint<float>(checkpoint);
  KeyValueConfig extras = ck.extras;
  const NormStats norm = take_norm(extras);
  RunConfig rc = run_config_from(extras);
  rc.model = ck.model;
  rc.optimizer = ck.optimizer;
  if (!data_dir.empty()) rc.data_dir = data_dir;
  rc.validate();
  const RunData data = load_run_data(rc);
  const auto& records = split == Split::kTrain ? data.train : data.test;
  return evaluate(ck.params, rc.model, records, norm, rc.eval_batch_size);
}

TrainResult train(const RunConfig& cfg_in) {
  RunConfig cfg = cfg_in;
  cfg.model.seed = cfg.seed;
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&] {
    if (!cfg.record_wall_time) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.out_dir.string() + ": " + ec.message());
  const RunData data = load_run_data(cfg);

  ParameterSet<float> params;
  AdamWState<float> state;
  NormStats norm;
  std::uint64_t start_epoch = 0, step = 0;
  TrainResult result;
  result.metrics_path = cfg.out_dir / "metrics.csv";
  std::vector<MetricsRow> kept;

  if (!cfg.resume_from.empty()) {
    Checkpoint<float> ck = load_checkpoint<float>(cfg.resume_from);
    if (!(ck.model == cfg.model)) throw ConfigError("resume: checkpoint model config differs from the run config");
    if (!(ck.optimizer == cfg.optimizer)) {
      throw ConfigError("resume: checkpoint optimizer settings differ from the run config");
    }
    if (ck.seed != cfg.seed) throw ConfigError("resume: checkpoint seed differs from the run seed");
    if (!ck.optimizer_state) throw CheckpointError("resume: checkpoint has no optimizer state");
    KeyValueConfig extras = ck.extras;
    norm = take_norm(extras);
    params = std::move(ck.params);
    state = std::move(*ck.optimizer_state);
    start_epoch = ck.epoch;
    step = ck.step;
    if (fs::exists(result.metrics_path)) {
      for (const auto& row : read_metrics_csv(result.metrics_path))
        if (row.epoch <= static_cast<std::int64_t>(start_epoch)) kept.push_back(row);
    }
  } else {
    const fs::path stats_path = cfg.out_dir / "norm_stats.txt";
    if (auto cached = load_norm_stats(stats_path)) {
      norm = *cached;
    } else {
      norm = compute_norm_stats(data.train);
      save_norm_stats(stats_path, norm);
    }
    params = init_params<float>(cfg.model, derive_seed(cfg.seed, kInitStream));
    state = make_adamw_state(params);
  }

  MetricsWriter writer(result.metrics_path, false);
  for (const auto& row : kept) writer.write(row);

  BatchOptions bo;
  bo.batch_size = cfg.batch_size;
  bo.shuffle = true;
  bo.shuffle_seed = derive_seed(cfg.seed, kShuffleStream);
  bo.augment = cfg.augment;
  bo.augment_seed = derive_seed(cfg.seed, kAugmentStream);
  const int k5 = top5_k(cfg.model);

  for (std::uint64_t epoch = start_epoch + 1; epoch <= static_cast<std::uint64_t>(cfg.epochs); ++epoch) {
    BatchIterator it(data.train, norm, bo, epoch);
    double loss_sum = 0.0;
    std::int64_t top1 = 0, top5 = 0, seen = 0;
    while (auto batch = it.next()) {
      params.zero_grad();
      const std::int64_t B = batch->images.dim(0);
      const std::int64_t mb = cfg.micro_batch > 0 ? std::min(cfg.micro_batch, B) : B;
      for (std::int64_t begin = 0, chunk = 0; begin < B; begin += mb, ++chunk) {
        const std::int64_t end = std::min(B, begin + mb);
        const Tensor<float> x = mb == B ? batch->images : slice_batch(batch->images, begin, end);
        const std::span<const std::int32_t> labels(batch->labels.data() + begin, static_cast<std::size_t>(end - begin));
        Tape<float> tape;
        TapeScope<float> scope(tape);
        const auto logits = forward(x, params, cfg.model, true,
                                    derive_seed(cfg.seed, kDropoutStream, step, static_cast<std::uint64_t>(chunk)));
        const auto loss = ops::cross_entropy(logits, labels);
        const auto weighted = ops::scale(loss, static_cast<float>(end - begin) / static_cast<float>(B));
        tape.backward(weighted);
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(end - begin);
        top1 += topk_correct(logits, labels, 1);
        top5 += topk_correct(logits, labels, k5);
        seen += end - begin;
      }
      adamw_step(params, state, cfg.optimizer);
      ++step;
    }
    params.zero_grad();

    MetricsRow train_row;
    train_row.epoch = static_cast<std::int64_t>(epoch);
    train_row.step = static_cast<std::int64_t>(step);
    train_row.split = Split::kTrain;
    train_row.loss = loss_sum / static_cast<double>(seen);
    train_row.top1 = 100.0 * static_cast<double>(top1) / static_cast<double>(seen);
    train_row.top5 = 100.0 * static_cast<double>(top5) / static_cast<double>(seen);
    train_row.lr = cfg.optimizer.lr;
    train_row.wall_time_s = wall();
    writer.write(train_row);
    result.rows.push_back(train_row);

    const EvalResult val = evaluate(params, cfg.model, data.test, norm, cfg.eval_batch_size);
    MetricsRow val_row = train_row;
    val_row.split = Split::kVal;
    val_row.loss = val.loss;
    val_row.top1 = val.top1;
    val_row.top5 = val.top5;
    val_row.wall_time_s = wall();
    writer.write(val_row);
    result.rows.push_back(val_row);

    if (cfg.checkpoint_every > 0 && epoch % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0) {
      save_checkpoint(cfg.out_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".ccts"),
                      make_checkpoint(cfg, norm, epoch, step, params, state));
    }
  }

  result.final = make_checkpoint(cfg, norm, static_cast<std::uint64_t>(cfg.epochs), step, params, state);
  result.final_checkpoint = cfg.out_dir / "final.ccts";
  save_checkpoint(result.final_checkpoint, result.final);
  return result;
}

ModelConfig desk_model_config(AttentionKind kind) {
  ModelConfig m;
  m.d_model = 64;
  m.n_layers = 2;
  m.n_heads = 2;
  m.mlp_ratio = 2;
  m.conv_blocks = 2;  // 32 -> 16 -> 8, so 64 tokens
  m.attention = kind;
  return m;
}

OverfitResult overfit(const OverfitOptions& o) {
  o.model.validate();
  if (o.samples < 1) throw ConfigError("overfit: samples must be at least 1");
  if (o.max_steps < 0) throw ConfigError("overfit: max_steps must be non-negative");
  std::vector<Cifar100Record> records;
  if (o.dataset == DatasetKind::kSynthetic) {
    const int classes = static_cast<int>(std::min<std::int64_t>(o.model.n_classes, kCifarFineClasses));
    records = synthetic_dataset(static_cast<std::size_t>(o.samples), classes, derive_seed(o.seed, kSyntheticStream));
  } else {
    const fs::path dir = resolve_data_dir(o.data_dir);
    if (dir.empty()) throw DatasetError(DatasetError::Kind::kNotFound, "overfit: no CIFAR-100 directory");
    records = read_cifar_records(dir / "train.bin", kCifarTrainRecords);
    records.resize(std::min(records.size(), static_cast<std::size_t>(o.samples)));
  }
  const NormStats norm = compute_norm_stats(records);
  std::vector<std::size_t> idx(records.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Batch<float> batch = make_batch(records, idx, norm);

  ParameterSet<float> params = init_params<float>(o.model, derive_seed(o.seed, kInitStream));
  AdamWState<float> state = make_adamw_state(params);
  OverfitResult r;
  // Eval-mode forward: with dropout off, the logits of step k are exactly
  // the train predictions of the parameters after k updates.
  for (std::int64_t s = 0;; ++s) {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    const auto logits = forward(batch.images, params, o.model, false);
    r.final_top1 = topk_accuracy(logits, batch.labels, 1);
    if (r.final_top1 >= o.target_top1) {
      r.reached = true;
      r.steps = s;
      break;
    }
    if (s == o.max_steps) {
      r.steps = s;
      break;
    }
    const auto loss = ops::cross_entropy(logits, batch.labels);
    r.losses.push_back(static_cast<double>(loss.item()));
    params.zero_grad();
    tape.backward(loss);
    adamw_step(params, state, o.optimizer);
  }
  return r;
}

}  // namespace cct
