// Command-line driver: train, eval, params, bench, gradcheck, overfit.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cct/bench.hpp"
#include "cct/errors.hpp"
#include "cct/gradcheck_suite.hpp"
#include "cct/param_report.hpp"
#include "cct/training.hpp"

namespace {

cct::RunConfig load_run(const std::string& path) {
  if (path.empty()) return {};
  return cct::run_config_from(cct::KeyValueConfig::load(path));
}

void print_row(const cct::MetricsRow& r) {
  std::printf("epoch %3lld  %-5s loss %.4f  top1 %6.2f  top5 %6.2f\n", static_cast<long long>(r.epoch),
              std::string(cct::to_string(r.split)).c_str(), r.loss, r.top1, r.top5);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compact convolutional transformers with SDPA or super attention"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a model and write metrics and checkpoints");
  std::string train_config, train_data, train_out, attn, dataset, resume;
  std::uint64_t seed = 0;
  std::int64_t epochs = 0, batch = 0, micro = -1;
  bool no_augment = false, no_wall_time = false;
  train->add_option("--config", train_config, "Key-value config file");
  train->add_option("--data-dir", train_data, "CIFAR-100 binary directory (default: $CCT_DATA_DIR)");
  train->add_option("--out-dir", train_out, "Output directory");
  train->add_option("--seed", seed, "Run seed");
  train->add_option("--attn", attn, "Attention kind")->check(CLI::IsMember({"sdpa", "super"}));
  train->add_option("--epochs", epochs, "Override epoch count");
  train->add_option("--batch-size", batch, "Override batch size");
  train->add_option("--micro-batch", micro, "Samples per forward pass (0 = whole batch)");
  train->add_option("--dataset", dataset, "cifar100 or synthetic")->check(CLI::IsMember({"cifar100", "synthetic"}));
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_flag("--no-augment", no_augment, "Disable crop and flip");
  train->add_flag("--no-wall-time", no_wall_time, "Write 0 in the wall_time_s column");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ckpt_path, eval_data, split = "test";
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  eval->add_option("--data-dir", eval_data, "CIFAR-100 binary directory (default: stored or $CCT_DATA_DIR)");
  eval->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

  // params
  auto* params = app.add_subcommand("params", "Parameter counts under both attention kinds");
  std::string params_config, params_csv;
  params->add_option("--config", params_config, "Key-value config file");
  params->add_option("--csv", params_csv, "Also write the table as CSV to this file");

  // bench
  auto* bench = app.add_subcommand("bench", "Attention layer latency against the FLOP model");
  cct::BenchOptions bopt;
  std::string bench_csv;
  bench->add_option("--dims", bopt.dims, "Embedding dimensions")->delimiter(',');
  bench->add_option("--ctx", bopt.ctxs, "Context lengths")->delimiter(',');
  bench->add_option("--iters", bopt.iters, "Timed iterations (>= 10)");
  bench->add_option("--warmup", bopt.warmup, "Warmup iterations (>= 5)");
  bench->add_option("--batch", bopt.batch, "Sequences per call");
  bench->add_option("--heads", bopt.n_heads, "Attention heads");
  bench->add_option("--out", bench_csv, "Write CSV here instead of stdout");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  cct::GradCheckSuiteOptions gopt;
  gradcheck->add_option("--tol", gopt.tol, "Maximum relative error");
  gradcheck->add_option("--instances", gopt.instances, "Random instances per op");
  gradcheck->add_option("--seed", gopt.seed, "Instance seed");
  gradcheck->add_option("--only", gopt.only, "Restrict to these ops")->delimiter(',');
  gradcheck->add_flag("--inject-fault", gopt.inject_gelu_fault, "Negate gelu's backward (negative control)");

  // overfit
  auto* over = app.add_subcommand("overfit", "Memorize a handful of samples");
  cct::OverfitOptions oopt;
  oopt.model = cct::desk_model_config();
  std::string over_config, over_dataset = "synthetic", over_attn;
  over->add_option("--n", oopt.samples, "Samples");
  over->add_option("--steps", oopt.max_steps, "Maximum optimizer steps");
  over->add_option("--config", over_config, "Key-value config file for model and optimizer keys");
  over->add_option("--data-dir", oopt.data_dir, "CIFAR-100 directory (with --dataset cifar100)");
  over->add_option("--dataset", over_dataset, "cifar100 or synthetic")->check(CLI::IsMember({"cifar100", "synthetic"}));
  over->add_option("--attn", over_attn, "Attention kind")->check(CLI::IsMember({"sdpa", "super"}));
  over->add_option("--seed", oopt.seed, "Seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      cct::RunConfig cfg = load_run(train_config);
      if (!train_data.empty()) cfg.data_dir = train_data;
      if (!train_out.empty()) cfg.out_dir = train_out;
      if (train->count("--seed")) cfg.seed = seed;
      if (!attn.empty()) cfg.model.attention = cct::parse_attention_kind(attn);
      if (epochs > 0) cfg.epochs = epochs;
      if (batch > 0) cfg.batch_size = batch;
      if (micro >= 0) cfg.micro_batch = micro;
      if (!dataset.empty()) cfg.dataset = cct::parse_dataset_kind(dataset);
      if (!resume.empty()) cfg.resume_from = resume;
      if (no_augment) cfg.augment = false;
      if (no_wall_time) cfg.record_wall_time = false;
      const auto result = cct::train(cfg);
      for (const auto& row : result.rows) print_row(row);
      std::printf("metrics: %s\ncheckpoint: %s\n", result.metrics_path.c_str(), result.final_checkpoint.c_str());
    } else if (*eval) {
      const auto r = cct::evaluate_checkpoint(ckpt_path, cct::resolve_data_dir(eval_data), cct::parse_split(split));
      std::printf("split %s  samples %lld  loss %.6f  top1 %.2f  top5 %.2f\n", split.c_str(),
                  static_cast<long long>(r.samples), r.loss, r.top1, r.top5);
    } else if (*params) {
      const cct::RunConfig cfg = load_run(params_config);
      const auto report = cct::param_report(cfg.model);
      std::cout << cct::format_param_report_text(report);
      if (!params_csv.empty()) {
        std::ofstream out(params_csv);
        out << cct::format_param_report_csv(report);
        if (!out) throw cct::IoError("cannot write " + params_csv);
      }
    } else if (*bench) {
      const auto rows = cct::bench_attention(bopt);
      const std::string csv = cct::format_bench_csv(rows);
      if (bench_csv.empty()) {
        std::cout << csv;
      } else {
        std::ofstream out(bench_csv);
        out << csv;
        if (!out) throw cct::IoError("cannot write " + bench_csv);
      }
      for (const auto& row : rows) {
        if (row.kind != cct::AttentionKind::kSdpa) continue;
        if (auto warn = cct::latency_disagreement(rows, row.d_model, row.ctx_len)) std::cerr << *warn << '\n';
      }
    } else if (*gradcheck) {
      const auto report = cct::run_gradcheck_suite(gopt);
      std::cout << cct::format_gradcheck_report(report);
      return report.passed() ? 0 : 1;
    } else if (*over) {
      if (!over_config.empty()) {
        const cct::RunConfig cfg = load_run(over_config);
        oopt.model = cfg.model;
        oopt.optimizer = cfg.optimizer;
      }
      if (!over_attn.empty()) oopt.model.attention = cct::parse_attention_kind(over_attn);
      oopt.dataset = cct::parse_dataset_kind(over_dataset);
      const auto r = cct::overfit(oopt);
      std::printf("%s after %lld steps, train top1 %.2f%%\n", r.reached ? "reached" : "NOT reached",
                  static_cast<long long>(r.steps), r.final_top1);
      return r.reached ? 0 : 1;
    }
  } catch (const cct::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
