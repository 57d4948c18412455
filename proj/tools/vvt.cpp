// Command-line surface for the vicinity attention library: correctness
// suites, structural reports, resolution sweeps, and desk-scale training.
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vvt/bench.hpp"
#include "vvt/checkpoint.hpp"
#include "vvt/flops.hpp"
#include "vvt/train.hpp"
#include "vvt/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

void print_suite(const vvt::SuiteResult& res) {
  for (const vvt::SuiteCheck& c : res.checks) {
    std::printf("  %-22s %-26s %11.3e  (limit %.1e)  %s%s%s\n",
                res.suite.c_str(), c.name.c_str(), c.value, c.limit,
                c.pass ? "PASS" : "FAIL", c.note.empty() ? "" : "  # ",
                c.note.c_str());
  }
}

struct VerifyArgs {
  int cases = 100;
  std::string precision = "double";
  uint64_t seed = 0;
  bool inject_fault = false;
};

int run_verify(const VerifyArgs& args) {
  const bool single = args.precision == "single";
  const double oracle_tol = single ? 1e-3 : 1e-10;
  std::printf("verification (%s precision, %d oracle cases, seed %" PRIu64
              ")\n",
              args.precision.c_str(), args.cases, args.seed);

  std::vector<vvt::SuiteResult> suites;
  suites.push_back(
      single ? vvt::oracle_equivalence_suite<float>(args.cases, args.seed,
                                                    oracle_tol,
                                                    args.inject_fault)
             : vvt::oracle_equivalence_suite<double>(args.cases, args.seed,
                                                     oracle_tol,
                                                     args.inject_fault));
  suites.push_back(vvt::invariant_suite(args.seed));
  suites.push_back(vvt::gradient_suite(args.seed));

  bool all_pass = true;
  std::printf("  %-22s %-26s %11s  %s\n", "suite", "check", "value", "status");
  for (const vvt::SuiteResult& s : suites) {
    print_suite(s);
    all_pass = all_pass && s.passed();
  }
  std::printf("summary: %s\n", all_pass ? "PASS" : "FAIL");
  return all_pass ? kExitOk : kExitCheckFailed;
}

struct ReportArgs {
  std::string variant = "tiny";
  int64_t res = 224;
  int64_t classes = 1000;
  std::string mode = "vicinity2d";
  std::string fpc = "on";
  int64_t fr = 0;
  bool json = false;
};

int run_report(const ReportArgs& args) {
  if (args.res < 32 || args.res % 32 != 0) {
    std::fprintf(stderr,
                 "error: --res %" PRId64 " must be >= 32 and divisible by 32\n",
                 args.res);
    return kExitUsage;
  }
  vvt::ModelConfig cfg;
  cfg.spec = vvt::scale_variant(
      vvt::make_variant(args.variant), 1, std::nullopt,
      args.fr > 0 ? std::optional<int64_t>(args.fr) : std::nullopt);
  cfg.class_count = args.classes;
  cfg.mode = vvt::parse_mode(args.mode);
  cfg.fpc_enabled = args.fpc == "on";

  const int64_t params = vvt::count_params(cfg);
  const vvt::FlopReport rep = vvt::flop_model(cfg, args.res, args.res);
  if (args.json) {
    nlohmann::json j;
    j["variant"] = args.variant;
    j["params"] = params;
    j["report"] = rep.to_json();
    std::printf("%s\n", j.dump(2).c_str());
  } else {
    std::printf("variant:    %s (mode %s, fpc %s, fr %" PRId64 ")\n",
                args.variant.c_str(), args.mode.c_str(), args.fpc.c_str(),
                cfg.spec.stages[0].fr_ratio);
    std::printf("input:      %" PRId64 "x%" PRId64 ", %" PRId64 " classes\n",
                args.res, args.res, args.classes);
    std::printf("parameters: %" PRId64 " (%.2f M)\n", params,
                static_cast<double>(params) / 1e6);
    std::printf("analytic:   %.3f GFLOPs (attention contractions %.3f G)\n",
                rep.gflops(), rep.attention_macs() / 1e9);
  }
  return kExitOk;
}

struct BenchArgs {
  std::string variant = "tiny";
  std::vector<std::string> modes = {"vicinity2d", "softmax"};
  std::vector<int64_t> res = {64, 96, 128, 160, 192};
  int repeats = 3;
  std::string out = "bench.csv";
  double mem_budget_gb = 8.0;
  bool analytic_only = false;
  uint64_t seed = 0;
  int64_t classes = 1000;
};

int run_bench(const BenchArgs& args) {
  vvt::ModelConfig cfg;
  cfg.spec = vvt::make_variant(args.variant);
  cfg.class_count = args.classes;
  std::vector<vvt::AttentionMode> modes;
  for (const std::string& m : args.modes) modes.push_back(vvt::parse_mode(m));

  vvt::SweepOptions opts;
  opts.repeats = args.repeats;
  opts.mem_budget_bytes = args.mem_budget_gb * 1024.0 * 1024.0 * 1024.0;
  opts.seed = args.seed;
  opts.measure = !args.analytic_only;

  const auto points = vvt::sweep(cfg, modes, args.res, opts);
  vvt::write_sweep_csv(args.out, points);

  std::printf("%-12s %6s %10s %10s %14s\n", "mode", "res", "gflops", "wall_ms",
              "peak_bytes");
  for (const vvt::CurvePoint& p : points) {
    if (std::isnan(p.wall_ms))
      std::printf("%-12s %6" PRId64 " %10.3f %10s %14.0f\n", p.mode.c_str(),
                  p.resolution, p.gflops, "NA", p.peak_bytes);
    else
      std::printf("%-12s %6" PRId64 " %10.3f %10.2f %14.0f\n", p.mode.c_str(),
                  p.resolution, p.gflops, p.wall_ms, p.peak_bytes);
  }
  std::printf("wrote %s\n", args.out.c_str());
  for (const vvt::ModeSlopes& s : vvt::sweep_slopes(points)) {
    if (std::isnan(s.wall_vs_tokens))
      std::printf(
          "%s: attention-only analytic slope vs tokens = %.4f (wall: n/a)\n",
          s.mode.c_str(), s.attention_vs_tokens);
    else
      std::printf(
          "%s: attention-only analytic slope vs tokens = %.4f, wall-time "
          "slope (top 3) = %.3f\n",
          s.mode.c_str(), s.attention_vs_tokens, s.wall_vs_tokens);
  }
  return kExitOk;
}

struct TrainArgs {
  std::string config_path;
  std::string mode, fpc, out;
  int64_t fr = -1;
  int64_t epochs = -1;
  int64_t batch = -1;
  int64_t upscale = -1;
  double lr = -1.0;
  bool seed_set = false;
  uint64_t seed = 0;
  std::vector<std::string> compare_modes;
};

vvt::TrainConfig apply_overrides(vvt::TrainConfig cfg, const TrainArgs& args) {
  if (!args.mode.empty()) cfg.mode = vvt::parse_mode(args.mode);
  if (!args.fpc.empty()) cfg.fpc_enabled = args.fpc == "on";
  if (args.fr >= 0) cfg.fr_ratio = args.fr;
  if (args.epochs > 0) cfg.total_epochs = args.epochs;
  if (args.batch > 0) cfg.batch_size = args.batch;
  if (args.upscale >= 0) cfg.upscale = args.upscale;
  if (args.lr >= 0.0) cfg.lr = args.lr;
  if (args.seed_set) cfg.seed = args.seed;
  if (!args.out.empty()) cfg.out_dir = args.out;
  cfg.validate();
  return cfg;
}

struct RunSummary {
  std::string mode;
  double first_loss = 0, final_loss = 0, val_top1 = 0;
};

RunSummary run_one_training(const vvt::TrainConfig& cfg) {
  auto [train_ds, val_ds] = vvt::build_datasets(cfg);
  vvt::Model<float> model =
      vvt::build_model<float>(cfg.model_config(), cfg.seed);
  std::printf("training %s: %" PRId64 " params, %" PRId64 "/%" PRId64
              " train/val samples, %" PRId64 " epochs\n",
              vvt::mode_name(cfg.mode).c_str(),
              vvt::count_params(cfg.model_config()), train_ds.count(),
              val_ds.count(), cfg.total_epochs);
  const auto log = vvt::train(model, train_ds, val_ds, cfg);
  for (const vvt::EpochLog& e : log)
    std::printf("  epoch %2" PRId64 "  lr %.6f  train_loss %.4f  val_top1 %.4f\n",
                e.epoch, e.lr, e.train_loss, e.val_top1);

  std::filesystem::create_directories(cfg.out_dir);
  vvt::write_log_jsonl(cfg.out_dir + "/log.jsonl", log);
  vvt::save_checkpoint(cfg.out_dir + "/checkpoint", model);
  std::printf("wrote %s/log.jsonl and %s/checkpoint\n", cfg.out_dir.c_str(),
              cfg.out_dir.c_str());
  return {vvt::mode_name(cfg.mode), log.front().train_loss,
          log.back().train_loss, log.back().val_top1};
}

int run_train(const TrainArgs& args) {
  vvt::TrainConfig base =
      apply_overrides(vvt::load_train_config(args.config_path), args);
  if (args.compare_modes.empty()) {
    run_one_training(base);
    return kExitOk;
  }
  std::vector<RunSummary> rows;
  for (const std::string& m : args.compare_modes) {
    vvt::TrainConfig cfg = base;
    cfg.mode = vvt::parse_mode(m);
    cfg.out_dir = base.out_dir + "/" + vvt::mode_name(cfg.mode);
    rows.push_back(run_one_training(cfg));
  }
  std::printf("\n%-12s %12s %12s %10s\n", "mode", "first_loss", "final_loss",
              "val_top1");
  for (const RunSummary& r : rows)
    std::printf("%-12s %12.4f %12.4f %10.4f\n", r.mode.c_str(), r.first_loss,
                r.final_loss, r.val_top1);
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string config_path;
  std::string split = "val";
  bool seed_set = false;
  uint64_t seed = 0;
};

int run_eval(const EvalArgs& args) {
  vvt::TrainConfig cfg = vvt::load_train_config(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  vvt::Model<float> model = vvt::load_checkpoint(args.checkpoint);
  auto [train_ds, val_ds] = vvt::build_datasets(cfg);
  const vvt::Dataset& ds = args.split == "train" ? train_ds : val_ds;
  const double acc = vvt::evaluate_top1(model, ds);
  std::printf("top1 on %s split (%" PRId64 " samples): %.4f\n",
              args.split.c_str(), ds.count(), acc);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vicinity attention: linear attention with a 2D locality bias"};
  app.require_subcommand(1);

  VerifyArgs vargs;
  CLI::App* verify = app.add_subcommand(
      "verify", "Run oracle-equivalence, invariant and gradient suites");
  verify->add_option("--cases", vargs.cases, "Randomized oracle cases")
      ->check(CLI::PositiveNumber);
  verify->add_option("--precision", vargs.precision, "double or single")
      ->check(CLI::IsMember({"double", "single"}));
  verify->add_option("--seed", vargs.seed, "Random seed");
  verify->add_flag("--inject-fault", vargs.inject_fault,
                   "Corrupt one output as a negative control");

  ReportArgs rargs;
  CLI::App* report =
      app.add_subcommand("report", "Parameter count and analytic GFLOPs");
  report->add_option("--variant", rargs.variant, "tiny/small/medium/large");
  report->add_option("--res", rargs.res, "Input resolution (multiple of 32)");
  report->add_option("--classes", rargs.classes, "Classifier width");
  report->add_option("--mode", rargs.mode, "Attention mode");
  report->add_option("--fpc", rargs.fpc, "Feature preserving connection")
      ->check(CLI::IsMember({"on", "off"}));
  report->add_option("--fr", rargs.fr, "Feature reduction ratio override");
  report->add_flag("--json", rargs.json, "Machine-readable output");
  uint64_t report_seed = 0;
  report->add_option("--seed", report_seed, "Accepted for uniformity");

  BenchArgs bargs;
  CLI::App* bench = app.add_subcommand(
      "bench", "Resolution sweep: analytic cost and wall time to CSV");
  bench->add_option("--variant", bargs.variant, "tiny/small/medium/large");
  bench->add_option("--modes", bargs.modes, "Comma-separated attention modes")
      ->delimiter(',');
  bench->add_option("--res", bargs.res, "Comma-separated resolutions")
      ->delimiter(',');
  bench->add_option("--repeats", bargs.repeats, "Timed repeats (>= 3)");
  bench->add_option("--out", bargs.out, "CSV output path");
  bench->add_option("--mem-budget-gb", bargs.mem_budget_gb,
                    "Budget for the OOM sentinel");
  bench->add_flag("--analytic-only", bargs.analytic_only,
                  "Skip wall-time measurement");
  bench->add_option("--seed", bargs.seed, "Random seed");
  bench->add_option("--classes", bargs.classes, "Classifier width");

  TrainArgs targs;
  CLI::App* train_cmd =
      app.add_subcommand("train", "Desk-scale training / ablation runs");
  train_cmd->add_option("--config", targs.config_path, "JSON config file")
      ->required();
  train_cmd->add_option("--mode", targs.mode, "Override attention mode");
  train_cmd->add_option("--fpc", targs.fpc, "Override FPC wiring")
      ->check(CLI::IsMember({"on", "off"}));
  train_cmd->add_option("--fr", targs.fr, "Override feature reduction ratio");
  train_cmd->add_option("--epochs", targs.epochs, "Override total epochs");
  train_cmd->add_option("--batch", targs.batch, "Override batch size");
  train_cmd->add_option("--upscale", targs.upscale,
                        "Upscale images to this side (0 = native)");
  train_cmd->add_option("--lr", targs.lr, "Override learning rate");
  auto* seed_opt =
      train_cmd->add_option("--seed", targs.seed, "Override seed");
  train_cmd->add_option("--out", targs.out, "Override output directory");
  train_cmd
      ->add_option("--compare-modes", targs.compare_modes,
                   "Train each mode with identical settings")
      ->delimiter(',');

  EvalArgs eargs;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Evaluate a checkpoint on a config's data");
  eval_cmd->add_option("--checkpoint", eargs.checkpoint, "Checkpoint directory")
      ->required();
  eval_cmd->add_option("--config", eargs.config_path, "JSON config file")
      ->required();
  eval_cmd->add_option("--split", eargs.split, "train or val")
      ->check(CLI::IsMember({"train", "val"}));
  auto* eval_seed_opt = eval_cmd->add_option("--seed", eargs.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  targs.seed_set = seed_opt->count() > 0;
  eargs.seed_set = eval_seed_opt->count() > 0;

  try {
    if (app.got_subcommand(verify)) return run_verify(vargs);
    if (app.got_subcommand(report)) return run_report(rargs);
    if (app.got_subcommand(bench)) return run_bench(bargs);
    if (app.got_subcommand(train_cmd)) return run_train(targs);
    if (app.got_subcommand(eval_cmd)) return run_eval(eargs);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCheckFailed;
  }
  return kExitUsage;
}
