#include <CLI11.hpp>
#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "qcomp/cli/commands.hpp"
#include "qcomp/errors.hpp"

namespace {

namespace cli = qcomp::cli;
namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::string data;
  std::string checkpoint;
  std::string resume;
  std::string split = "val";
};

cli::RunConfig load(const Options& o, bool seed_is_data) {
  cli::RunConfig cfg = o.config.empty() ? cli::RunConfig{} : cli::load_config(o.config);
  if (o.seed) (seed_is_data ? cfg.data.seed : cfg.train.seed) = *o.seed;
  cli::validate(cfg);
  return cfg;
}

fs::path data_dir(const Options& o, const cli::RunConfig& cfg) { return o.data.empty() ? fs::path(cfg.data.dir) : fs::path(o.data); }

fs::path checkpoint_path(const Options& o) {
  return o.checkpoint.empty() ? fs::path(o.out) / "checkpoint.json" : fs::path(o.checkpoint);
}

void print_ap(const qcomp::eval::APResult& r) {
  std::printf("mAP %.4f  mAP50 %.4f  mAP25 %.4f\n", r.map, r.map50, r.map25);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query-competition instance decoder: data, training, evaluation and analysis"};
  app.require_subcommand(1);
  Options o;
  auto common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "flat key = value run configuration");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "overrides the config seed (data.seed for gen-data, train.seed otherwise)");
  };
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic scene set and its manifest");
  common(gen);
  auto* train = app.add_subcommand("train", "train a model; writes checkpoint.json and metrics.jsonl");
  common(train);
  train->add_option("--data", o.data, "dataset directory (default: data.dir)");
  train->add_option("--resume", o.resume, "checkpoint to continue from");
  auto* evaluate = app.add_subcommand("eval", "score a checkpoint; writes eval.json");
  common(evaluate);
  auto* analyze = app.add_subcommand("analyze", "competition statistics and score CDFs as CSV");
  common(analyze);
  auto* ablate = app.add_subcommand("ablate", "train and score the 8-cell toggle grid");
  common(ablate);
  for (auto* sub : {evaluate, analyze, ablate}) sub->add_option("--data", o.data, "dataset directory (default: data.dir)");
  for (auto* sub : {evaluate, analyze}) {
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint (default: <out>/checkpoint.json)");
    sub->add_option("--split", o.split, "train or val")->check(CLI::IsMember({"train", "val"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      const cli::RunConfig cfg = load(o, true);
      const fs::path dir = o.out;
      const auto files = cli::cmd_gen_data(cfg, dir);
      std::printf("wrote %zu scenes and %s\n", files.size(), (dir / "manifest.json").string().c_str());
    } else if (train->parsed()) {
      const cli::RunConfig cfg = load(o, false);
      std::optional<fs::path> resume;
      if (!o.resume.empty()) resume = o.resume;
      const auto state = cli::cmd_train(cfg, data_dir(o, cfg), o.out, resume);
      const auto& last = state.log.back();
      std::printf("epoch %zu loss %.6f%s\n", last.epoch, last.loss_total,
                  last.map50_val ? (" val mAP50 " + std::to_string(*last.map50_val)).c_str() : "");
    } else if (evaluate->parsed()) {
      const cli::RunConfig cfg = load(o, false);
      print_ap(cli::cmd_eval(cfg, data_dir(o, cfg), checkpoint_path(o), o.out, o.split).ap);
    } else if (analyze->parsed()) {
      const cli::RunConfig cfg = load(o, false);
      const auto s = cli::cmd_analyze(cfg, data_dir(o, cfg), checkpoint_path(o), o.out, o.split);
      std::printf("competing@0.5 %.4f  matched cls %.4f  unmatched cls %.4f\n", s.competing_final_tau50,
                  s.matched_cls, s.unmatched_cls);
    } else if (ablate->parsed()) {
      const cli::RunConfig cfg = load(o, false);
      for (const auto& row : cli::cmd_ablate(cfg, data_dir(o, cfg), o.out)) {
        std::printf("%-12s ", row.cell.name.c_str());
        print_ap(row.ap);
      }
    }
  } catch (const qcomp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
