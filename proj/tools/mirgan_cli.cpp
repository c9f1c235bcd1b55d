// Command-line front end. Flag parsing only lives here; the actual work sits
// in src/commands.cpp so tests can call it without spawning a process.

#include "CLI11.hpp"
#include "mirgan/commands.hpp"
#include "mirgan/trainer.hpp"

#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

std::vector<double> parse_snr_list(const std::string& text) {
  std::vector<double> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw mirgan::UsageError("--snr expects comma-separated numbers, got '" + item + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"audio-visual fusion workbench: synthetic corpora, adversarial "
               "training, evaluation, and diagnostics"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool force = false;
  app.add_option("--config", config_path, "JSON run configuration file");
  auto* seed_opt =
      app.add_option("--seed", seed, "override both corpus and training seeds");
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("--force", force, "overwrite existing outputs");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");

  auto* train = app.add_subcommand("train", "run the two-phase training loop");
  std::string train_corpus, resume_ckpt;
  train->add_option("--corpus", train_corpus, "corpus directory");
  train->add_option("--resume", resume_ckpt, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  mirgan::EvalArgs eval_args;
  std::string snr_text = "unset";
  eval->add_option("--ckpt", eval_args.checkpoint, "checkpoint file")->required();
  eval->add_option("--corpus", eval_args.corpus_dir,
                   "corpus directory (default: the checkpoint's corpus)");
  eval->add_option("--modality", eval_args.modality, "input modality: AV, A, or V");
  eval->add_option("--split", eval_args.split, "evaluation split: val, train, or all");
  eval->add_option("--snr", snr_text,
                   "comma-separated SNR levels in dB; empty string for clean-only");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::string scope;
  gradcheck->add_option("--scope", scope, "ops, modules, or full")->required();

  auto* diagnose =
      app.add_subcommand("diagnose", "alignment, discriminator, and embedding reports");
  std::string diag_ckpt, diag_corpus;
  diagnose->add_option("--ckpt", diag_ckpt, "checkpoint file")->required();
  diagnose->add_option("--corpus", diag_corpus,
                       "corpus directory (default: the checkpoint's corpus)");

  auto* ablate = app.add_subcommand("ablate", "train every ablation mode over several seeds");
  std::string ablate_corpus;
  int n_seeds = 3;
  ablate->add_option("--corpus", ablate_corpus, "corpus directory");
  ablate->add_option("--seeds", n_seeds, "number of seeds per mode")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);

    mirgan::RunConfig cfg;
    if (!config_path.empty()) cfg = mirgan::load_run_config(config_path);
    if (seed_opt->count() > 0) {
      cfg.train.seed = seed;
      cfg.corpus.seed = seed;
    }
    if (!out_dir.empty()) cfg.paths.out_dir = out_dir;

    if (gen->parsed()) {
      if (cfg.paths.out_dir.empty())
        throw mirgan::UsageError("gen-data needs --out (or paths.out_dir in the config)");
      mirgan::cmd_gen_data(cfg, cfg.paths.out_dir, force);
    } else if (train->parsed()) {
      if (!train_corpus.empty()) cfg.paths.corpus_dir = train_corpus;
      if (cfg.paths.corpus_dir.empty())
        throw mirgan::UsageError("train needs --corpus (or paths.corpus_dir in the config)");
      if (cfg.paths.out_dir.empty())
        throw mirgan::UsageError("train needs --out (or paths.out_dir in the config)");
      mirgan::cmd_train(cfg, cfg.paths.corpus_dir, cfg.paths.out_dir, resume_ckpt, force);
    } else if (eval->parsed()) {
      if (snr_text != "unset") eval_args.snr_levels = parse_snr_list(snr_text);
      else eval_args.snr_levels.assign(std::begin(mirgan::kEvalSnrLevels),
                                       std::end(mirgan::kEvalSnrLevels));
      eval_args.out_dir = out_dir;
      mirgan::cmd_eval(eval_args);
    } else if (gradcheck->parsed()) {
      mirgan::cmd_gradcheck(scope);
    } else if (diagnose->parsed()) {
      if (cfg.paths.out_dir.empty())
        throw mirgan::UsageError("diagnose needs --out (or paths.out_dir in the config)");
      mirgan::cmd_diagnose(diag_ckpt, diag_corpus, cfg.paths.out_dir, force);
    } else if (ablate->parsed()) {
      if (!ablate_corpus.empty()) cfg.paths.corpus_dir = ablate_corpus;
      if (cfg.paths.corpus_dir.empty())
        throw mirgan::UsageError("ablate needs --corpus (or paths.corpus_dir in the config)");
      if (cfg.paths.out_dir.empty())
        throw mirgan::UsageError("ablate needs --out (or paths.out_dir in the config)");
      mirgan::cmd_ablate(cfg, cfg.paths.corpus_dir, cfg.paths.out_dir, n_seeds, force);
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return mirgan::exit_code_for(e);
  }
}
