#include "mirgan/commands.hpp"

#include "mirgan/diagnostics.hpp"
#include "mirgan/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace mirgan {

namespace {

using nlohmann::json;

void ensure_fresh_dir(const std::filesystem::path& dir, bool force) {
  if (std::filesystem::exists(dir) && !std::filesystem::is_directory(dir))
    throw UsageError(dir.string() + " exists and is not a directory");
  if (std::filesystem::is_directory(dir) && !std::filesystem::is_empty(dir) && !force)
    throw UsageError("refusing to write into non-empty directory " + dir.string() +
                     " (pass --force to overwrite)");
  std::filesystem::create_directories(dir);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << text;
}

std::vector<int> split_selection(const Trainer& trainer, const std::string& split) {
  if (split == "val") return trainer.split().val;
  if (split == "train") return trainer.split().train;
  if (split == "all") {
    std::vector<int> all = trainer.split().train;
    all.insert(all.end(), trainer.split().val.begin(), trainer.split().val.end());
    std::sort(all.begin(), all.end());
    return all;
  }
  throw ConfigError("split must be one of val, train, all (got '" + split + "')");
}

std::string checkpoint_name(long step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06ld.mirc", step);
  return buf;
}

// Shared by cmd_train and cmd_ablate cells: steps from trainer.step()+1 to
// total, metrics row per step, eval columns on the eval cadence, periodic
// plus final checkpoints. Returns the final validation report.
EvalReport run_training_loop(Trainer& trainer, const std::filesystem::path& out_dir,
                             bool append_metrics) {
  const TrainConfig& tc = trainer.config().train;
  const Modality modality = parse_modality(tc.modality);

  write_text(out_dir / "config.json", run_config_to_text(trainer.config()));
  MetricsWriter writer(out_dir / "metrics.csv", append_metrics);

  EvalReport last_eval;
  bool evaluated = false;
  try {
    for (long s = trainer.step() + 1; s <= tc.total_steps; ++s) {
      MetricsRow row = trainer.train_step();
      if (s % tc.eval_interval == 0 || s == tc.total_steps) {
        last_eval = trainer.evaluate_val(modality);
        evaluated = true;
        row.val_ter_clean = last_eval.clean_ter;
        row.val_ter_noisy = last_eval.noisy_avg;
        trainer.note_val_ter(last_eval.clean_ter);
        std::cerr << "step " << s << "  L_rec="
                  << (row.l_rec ? format_double(*row.l_rec) : "-")
                  << "  val_TER_clean=" << format_double(last_eval.clean_ter)
                  << "  val_TER_noisy="
                  << (last_eval.noisy_avg ? format_double(*last_eval.noisy_avg) : "-")
                  << '\n';
      }
      writer.write(row);
      if (s % tc.checkpoint_interval == 0)
        trainer.save_checkpoint(out_dir / checkpoint_name(s));
    }
  } catch (const NumericError& e) {
    writer.flush();
    json dump = {{"error", e.what()}, {"step", trainer.step() + 1}};
    write_text(out_dir / "diverged.json", dump.dump(2) + "\n");
    throw;
  }
  trainer.save_checkpoint(out_dir / "final.mirc");
  writer.flush();
  if (!evaluated) last_eval = trainer.evaluate_val(modality);
  return last_eval;
}

json eval_report_json(const EvalReport& rep, const EvalArgs& args) {
  json per_snr = json::array();
  for (const auto& [snr, ter] : rep.per_snr)
    per_snr.push_back({{"snr_db", snr}, {"ter", ter}});
  json doc = {{"checkpoint", args.checkpoint},
              {"modality", args.modality},
              {"split", args.split},
              {"n_frames", rep.total_frames},
              {"clean_ter", rep.clean_ter},
              {"per_snr", per_snr}};
  if (rep.noisy_avg)
    doc["noisy_ter"] = *rep.noisy_avg;
  else
    doc["noisy_ter"] = nullptr;
  return doc;
}

// (trainer, corpus) pair hydrated from a checkpoint, dims verified.
struct LoadedRun {
  Corpus corpus;
  std::unique_ptr<Trainer> trainer;
};

LoadedRun load_run(const std::string& checkpoint, const std::string& corpus_dir) {
  RunConfig cfg = Trainer::peek_config(checkpoint);
  std::string dir = corpus_dir.empty() ? cfg.paths.corpus_dir : corpus_dir;
  if (dir.empty())
    throw UsageError("no corpus directory: pass --corpus or record paths.corpus_dir");

  LoadedRun run;
  run.corpus = load_corpus(dir);
  const CorpusSpec& have = run.corpus.spec;
  const CorpusSpec& want = cfg.corpus;
  if (have.d_v_raw != want.d_v_raw)
    throw CheckpointError("checkpoint expects corpus.d_v_raw=" +
                          std::to_string(want.d_v_raw) + ", corpus provides " +
                          std::to_string(have.d_v_raw));
  if (have.d_a_raw != want.d_a_raw)
    throw CheckpointError("checkpoint expects corpus.d_a_raw=" +
                          std::to_string(want.d_a_raw) + ", corpus provides " +
                          std::to_string(have.d_a_raw));
  if (have.n_classes != want.n_classes)
    throw CheckpointError("checkpoint expects corpus.n_classes=" +
                          std::to_string(want.n_classes) + ", corpus provides " +
                          std::to_string(have.n_classes));
  // The trainer's config must mirror the checkpoint exactly, including the
  // corpus echo, or load_checkpoint would flag a difference.
  run.trainer = std::make_unique<Trainer>(cfg, run.corpus);
  run.trainer->load_checkpoint(checkpoint);
  return run;
}

double sample_std(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return std::sqrt(sq / static_cast<double>(xs.size() - 1));
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  if (dynamic_cast<const CheckpointError*>(&e)) return 4;
  if (dynamic_cast<const DimensionError*>(&e)) return 4;
  if (dynamic_cast<const FormatError*>(&e)) return 4;
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const UsageError*>(&e)) return 2;
  if (dynamic_cast<const InputError*>(&e)) return 2;
  return 1;
}

void cmd_gen_data(const RunConfig& cfg, const std::string& out_dir, bool force) {
  if (out_dir.empty()) throw UsageError("gen-data needs --out DIR");
  ensure_fresh_dir(out_dir, force);
  Corpus corpus = generate_corpus(cfg.corpus);
  save_corpus(corpus, out_dir);

  long frames = 0;
  for (const auto& u : corpus.utterances) frames += u.frames();
  std::cout << "wrote " << corpus.utterances.size() << " utterances, " << frames
            << " frames to " << out_dir << '\n';
}

void cmd_train(RunConfig cfg, const std::string& corpus_dir, const std::string& out_dir,
               const std::string& resume_checkpoint, bool force) {
  if (out_dir.empty()) throw UsageError("train needs --out DIR");
  std::string dir = corpus_dir.empty() ? cfg.paths.corpus_dir : corpus_dir;
  if (dir.empty())
    throw UsageError("no corpus directory: pass --corpus or set paths.corpus_dir");
  Corpus corpus = load_corpus(dir);

  bool append_metrics = false;
  std::unique_ptr<Trainer> trainer;
  if (!resume_checkpoint.empty()) {
    // Resume takes its config from the checkpoint so the run continues under
    // exactly the settings it started with.
    cfg = Trainer::peek_config(resume_checkpoint);
    trainer = std::make_unique<Trainer>(cfg, corpus);
    trainer->load_checkpoint(resume_checkpoint);
    std::filesystem::create_directories(out_dir);
    append_metrics = std::filesystem::exists(std::filesystem::path(out_dir) / "metrics.csv");
  } else {
    // The config echo that lands in checkpoints must describe the corpus
    // actually trained on, not the generation defaults.
    cfg.corpus = corpus.spec;
    cfg.paths.corpus_dir = dir;
    cfg.paths.out_dir = out_dir;
    cfg.validate();
    ensure_fresh_dir(out_dir, force);
    trainer = std::make_unique<Trainer>(cfg, corpus);
  }

  EvalReport rep = run_training_loop(*trainer, out_dir, append_metrics);
  std::cout << "trained " << trainer->step() << " steps; val_TER_clean="
            << format_double(rep.clean_ter) << " val_TER_noisy="
            << (rep.noisy_avg ? format_double(*rep.noisy_avg) : "-") << "; artifacts in "
            << out_dir << '\n';
}

void cmd_eval(const EvalArgs& args) {
  LoadedRun run = load_run(args.checkpoint, args.corpus_dir);
  const Modality modality = parse_modality(args.modality);
  const std::vector<int> indices = split_selection(*run.trainer, args.split);

  EvalReport rep = run.trainer->evaluate(indices, args.snr_levels, modality);
  json doc = eval_report_json(rep, args);
  const std::string text = doc.dump(2) + "\n";
  std::cout << text;

  std::filesystem::path out =
      args.out_dir.empty() ? std::filesystem::path(args.checkpoint).parent_path()
                           : std::filesystem::path(args.out_dir);
  if (out.empty()) out = ".";
  std::filesystem::create_directories(out);
  write_text(out / ("eval_" + args.modality + ".json"), text);
}

void cmd_diagnose(const std::string& checkpoint, const std::string& corpus_dir,
                  const std::string& out_dir, bool force) {
  if (out_dir.empty()) throw UsageError("diagnose needs --out DIR");
  LoadedRun run = load_run(checkpoint, corpus_dir);
  ensure_fresh_dir(out_dir, force);

  const Model& model = run.trainer->model();
  const std::vector<int> indices = run.trainer->split().val;
  const std::filesystem::path out(out_dir);

  write_similarity_csv(out / "similarity_v.csv", run.corpus, indices, model, true);
  write_similarity_csv(out / "similarity_a.csv", run.corpus, indices, model, false);
  write_embeddings_csv(out / "embeddings.csv", run.corpus, indices, model);
  DiagScores scores = diagonality_scores(model, run.corpus, indices);

  json summary = {{"diag_score_v", scores.diag_v},
                  {"diag_score_a", scores.diag_a},
                  {"utterances", scores.utterances}};

  if (model.has_discriminator()) {
    DiscReport disc = discriminator_report(model, run.corpus, indices);
    std::ofstream stats(out / "disc_stats.csv", std::ios::trunc);
    if (!stats) throw InputError("cannot open disc_stats.csv for writing");
    stats << "stream,mean,std,frames";
    for (int b2 = 0; b2 < 10; ++b2) stats << ",bin_" << b2;
    stats << '\n';
    const std::pair<const char*, const StreamStats*> rows[] = {
        {"inv", &disc.inv}, {"audio", &disc.audio}, {"visual", &disc.visual}};
    for (const auto& [name, st] : rows) {
      stats << name << ',' << format_double(st->mean) << ',' << format_double(st->stddev)
            << ',' << st->frames;
      for (long b2 : st->histogram) stats << ',' << b2;
      stats << '\n';
    }
    summary["disc_accuracy"] = disc.accuracy;
    summary["mean_abs_dev_inv"] = disc.mean_abs_dev_inv;
    summary["mean_d_on_inv"] = disc.inv.mean;
    summary["mean_d_on_audio"] = disc.audio.mean;
    summary["mean_d_on_visual"] = disc.visual.mean;
  }
  write_text(out / "diagnose_summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << '\n';
}

void cmd_ablate(RunConfig cfg, const std::string& corpus_dir, const std::string& out_dir,
                int n_seeds, bool force) {
  if (out_dir.empty()) throw UsageError("ablate needs --out DIR");
  if (n_seeds < 1) throw UsageError("ablate needs at least one seed");
  std::string dir = corpus_dir.empty() ? cfg.paths.corpus_dir : corpus_dir;
  if (dir.empty())
    throw UsageError("no corpus directory: pass --corpus or set paths.corpus_dir");
  Corpus corpus = load_corpus(dir);
  cfg.corpus = corpus.spec;
  cfg.paths.corpus_dir = dir;
  ensure_fresh_dir(out_dir, force);
  const std::filesystem::path out(out_dir);

  json cells = json::array();
  std::ofstream summary(out / "ablation_summary.csv", std::ios::trunc);
  if (!summary) throw InputError("cannot open ablation_summary.csv for writing");
  summary << "mode,is_baseline,n_seeds,clean_mean,clean_std,noisy_mean,noisy_std\n";

  for (AblationMode mode : kAllAblations) {
    std::vector<double> clean, noisy;
    for (int si = 0; si < n_seeds; ++si) {
      RunConfig cell_cfg = cfg;
      cell_cfg.train.ablation = ablation_name(mode);
      cell_cfg.train.seed = cfg.train.seed + static_cast<std::uint64_t>(si);
      const std::filesystem::path cell_dir =
          out / ablation_name(mode) / ("seed_" + std::to_string(cell_cfg.train.seed));
      cell_cfg.paths.out_dir = cell_dir.string();
      std::filesystem::create_directories(cell_dir);

      std::cerr << "ablate: " << ablation_name(mode) << " seed " << cell_cfg.train.seed
                << '\n';
      Trainer trainer(cell_cfg, corpus);
      EvalReport rep = run_training_loop(trainer, cell_dir, false);
      clean.push_back(rep.clean_ter);
      noisy.push_back(rep.noisy_avg.value_or(std::numeric_limits<double>::quiet_NaN()));
      cells.push_back({{"mode", ablation_name(mode)},
                       {"seed", cell_cfg.train.seed},
                       {"clean_ter", rep.clean_ter},
                       {"noisy_ter", rep.noisy_avg ? json(*rep.noisy_avg) : json()}});
    }
    const double clean_mean =
        std::accumulate(clean.begin(), clean.end(), 0.0) / double(clean.size());
    const double noisy_mean =
        std::accumulate(noisy.begin(), noisy.end(), 0.0) / double(noisy.size());
    summary << ablation_name(mode) << ',' << (mode == AblationMode::Full ? 1 : 0) << ','
            << n_seeds << ',' << format_double(clean_mean) << ','
            << format_double(sample_std(clean, clean_mean)) << ','
            << format_double(noisy_mean) << ','
            << format_double(sample_std(noisy, noisy_mean)) << '\n';
  }
  write_text(out / "ablation_cells.json", cells.dump(2) + "\n");
  std::cout << "ablation summary written to " << (out / "ablation_summary.csv").string()
            << '\n';
}

}  // namespace mirgan
