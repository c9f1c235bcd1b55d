#pragma once

// Run configuration: one JSON document with corpus, model, train, and paths
// blocks. Every field has a default; parsing is strict (any unknown key is an
// error naming its path) so typos cannot silently fall back to defaults.

#include "mirgan/model.hpp"
#include "mirgan/synthdata.hpp"

#include <filesystem>
#include <string>

namespace mirgan {

struct TrainConfig {
  double lambda_gan = 0.01;
  double lambda_mim = 0.005;
  double tau = 0.1;
  double lr = 1e-3;
  int warmup_steps = 200;
  int total_steps = 2000;
  int batch_size = 8;
  std::uint64_t seed = 1;
  double noise_prob = 0.25;
  double train_snr_db = 0.0;
  std::string ablation = "full";
  std::string modality = "AV";
  double grad_clip = 5.0;
  int eval_interval = 200;
  int checkpoint_interval = 500;
  double val_fraction = 0.2;

  void validate() const {
    if (lambda_gan < 0.0 || lambda_mim < 0.0)
      throw ConfigError("train: loss weights must be >= 0");
    if (tau <= 0.0) throw ConfigError("train: tau must be > 0");
    if (lr <= 0.0) throw ConfigError("train: lr must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (total_steps < 1) throw ConfigError("train: total_steps must be >= 1");
    if (warmup_steps < 0 || warmup_steps > total_steps)
      throw ConfigError("train: warmup_steps must be in [0, total_steps]");
    if (noise_prob < 0.0 || noise_prob > 1.0)
      throw ConfigError("train: noise_prob must be in [0,1]");
    if (grad_clip < 0.0) throw ConfigError("train: grad_clip must be >= 0");
    if (eval_interval < 1 || checkpoint_interval < 1)
      throw ConfigError("train: intervals must be >= 1");
    if (val_fraction < 0.0 || val_fraction > 0.5)
      throw ConfigError("train: val_fraction must be in [0, 0.5]");
    parse_ablation(ablation);
    parse_modality(modality);
  }
};

struct PathsConfig {
  std::string corpus_dir;
  std::string out_dir;
};

struct RunConfig {
  CorpusSpec corpus;
  ModelConfig model;
  TrainConfig train;
  PathsConfig paths;

  void validate() const {
    corpus.validate();
    model.validate();
    train.validate();
  }
};

// Strict parse; unknown keys raise ConfigError with their dotted path.
RunConfig parse_run_config_text(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// Stable serialization (sorted keys) used for config echoes and checkpoints.
std::string run_config_to_text(const RunConfig& cfg);

}  // namespace mirgan
