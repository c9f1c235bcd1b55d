#pragma once

// Two-phase adversarial training loop. Phase A forwards the batch with every
// non-discriminator output detached and ascends the adversarial objective on
// discriminator parameters only; Phase B runs a fresh forward and descends
// the weighted recognition + generator-adversarial + contrastive objective on
// everything except the discriminator, whose weights stay frozen while the
// gradient flows through them. All randomness (batch order, noise gates,
// dropout, eval noise) derives from hash(seed, purpose, counters), so a run
// is a pure function of (config, corpus) and checkpoint resume is bit-exact.

#include "mirgan/config.hpp"
#include "mirgan/metrics.hpp"
#include "mirgan/model.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

namespace mirgan {

struct SplitIndices {
  std::vector<int> train;
  std::vector<int> val;
};

// Deterministic shuffle-then-cut split over utterance indices.
SplitIndices split_corpus(int n_utterances, double val_fraction, std::uint64_t seed);

// Batch composition is a pure function of (seed, step): train indices are
// bucketed by length into fixed chunks, and each epoch permutes chunk order.
std::vector<int> batch_for_step(const std::vector<int>& train_sorted_by_length,
                                int batch_size, std::uint64_t seed, long step);

// Linear warmup to the peak, then linear decay; strictly positive throughout.
double lr_at_step(const TrainConfig& cfg, long step);

inline constexpr double kEvalSnrLevels[] = {-10.0, -5.0, 0.0, 5.0, 10.0};

struct EvalReport {
  double clean_ter = 0.0;
  std::vector<std::pair<double, double>> per_snr;  // (snr_db, ter)
  std::optional<double> noisy_avg;                 // mean of per-snr TERs
  long total_frames = 0;
};

class Trainer {
 public:
  Trainer(const RunConfig& cfg, const Corpus& corpus);

  // One Alg-1 step; the returned row has loss/gradient columns filled and
  // validation columns empty. Throws NumericError on a non-finite loss.
  MetricsRow train_step();

  // Deterministic evaluation on a set of corpus indices: clean TER plus one
  // TER per SNR level (empty level list means clean-only). Noise streams
  // derive from (level, utterance index) and never touch training state.
  EvalReport evaluate(const std::vector<int>& indices,
                      const std::vector<double>& snr_levels, Modality modality) const;
  EvalReport evaluate_val(Modality modality) const;

  void save_checkpoint(const std::filesystem::path& path) const;
  // Restores parameters, moments, step counters, and best-val record. The
  // checkpoint's config must match this trainer's (first differing field is
  // named in the error).
  void load_checkpoint(const std::filesystem::path& path);
  // Reads just the embedded run config from a checkpoint file.
  static RunConfig peek_config(const std::filesystem::path& path);

  // Invoked right after each phase's parameter update ('A' or 'B') so audits
  // can snapshot the store at the phase boundary inside one step.
  void set_phase_observer(std::function<void(char)> fn) {
    phase_observer_ = std::move(fn);
  }

  Model& model() { return *model_; }
  const Model& model() const { return *model_; }
  const RunConfig& config() const { return cfg_; }
  const SplitIndices& split() const { return split_; }
  long step() const { return step_; }
  double best_val_ter() const { return best_val_ter_; }
  void note_val_ter(double ter) { best_val_ter_ = std::min(best_val_ter_, ter); }

 private:
  struct PhaseStats;
  Matrix<float> augmented_audio(int utt_index, long step) const;

  RunConfig cfg_;
  const Corpus* corpus_;
  AblationMode mode_;
  Modality train_modality_;
  std::unique_ptr<Model> model_;
  SplitIndices split_;
  std::vector<int> train_sorted_;  // train indices sorted by (T, index)
  std::function<void(char)> phase_observer_;
  long step_ = 0;
  double best_val_ter_ = std::numeric_limits<double>::infinity();
};

}  // namespace mirgan
