#pragma once

// Synthetic paired-modality corpus: generation, noise augmentation, and a
// small directory-based container format (manifest.json + one blob per
// utterance). Frames of both modalities are linear images of a shared
// per-class latent embedding plus Gaussian noise, so the recognition task is
// learnable by construction while the two streams stay statistically distinct.

#include "mirgan/core.hpp"

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace mirgan {

struct CorpusSpec {
  std::uint64_t seed = 1;
  int n_utterances = 2000;
  int t_min = 4;
  int t_max = 12;
  int n_classes = 16;
  int latent_dim = 32;
  int d_v_raw = 40;
  int d_a_raw = 26;
  // Std of the latent-to-modality mixing matrices is mix_scale / sqrt(latent_dim),
  // so frame magnitudes track mix_scale independent of the latent width.
  double mix_scale = 1.0;
  // Visual is deliberately the weaker modality (about 80% linearly separable
  // at these settings vs 97% for audio), so fusion has real work to do while
  // audio stays learnable on its own.
  double noise_std_v = 2.0;
  double noise_std_a = 1.0;

  void validate() const {
    if (t_min < 2) throw ConfigError("corpus spec: t_min must be >= 2");
    if (t_max < t_min) throw ConfigError("corpus spec: t_max must be >= t_min");
    if (n_classes < 2) throw ConfigError("corpus spec: n_classes must be >= 2");
    if (n_utterances < 1) throw ConfigError("corpus spec: n_utterances must be >= 1");
    if (latent_dim < 1 || d_v_raw < 1 || d_a_raw < 1)
      throw ConfigError("corpus spec: dims must be >= 1");
    if (mix_scale <= 0.0) throw ConfigError("corpus spec: mix_scale must be > 0");
    if (noise_std_v < 0.0 || noise_std_a < 0.0)
      throw ConfigError("corpus spec: noise std must be >= 0");
  }
};

struct Utterance {
  std::string id;
  Matrix<float> visual;     // T x d_v_raw
  Matrix<float> audio;      // T x d_a_raw
  std::vector<int> labels;  // T entries in [0, n_classes)
  std::optional<double> snr_db;  // set only on noise-augmented copies

  Index frames() const { return visual.rows(); }
};

struct Corpus {
  CorpusSpec spec;
  std::vector<Utterance> utterances;
};

// Pure function of spec: same spec gives bit-identical corpora.
Corpus generate_corpus(const CorpusSpec& spec);

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

// Sentinel snr for "leave the signal untouched".
inline constexpr double kCleanSnr = std::numeric_limits<double>::infinity();

// Adds Gaussian noise scaled so power(signal) / power(noise) == 10^(snr_db/10),
// with power measured as the mean square over all entries. All-zero input is
// returned unchanged (there is no signal level to anchor the ratio to).
template <typename Scalar>
Matrix<Scalar> add_noise(const Matrix<Scalar>& audio, double snr_db, Rng& rng) {
  if (audio.size() == 0) throw InputError("add_noise: empty audio tensor");
  if (std::isinf(snr_db) && snr_db > 0) return audio;

  const double signal_power =
      audio.template cast<double>().array().square().mean();
  if (signal_power == 0.0) {
    std::cerr << "add_noise: all-zero signal, skipping augmentation\n";
    return audio;
  }

  Matrix<double> noise(audio.rows(), audio.cols());
  for (Index i = 0; i < noise.rows(); ++i)
    for (Index j = 0; j < noise.cols(); ++j) noise(i, j) = rng.normal();
  const double noise_power = noise.array().square().mean();
  if (noise_power == 0.0) return audio;  // degenerate draw on a 1-element tensor

  const double target_ratio = std::pow(10.0, snr_db / 10.0);
  const double gain = std::sqrt(signal_power / (target_ratio * noise_power));
  return audio + (noise * gain).template cast<Scalar>();
}

}  // namespace mirgan
