#pragma once

// Post-training inspection tools: frame-alignment diagonality between the
// invariant stream and each modality-specific stream, discriminator output
// statistics per representation type, and a labeled embedding dump for
// external projection. All computations run eval-mode forwards on a frozen
// parameter store; nothing here touches training state.

#include "mirgan/metrics.hpp"
#include "mirgan/model.hpp"
#include "mirgan/synthdata.hpp"

#include <array>
#include <cmath>
#include <fstream>

namespace mirgan {

struct UtteranceDiag {
  Matrix<float> f_v_spe;
  Matrix<float> f_a_spe;
  Matrix<float> f_inv;
  Matrix<float> sim_v;  // T x T cosine of inv rows vs visual-specific rows
  Matrix<float> sim_a;
  Matrix<float> z_v;  // discriminator logits per stream, empty without a discriminator
  Matrix<float> z_a;
  Matrix<float> z_inv;
};

template <typename Scalar>
Matrix<Scalar> cosine_matrix(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  Matrix<Scalar> an = a, bn = b;
  for (Index i = 0; i < an.rows(); ++i)
    an.row(i) /= std::max(Scalar(1e-8), Scalar(an.row(i).norm()));
  for (Index i = 0; i < bn.rows(); ++i)
    bn.row(i) /= std::max(Scalar(1e-8), Scalar(bn.row(i).norm()));
  return an * bn.transpose();
}

inline UtteranceDiag diagnose_utterance(const Model& model, const Utterance& u) {
  Tape<float> tape;
  Binding<float> p(tape, model.store(), Trainable::None);
  ForwardCtx ctx = model.make_ctx(false, nullptr);
  auto fwd = model.forward(p, ctx, tape.leaf(u.visual), tape.leaf(u.audio),
                           Modality::AV);

  UtteranceDiag d;
  d.f_v_spe = fwd.f_v_spe.value();
  d.f_a_spe = fwd.f_a_spe.value();
  d.f_inv = fwd.f_inv.value();
  d.sim_v = cosine_matrix(d.f_inv, d.f_v_spe);
  d.sim_a = cosine_matrix(d.f_inv, d.f_a_spe);
  if (model.has_discriminator()) {
    d.z_v = model.disc_logits(p, fwd.f_v_spe).value();
    d.z_a = model.disc_logits(p, fwd.f_a_spe).value();
    d.z_inv = model.disc_logits(p, fwd.f_inv).value();
  }
  return d;
}

// mean_i S_ii - mean_{i != j} S_ij for one similarity matrix; the caller
// skips T < 2 (no off-diagonal mass to compare against).
inline double diagonality(const Matrix<float>& s) {
  const Index t = s.rows();
  double diag = 0.0, off = 0.0;
  for (Index i = 0; i < t; ++i)
    for (Index j = 0; j < t; ++j)
      (i == j ? diag : off) += s(i, j);
  return diag / double(t) - off / double(t * (t - 1));
}

struct DiagScores {
  double diag_v = 0.0;
  double diag_a = 0.0;
  int utterances = 0;
};

inline DiagScores diagonality_scores(const Model& model, const Corpus& corpus,
                                     const std::vector<int>& indices) {
  struct Slot {
    double v = 0.0, a = 0.0;
    bool counted = false;
  };
  std::vector<Slot> slots(indices.size());
  parallel_for(indices.size(), [&](std::size_t i) {
    const Utterance& u = corpus.utterances[static_cast<std::size_t>(indices[i])];
    if (u.frames() < 2) return;
    UtteranceDiag d = diagnose_utterance(model, u);
    slots[i] = {diagonality(d.sim_v), diagonality(d.sim_a), true};
  });

  DiagScores scores;
  for (const Slot& s : slots) {
    if (!s.counted) continue;
    scores.diag_v += s.v;
    scores.diag_a += s.a;
    ++scores.utterances;
  }
  if (scores.utterances == 0) throw InputError("diagonality: no utterances with T >= 2");
  scores.diag_v /= scores.utterances;
  scores.diag_a /= scores.utterances;
  return scores;
}

struct StreamStats {
  double mean = 0.0;
  double stddev = 0.0;
  long frames = 0;
  std::array<long, 10> histogram{};  // probability deciles
};

struct DiscReport {
  StreamStats inv, audio, visual;
  // Fraction of frames the discriminator labels correctly with the
  // convention audio -> 1, visual -> 0 (logit sign test).
  double accuracy = 0.0;
  // Mean |D(inv) - 0.5|; small means the invariant stream fools it.
  double mean_abs_dev_inv = 0.0;
};

inline DiscReport discriminator_report(const Model& model, const Corpus& corpus,
                                       const std::vector<int>& indices) {
  if (!model.has_discriminator())
    throw UsageError("discriminator report requested under no_discriminator ablation");

  struct Slot {
    std::vector<double> p_inv, p_a, p_v;
  };
  std::vector<Slot> slots(indices.size());
  parallel_for(indices.size(), [&](std::size_t i) {
    const Utterance& u = corpus.utterances[static_cast<std::size_t>(indices[i])];
    UtteranceDiag d = diagnose_utterance(model, u);
    Slot& s = slots[i];
    for (Index f = 0; f < u.frames(); ++f) {
      s.p_inv.push_back(sigmoid_scalar(d.z_inv(f, 0)));
      s.p_a.push_back(sigmoid_scalar(d.z_a(f, 0)));
      s.p_v.push_back(sigmoid_scalar(d.z_v(f, 0)));
    }
  });

  auto fold = [](StreamStats& st, const std::vector<double>& probs) {
    for (double p : probs) {
      st.mean += p;
      ++st.frames;
      st.histogram[std::min<std::size_t>(9, static_cast<std::size_t>(p * 10.0))]++;
    }
  };
  DiscReport rep;
  long correct = 0, total = 0;
  double abs_dev = 0.0;
  for (const Slot& s : slots) {
    fold(rep.inv, s.p_inv);
    fold(rep.audio, s.p_a);
    fold(rep.visual, s.p_v);
    for (double p : s.p_a) correct += p > 0.5 ? 1 : 0;
    for (double p : s.p_v) correct += p < 0.5 ? 1 : 0;
    total += static_cast<long>(s.p_a.size() + s.p_v.size());
    for (double p : s.p_inv) abs_dev += std::abs(p - 0.5);
  }
  for (StreamStats* st : {&rep.inv, &rep.audio, &rep.visual}) {
    if (st->frames == 0) throw InputError("discriminator report: empty evaluation set");
    st->mean /= double(st->frames);
  }
  // Second pass for the spread now that means are known.
  for (const Slot& s : slots) {
    for (double p : s.p_inv) rep.inv.stddev += (p - rep.inv.mean) * (p - rep.inv.mean);
    for (double p : s.p_a) rep.audio.stddev += (p - rep.audio.mean) * (p - rep.audio.mean);
    for (double p : s.p_v) rep.visual.stddev += (p - rep.visual.mean) * (p - rep.visual.mean);
  }
  for (StreamStats* st : {&rep.inv, &rep.audio, &rep.visual})
    st->stddev = std::sqrt(st->stddev / double(st->frames));
  rep.accuracy = double(correct) / double(total);
  rep.mean_abs_dev_inv = abs_dev / double(rep.inv.frames);
  return rep;
}

// Long-format similarity dump: utt,frame_i,frame_j,cosine.
inline void write_similarity_csv(const std::filesystem::path& path, const Corpus& corpus,
                                 const std::vector<int>& indices, const Model& model,
                                 bool visual_stream) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << "utt,frame_i,frame_j,cosine\n";
  for (int idx : indices) {
    const Utterance& u = corpus.utterances[static_cast<std::size_t>(idx)];
    UtteranceDiag d = diagnose_utterance(model, u);
    const Matrix<float>& s = visual_stream ? d.sim_v : d.sim_a;
    for (Index i = 0; i < s.rows(); ++i)
      for (Index j = 0; j < s.cols(); ++j)
        out << csv_escape(u.id) << ',' << i << ',' << j << ','
            << format_double(static_cast<double>(s(i, j))) << '\n';
  }
}

// One row per (type, utt, frame): type,utt,frame,d_0..d_{D-1}.
inline void write_embeddings_csv(const std::filesystem::path& path, const Corpus& corpus,
                                 const std::vector<int>& indices, const Model& model) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << "type,utt,frame";
  for (int d = 0; d < model.config().d_model; ++d) out << ",d_" << d;
  out << '\n';
  for (int idx : indices) {
    const Utterance& u = corpus.utterances[static_cast<std::size_t>(idx)];
    UtteranceDiag d = diagnose_utterance(model, u);
    const std::pair<const char*, const Matrix<float>*> streams[] = {
        {"v_spe", &d.f_v_spe}, {"a_spe", &d.f_a_spe}, {"inv", &d.f_inv}};
    for (const auto& [type, m] : streams)
      for (Index f = 0; f < m->rows(); ++f) {
        out << type << ',' << csv_escape(u.id) << ',' << f;
        for (Index c = 0; c < m->cols(); ++c)
          out << ',' << format_double(static_cast<double>((*m)(f, c)));
        out << '\n';
      }
  }
}

}  // namespace mirgan
