#pragma once

// Frame-level contrastive alignment between the modality-invariant sequence
// and each modality-specific sequence. For every frame i the positive is the
// same-index frame of the other tensor and the negatives are that tensor's
// remaining frames, so nothing crosses utterance boundaries. Each direction
// is a softmax cross-entropy over temperature-scaled cosine similarities with
// the diagonal as target, summed over frames; a batch averages the
// per-utterance sums.

#include "mirgan/autodiff.hpp"

#include <iostream>
#include <numeric>

namespace mirgan {

template <typename Scalar>
Var<Scalar> mim_loss(Var<Scalar> f_inv, Var<Scalar> f_v_spe, Var<Scalar> f_a_spe,
                     double tau) {
  if (tau <= 0.0) throw ConfigError("mim: temperature must be > 0");
  const Index t = f_inv.rows();
  if (f_v_spe.rows() != t || f_a_spe.rows() != t)
    throw DimensionError("mim: sequences disagree on frame count");
  if (t < 2) {
    // One frame has no negatives; the utterance contributes nothing.
    std::cerr << "mim: utterance with T=" << t << " skipped (needs T >= 2)\n";
    return f_inv.tape->scalar_leaf(Scalar(0));
  }

  std::vector<int> diagonal(static_cast<std::size_t>(t));
  std::iota(diagonal.begin(), diagonal.end(), 0);

  auto s_v = scale(cosine_rows(f_inv, f_v_spe), 1.0 / tau);
  auto s_a = scale(cosine_rows(f_inv, f_a_spe), 1.0 / tau);
  // cross_entropy averages over rows; Eq.-style per-utterance sums need x T.
  auto per_frame_mean = add(cross_entropy(s_v, diagonal), cross_entropy(s_a, diagonal));
  return scale(per_frame_mean, static_cast<double>(t));
}

}  // namespace mirgan
