#pragma once

// Frame-level modality discriminator and the adversarial objective, split
// into the discriminator target (maximized over theta_D) and the generator
// target (minimized over everything else). Both losses are evaluated in
// logit space via softplus identities, so no log ever sees a clamped
// probability: log D(z) = -softplus(-z), log(1 - D(z)) = -softplus(z).

#include "mirgan/layers.hpp"

namespace mirgan {

struct DiscDims {
  Index d_model;
  Index d_hidden;
  bool hidden_act = true;
};

// Output head starts at zero so an untrained discriminator answers exactly
// 0.5 everywhere; the hidden layer starts Xavier like everything else.
inline void register_discriminator(ParamStore& s, const DiscDims& dims) {
  register_affine(s, "disc.hidden", dims.d_model, dims.d_hidden, ParamGroup::Discriminator);
  if (dims.hidden_act)
    register_prelu(s, "disc.act", dims.d_hidden, ParamGroup::Discriminator);
  register_affine(s, "disc.out", dims.d_hidden, 1, ParamGroup::Discriminator,
                  Init::zero(), Init::zero());
}

// Per-frame logits, T x 1. Probabilities are sigmoid(logits) and stay
// strictly inside (0,1) for finite inputs.
template <typename Scalar>
Var<Scalar> discriminate(Binding<Scalar>& p, Var<Scalar> f, bool hidden_act) {
  auto h = affine(p, "disc.hidden", f);
  if (hidden_act) h = prelu_layer(p, "disc.act", h);
  return affine(p, "disc.out", h);
}

// Mean over frames of -log D - log(1 - D) = softplus(z) + softplus(-z).
// Analytic minimum 2 ln 2, reached exactly when every logit is 0.
template <typename Scalar>
Var<Scalar> loss_g_from_logits(Var<Scalar> logits) {
  return mean_all(add(softplus(logits), softplus(negate(logits))));
}

// Full adversarial objective the discriminator ascends:
//   E[log D(f_a_spe)] + E[log(1 - D(f_v_spe))] + E[-log D(inv) - log(1 - D(inv))]
// with each expectation a mean over that stream's frames.
template <typename Scalar>
Var<Scalar> loss_gan_from_logits(Var<Scalar> z_a, Var<Scalar> z_v, Var<Scalar> z_inv) {
  auto log_d_a = negate(mean_all(softplus(negate(z_a))));
  auto log_1md_v = negate(mean_all(softplus(z_v)));
  return add(add(log_d_a, log_1md_v), loss_g_from_logits(z_inv));
}

// Scalar-side helpers for reporting (no tape involved).
inline double sigmoid_scalar(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Mean discriminator probability over frames, clamped away from {0,1} so the
// reported statistic stays inside the open interval even for saturated logits.
template <typename Scalar>
double mean_prob(const Matrix<Scalar>& logits) {
  double sum = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    double p = sigmoid_scalar(static_cast<double>(logits(i, 0)));
    sum += std::min(1.0 - 1e-12, std::max(1e-12, p));
  }
  return sum / static_cast<double>(logits.rows());
}

}  // namespace mirgan
