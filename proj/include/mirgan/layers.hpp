#pragma once

// Layer vocabulary shared by towers, generator, discriminator, and
// recognizer. Each layer kind comes as a register_* function (declares its
// tensors in the store) and an apply function (binds and runs it on a tape).
// Names are hierarchical ("tower.a.l0.self.q.w"), so the checkpoint manifest
// reads as a module tree.

#include "mirgan/autodiff.hpp"
#include "mirgan/params.hpp"

#include <string>

namespace mirgan {

inline void register_affine(ParamStore& s, const std::string& name, Index in, Index out,
                            ParamGroup g = ParamGroup::Rest,
                            Init w_init = Init::xavier(), Init b_init = Init::zero()) {
  s.add(name + ".w", in, out, w_init, g);
  s.add(name + ".b", 1, out, b_init, g);
}

template <typename Scalar>
Var<Scalar> affine(Binding<Scalar>& p, const std::string& name, Var<Scalar> x) {
  return add_row_bias(matmul(x, p[name + ".w"]), p[name + ".b"]);
}

inline void register_norm(ParamStore& s, const std::string& name, Index dim,
                          ParamGroup g = ParamGroup::Rest) {
  s.add(name + ".g", 1, dim, Init::one(), g);
  s.add(name + ".b", 1, dim, Init::zero(), g);
}

template <typename Scalar>
Var<Scalar> norm(Binding<Scalar>& p, const std::string& name, Var<Scalar> x) {
  return layer_norm(x, p[name + ".g"], p[name + ".b"]);
}

// Per-channel PReLU slope, initialized to the conventional 0.25.
inline void register_prelu(ParamStore& s, const std::string& name, Index dim,
                           ParamGroup g = ParamGroup::Rest) {
  s.add(name + ".alpha", 1, dim, Init::constant_fill(0.25), g);
}

template <typename Scalar>
Var<Scalar> prelu_layer(Binding<Scalar>& p, const std::string& name, Var<Scalar> x) {
  return prelu(x, p[name + ".alpha"]);
}

inline void register_mha(ParamStore& s, const std::string& name, Index d_model,
                         ParamGroup g = ParamGroup::Rest) {
  register_affine(s, name + ".q", d_model, d_model, g);
  register_affine(s, name + ".k", d_model, d_model, g);
  register_affine(s, name + ".v", d_model, d_model, g);
  register_affine(s, name + ".o", d_model, d_model, g);
}

// Scaled dot-product attention, n_heads parallel slices of width D/H.
// q_in: Tq x D, k_in/v_in: Tk x D, result Tq x D.
template <typename Scalar>
Var<Scalar> mha(Binding<Scalar>& p, const std::string& name, Var<Scalar> q_in,
                Var<Scalar> k_in, Var<Scalar> v_in, int n_heads) {
  const Index d = q_in.cols();
  if (d % n_heads != 0)
    throw ConfigError("attention width " + std::to_string(d) +
                      " not divisible by " + std::to_string(n_heads) + " heads");
  const Index dh = d / n_heads;

  auto q = affine(p, name + ".q", q_in);
  auto k = affine(p, name + ".k", k_in);
  auto v = affine(p, name + ".v", v_in);

  std::vector<Var<Scalar>> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < n_heads; ++h) {
    auto qh = slice_cols(q, h * dh, dh);
    auto kh = slice_cols(k, h * dh, dh);
    auto vh = slice_cols(v, h * dh, dh);
    auto attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    heads.push_back(matmul(attn, vh));
  }
  return affine(p, name + ".o", concat_cols<Scalar>(heads));
}

inline void register_ffn(ParamStore& s, const std::string& name, Index d_model,
                         Index d_ffn, ParamGroup g = ParamGroup::Rest) {
  register_affine(s, name + ".0", d_model, d_ffn, g);
  register_prelu(s, name + ".act", d_ffn, g);
  register_affine(s, name + ".1", d_ffn, d_model, g);
}

template <typename Scalar>
Var<Scalar> ffn(Binding<Scalar>& p, const std::string& name, Var<Scalar> x) {
  return affine(p, name + ".1", prelu_layer(p, name + ".act", affine(p, name + ".0", x)));
}

// Inverted dropout with a caller-supplied stream; identity outside training.
template <typename Scalar>
Var<Scalar> dropout(Var<Scalar> x, double rate, Rng* rng, bool training) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  const auto keep = static_cast<Scalar>(1.0 / (1.0 - rate));
  Matrix<Scalar> mask(x.rows(), x.cols());
  for (Index i = 0; i < mask.rows(); ++i)
    for (Index j = 0; j < mask.cols(); ++j)
      mask(i, j) = rng->uniform() < rate ? Scalar(0) : keep;
  return mul(x, x.tape->leaf(std::move(mask)));
}

// Classic sinusoidal table, added to front-end outputs when enabled.
template <typename Scalar>
Matrix<Scalar> sinusoidal_positions(Index t, Index d) {
  Matrix<Scalar> pos(t, d);
  for (Index i = 0; i < t; ++i)
    for (Index j = 0; j < d; ++j) {
      const double angle = double(i) / std::pow(10000.0, 2.0 * double(j / 2) / double(d));
      pos(i, j) = static_cast<Scalar>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pos;
}

}  // namespace mirgan
