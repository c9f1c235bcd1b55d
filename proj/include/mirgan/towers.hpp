#pragma once

// Modality front-ends and the paired encoder stack. Both streams pass
// through N_E layers of self-attention, cross-attention against the other
// stream, and a feed-forward block, each in post-norm residual form. The two
// streams update simultaneously: layer l reads only layer l-1 outputs, and
// cross-attention keys/values come from the other stream's post-self-attention
// state within the same layer.

#include "mirgan/layers.hpp"

namespace mirgan {

// Everything a forward pass needs besides parameters and inputs.
struct ForwardCtx {
  int n_heads = 4;
  double dropout_rate = 0.0;
  bool training = false;
  Rng* rng = nullptr;

  template <typename Scalar>
  Var<Scalar> drop(Var<Scalar> x) const {
    return dropout(x, dropout_rate, rng, training);
  }
};

struct TowerDims {
  Index d_v_raw;
  Index d_a_raw;
  Index d_model;
  Index d_ffn;
  int n_layers;
};

inline void register_towers(ParamStore& s, const TowerDims& dims) {
  register_affine(s, "front.a", dims.d_a_raw, dims.d_model);
  register_norm(s, "front.a.norm", dims.d_model);

  register_affine(s, "front.v.0", dims.d_v_raw, dims.d_model);
  register_prelu(s, "front.v.act", dims.d_model);
  register_affine(s, "front.v.1", dims.d_model, dims.d_model);
  register_norm(s, "front.v.norm", dims.d_model);

  for (int l = 0; l < dims.n_layers; ++l)
    for (const char* m : {"v", "a"}) {
      const std::string base = std::string("tower.") + m + ".l" + std::to_string(l);
      register_mha(s, base + ".self", dims.d_model);
      register_mha(s, base + ".cross", dims.d_model);
      register_ffn(s, base + ".ffn", dims.d_model, dims.d_ffn);
      register_norm(s, base + ".n1", dims.d_model);
      register_norm(s, base + ".n2", dims.d_model);
      register_norm(s, base + ".n3", dims.d_model);
    }
}

// Linear projection plus layer norm.
template <typename Scalar>
Var<Scalar> audio_frontend(Binding<Scalar>& p, Var<Scalar> x_a) {
  return norm(p, "front.a.norm", affine(p, "front.a", x_a));
}

// Two affine layers with a PReLU between, then layer norm.
template <typename Scalar>
Var<Scalar> visual_frontend(Binding<Scalar>& p, Var<Scalar> x_v) {
  auto h = prelu_layer(p, "front.v.act", affine(p, "front.v.0", x_v));
  return norm(p, "front.v.norm", affine(p, "front.v.1", h));
}

template <typename Scalar>
std::pair<Var<Scalar>, Var<Scalar>> encode(Binding<Scalar>& p, const ForwardCtx& ctx,
                                           Var<Scalar> f_v, Var<Scalar> f_a,
                                           int n_layers) {
  if (f_v.rows() != f_a.rows())
    throw DimensionError("encode: streams disagree on frame count (" +
                         std::to_string(f_v.rows()) + " vs " +
                         std::to_string(f_a.rows()) + ")");
  for (int l = 0; l < n_layers; ++l) {
    const std::string v = "tower.v.l" + std::to_string(l);
    const std::string a = "tower.a.l" + std::to_string(l);

    auto sv = norm(p, v + ".n1", add(f_v, ctx.drop(mha(p, v + ".self", f_v, f_v, f_v, ctx.n_heads))));
    auto sa = norm(p, a + ".n1", add(f_a, ctx.drop(mha(p, a + ".self", f_a, f_a, f_a, ctx.n_heads))));

    auto cv = norm(p, v + ".n2", add(sv, ctx.drop(mha(p, v + ".cross", sv, sa, sa, ctx.n_heads))));
    auto ca = norm(p, a + ".n2", add(sa, ctx.drop(mha(p, a + ".cross", sa, sv, sv, ctx.n_heads))));

    f_v = norm(p, v + ".n3", add(cv, ctx.drop(ffn(p, v + ".ffn", cv))));
    f_a = norm(p, a + ".n3", add(ca, ctx.drop(ffn(p, a + ".ffn", ca))));
  }
  return {f_v, f_a};
}

}  // namespace mirgan
