#pragma once

// The modality-invariant representation generator. fuse_query concatenates
// the two front-end streams and projects 2D -> D; each of the N_G blocks
// then cross-attends the evolving query into each modality-specific sequence,
// gates the result with a learned sigmoid mask over [f_m_spe || f_va], maps
// the gated share through a per-frame conv (affine) + PReLU, and folds both
// modality branches back into the query through a residual layer norm. The
// modality-specific inputs stay fixed across blocks; the final query is the
// modality-invariant representation.

#include "mirgan/towers.hpp"

namespace mirgan {

struct GeneratorDims {
  Index d_model;
  int n_blocks;
};

inline void register_generator(ParamStore& s, const GeneratorDims& dims) {
  register_affine(s, "gen.fuse", 2 * dims.d_model, dims.d_model);
  for (int b = 0; b < dims.n_blocks; ++b) {
    const std::string base = "gen.b" + std::to_string(b);
    for (const char* m : {"v", "a"}) {
      const std::string mb = base + "." + m;
      register_mha(s, mb + ".cross", dims.d_model);
      register_affine(s, mb + ".mask", 2 * dims.d_model, dims.d_model);
      register_affine(s, mb + ".conv", dims.d_model, dims.d_model);
      register_prelu(s, mb + ".conv.act", dims.d_model);
    }
    register_norm(s, base + ".norm", dims.d_model);
  }
}

template <typename Scalar>
Var<Scalar> fuse_query(Binding<Scalar>& p, Var<Scalar> f_v, Var<Scalar> f_a) {
  if (f_v.rows() != f_a.rows())
    throw DimensionError("fuse_query: streams disagree on frame count (" +
                         std::to_string(f_v.rows()) + " vs " +
                         std::to_string(f_a.rows()) + ")");
  return affine(p, "gen.fuse", concat_cols<Scalar>({f_v, f_a}));
}

// One hybrid-modal attention branch: cross-attend the query into the
// modality, then mask out what is modality-specific.
template <typename Scalar>
Var<Scalar> hma(Binding<Scalar>& p, const std::string& branch, const ForwardCtx& ctx,
                Var<Scalar> f_m_spe, Var<Scalar> f_va) {
  if (f_m_spe.rows() != f_va.rows())
    throw DimensionError("hma: query and modality stream disagree on frame count");
  auto share = mha(p, branch + ".cross", f_va, f_m_spe, f_m_spe, ctx.n_heads);
  auto mask = sigmoid(affine(p, branch + ".mask", concat_cols<Scalar>({f_m_spe, f_va})));
  return mul(share, mask);
}

template <typename Scalar>
Var<Scalar> generate(Binding<Scalar>& p, const ForwardCtx& ctx, Var<Scalar> f_v_spe,
                     Var<Scalar> f_a_spe, Var<Scalar> f_va, int n_blocks) {
  for (int b = 0; b < n_blocks; ++b) {
    const std::string base = "gen.b" + std::to_string(b);
    auto s_v = hma(p, base + ".v", ctx, f_v_spe, f_va);
    auto s_a = hma(p, base + ".a", ctx, f_a_spe, f_va);
    auto branch_v = prelu_layer(p, base + ".v.conv.act", affine(p, base + ".v.conv", s_v));
    auto branch_a = prelu_layer(p, base + ".a.conv.act", affine(p, base + ".a.conv", s_a));
    f_va = norm(p, base + ".norm", add(f_va, add(branch_v, branch_a)));
  }
  return f_va;
}

}  // namespace mirgan
