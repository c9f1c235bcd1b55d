#pragma once

// Downstream per-frame recognizer: concatenated features -> fusion affine ->
// a small self-attention encoder stack -> class logits. Also the token error
// rate used for all evaluation reporting, and the eval-time single-modality
// masking that replaces a missing stream with zero embeddings.

#include "mirgan/towers.hpp"

#include <vector>

namespace mirgan {

enum class Modality { AV, A, V };

inline Modality parse_modality(const std::string& s) {
  if (s == "AV") return Modality::AV;
  if (s == "A") return Modality::A;
  if (s == "V") return Modality::V;
  throw ConfigError("modality must be one of AV, A, V (got '" + s + "')");
}

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::AV: return "AV";
    case Modality::A: return "A";
    case Modality::V: return "V";
  }
  return "AV";
}

struct RecognizerDims {
  Index fusion_in;  // concatenated feature width, depends on ablation
  Index d_model;
  Index d_ffn;
  int n_layers;
  Index n_classes;
};

inline void register_recognizer(ParamStore& s, const RecognizerDims& dims) {
  register_affine(s, "rec.fuse", dims.fusion_in, dims.d_model);
  for (int l = 0; l < dims.n_layers; ++l) {
    const std::string base = "rec.l" + std::to_string(l);
    register_mha(s, base + ".self", dims.d_model);
    register_ffn(s, base + ".ffn", dims.d_model, dims.d_ffn);
    register_norm(s, base + ".n1", dims.d_model);
    register_norm(s, base + ".n2", dims.d_model);
  }
  register_affine(s, "rec.out", dims.d_model, dims.n_classes);
}

// features: the streams to concatenate, in fixed order; their combined width
// must equal the registered fusion width.
template <typename Scalar>
Var<Scalar> recognize(Binding<Scalar>& p, const ForwardCtx& ctx,
                      const std::vector<Var<Scalar>>& features, int n_layers) {
  auto x = affine(p, "rec.fuse", concat_cols<Scalar>(features));
  for (int l = 0; l < n_layers; ++l) {
    const std::string base = "rec.l" + std::to_string(l);
    auto sx = norm(p, base + ".n1", add(x, ctx.drop(mha(p, base + ".self", x, x, x, ctx.n_heads))));
    x = norm(p, base + ".n2", add(sx, ctx.drop(ffn(p, base + ".ffn", sx))));
  }
  return affine(p, "rec.out", x);
}

// Count of frames whose argmax misses the label. Ties resolve to the lowest
// class index, matching Eigen's maxCoeff scan order.
template <typename Scalar>
int frame_errors(const Matrix<Scalar>& logits, const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != logits.rows())
    throw InputError("token_error_rate: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(logits.rows()) + " frames");
  int errors = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    logits.row(i).maxCoeff(&best);
    if (static_cast<int>(best) != labels[static_cast<std::size_t>(i)]) ++errors;
  }
  return errors;
}

template <typename Scalar>
double token_error_rate(const Matrix<Scalar>& logits, const std::vector<int>& labels) {
  if (logits.rows() == 0) throw InputError("token_error_rate: empty logits");
  return static_cast<double>(frame_errors(logits, labels)) /
         static_cast<double>(logits.rows());
}

// Zeroes the missing modality's front-end output; AV passes both through.
template <typename Scalar>
std::pair<Var<Scalar>, Var<Scalar>> single_modality_mask(Modality mode, Var<Scalar> f_v,
                                                         Var<Scalar> f_a) {
  if (mode == Modality::A)
    f_v = f_v.tape->leaf(Matrix<Scalar>::Zero(f_v.rows(), f_v.cols()));
  else if (mode == Modality::V)
    f_a = f_a.tape->leaf(Matrix<Scalar>::Zero(f_a.rows(), f_a.cols()));
  return {f_v, f_a};
}

}  // namespace mirgan
