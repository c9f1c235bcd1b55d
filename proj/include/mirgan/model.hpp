#pragma once

// Ties the modules into one architecture and owns the parameter store.
// Ablation variants reshape the pipeline at registration time: encoder depth
// or generator depth drop to zero, the discriminator disappears, or the
// recognizer's fusion input narrows. Parameter init derives from
// hash(seed, name), so shared modules start identically across variants.

#include "mirgan/adversary.hpp"
#include "mirgan/mim.hpp"
#include "mirgan/mirgen.hpp"
#include "mirgan/recognition.hpp"

#include <memory>

namespace mirgan {

enum class AblationMode {
  Full,
  NoInvariant,
  NoSpecific,
  NoEncoders,
  NoGenerator,
  NoDiscriminator,
  NoAdversarial,
  NoMim,
};

inline const char* ablation_name(AblationMode m) {
  switch (m) {
    case AblationMode::Full: return "full";
    case AblationMode::NoInvariant: return "no_invariant";
    case AblationMode::NoSpecific: return "no_specific";
    case AblationMode::NoEncoders: return "no_encoders";
    case AblationMode::NoGenerator: return "no_generator";
    case AblationMode::NoDiscriminator: return "no_discriminator";
    case AblationMode::NoAdversarial: return "no_adversarial";
    case AblationMode::NoMim: return "no_mim";
  }
  return "full";
}

inline AblationMode parse_ablation(const std::string& s) {
  for (AblationMode m : {AblationMode::Full, AblationMode::NoInvariant,
                         AblationMode::NoSpecific, AblationMode::NoEncoders,
                         AblationMode::NoGenerator, AblationMode::NoDiscriminator,
                         AblationMode::NoAdversarial, AblationMode::NoMim})
    if (s == ablation_name(m)) return m;
  throw ConfigError("unknown ablation mode '" + s + "'");
}

inline const AblationMode kAllAblations[] = {
    AblationMode::Full,         AblationMode::NoInvariant,
    AblationMode::NoSpecific,   AblationMode::NoEncoders,
    AblationMode::NoGenerator,  AblationMode::NoDiscriminator,
    AblationMode::NoAdversarial, AblationMode::NoMim,
};

struct ModelConfig {
  int d_model = 32;
  int n_heads = 4;
  int d_ffn = 64;
  int n_encoder_layers = 3;
  int n_generator_blocks = 3;
  int n_recognizer_layers = 2;
  int disc_hidden = 0;  // 0 means d_model / 2
  double dropout = 0.1;
  bool positional_encoding = false;
  bool disc_hidden_act = true;

  int disc_hidden_resolved() const { return disc_hidden > 0 ? disc_hidden : d_model / 2; }

  void validate() const {
    if (d_model < 1 || d_ffn < 1) throw ConfigError("model: dims must be >= 1");
    if (n_heads < 1 || d_model % n_heads != 0)
      throw ConfigError("model: d_model must be a positive multiple of n_heads");
    if (n_encoder_layers < 0 || n_generator_blocks < 0 || n_recognizer_layers < 0)
      throw ConfigError("model: layer counts must be >= 0");
    if (disc_hidden < 0) throw ConfigError("model: disc_hidden must be >= 0");
    if (disc_hidden_resolved() < 1)
      throw ConfigError("model: resolved discriminator hidden width must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0,1)");
  }
};

struct DataDims {
  Index d_v_raw;
  Index d_a_raw;
  Index n_classes;
};

class Model {
 public:
  Model(const ModelConfig& cfg, const DataDims& data, AblationMode mode,
        std::uint64_t seed)
      : cfg_(cfg), data_(data), mode_(mode), store_(seed) {
    cfg_.validate();
    if (data.d_v_raw < 1 || data.d_a_raw < 1 || data.n_classes < 2)
      throw ConfigError("model: invalid data dims");

    register_towers(store_, {data_.d_v_raw, data_.d_a_raw, cfg_.d_model, cfg_.d_ffn,
                             encoder_layers()});
    register_generator(store_, {cfg_.d_model, generator_blocks()});
    if (has_discriminator())
      register_discriminator(store_, {cfg_.d_model, cfg_.disc_hidden_resolved(),
                                      cfg_.disc_hidden_act});
    register_recognizer(store_, {fusion_width(), cfg_.d_model, cfg_.d_ffn,
                                 cfg_.n_recognizer_layers, data_.n_classes});
  }

  const ModelConfig& config() const { return cfg_; }
  const DataDims& data_dims() const { return data_; }
  AblationMode ablation() const { return mode_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  bool has_discriminator() const { return mode_ != AblationMode::NoDiscriminator; }
  bool adversarial_training() const {
    return has_discriminator() && mode_ != AblationMode::NoAdversarial;
  }
  int encoder_layers() const {
    return mode_ == AblationMode::NoEncoders ? 0 : cfg_.n_encoder_layers;
  }
  int generator_blocks() const {
    return mode_ == AblationMode::NoGenerator ? 0 : cfg_.n_generator_blocks;
  }

  Index fusion_width() const {
    switch (mode_) {
      case AblationMode::NoInvariant: return 2 * cfg_.d_model;
      case AblationMode::NoSpecific: return cfg_.d_model;
      default: return 3 * cfg_.d_model;
    }
  }

  ForwardCtx make_ctx(bool training, Rng* rng) const {
    return ForwardCtx{cfg_.n_heads, cfg_.dropout, training, rng};
  }

  template <typename Scalar>
  struct Forward {
    Var<Scalar> f_v_spe;
    Var<Scalar> f_a_spe;
    Var<Scalar> f_inv;
    Var<Scalar> logits;  // T x n_classes
  };

  // Full pipeline on one utterance. x_v, x_a are leaves on the caller's tape.
  template <typename Scalar>
  Forward<Scalar> forward(Binding<Scalar>& p, const ForwardCtx& ctx, Var<Scalar> x_v,
                          Var<Scalar> x_a, Modality modality = Modality::AV) const {
    auto f_v = visual_frontend(p, x_v);
    auto f_a = audio_frontend(p, x_a);
    if (cfg_.positional_encoding) {
      auto pos = x_v.tape->leaf(sinusoidal_positions<Scalar>(f_v.rows(), f_v.cols()));
      f_v = add(f_v, pos);
      f_a = add(f_a, pos);
    }
    std::tie(f_v, f_a) = single_modality_mask(modality, f_v, f_a);

    auto [f_v_spe, f_a_spe] = encode(p, ctx, f_v, f_a, encoder_layers());
    auto f_va = fuse_query(p, f_v, f_a);
    auto f_inv = generate(p, ctx, f_v_spe, f_a_spe, f_va, generator_blocks());

    std::vector<Var<Scalar>> features;
    switch (mode_) {
      case AblationMode::NoInvariant: features = {f_v_spe, f_a_spe}; break;
      case AblationMode::NoSpecific: features = {f_inv}; break;
      default: features = {f_v_spe, f_a_spe, f_inv}; break;
    }
    auto logits = recognize(p, ctx, features, cfg_.n_recognizer_layers);
    return {f_v_spe, f_a_spe, f_inv, logits};
  }

  template <typename Scalar>
  Var<Scalar> disc_logits(Binding<Scalar>& p, Var<Scalar> f) const {
    if (!has_discriminator())
      throw UsageError("discriminator queried under no_discriminator ablation");
    return discriminate(p, f, cfg_.disc_hidden_act);
  }

 private:
  ModelConfig cfg_;
  DataDims data_;
  AblationMode mode_;
  ParamStore store_;
};

}  // namespace mirgan
