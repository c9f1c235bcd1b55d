// Finite-difference verification command. Three scopes: "ops" checks every
// autodiff primitive, "modules" checks each composed stage against its own
// parameter store, "full" drives the complete two-utterance training
// objective through a small model. Everything runs at 64-bit with central
// differences; any max relative error at or above 1e-4 fails the run.

#include "mirgan/commands.hpp"
#include "mirgan/mim.hpp"
#include "mirgan/model.hpp"

#include <cstdio>
#include <iostream>
#include <vector>

namespace mirgan {

namespace {

constexpr double kTol = 1e-4;

struct CheckResult {
  std::string name;
  double err;
};

Matrix<double> rnd(std::uint64_t seed, Index r, Index c, double sd = 1.0) {
  Rng rng(seed);
  return random_matrix<double>(rng, r, c, sd);
}

using Builder =
    std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

void run_check(std::vector<CheckResult>& out, const std::string& name, Builder fn,
               std::vector<Matrix<double>> inputs) {
  auto rep = grad_check(fn, std::move(inputs));
  out.push_back({name, rep.max_rel_err});
}

// Checks a composed map against all parameters in a store plus free feature
// inputs: store tensors come first in the finite-difference input list.
template <typename Fn>
void run_store_check(std::vector<CheckResult>& out, const std::string& name,
                     const ParamStore& store, std::vector<Matrix<double>> features,
                     Fn fn) {
  std::vector<Matrix<double>> inputs;
  inputs.reserve(store.size() + features.size());
  for (const auto& e : store.entries()) inputs.push_back(e.value.cast<double>());
  const std::size_t np = store.size();
  for (auto& f : features) inputs.push_back(std::move(f));

  auto rep = grad_check(
      [&store, np, fn](Tape<double>& t, const std::vector<Var<double>>& in) {
        std::vector<Var<double>> params(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(np));
        Binding<double> b(store, params);
        std::vector<Var<double>> feats(in.begin() + static_cast<std::ptrdiff_t>(np), in.end());
        return fn(t, b, feats);
      },
      std::move(inputs));
  out.push_back({name, rep.max_rel_err});
}

void scope_ops(std::vector<CheckResult>& out) {
  run_check(out, "matmul",
            [](Tape<double>&, const std::vector<Var<double>>& in) {
              return sum_all(matmul(in[0], in[1]));
            },
            {rnd(1, 3, 4), rnd(2, 4, 2)});
  run_check(out, "add/sub/mul/negate/scale",
            [](Tape<double>&, const std::vector<Var<double>>& in) {
              return sum_all(scale(negate(mul(sub(in[0], in[1]), add(in[0], in[1]))), 0.7));
            },
            {rnd(3, 3, 3), rnd(4, 3, 3)});
  run_check(out, "sigmoid/softplus",
            [](Tape<double>&, const std::vector<Var<double>>& in) {
              return sum_all(add(sigmoid(in[0]), softplus(in[0])));
            },
            {rnd(5, 3, 4, 2.0)});
  run_check(out, "exp/log",
            [](Tape<double>&, const std::vector<Var<double>>& in) {
              return sum_all(logv(expv(in[0])));
            },
            {rnd(6, 3, 3)});
  run_check(out, "prelu",
            [](Tape<double>&, const std::vector<Var<double>>& in) {
              return sum_all(prelu(in[0], in[1]));
            },
            {rnd(7, 4, 5).unaryExpr([](double v) { return std::abs(v) < 0.2 ? v + 0.5 : v; }),
             rnd(8, 1, 5, 0.4)});
  run_check(out, "transpose/slice/add_row_bias",
            [](Tape<double>&, const std::vector<Var<double>>& in) {
              return sum_all(slice_cols(add_row_bias(transpose(in[0]), in[1]), 0, 2));
            },
            {rnd(9, 3, 4), rnd(10, 1, 3, 0.3)});
  run_check(out, "softmax_rows",
            [](Tape<double>&, const std::vector<Var<double>>& in) {
              return sum_all(mul(softmax_rows(in[0]), in[1]));
            },
            {rnd(11, 4, 5), rnd(12, 4, 5)});
  run_check(out, "layer_norm",
            [](Tape<double>&, const std::vector<Var<double>>& in) {
              return sum_all(sigmoid(layer_norm(in[0], in[1], in[2])));
            },
            {rnd(13, 4, 6), rnd(14, 1, 6, 0.3), rnd(15, 1, 6, 0.3)});
  run_check(out, "cosine_rows",
            [](Tape<double>&, const std::vector<Var<double>>& in) {
              return sum_all(mul(cosine_rows(in[0], in[1]), in[2]));
            },
            {rnd(16, 3, 4), rnd(17, 5, 4), rnd(18, 3, 5)});
  run_check(out, "cross_entropy",
            [](Tape<double>&, const std::vector<Var<double>>& in) {
              return cross_entropy(in[0], {0, 2, 1, 3});
            },
            {rnd(19, 4, 4)});
  run_check(out, "concat_cols",
            [](Tape<double>&, const std::vector<Var<double>>& in) {
              return mean_all(sigmoid(concat_cols<double>({in[0], in[1]})));
            },
            {rnd(20, 3, 2), rnd(21, 3, 4)});
}

void scope_modules(std::vector<CheckResult>& out) {
  const ForwardCtx ctx{2, 0.0, false, nullptr};

  {
    ParamStore s(31);
    register_mha(s, "m", 8);
    run_store_check(out, "layers.mha", s, {rnd(32, 4, 8), rnd(33, 5, 8)},
                    [ctx](Tape<double>&, Binding<double>& b, const std::vector<Var<double>>& f) {
                      return mean_all(sigmoid(mha(b, "m", f[0], f[1], f[1], ctx.n_heads)));
                    });
  }
  {
    ParamStore s(34);
    register_towers(s, {5, 4, 8, 16, 2});
    run_store_check(out, "towers", s, {rnd(35, 4, 5), rnd(36, 4, 4)},
                    [ctx](Tape<double>&, Binding<double>& b, const std::vector<Var<double>>& f) {
                      auto f_v = visual_frontend(b, f[0]);
                      auto f_a = audio_frontend(b, f[1]);
                      auto enc = encode(b, ctx, f_v, f_a, 2);
                      return add(mean_all(sigmoid(enc.first)), mean_all(sigmoid(enc.second)));
                    });
  }
  {
    ParamStore s(37);
    register_generator(s, {8, 2});
    run_store_check(out, "mirgen", s, {rnd(38, 4, 8), rnd(39, 4, 8)},
                    [ctx](Tape<double>&, Binding<double>& b, const std::vector<Var<double>>& f) {
                      auto f_va = fuse_query(b, f[0], f[1]);
                      return mean_all(sigmoid(generate(b, ctx, f[0], f[1], f_va, 2)));
                    });
  }
  {
    ParamStore s(40);
    register_discriminator(s, {8, 4, true});
    run_store_check(out, "adversary", s, {rnd(41, 4, 8), rnd(42, 4, 8), rnd(43, 4, 8)},
                    [](Tape<double>&, Binding<double>& b, const std::vector<Var<double>>& f) {
                      return loss_gan_from_logits(discriminate(b, f[0], true),
                                                  discriminate(b, f[1], true),
                                                  discriminate(b, f[2], true));
                    });
  }
  run_check(out, "mim_loss",
            [](Tape<double>&, const std::vector<Var<double>>& in) {
              return mim_loss(in[0], in[1], in[2], 0.1);
            },
            {rnd(44, 4, 8), rnd(45, 4, 8), rnd(46, 4, 8)});
  {
    ParamStore s(47);
    register_recognizer(s, {24, 8, 16, 1, 5});
    run_store_check(out, "recognition", s, {rnd(48, 4, 8), rnd(49, 4, 8), rnd(50, 4, 8)},
                    [ctx](Tape<double>&, Binding<double>& b, const std::vector<Var<double>>& f) {
                      auto logits = recognize(b, ctx, {f[0], f[1], f[2]}, 1);
                      return cross_entropy(logits, {0, 3, 1, 4});
                    });
  }
}

void scope_full(std::vector<CheckResult>& out) {
  CorpusSpec spec;
  spec.seed = 3;
  spec.n_utterances = 2;
  spec.t_min = 3;
  spec.t_max = 4;
  spec.n_classes = 4;
  spec.latent_dim = 6;
  spec.d_v_raw = 6;
  spec.d_a_raw = 5;
  Corpus corpus = generate_corpus(spec);

  ModelConfig mc;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.d_ffn = 16;
  mc.n_encoder_layers = 1;
  mc.n_generator_blocks = 1;
  mc.n_recognizer_layers = 1;
  mc.disc_hidden = 4;
  mc.dropout = 0.0;
  Model model(mc, {spec.d_v_raw, spec.d_a_raw, spec.n_classes}, AblationMode::Full, 11);

  const double lambda_gan = 0.01, lambda_mim = 0.005, tau = 0.1;
  long total_frames = 0;
  for (const auto& u : corpus.utterances) total_frames += u.frames();

  std::vector<Matrix<double>> features;
  for (const auto& u : corpus.utterances) {
    features.push_back(u.visual.cast<double>());
    features.push_back(u.audio.cast<double>());
  }

  run_store_check(
      out, "full objective (2 utterances)", model.store(), std::move(features),
      [&](Tape<double>& t, Binding<double>& b, const std::vector<Var<double>>& f) {
        ForwardCtx ctx = model.make_ctx(false, nullptr);
        Var<double> loss = t.scalar_leaf(0.0);
        for (std::size_t u = 0; u < corpus.utterances.size(); ++u) {
          const Utterance& utt = corpus.utterances[u];
          const double w = double(utt.frames()) / double(total_frames);
          auto fwd = model.forward(b, ctx, f[2 * u], f[2 * u + 1]);
          loss = add(loss, scale(cross_entropy(fwd.logits, utt.labels), w));
          auto l_g = loss_g_from_logits(model.disc_logits(b, fwd.f_inv));
          loss = add(loss, scale(l_g, lambda_gan * w));
          auto l_mim = mim_loss(fwd.f_inv, fwd.f_v_spe, fwd.f_a_spe, tau);
          loss = add(loss, scale(l_mim, lambda_mim / double(corpus.utterances.size())));
        }
        return loss;
      });
}

}  // namespace

void cmd_gradcheck(const std::string& scope) {
  std::vector<CheckResult> results;
  if (scope == "ops") {
    scope_ops(results);
  } else if (scope == "modules") {
    scope_modules(results);
  } else if (scope == "full") {
    scope_full(results);
  } else {
    throw UsageError("gradcheck scope must be one of ops, modules, full (got '" +
                     scope + "')");
  }

  int failures = 0;
  std::printf("%-36s %-14s %s\n", "check", "max_rel_err", "result");
  for (const CheckResult& r : results) {
    const bool pass = r.err < kTol;
    if (!pass) ++failures;
    std::printf("%-36s %-14.3e %s\n", r.name.c_str(), r.err, pass ? "pass" : "FAIL");
  }
  if (failures > 0)
    throw NumericError(std::to_string(failures) + " of " +
                       std::to_string(results.size()) + " gradient checks failed");
  std::printf("all %zu checks passed\n", results.size());
}

}  // namespace mirgan
