#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mirgan/recognition.hpp"

using namespace mirgan;

namespace {

constexpr ForwardCtx kEval{2, 0.0, false, nullptr};

Matrix<double> rnd(std::uint64_t seed, Index r, Index c, double sd = 1.0) {
  Rng rng(seed);
  return random_matrix<double>(rng, r, c, sd);
}

void set_param(ParamStore& s, const std::string& name, const Matrix<float>& v) {
  auto& e = s.entry(s.index(name));
  REQUIRE(e.value.rows() == v.rows());
  REQUIRE(e.value.cols() == v.cols());
  e.value = v;
}

}  // namespace

TEST_CASE("recognizer produces T x C logits from three feature streams") {
  ParamStore s(1);
  register_recognizer(s, {24, 8, 16, 2, 5});
  Tape<double> tape;
  Binding<double> p(tape, s, Trainable::None);
  auto logits = recognize(
      p, kEval, {tape.leaf(rnd(2, 6, 8)), tape.leaf(rnd(3, 6, 8)), tape.leaf(rnd(4, 6, 8))},
      2);
  CHECK(logits.rows() == 6);
  CHECK(logits.cols() == 5);
}

TEST_CASE("zero head weights collapse logits onto the head bias") {
  ParamStore s(5);
  register_recognizer(s, {24, 8, 16, 1, 5});
  set_param(s, "rec.out.w", Matrix<float>::Zero(8, 5));
  Matrix<float> bias(1, 5);
  bias << 0.1f, -0.2f, 0.3f, -0.4f, 0.5f;
  set_param(s, "rec.out.b", bias);

  Tape<double> tape;
  Binding<double> p(tape, s, Trainable::None);
  auto logits = recognize(
      p, kEval, {tape.leaf(rnd(6, 4, 8)), tape.leaf(rnd(7, 4, 8)), tape.leaf(rnd(8, 4, 8))},
      1);
  for (Index i = 0; i < 4; ++i)
    CHECK((logits.value().row(i) - bias.cast<double>()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("token error rate counts argmax misses") {
  Matrix<double> logits(4, 3);
  logits << 5.0, 1.0, 0.0,   // argmax 0
            0.0, 2.0, 1.0,   // argmax 1
            0.0, 1.0, 9.0,   // argmax 2
            3.0, 2.0, 1.0;   // argmax 0
  CHECK(token_error_rate(logits, {0, 1, 2, 0}) == 0.0);
  CHECK(token_error_rate(logits, {1, 1, 2, 0}) == 0.25);
  CHECK(token_error_rate(logits, {1, 0, 0, 1}) == 1.0);
  CHECK(frame_errors(logits, {0, 1, 2, 1}) == 1);

  CHECK_THROWS_AS(token_error_rate(logits, {0, 1}), InputError);
  CHECK_THROWS_AS(token_error_rate(Matrix<double>(), {}), InputError);
}

TEST_CASE("token error rate is invariant to per-row logit shifts") {
  const Matrix<double> logits = rnd(9, 50, 7);
  std::vector<int> labels;
  Rng rng(10);
  for (int i = 0; i < 50; ++i) labels.push_back(int(rng.uniform_int(7)));
  const double base = token_error_rate(logits, labels);

  Matrix<double> shifted = logits;
  for (Index i = 0; i < shifted.rows(); ++i)
    shifted.row(i).array() += double(i) * 0.37 - 3.0;
  CHECK(token_error_rate(shifted, labels) == base);
}

TEST_CASE("random logits over C classes miss at the chance rate") {
  // Monte-Carlo oracle: argmax of iid logits is uniform, so the expected TER
  // is (C-1)/C. With 4000 frames the standard error is about 0.004.
  const int c = 16;
  const int frames = 4000;
  const Matrix<double> logits = rnd(11, frames, c);
  std::vector<int> labels;
  Rng rng(12);
  for (int i = 0; i < frames; ++i) labels.push_back(int(rng.uniform_int(c)));
  const double ter = token_error_rate(logits, labels);
  CHECK(std::abs(ter - 15.0 / 16.0) < 0.05);
}

TEST_CASE("modality parsing round-trips and rejects junk") {
  CHECK(parse_modality("AV") == Modality::AV);
  CHECK(parse_modality("A") == Modality::A);
  CHECK(parse_modality("V") == Modality::V);
  CHECK(std::string(modality_name(Modality::A)) == "A");
  CHECK_THROWS_AS(parse_modality("audio"), ConfigError);
}

TEST_CASE("single-modality masks zero exactly one stream") {
  Tape<double> tape;
  auto f_v = tape.leaf(rnd(13, 4, 8));
  auto f_a = tape.leaf(rnd(14, 4, 8));

  auto both = single_modality_mask(Modality::AV, f_v, f_a);
  CHECK(both.first.value() == f_v.value());
  CHECK(both.second.value() == f_a.value());

  auto audio_only = single_modality_mask(Modality::A, f_v, f_a);
  CHECK(audio_only.first.value().isZero(0.0));
  CHECK(audio_only.second.value() == f_a.value());

  auto visual_only = single_modality_mask(Modality::V, f_v, f_a);
  CHECK(visual_only.first.value() == f_v.value());
  CHECK(visual_only.second.value().isZero(0.0));
}

TEST_CASE("recognizer gradient check at T=4") {
  ParamStore s(15);
  register_recognizer(s, {24, 8, 16, 1, 5});
  std::vector<Matrix<double>> inputs;
  for (const auto& e : s.entries()) inputs.push_back(e.value.cast<double>());
  const std::size_t np = s.size();
  inputs.push_back(rnd(16, 4, 8));
  inputs.push_back(rnd(17, 4, 8));
  inputs.push_back(rnd(18, 4, 8));

  auto rep = grad_check(
      [&](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
        std::vector<Var<double>> params(in.begin(), in.begin() + std::ptrdiff_t(np));
        Binding<double> b(s, params);
        auto logits = recognize(b, kEval, {in[np], in[np + 1], in[np + 2]}, 1);
        return cross_entropy(logits, {0, 3, 1, 4});
      },
      std::move(inputs));
  CHECK(rep.max_rel_err < 1e-4);
}
