#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mirgan/autodiff.hpp"

#include <cmath>
#include <vector>

using namespace mirgan;

namespace {

Matrix<double> rand_mat(std::uint64_t seed, Index r, Index c, double sd = 1.0) {
  Rng rng(seed);
  return random_matrix<double>(rng, r, c, sd);
}

}  // namespace

TEST_CASE("matmul forward basics") {
  Tape<double> t;
  Matrix<double> a(2, 2);
  a << 1, 2, 3, 4;
  auto va = t.leaf(a);
  auto id = t.leaf(Matrix<double>::Identity(2, 2));
  auto c = matmul(va, id);
  CHECK(c.value() == a);

  Matrix<double> b(2, 2), p(2, 2);
  b << 1, 0, 0, 0;
  p << 0, 1, 1, 0;
  auto r = matmul(t.leaf(b), t.leaf(p));
  Matrix<double> expect(2, 2);
  expect << 0, 1, 0, 0;
  CHECK(r.value() == expect);

  CHECK_THROWS_AS(matmul(t.leaf(rand_mat(1, 2, 3)), t.leaf(rand_mat(2, 2, 3))), DimensionError);
}

TEST_CASE("matmul gradient vs central differences") {
  auto rep = grad_check(
      [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
        return sum_all(sigmoid(matmul(in[0], in[1])));
      },
      {rand_mat(11, 3, 4), rand_mat(12, 4, 2)});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("elementwise forward anchors") {
  Tape<double> t;
  auto z = t.scalar_leaf(0.0);
  CHECK(sigmoid(z).scalar() == doctest::Approx(0.5).epsilon(1e-15));

  Matrix<double> x(1, 1), alpha(1, 1);
  x << -2.0;
  alpha << 0.25;
  CHECK(prelu(t.leaf(x), t.leaf(alpha)).scalar() == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("mul with a 0/1 mask zeroes entries and gates gradient flow") {
  Tape<double> t;
  Matrix<double> mask(2, 3);
  mask << 1, 0, 1, 0, 1, 0;
  auto x = t.leaf(rand_mat(21, 2, 3), true);
  auto m = t.leaf(mask);
  auto y = mul(x, m);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 3; ++j)
      CHECK(y.value()(i, j) == (mask(i, j) == 1.0 ? x.value()(i, j) : 0.0));
  t.backward(sum_all(y));
  CHECK(x.grad() == mask);
}

TEST_CASE("concat_cols contract") {
  Tape<double> t;
  auto a = t.leaf(rand_mat(31, 4, 2));
  auto b = t.leaf(rand_mat(32, 4, 3));
  auto c = concat_cols<double>({a, b});
  CHECK(c.rows() == 4);
  CHECK(c.cols() == 5);
  CHECK(c.value().leftCols(2) == a.value());
  CHECK(c.value().rightCols(3) == b.value());

  auto single = concat_cols<double>({a});
  CHECK(single.value() == a.value());

  auto short_rows = t.leaf(rand_mat(33, 3, 2));
  CHECK_THROWS_AS(concat_cols<double>({a, short_rows}), DimensionError);
}

TEST_CASE("gradient of sum over concat equals gradient of sum over parts") {
  // Finite-difference oracle on the concatenated objective.
  auto rep = grad_check(
      [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
        return sum_all(sigmoid(concat_cols<double>({in[0], in[1]})));
      },
      {rand_mat(41, 3, 2), rand_mat(42, 3, 4)});
  CHECK(rep.max_rel_err < 1e-6);

  // And the split rule itself: d(sum)/d(part) is all-ones on each part.
  Tape<double> t;
  auto a = t.leaf(rand_mat(43, 3, 2), true);
  auto b = t.leaf(rand_mat(44, 3, 4), true);
  t.backward(sum_all(concat_cols<double>({a, b})));
  CHECK(a.grad() == Matrix<double>::Ones(3, 2));
  CHECK(b.grad() == Matrix<double>::Ones(3, 4));
}

TEST_CASE("softmax_rows: symmetry, overflow guard, row sums") {
  Tape<double> t;
  Matrix<double> eq(1, 3);
  eq << 7.5, 7.5, 7.5;
  auto y = softmax_rows(t.leaf(eq));
  for (Index j = 0; j < 3; ++j) CHECK(y.value()(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Matrix<double> big(1, 2);
  big << 0.0, 1000.0;
  auto yb = softmax_rows(t.leaf(big));
  CHECK(std::isfinite(yb.value()(0, 0)));
  CHECK(yb.value()(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(yb.value()(0, 1) == doctest::Approx(1.0).epsilon(1e-12));

  auto r = softmax_rows(t.leaf(rand_mat(51, 4, 5, 2.0)));
  for (Index i = 0; i < 4; ++i) {
    CHECK(r.value().row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.value().row(i).minCoeff() > 0.0);
  }

  auto rep = grad_check(
      [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
        return sum_all(mul(softmax_rows(in[0]), in[1]));
      },
      {rand_mat(52, 4, 5), rand_mat(53, 4, 5)});
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("layer_norm: constant row, moments, gradient") {
  Tape<double> t;
  auto gamma = t.leaf(Matrix<double>::Ones(1, 6));
  auto beta = t.leaf(Matrix<double>::Zero(1, 6));

  auto y0 = layer_norm(t.leaf(Matrix<double>::Constant(2, 6, 3.7)), gamma, beta);
  CHECK(y0.value().cwiseAbs().maxCoeff() < 1e-9);

  auto y = layer_norm(t.leaf(rand_mat(61, 5, 6, 2.0)), gamma, beta);
  for (Index i = 0; i < 5; ++i) {
    double mean = y.value().row(i).mean();
    double var = (y.value().row(i).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-6);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }

  auto rep = grad_check(
      [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
        return sum_all(sigmoid(layer_norm(in[0], in[1], in[2])));
      },
      {rand_mat(62, 4, 6), rand_mat(63, 1, 6, 0.3), rand_mat(64, 1, 6, 0.3)});
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("cosine_rows: identity, orthogonality, scale invariance") {
  Tape<double> t;
  auto a = t.leaf(rand_mat(71, 3, 5));
  auto self_sim = cosine_rows(a, a);
  for (Index i = 0; i < 3; ++i) CHECK(self_sim.value()(i, i) == doctest::Approx(1.0).epsilon(1e-12));

  Matrix<double> u(1, 2), v(1, 2);
  u << 1, 0;
  v << 0, 2;
  CHECK(cosine_rows(t.leaf(u), t.leaf(v)).scalar() == doctest::Approx(0.0).epsilon(1e-15));

  Matrix<double> scaled = a.value();
  scaled.row(1) *= 5.0;
  auto b = t.leaf(rand_mat(72, 4, 5));
  auto s1 = cosine_rows(a, b);
  auto s2 = cosine_rows(t.leaf(scaled), b);
  CHECK((s1.value() - s2.value()).cwiseAbs().maxCoeff() < 1e-6);

  for (Index i = 0; i < s1.rows(); ++i)
    for (Index j = 0; j < s1.cols(); ++j) {
      CHECK(s1.value()(i, j) >= -1.0 - 1e-9);
      CHECK(s1.value()(i, j) <= 1.0 + 1e-9);
    }
}

TEST_CASE("cosine_rows gradient") {
  auto rep = grad_check(
      [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
        return sum_all(mul(cosine_rows(in[0], in[1]), in[2]));
      },
      {rand_mat(81, 3, 4), rand_mat(82, 5, 4), rand_mat(83, 3, 5)});
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("cross_entropy anchors and direct-evaluation oracle") {
  Tape<double> t;
  auto uniform = t.leaf(Matrix<double>::Constant(3, 16, 0.42));
  CHECK(cross_entropy(uniform, {0, 5, 15}).scalar() ==
        doctest::Approx(std::log(16.0)).epsilon(1e-12));

  Matrix<double> hot = rand_mat(91, 2, 8);
  hot(0, 3) += 100.0;
  hot(1, 6) += 100.0;
  CHECK(cross_entropy(t.leaf(hot), {3, 6}).scalar() < 1e-8);

  // Direct per-frame -log(softmax) evaluation, independent of the log-sum-exp path.
  Matrix<double> z = rand_mat(92, 5, 7, 2.0);
  std::vector<int> labels = {1, 0, 6, 3, 2};
  double direct = 0.0;
  for (Index i = 0; i < 5; ++i) {
    double denom = z.row(i).array().exp().sum();
    direct += -std::log(std::exp(z(i, labels[static_cast<size_t>(i)])) / denom);
  }
  direct /= 5.0;
  CHECK(cross_entropy(t.leaf(z), labels).scalar() == doctest::Approx(direct).epsilon(1e-8));

  CHECK_THROWS_AS(cross_entropy(t.leaf(z), {1, 0, 6, 3, 99}), InputError);
  CHECK_THROWS_AS(cross_entropy(t.leaf(z), {1, 0}), InputError);
}

TEST_CASE("backward: linearity, detach, composition") {
  Tape<double> t;
  auto x = t.leaf(rand_mat(101, 3, 4), true);
  t.backward(sum_all(x));
  CHECK(x.grad() == Matrix<double>::Ones(3, 4));

  // Detached subgraph receives no gradient.
  Tape<double> t2;
  auto p = t2.leaf(rand_mat(102, 2, 2), true);
  auto q = t2.leaf(rand_mat(103, 2, 2), true);
  auto blocked = detach(matmul(p, q));
  auto loss = sum_all(add(blocked, matmul(p, q)));
  t2.backward(loss);
  // p's gradient comes only from the live branch.
  Tape<double> t3;
  auto p3 = t3.leaf(p.value(), true);
  auto q3 = t3.leaf(q.value(), true);
  t3.backward(sum_all(matmul(p3, q3)));
  CHECK(p.grad() == p3.grad());
  CHECK(q.grad() == q3.grad());

  auto rep = grad_check(
      [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
        return sum_all(sigmoid(matmul(in[0], in[1])));
      },
      {rand_mat(104, 2, 3), rand_mat(105, 3, 2)});
  CHECK(rep.max_rel_err < 1e-4);

  auto non_scalar = t.leaf(rand_mat(106, 2, 2), true);
  CHECK_THROWS_AS(t.backward(non_scalar), UsageError);
}

TEST_CASE("detach boundary deposits exactly zero gradient upstream") {
  Tape<double> t;
  auto x = t.leaf(rand_mat(111, 3, 3), true);
  auto y = detach(sigmoid(x));
  t.backward(sum_all(mul(y, y)));
  CHECK_FALSE(t.has_grad(x.id));
}

TEST_CASE("grad_check on a linear map is exact to roundoff") {
  auto rep = grad_check(
      [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
        return sum_all(scale(in[0], 3.0));
      },
      {rand_mat(121, 3, 3, 0.5)});
  CHECK(rep.max_rel_err < 1e-9);
}

TEST_CASE("every primitive passes grad_check on 5 random shapes/seeds") {
  for (std::uint64_t s = 1; s <= 5; ++s) {
    Rng shapes(s * 977);
    Index m = 2 + static_cast<Index>(shapes.uniform_int(4));
    Index k = 2 + static_cast<Index>(shapes.uniform_int(4));
    Index n = 2 + static_cast<Index>(shapes.uniform_int(4));

    auto check = [&](const char* name, auto builder, std::vector<Matrix<double>> inputs) {
      auto rep = grad_check(builder, std::move(inputs));
      INFO(name << " seed " << s << " rel err " << rep.max_rel_err);
      CHECK(rep.max_rel_err < 1e-4);
    };

    check("matmul",
          [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
            return sum_all(matmul(in[0], in[1]));
          },
          {rand_mat(s, m, k), rand_mat(s + 50, k, n)});
    check("add/sub/mul/negate/scale",
          [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
            auto v = scale(negate(mul(sub(in[0], in[1]), add(in[0], in[1]))), 0.7);
            return sum_all(v);
          },
          {rand_mat(s + 100, m, n), rand_mat(s + 150, m, n)});
    check("sigmoid/exp/log/softplus",
          [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
            auto pos = expv(in[0]);  // strictly positive input for log
            return sum_all(add(logv(pos), add(sigmoid(in[0]), softplus(in[0]))));
          },
          {rand_mat(s + 200, m, n)});
    // Inputs bounded away from the PReLU kink so central differences stay valid.
    {
      Matrix<double> x = rand_mat(s + 250, m, n);
      x = x.unaryExpr([](double v) { return std::abs(v) < 0.2 ? v + 0.5 : v; });
      check("prelu",
            [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
              return sum_all(prelu(in[0], in[1]));
            },
            {x, rand_mat(s + 260, 1, n, 0.4)});
    }
    check("transpose/slice/add_row_bias",
          [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
            auto y = add_row_bias(transpose(in[0]), in[1]);
            return sum_all(slice_cols(y, 0, 2));
          },
          {rand_mat(s + 300, m, n), rand_mat(s + 350, 1, m, 0.3)});
    check("softmax_rows",
          [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
            return sum_all(mul(softmax_rows(in[0]), in[1]));
          },
          {rand_mat(s + 400, m, n), rand_mat(s + 450, m, n)});
    check("layer_norm",
          [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
            return sum_all(sigmoid(layer_norm(in[0], in[1], in[2])));
          },
          {rand_mat(s + 500, m, std::max<Index>(n, 2)),
           rand_mat(s + 550, 1, std::max<Index>(n, 2), 0.3),
           rand_mat(s + 560, 1, std::max<Index>(n, 2), 0.3)});
    check("cosine_rows",
          [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
            return sum_all(mul(cosine_rows(in[0], in[1]), in[2]));
          },
          {rand_mat(s + 600, m, k), rand_mat(s + 650, n, k), rand_mat(s + 660, m, n)});
    check("cross_entropy",
          [n](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
            std::vector<int> labels;
            for (Index i = 0; i < in[0].rows(); ++i)
              labels.push_back(static_cast<int>(i % in[0].cols()));
            return cross_entropy(in[0], labels);
          },
          {rand_mat(s + 700, m, n)});
    check("concat/sum",
          [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
            return mean_all(sigmoid(concat_cols<double>({in[0], in[1]})));
          },
          {rand_mat(s + 800, m, k), rand_mat(s + 850, m, n)});
  }
}

TEST_CASE("a sabotaged backward rule is caught by grad_check") {
  auto broken_scale = [](Tape<double>& t [[maybe_unused]], const std::vector<Var<double>>& in) {
    Matrix<double> v = in[0].value() * 2.0;
    auto bad = t.push(std::move(v), true,
                      [ai = in[0].id](Tape<double>& t, int self) {
                        t.accumulate(ai, t.grad(self) * 3.0);  // wrong rule
                      },
                      "broken_scale");
    return sum_all(bad);
  };
  auto rep = grad_check(broken_scale, {rand_mat(131, 2, 2)});
  CHECK(rep.max_rel_err > 1e-2);
}

TEST_CASE("non-finite values are rejected at op boundaries") {
  Tape<double> t;
  Matrix<double> bad(1, 2);
  bad << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(t.leaf(bad), NumericError);

  Matrix<double> zero(1, 1);
  zero << 0.0;
  CHECK_THROWS_AS(logv(t.leaf(zero)), DomainError);

  // exp overflow trips the guard.
  Matrix<double> huge(1, 1);
  huge << 1e4;
  CHECK_THROWS_AS(expv(t.leaf(huge)), NumericError);
}

TEST_CASE("float instantiation works for training precision") {
  Tape<float> t;
  auto a = t.leaf(Matrix<float>::Constant(2, 3, 0.5f), true);
  auto b = t.leaf(Matrix<float>::Constant(3, 2, 0.25f), true);
  auto loss = mean_all(sigmoid(matmul(a, b)));
  t.backward(loss);
  CHECK(t.has_grad(a.id));
  CHECK(t.has_grad(b.id));
}
