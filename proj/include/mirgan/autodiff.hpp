#pragma once

// Reverse-mode automatic differentiation over dense 2-D tensors.
//
// A Tape owns every value produced during one forward pass; Var is a cheap
// handle (tape pointer + node id). Ops are free functions that append a node
// with a backward rule. One tape is one single-threaded unit of work;
// independent tapes may run on independent threads.

#include "mirgan/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace mirgan {

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix<Scalar>& value() const;
  const Matrix<Scalar>& grad() const;
  bool requires_grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar scalar() const;
};

template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  struct Node {
    Matrix<Scalar> value;
    Matrix<Scalar> grad;  // empty until backward touches it
    bool requires_grad = false;
    BackwardFn backward;  // empty for leaves and detached nodes
  };

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(Matrix<Scalar> value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr, "leaf");
  }

  Var<Scalar> scalar_leaf(Scalar v, bool requires_grad = false) {
    Matrix<Scalar> m(1, 1);
    m(0, 0) = v;
    return leaf(std::move(m), requires_grad);
  }

  // Building block for every op (and for deliberately broken ops in tests).
  Var<Scalar> push(Matrix<Scalar> value, bool requires_grad, BackwardFn backward,
                   std::string_view op_name) {
    require_finite(value, op_name);
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<Scalar>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix<Scalar>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Matrix<Scalar>& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  bool has_grad(int id) const { return nodes_[static_cast<size_t>(id)].grad.size() > 0; }

  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Reverse-topological sweep from a scalar loss. Populates .grad for every
  // reachable node that requires grad; detach boundaries stop propagation.
  void backward(Var<Scalar> loss) {
    if (!loss.valid() || loss.tape != this) throw UsageError("backward: loss not on this tape");
    const Matrix<Scalar>& lv = value(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw UsageError("backward: loss must be a 1x1 scalar tensor");
    }
    if (!requires_grad(loss.id)) return;  // nothing depends on parameters
    Matrix<Scalar> seed(1, 1);
    seed(0, 0) = Scalar(1);
    nodes_[static_cast<size_t>(loss.id)].grad = std::move(seed);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  void zero_grads() {
    for (Node& n : nodes_) n.grad.resize(0, 0);
  }

 private:
  std::vector<Node> nodes_;
};

template <typename Scalar>
const Matrix<Scalar>& Var<Scalar>::value() const {
  return tape->value(id);
}
template <typename Scalar>
const Matrix<Scalar>& Var<Scalar>::grad() const {
  return tape->grad(id);
}
template <typename Scalar>
bool Var<Scalar>::requires_grad() const {
  return tape->requires_grad(id);
}
template <typename Scalar>
Scalar Var<Scalar>::scalar() const {
  const Matrix<Scalar>& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw UsageError("scalar() on non-scalar tensor");
  return v(0, 0);
}

namespace detail {

template <typename Scalar>
Tape<Scalar>& same_tape(Var<Scalar> a, Var<Scalar> b) {
  if (a.tape != b.tape) throw UsageError("operands live on different tapes");
  return *a.tape;
}

inline std::string shape_str(Index r, Index c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, std::string_view op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                         " vs " + shape_str(b.rows(), b.cols()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Core ops
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = detail::same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions " + detail::shape_str(a.rows(), a.cols()) +
                         " * " + detail::shape_str(b.rows(), b.cols()));
  }
  Matrix<Scalar> c = a.value() * b.value();
  bool req = a.requires_grad() || b.requires_grad();
  return t.push(std::move(c), req,
                [ai = a.id, bi = b.id](Tape<Scalar>& t, int self) {
                  const Matrix<Scalar>& g = t.grad(self);
                  if (t.requires_grad(ai)) t.accumulate(ai, g * t.value(bi).transpose());
                  if (t.requires_grad(bi)) t.accumulate(bi, t.value(ai).transpose() * g);
                },
                "matmul");
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Matrix<Scalar> c = a.value().transpose();
  return t.push(std::move(c), a.requires_grad(),
                [ai = a.id](Tape<Scalar>& t, int self) {
                  t.accumulate(ai, t.grad(self).transpose());
                },
                "transpose");
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  Matrix<Scalar> c = a.value() + b.value();
  return t.push(std::move(c), a.requires_grad() || b.requires_grad(),
                [ai = a.id, bi = b.id](Tape<Scalar>& t, int self) {
                  if (t.requires_grad(ai)) t.accumulate(ai, t.grad(self));
                  if (t.requires_grad(bi)) t.accumulate(bi, t.grad(self));
                },
                "add");
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  Matrix<Scalar> c = a.value() - b.value();
  return t.push(std::move(c), a.requires_grad() || b.requires_grad(),
                [ai = a.id, bi = b.id](Tape<Scalar>& t, int self) {
                  if (t.requires_grad(ai)) t.accumulate(ai, t.grad(self));
                  if (t.requires_grad(bi)) t.accumulate(bi, -t.grad(self));
                },
                "sub");
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "mul");
  Matrix<Scalar> c = a.value().cwiseProduct(b.value());
  return t.push(std::move(c), a.requires_grad() || b.requires_grad(),
                [ai = a.id, bi = b.id](Tape<Scalar>& t, int self) {
                  const Matrix<Scalar>& g = t.grad(self);
                  if (t.requires_grad(ai)) t.accumulate(ai, g.cwiseProduct(t.value(bi)));
                  if (t.requires_grad(bi)) t.accumulate(bi, g.cwiseProduct(t.value(ai)));
                },
                "mul");
}

template <typename Scalar>
Var<Scalar> negate(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Matrix<Scalar> c = -a.value();
  return t.push(std::move(c), a.requires_grad(),
                [ai = a.id](Tape<Scalar>& t, int self) { t.accumulate(ai, -t.grad(self)); },
                "negate");
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, std::type_identity_t<Scalar> c) {
  Tape<Scalar>& t = *a.tape;
  Matrix<Scalar> v = a.value() * c;
  return t.push(std::move(v), a.requires_grad(),
                [ai = a.id, c](Tape<Scalar>& t, int self) {
                  t.accumulate(ai, t.grad(self) * c);
                },
                "scale");
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Matrix<Scalar> y = a.value().unaryExpr([](Scalar x) {
    return x >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-x))
                          : std::exp(x) / (Scalar(1) + std::exp(x));
  });
  return t.push(std::move(y), a.requires_grad(),
                [ai = a.id](Tape<Scalar>& t, int self) {
                  const Matrix<Scalar>& y = t.value(self);
                  t.accumulate(ai, t.grad(self).cwiseProduct(
                                       y.cwiseProduct((Scalar(1) - y.array()).matrix())));
                },
                "sigmoid");
}

// softplus(x) = log(1 + e^x), evaluated as max(x,0) + log1p(e^{-|x|}) so that
// |x| up to 1e4 stays finite. Backbone of the logit-space GAN losses.
template <typename Scalar>
Var<Scalar> softplus(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Matrix<Scalar> y = a.value().unaryExpr([](Scalar x) {
    return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
  });
  return t.push(std::move(y), a.requires_grad(),
                [ai = a.id](Tape<Scalar>& t, int self) {
                  Matrix<Scalar> s = t.value(ai).unaryExpr([](Scalar x) {
                    return x >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-x))
                                          : std::exp(x) / (Scalar(1) + std::exp(x));
                  });
                  t.accumulate(ai, t.grad(self).cwiseProduct(s));
                },
                "softplus");
}

// PReLU with a learnable per-channel negative slope (alpha is 1 x D).
template <typename Scalar>
Var<Scalar> prelu(Var<Scalar> x, Var<Scalar> alpha) {
  Tape<Scalar>& t = detail::same_tape(x, alpha);
  if (alpha.rows() != 1 || alpha.cols() != x.cols()) {
    throw DimensionError("prelu: alpha must be 1x" + std::to_string(x.cols()));
  }
  const Matrix<Scalar>& xv = x.value();
  const Matrix<Scalar>& av = alpha.value();
  Matrix<Scalar> y(xv.rows(), xv.cols());
  for (Index i = 0; i < xv.rows(); ++i)
    for (Index j = 0; j < xv.cols(); ++j)
      y(i, j) = xv(i, j) >= Scalar(0) ? xv(i, j) : av(0, j) * xv(i, j);
  return t.push(std::move(y), x.requires_grad() || alpha.requires_grad(),
                [xi = x.id, ai = alpha.id](Tape<Scalar>& t, int self) {
                  const Matrix<Scalar>& g = t.grad(self);
                  const Matrix<Scalar>& xv = t.value(xi);
                  const Matrix<Scalar>& av = t.value(ai);
                  if (t.requires_grad(xi)) {
                    Matrix<Scalar> gx(xv.rows(), xv.cols());
                    for (Index i = 0; i < xv.rows(); ++i)
                      for (Index j = 0; j < xv.cols(); ++j)
                        gx(i, j) = g(i, j) * (xv(i, j) >= Scalar(0) ? Scalar(1) : av(0, j));
                    t.accumulate(xi, gx);
                  }
                  if (t.requires_grad(ai)) {
                    Matrix<Scalar> ga = Matrix<Scalar>::Zero(1, xv.cols());
                    for (Index i = 0; i < xv.rows(); ++i)
                      for (Index j = 0; j < xv.cols(); ++j)
                        if (xv(i, j) < Scalar(0)) ga(0, j) += g(i, j) * xv(i, j);
                    t.accumulate(ai, ga);
                  }
                },
                "prelu");
}

template <typename Scalar>
Var<Scalar> expv(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Matrix<Scalar> y = a.value().array().exp().matrix();
  return t.push(std::move(y), a.requires_grad(),
                [ai = a.id](Tape<Scalar>& t, int self) {
                  t.accumulate(ai, t.grad(self).cwiseProduct(t.value(self)));
                },
                "exp");
}

template <typename Scalar>
Var<Scalar> logv(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  const Matrix<Scalar>& v = a.value();
  if ((v.array() <= Scalar(0)).any()) {
    throw DomainError("log: non-positive input");
  }
  Matrix<Scalar> y = v.array().log().matrix();
  return t.push(std::move(y), a.requires_grad(),
                [ai = a.id](Tape<Scalar>& t, int self) {
                  t.accumulate(ai, t.grad(self).cwiseQuotient(t.value(ai)));
                },
                "log");
}

// Feature-axis concatenation: parts share T, output is T x sum(D_i).
template <typename Scalar>
Var<Scalar> concat_cols(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw UsageError("concat_cols: no parts");
  Tape<Scalar>& t = *parts[0].tape;
  Index rows = parts[0].rows();
  Index cols = 0;
  bool req = false;
  for (const auto& p : parts) {
    if (p.tape != &t) throw UsageError("concat_cols: mixed tapes");
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: leading dimension mismatch " +
                           std::to_string(p.rows()) + " vs " + std::to_string(rows));
    }
    cols += p.cols();
    req = req || p.requires_grad();
  }
  Matrix<Scalar> y(rows, cols);
  Index at = 0;
  std::vector<int> ids;
  std::vector<Index> widths;
  ids.reserve(parts.size());
  widths.reserve(parts.size());
  for (const auto& p : parts) {
    y.middleCols(at, p.cols()) = p.value();
    ids.push_back(p.id);
    widths.push_back(p.cols());
    at += p.cols();
  }
  return t.push(std::move(y), req,
                [ids, widths](Tape<Scalar>& t, int self) {
                  const Matrix<Scalar>& g = t.grad(self);
                  Index at = 0;
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    if (t.requires_grad(ids[k])) {
                      t.accumulate(ids[k], g.middleCols(at, widths[k]));
                    }
                    at += widths[k];
                  }
                },
                "concat_cols");
}

template <typename Scalar>
Var<Scalar> concat_cols(std::initializer_list<Var<Scalar>> parts) {
  std::vector<Var<Scalar>> v(parts);
  return concat_cols(std::span<const Var<Scalar>>(v));
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Index start, Index n) {
  Tape<Scalar>& t = *a.tape;
  if (start < 0 || n <= 0 || start + n > a.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(start) + ", " +
                         std::to_string(start + n) + ") out of " + std::to_string(a.cols()));
  }
  Matrix<Scalar> y = a.value().middleCols(start, n);
  return t.push(std::move(y), a.requires_grad(),
                [ai = a.id, start, n](Tape<Scalar>& t, int self) {
                  Matrix<Scalar> g = Matrix<Scalar>::Zero(t.value(ai).rows(), t.value(ai).cols());
                  g.middleCols(start, n) = t.grad(self);
                  t.accumulate(ai, g);
                },
                "slice_cols");
}

// x + row-broadcast bias; the only broadcasting op, named explicitly.
template <typename Scalar>
Var<Scalar> add_row_bias(Var<Scalar> x, Var<Scalar> bias) {
  Tape<Scalar>& t = detail::same_tape(x, bias);
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_row_bias: bias must be 1x" + std::to_string(x.cols()));
  }
  Matrix<Scalar> y = x.value().rowwise() + bias.value().row(0);
  return t.push(std::move(y), x.requires_grad() || bias.requires_grad(),
                [xi = x.id, bi = bias.id](Tape<Scalar>& t, int self) {
                  const Matrix<Scalar>& g = t.grad(self);
                  if (t.requires_grad(xi)) t.accumulate(xi, g);
                  if (t.requires_grad(bi)) t.accumulate(bi, g.colwise().sum());
                },
                "add_row_bias");
}

// Row-wise softmax with per-row max subtraction.
template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  const Matrix<Scalar>& v = a.value();
  Matrix<Scalar> y(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    Scalar mx = v.row(i).maxCoeff();
    y.row(i) = (v.row(i).array() - mx).exp();
    y.row(i) /= y.row(i).sum();
  }
  return t.push(std::move(y), a.requires_grad(),
                [ai = a.id](Tape<Scalar>& t, int self) {
                  const Matrix<Scalar>& y = t.value(self);
                  const Matrix<Scalar>& g = t.grad(self);
                  Matrix<Scalar> gx(y.rows(), y.cols());
                  for (Index i = 0; i < y.rows(); ++i) {
                    Scalar dot = y.row(i).dot(g.row(i));
                    gx.row(i) = y.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
                  }
                  t.accumulate(ai, gx);
                },
                "softmax_rows");
}

// Per-frame layer normalization over the feature axis, then affine (gamma,
// beta are 1 x D).
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta,
                       Scalar eps = Scalar(1e-5)) {
  Tape<Scalar>& t = *x.tape;
  const Index d = x.cols();
  if (d < 2) throw DimensionError("layer_norm: feature dim must be >= 2");
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw DimensionError("layer_norm: gamma/beta must be 1x" + std::to_string(d));
  }
  const Matrix<Scalar>& v = x.value();
  Matrix<Scalar> y(v.rows(), d);
  for (Index i = 0; i < v.rows(); ++i) {
    Scalar mean = v.row(i).mean();
    Scalar var = (v.row(i).array() - mean).square().mean();
    Scalar inv = Scalar(1) / std::sqrt(var + eps);
    y.row(i) = ((v.row(i).array() - mean) * inv * gamma.value().row(0).array() +
                beta.value().row(0).array())
                   .matrix();
  }
  return t.push(
      std::move(y), x.requires_grad() || gamma.requires_grad() || beta.requires_grad(),
      [xi = x.id, gi = gamma.id, bi = beta.id, eps](Tape<Scalar>& t, int self) {
        const Matrix<Scalar>& v = t.value(xi);
        const Matrix<Scalar>& gm = t.value(gi);
        const Matrix<Scalar>& g = t.grad(self);
        const Index d = v.cols();
        Matrix<Scalar> gx(v.rows(), d);
        Matrix<Scalar> ggamma = Matrix<Scalar>::Zero(1, d);
        Matrix<Scalar> gbeta = Matrix<Scalar>::Zero(1, d);
        for (Index i = 0; i < v.rows(); ++i) {
          Scalar mean = v.row(i).mean();
          Scalar var = (v.row(i).array() - mean).square().mean();
          Scalar inv = Scalar(1) / std::sqrt(var + eps);
          Eigen::Array<Scalar, 1, Eigen::Dynamic> xhat = (v.row(i).array() - mean) * inv;
          Eigen::Array<Scalar, 1, Eigen::Dynamic> gy = g.row(i).array() * gm.row(0).array();
          Scalar m1 = gy.mean();
          Scalar m2 = (gy * xhat).mean();
          gx.row(i) = (inv * (gy - m1 - xhat * m2)).matrix();
          ggamma.row(0).array() += g.row(i).array() * xhat;
          gbeta.row(0) += g.row(i);
        }
        if (t.requires_grad(xi)) t.accumulate(xi, gx);
        if (t.requires_grad(gi)) t.accumulate(gi, ggamma);
        if (t.requires_grad(bi)) t.accumulate(bi, gbeta);
      },
      "layer_norm");
}

// Pairwise cosine similarity between the rows of a (T x D) and b (T' x D);
// row norms are floored at 1e-8 so degenerate rows stay finite.
template <typename Scalar>
Var<Scalar> cosine_rows(Var<Scalar> a, Var<Scalar> b) {
  Tape<Scalar>& t = detail::same_tape(a, b);
  if (a.cols() != b.cols()) {
    throw DimensionError("cosine_rows: feature dims differ: " + std::to_string(a.cols()) +
                         " vs " + std::to_string(b.cols()));
  }
  constexpr Scalar kFloor = Scalar(1e-8);
  const Matrix<Scalar>& av = a.value();
  const Matrix<Scalar>& bv = b.value();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> na = av.rowwise().norm().array().max(kFloor);
  Eigen::Array<Scalar, Eigen::Dynamic, 1> nb = bv.rowwise().norm().array().max(kFloor);
  Matrix<Scalar> ah = av.array().colwise() / na;
  Matrix<Scalar> bh = bv.array().colwise() / nb;
  Matrix<Scalar> c = ah * bh.transpose();
  return t.push(
      std::move(c), a.requires_grad() || b.requires_grad(),
      [ai = a.id, bi = b.id](Tape<Scalar>& t, int self) {
        constexpr Scalar kFloor = Scalar(1e-8);
        const Matrix<Scalar>& av = t.value(ai);
        const Matrix<Scalar>& bv = t.value(bi);
        const Matrix<Scalar>& c = t.value(self);
        const Matrix<Scalar>& g = t.grad(self);
        Eigen::Array<Scalar, Eigen::Dynamic, 1> na = av.rowwise().norm().array();
        Eigen::Array<Scalar, Eigen::Dynamic, 1> nb = bv.rowwise().norm().array();
        Eigen::Array<Scalar, Eigen::Dynamic, 1> naf = na.max(kFloor);
        Eigen::Array<Scalar, Eigen::Dynamic, 1> nbf = nb.max(kFloor);
        Matrix<Scalar> ah = av.array().colwise() / naf;
        Matrix<Scalar> bh = bv.array().colwise() / nbf;
        if (t.requires_grad(ai)) {
          Matrix<Scalar> ga = g * bh;  // T x D
          Eigen::Array<Scalar, Eigen::Dynamic, 1> corr =
              (g.cwiseProduct(c)).rowwise().sum().array();
          for (Index i = 0; i < av.rows(); ++i) {
            if (na(i) > kFloor) ga.row(i) -= corr(i) * ah.row(i);
            ga.row(i) /= naf(i);
          }
          t.accumulate(ai, ga);
        }
        if (t.requires_grad(bi)) {
          Matrix<Scalar> gb = g.transpose() * ah;  // T' x D
          Eigen::Array<Scalar, Eigen::Dynamic, 1> corr =
              (g.cwiseProduct(c)).colwise().sum().transpose().array();
          for (Index j = 0; j < bv.rows(); ++j) {
            if (nb(j) > kFloor) gb.row(j) -= corr(j) * bh.row(j);
            gb.row(j) /= nbf(j);
          }
          t.accumulate(bi, gb);
        }
      },
      "cosine_rows");
}

// Mean over frames of -log softmax(logits)[label], via log-sum-exp.
template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, const std::vector<int>& labels) {
  Tape<Scalar>& t = *logits.tape;
  const Matrix<Scalar>& z = logits.value();
  if (static_cast<Index>(labels.size()) != z.rows()) {
    throw InputError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(z.rows()) + " frames");
  }
  const Index c = z.cols();
  Scalar total = Scalar(0);
  for (Index i = 0; i < z.rows(); ++i) {
    int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= c) {
      throw InputError("cross_entropy: label " + std::to_string(y) + " out of [0, " +
                       std::to_string(c) + ")");
    }
    Scalar mx = z.row(i).maxCoeff();
    Scalar lse = mx + std::log((z.row(i).array() - mx).exp().sum());
    total += lse - z(i, y);
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total / static_cast<Scalar>(z.rows());
  return t.push(std::move(out), logits.requires_grad(),
                [zi = logits.id, labels](Tape<Scalar>& t, int self) {
                  const Matrix<Scalar>& z = t.value(zi);
                  Scalar gs = t.grad(self)(0, 0) / static_cast<Scalar>(z.rows());
                  Matrix<Scalar> gz(z.rows(), z.cols());
                  for (Index i = 0; i < z.rows(); ++i) {
                    Scalar mx = z.row(i).maxCoeff();
                    Eigen::Array<Scalar, 1, Eigen::Dynamic> p = (z.row(i).array() - mx).exp();
                    p /= p.sum();
                    gz.row(i) = (p * gs).matrix();
                    gz(i, labels[static_cast<size_t>(i)]) -= gs;
                  }
                  t.accumulate(zi, gz);
                },
                "cross_entropy");
}

template <typename Scalar>
Var<Scalar> sum_all(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), a.requires_grad(),
                [ai = a.id](Tape<Scalar>& t, int self) {
                  Scalar g = t.grad(self)(0, 0);
                  t.accumulate(ai, Matrix<Scalar>::Constant(t.value(ai).rows(),
                                                            t.value(ai).cols(), g));
                },
                "sum_all");
}

template <typename Scalar>
Var<Scalar> mean_all(Var<Scalar> a) {
  return scale(sum_all(a), Scalar(1) / static_cast<Scalar>(a.rows() * a.cols()));
}

// Copies the value and cuts the graph: no gradient propagates upstream.
template <typename Scalar>
Var<Scalar> detach(Var<Scalar> a) {
  return a.tape->leaf(a.value(), /*requires_grad=*/false);
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  return add(a, b);
}
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) {
  return sub(a, b);
}
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a) {
  return negate(a);
}
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) {
  return mul(a, b);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checker (the oracle for every backward rule).
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  int worst_input = -1;
  Index worst_row = -1;
  Index worst_col = -1;
  double ad = 0.0;
  double fd = 0.0;

  bool pass(double tol = 1e-4) const { return max_rel_err < tol; }
};

// Builds a fresh tape per evaluation: f receives leaves (requires_grad=true)
// in the order of `inputs` and returns a scalar loss. Central differences
// with the given eps; relative error |g_ad - g_fd| / max(floor, |g_ad|+|g_fd|).
// The floor combines a fixed 1e-5 with the finite-difference noise bound
// ulp(|f|)/eps: coordinates whose true gradient vanishes (attention key
// biases, for one) read back pure round-off from the difference quotient,
// and without the floor that noise would masquerade as gradient error.
// 64-bit only: finite differences need the headroom.
inline GradCheckReport grad_check(
    const std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>& f,
    std::vector<Matrix<double>> inputs, double eps = 1e-5) {
  auto eval = [&](const std::vector<Matrix<double>>& xs) {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    leaves.reserve(xs.size());
    for (const auto& x : xs) leaves.push_back(tape.leaf(x, true));
    return f(tape, leaves).scalar();
  };

  // One AD pass.
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x, true));
  Var<double> loss = f(tape, leaves);
  tape.backward(loss);
  std::vector<Matrix<double>> ad_grads;
  ad_grads.reserve(inputs.size());
  for (const auto& l : leaves) {
    ad_grads.push_back(tape.has_grad(l.id)
                           ? l.grad()
                           : Matrix<double>::Zero(l.rows(), l.cols()).eval());
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Matrix<double>& x = inputs[k];
    for (Index i = 0; i < x.rows(); ++i) {
      for (Index j = 0; j < x.cols(); ++j) {
        const double orig = x(i, j);
        x(i, j) = orig + eps;
        double fp = eval(inputs);
        x(i, j) = orig - eps;
        double fm = eval(inputs);
        x(i, j) = orig;
        double fd = (fp - fm) / (2.0 * eps);
        double ad = ad_grads[k](i, j);
        const double noise =
            64.0 * std::numeric_limits<double>::epsilon() *
            std::max({1.0, std::abs(fp), std::abs(fm)}) / (2.0 * eps);
        double rel = std::abs(ad - fd) /
                     std::max({1e-5, noise, std::abs(ad) + std::abs(fd)});
        if (rel > report.max_rel_err) {
          report.max_rel_err = rel;
          report.worst_input = static_cast<int>(k);
          report.worst_row = i;
          report.worst_col = j;
          report.ad = ad;
          report.fd = fd;
        }
      }
    }
  }
  return report;
}

}  // namespace mirgan
