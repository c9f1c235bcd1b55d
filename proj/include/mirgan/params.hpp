#pragma once

// Named parameter store shared by the whole model. Masters are float32 (the
// checkpoint precision); forward passes bind them onto a tape at whatever
// scalar the caller works in. Initialization derives one RNG stream per
// parameter from hash(seed, name), so adding or removing a parameter never
// shifts the init of the others.

#include "mirgan/autodiff.hpp"
#include "mirgan/core.hpp"

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mirgan {

enum class ParamGroup { Discriminator, Rest };

// Which groups receive gradients in the current pass. The other group's
// tensors are still bound (the graph flows through them) but stay frozen.
enum class Trainable { None, DiscOnly, RestOnly, All };

inline bool is_trainable(Trainable t, ParamGroup g) {
  switch (t) {
    case Trainable::None: return false;
    case Trainable::All: return true;
    case Trainable::DiscOnly: return g == ParamGroup::Discriminator;
    case Trainable::RestOnly: return g == ParamGroup::Rest;
  }
  return false;
}

struct Init {
  enum Kind { Xavier, Zero, One, Const } kind = Xavier;
  double constant = 0.0;

  static Init xavier() { return {Xavier, 0.0}; }
  static Init zero() { return {Zero, 0.0}; }
  static Init one() { return {One, 0.0}; }
  static Init constant_fill(double c) { return {Const, c}; }
};

class ParamStore {
 public:
  struct Entry {
    std::string name;
    ParamGroup group;
    Matrix<float> value;
    Matrix<float> m;     // Adam first moment
    Matrix<float> v;     // Adam second moment
    Matrix<float> grad;  // accumulation buffer for the current phase
  };

  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  int add(const std::string& name, Index rows, Index cols, Init init,
          ParamGroup group = ParamGroup::Rest) {
    if (index_.count(name))
      throw UsageError("parameter registered twice: " + name);
    Entry e;
    e.name = name;
    e.group = group;
    switch (init.kind) {
      case Init::Xavier: {
        Rng rng(hash_mix(seed_, hash_str(name)));
        const double std_dev = std::sqrt(2.0 / double(rows + cols));
        e.value = random_matrix<float>(rng, rows, cols, std_dev);
        break;
      }
      case Init::Zero: e.value = Matrix<float>::Zero(rows, cols); break;
      case Init::One: e.value = Matrix<float>::Ones(rows, cols); break;
      case Init::Const:
        e.value = Matrix<float>::Constant(rows, cols, static_cast<float>(init.constant));
        break;
    }
    e.m = Matrix<float>::Zero(rows, cols);
    e.v = Matrix<float>::Zero(rows, cols);
    e.grad = Matrix<float>::Zero(rows, cols);
    const int idx = static_cast<int>(entries_.size());
    index_.emplace(name, idx);
    entries_.push_back(std::move(e));
    return idx;
  }

  int index(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end())
      throw UsageError("unknown parameter: " + std::string(name));
    return it->second;
  }
  bool has(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  std::size_t size() const { return entries_.size(); }
  Entry& entry(int i) { return entries_[static_cast<std::size_t>(i)]; }
  const Entry& entry(int i) const { return entries_[static_cast<std::size_t>(i)]; }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::uint64_t seed() const { return seed_; }

  void zero_grads() {
    for (auto& e : entries_) e.grad.setZero();
  }

  void accumulate_grad(int idx, const Matrix<float>& g) {
    Entry& e = entries_[static_cast<std::size_t>(idx)];
    if (g.rows() != e.value.rows() || g.cols() != e.value.cols())
      throw DimensionError("gradient shape mismatch for " + e.name);
    e.grad += g;
  }

  // Euclidean norm of the accumulated gradient over one group, in double.
  double grad_norm(ParamGroup group) const {
    double sq = 0.0;
    for (const auto& e : entries_)
      if (e.group == group) sq += e.grad.cast<double>().array().square().sum();
    return std::sqrt(sq);
  }

  // One Adam update over a group. Returns the pre-clip gradient norm.
  // Bias-correction steps are counted per group, so a phase that never runs
  // (e.g. discriminator updates under an ablation) does not skew the other.
  double adam_step(ParamGroup group, double lr, double clip_norm) {
    const double norm = grad_norm(group);
    float scale = 1.0f;
    if (clip_norm > 0.0 && norm > clip_norm)
      scale = static_cast<float>(clip_norm / norm);

    int& t = group == ParamGroup::Discriminator ? steps_disc_ : steps_rest_;
    ++t;
    const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
    const float corr1 = 1.0f - std::pow(b1, static_cast<float>(t));
    const float corr2 = 1.0f - std::pow(b2, static_cast<float>(t));
    const float lrf = static_cast<float>(lr);

    for (auto& e : entries_) {
      if (e.group != group) continue;
      Matrix<float> g = e.grad * scale;
      e.m = b1 * e.m + (1.0f - b1) * g;
      e.v = b2 * e.v + (1.0f - b2) * g.cwiseProduct(g);
      Matrix<float> m_hat = e.m / corr1;
      Matrix<float> v_hat = e.v / corr2;
      e.value -= lrf * (m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
    }
    return norm;
  }

  int adam_steps(ParamGroup group) const {
    return group == ParamGroup::Discriminator ? steps_disc_ : steps_rest_;
  }
  void set_adam_steps(int disc, int rest) {
    steps_disc_ = disc;
    steps_rest_ = rest;
  }

 private:
  std::uint64_t seed_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
  int steps_disc_ = 0;
  int steps_rest_ = 0;
};

// Binds store tensors onto one tape, one leaf per parameter, cached so every
// use of a name shares the same node and gradients pool correctly.
template <typename Scalar>
class Binding {
 public:
  Binding(Tape<Scalar>& tape, const ParamStore& store, Trainable trainable)
      : tape_(&tape), store_(&store), trainable_(trainable),
        cache_(store.size()) {}

  // Gradcheck entry point: parameters arrive as pre-made tape leaves aligned
  // with store order (so finite differences can perturb them externally).
  Binding(const ParamStore& store, const std::vector<Var<Scalar>>& preset)
      : tape_(nullptr), store_(&store), trainable_(Trainable::All), cache_(store.size()) {
    if (preset.size() != store.size())
      throw UsageError("preset binding size does not match parameter store");
    for (std::size_t i = 0; i < preset.size(); ++i) cache_[i] = preset[i];
  }

  Var<Scalar> operator[](std::string_view name) {
    const int idx = store_->index(name);
    auto& slot = cache_[static_cast<std::size_t>(idx)];
    if (!slot) {
      const auto& e = store_->entry(idx);
      slot = tape_->leaf(e.value.template cast<Scalar>(),
                         is_trainable(trainable_, e.group));
    }
    return *slot;
  }

  // Pulls accumulated tape gradients back out in store order, scaled by
  // weight. Only bound, trainable leaves that received a gradient appear.
  template <typename Fn>
  void for_each_grad(Fn&& fn) const {
    for (std::size_t i = 0; i < cache_.size(); ++i) {
      if (!cache_[i]) continue;
      const Var<Scalar>& v = *cache_[i];
      if (!v.requires_grad() || !v.tape->has_grad(v.id)) continue;
      fn(static_cast<int>(i), v.tape->grad(v.id));
    }
  }

 private:
  Tape<Scalar>* tape_;
  const ParamStore* store_;
  Trainable trainable_;
  std::vector<std::optional<Var<Scalar>>> cache_;
};

}  // namespace mirgan
