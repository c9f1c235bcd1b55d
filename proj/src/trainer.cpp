#include "mirgan/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

namespace mirgan {

namespace {

using nlohmann::json;

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'M', 'I', 'R', 'C'};

std::uint64_t derive(std::uint64_t seed, const char* tag, std::uint64_t a,
                     std::uint64_t b = 0) {
  return hash_mix(hash_mix(hash_mix(seed, hash_str(tag)), a), b);
}

std::uint64_t snr_bits(double snr_db) { return std::bit_cast<std::uint64_t>(snr_db); }

// Per-frame sum of clamped discriminator probabilities, for reporting means
// that stay strictly inside (0,1).
double prob_sum(const Matrix<float>& logits) {
  return mean_prob(logits) * static_cast<double>(logits.rows());
}

void append_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void append_tensor(std::string& out, const Matrix<float>& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      std::uint32_t bits;
      float v = m(i, j);
      std::memcpy(&bits, &v, sizeof(bits));
      append_u32(out, bits);
    }
}

class CheckpointReader {
 public:
  explicit CheckpointReader(std::string data) : data_(std::move(data)) {}

  std::uint32_t u32(const char* what) {
    require(4, what);
    const auto* p = reinterpret_cast<const unsigned char*>(data_.data() + off_);
    std::uint32_t v = static_cast<std::uint32_t>(p[0]) |
                      (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    off_ += 4;
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    require(n, what);
    std::string s = data_.substr(off_, n);
    off_ += n;
    return s;
  }

  void read_tensor(Matrix<float>& m, const std::string& name) {
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) {
        std::uint32_t bits = u32(name.c_str());
        float v;
        std::memcpy(&v, &bits, sizeof(v));
        m(i, j) = v;
      }
  }

  void expect_end() {
    if (off_ != data_.size())
      throw CheckpointError("checkpoint: " + std::to_string(data_.size() - off_) +
                            " trailing bytes after tensors");
  }

 private:
  void require(std::size_t n, const char* what) {
    if (off_ + n > data_.size())
      throw CheckpointError(std::string("checkpoint: truncated reading ") + what +
                            " at byte offset " + std::to_string(off_));
  }

  std::string data_;
  std::size_t off_ = 0;
};

// Flattens a JSON document to dotted leaf paths for config-diff reporting.
void flatten(const json& j, const std::string& prefix,
             std::map<std::string, json>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else {
    out[prefix] = j;
  }
}

std::string first_config_difference(const json& a, const json& b) {
  std::map<std::string, json> fa, fb;
  flatten(a, "", fa);
  flatten(b, "", fb);
  for (const auto& [key, val] : fa) {
    auto it = fb.find(key);
    if (it == fb.end()) return key + " (missing from checkpoint)";
    if (it->second != val)
      return key + " (" + val.dump() + " vs " + it->second.dump() + ")";
  }
  for (const auto& [key, val] : fb)
    if (!fa.count(key)) return key + " (only in checkpoint)";
  return "";
}

const char* group_tag(ParamGroup g) {
  return g == ParamGroup::Discriminator ? "disc" : "rest";
}

}  // namespace

SplitIndices split_corpus(int n_utterances, double val_fraction, std::uint64_t seed) {
  std::vector<int> order(static_cast<std::size_t>(n_utterances));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(hash_mix(seed, hash_str("train-val-split")));
  rng.shuffle(order);

  const auto n_val = static_cast<std::size_t>(
      std::lround(val_fraction * static_cast<double>(n_utterances)));
  SplitIndices s;
  s.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  s.val.assign(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  if (s.train.empty()) throw ConfigError("train/val split left no training utterances");
  return s;
}

std::vector<int> batch_for_step(const std::vector<int>& train_sorted_by_length,
                                int batch_size, std::uint64_t seed, long step) {
  const auto n = train_sorted_by_length.size();
  const auto chunks = (n + static_cast<std::size_t>(batch_size) - 1) /
                      static_cast<std::size_t>(batch_size);
  const auto pos = static_cast<std::size_t>((step - 1) % static_cast<long>(chunks));
  const auto epoch = static_cast<std::uint64_t>((step - 1) / static_cast<long>(chunks));

  std::vector<std::size_t> order(chunks);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive(seed, "batch-order", epoch));
  rng.shuffle(order);

  const auto begin = order[pos] * static_cast<std::size_t>(batch_size);
  const auto end = std::min(n, begin + static_cast<std::size_t>(batch_size));
  return {train_sorted_by_length.begin() + static_cast<std::ptrdiff_t>(begin),
          train_sorted_by_length.begin() + static_cast<std::ptrdiff_t>(end)};
}

double lr_at_step(const TrainConfig& cfg, long step) {
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps)
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const long span = cfg.total_steps - cfg.warmup_steps + 1;
  const long into = step - cfg.warmup_steps;
  return cfg.lr * (1.0 - static_cast<double>(into) / static_cast<double>(span));
}

Trainer::Trainer(const RunConfig& cfg, const Corpus& corpus)
    : cfg_(cfg), corpus_(&corpus) {
  cfg_.validate();
  if (corpus.utterances.empty()) throw InputError("trainer: empty corpus");

  mode_ = parse_ablation(cfg_.train.ablation);
  train_modality_ = parse_modality(cfg_.train.modality);
  model_ = std::make_unique<Model>(
      cfg_.model,
      DataDims{corpus.spec.d_v_raw, corpus.spec.d_a_raw, corpus.spec.n_classes},
      mode_, cfg_.train.seed);

  split_ = split_corpus(static_cast<int>(corpus.utterances.size()),
                        cfg_.train.val_fraction, cfg_.train.seed);
  train_sorted_ = split_.train;
  std::sort(train_sorted_.begin(), train_sorted_.end(), [&](int a, int b) {
    const Index ta = corpus.utterances[static_cast<std::size_t>(a)].frames();
    const Index tb = corpus.utterances[static_cast<std::size_t>(b)].frames();
    return ta != tb ? ta < tb : a < b;
  });
}

Matrix<float> Trainer::augmented_audio(int utt_index, long step) const {
  const Utterance& u = corpus_->utterances[static_cast<std::size_t>(utt_index)];
  if (cfg_.train.noise_prob <= 0.0) return u.audio;
  Rng rng(derive(cfg_.train.seed, "train-noise", static_cast<std::uint64_t>(step),
                 static_cast<std::uint64_t>(utt_index)));
  if (rng.uniform() >= cfg_.train.noise_prob) return u.audio;
  return add_noise(u.audio, cfg_.train.train_snr_db, rng);
}

// Per-utterance result of one phase: gradients in store order plus the
// numbers the metrics row needs.
struct Trainer::PhaseStats {
  std::vector<std::pair<int, Matrix<float>>> grads;
  long frames = 0;
  double l_gan = 0.0;
  double l_rec = 0.0;
  double l_g = 0.0;
  double l_mim = 0.0;
  double prob_inv = 0.0;
  double prob_audio = 0.0;
  double prob_visual = 0.0;
};

MetricsRow Trainer::train_step() {
  const long s = step_ + 1;
  const TrainConfig& tc = cfg_.train;
  ParamStore& store = model_->store();

  const std::vector<int> batch = batch_for_step(train_sorted_, tc.batch_size, tc.seed, s);
  const auto b = batch.size();

  // Noise augmentation is sampled once per step and shared by both phases.
  std::vector<Matrix<float>> audio(b);
  long total_frames = 0;
  for (std::size_t i = 0; i < b; ++i) {
    audio[i] = augmented_audio(batch[i], s);
    total_frames += audio[i].rows();
  }

  const bool run_phase_a = model_->adversarial_training();
  const double lambda_gan = run_phase_a ? tc.lambda_gan : 0.0;
  const bool gan_term = run_phase_a && lambda_gan > 0.0;
  const double lambda_mim = mode_ == AblationMode::NoMim ? 0.0 : tc.lambda_mim;
  const bool mim_term = lambda_mim > 0.0;
  const double lr = lr_at_step(tc, s);

  MetricsRow row;
  row.step = s;

  // Phase A: ascend the adversarial objective on discriminator parameters.
  if (run_phase_a) {
    std::vector<PhaseStats> stats(b);
    parallel_for(b, [&](std::size_t i) {
      const Utterance& u = corpus_->utterances[static_cast<std::size_t>(batch[i])];
      const double w = static_cast<double>(u.frames()) / static_cast<double>(total_frames);

      Tape<float> tape;
      Binding<float> p(tape, store, Trainable::DiscOnly);
      Rng drop_rng(derive(tc.seed, "dropout-a", static_cast<std::uint64_t>(s),
                          static_cast<std::uint64_t>(batch[i])));
      ForwardCtx ctx = model_->make_ctx(true, &drop_rng);

      auto fwd = model_->forward(p, ctx, tape.leaf(u.visual), tape.leaf(audio[i]),
                                 train_modality_);
      auto z_a = model_->disc_logits(p, detach(fwd.f_a_spe));
      auto z_v = model_->disc_logits(p, detach(fwd.f_v_spe));
      auto z_inv = model_->disc_logits(p, detach(fwd.f_inv));
      auto l_gan = loss_gan_from_logits(z_a, z_v, z_inv);
      tape.backward(scale(l_gan, -w));  // descend -L_GAN = ascend L_GAN

      PhaseStats& st = stats[i];
      st.frames = u.frames();
      st.l_gan = w * static_cast<double>(l_gan.scalar());
      st.prob_inv = prob_sum(z_inv.value());
      st.prob_audio = prob_sum(z_a.value());
      st.prob_visual = prob_sum(z_v.value());
      p.for_each_grad([&](int idx, const Matrix<float>& g) {
        st.grads.emplace_back(idx, g);
      });
    });

    store.zero_grads();
    double l_d = 0.0, p_inv = 0.0, p_a = 0.0, p_v = 0.0;
    for (const PhaseStats& st : stats) {
      for (const auto& [idx, g] : st.grads) store.accumulate_grad(idx, g);
      l_d += st.l_gan;
      p_inv += st.prob_inv;
      p_a += st.prob_audio;
      p_v += st.prob_visual;
    }
    row.l_d = l_d;
    row.mean_d_on_inv = p_inv / static_cast<double>(total_frames);
    row.mean_d_on_audio = p_a / static_cast<double>(total_frames);
    row.mean_d_on_visual = p_v / static_cast<double>(total_frames);
    row.grad_norm_d = store.adam_step(ParamGroup::Discriminator, lr, tc.grad_clip);
    if (phase_observer_) phase_observer_('A');
  }

  // Phase B: fresh forward, descend the weighted objective on everything
  // except the discriminator; its frozen weights still pass gradient through.
  {
    std::vector<PhaseStats> stats(b);
    parallel_for(b, [&](std::size_t i) {
      const Utterance& u = corpus_->utterances[static_cast<std::size_t>(batch[i])];
      const double w = static_cast<double>(u.frames()) / static_cast<double>(total_frames);

      Tape<float> tape;
      Binding<float> p(tape, store, Trainable::RestOnly);
      Rng drop_rng(derive(tc.seed, "dropout-b", static_cast<std::uint64_t>(s),
                          static_cast<std::uint64_t>(batch[i])));
      ForwardCtx ctx = model_->make_ctx(true, &drop_rng);

      auto fwd = model_->forward(p, ctx, tape.leaf(u.visual), tape.leaf(audio[i]),
                                 train_modality_);
      auto l_rec = cross_entropy(fwd.logits, u.labels);
      auto loss = scale(l_rec, w);

      PhaseStats& st = stats[i];
      st.frames = u.frames();
      st.l_rec = w * static_cast<double>(l_rec.scalar());
      if (gan_term) {
        auto l_g = loss_g_from_logits(model_->disc_logits(p, fwd.f_inv));
        st.l_g = w * static_cast<double>(l_g.scalar());
        loss = add(loss, scale(l_g, lambda_gan * w));
      }
      if (mim_term) {
        auto l_mim = mim_loss(fwd.f_inv, fwd.f_v_spe, fwd.f_a_spe, tc.tau);
        st.l_mim = static_cast<double>(l_mim.scalar()) / static_cast<double>(b);
        loss = add(loss, scale(l_mim, lambda_mim / static_cast<double>(b)));
      }
      tape.backward(loss);
      p.for_each_grad([&](int idx, const Matrix<float>& g) {
        st.grads.emplace_back(idx, g);
      });
    });

    store.zero_grads();
    double l_rec = 0.0, l_g = 0.0, l_mim = 0.0;
    for (const PhaseStats& st : stats) {
      for (const auto& [idx, g] : st.grads) store.accumulate_grad(idx, g);
      l_rec += st.l_rec;
      l_g += st.l_g;
      l_mim += st.l_mim;
    }
    row.l_rec = l_rec;
    if (gan_term) row.l_g = l_g;
    if (mim_term) row.l_mim = l_mim;
    row.total_phase_b = l_rec + (gan_term ? lambda_gan * l_g : 0.0) +
                        (mim_term ? lambda_mim * l_mim : 0.0);
    row.grad_norm_rest = store.adam_step(ParamGroup::Rest, lr, tc.grad_clip);
    if (phase_observer_) phase_observer_('B');
  }

  // Divergence gate: a non-finite component aborts with the full picture.
  auto finite = [](const std::optional<double>& v) {
    return !v || std::isfinite(*v);
  };
  if (!finite(row.l_rec) || !finite(row.l_d) || !finite(row.l_g) ||
      !finite(row.l_mim) || !finite(row.total_phase_b)) {
    auto show = [](const std::optional<double>& v) {
      return v ? std::to_string(*v) : std::string("-");
    };
    throw NumericError("non-finite loss at step " + std::to_string(s) +
                       ": L_rec=" + show(row.l_rec) + " L_D=" + show(row.l_d) +
                       " L_G=" + show(row.l_g) + " L_MIM=" + show(row.l_mim));
  }

  step_ = s;
  return row;
}

EvalReport Trainer::evaluate(const std::vector<int>& indices,
                             const std::vector<double>& snr_levels,
                             Modality modality) const {
  const ParamStore& store = model_->store();
  const auto n = indices.size();
  const auto n_levels = snr_levels.size();

  struct Slot {
    long frames = 0;
    int clean_err = 0;
    std::vector<int> level_err;
  };
  std::vector<Slot> slots(n);

  parallel_for(n, [&](std::size_t i) {
    const int idx = indices[i];
    const Utterance& u = corpus_->utterances[static_cast<std::size_t>(idx)];
    Slot& slot = slots[i];
    slot.frames = u.frames();
    slot.level_err.assign(n_levels, 0);

    ForwardCtx ctx = model_->make_ctx(false, nullptr);
    {
      Tape<float> tape;
      Binding<float> p(tape, store, Trainable::None);
      auto fwd = model_->forward(p, ctx, tape.leaf(u.visual), tape.leaf(u.audio), modality);
      slot.clean_err = frame_errors(fwd.logits.value(), u.labels);
    }
    for (std::size_t l = 0; l < n_levels; ++l) {
      Rng rng(derive(cfg_.train.seed, "eval-noise", snr_bits(snr_levels[l]),
                     static_cast<std::uint64_t>(idx)));
      Matrix<float> noisy = add_noise(u.audio, snr_levels[l], rng);
      Tape<float> tape;
      Binding<float> p(tape, store, Trainable::None);
      auto fwd = model_->forward(p, ctx, tape.leaf(u.visual), tape.leaf(noisy), modality);
      slot.level_err[l] = frame_errors(fwd.logits.value(), u.labels);
    }
  });

  long frames = 0;
  long clean_err = 0;
  std::vector<long> level_err(n_levels, 0);
  for (const Slot& s : slots) {
    frames += s.frames;
    clean_err += s.clean_err;
    for (std::size_t l = 0; l < n_levels; ++l) level_err[l] += s.level_err[l];
  }
  if (frames == 0) throw InputError("evaluate: no frames in evaluation set");

  EvalReport rep;
  rep.total_frames = frames;
  rep.clean_ter = static_cast<double>(clean_err) / static_cast<double>(frames);
  double sum = 0.0;
  for (std::size_t l = 0; l < n_levels; ++l) {
    const double ter = static_cast<double>(level_err[l]) / static_cast<double>(frames);
    rep.per_snr.emplace_back(snr_levels[l], ter);
    sum += ter;
  }
  if (n_levels > 0) rep.noisy_avg = sum / static_cast<double>(n_levels);
  return rep;
}

EvalReport Trainer::evaluate_val(Modality modality) const {
  std::vector<double> levels(std::begin(kEvalSnrLevels), std::end(kEvalSnrLevels));
  return evaluate(split_.val, levels, modality);
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  const ParamStore& store = model_->store();

  json meta;
  meta["run_config"] = json::parse(run_config_to_text(cfg_));
  meta["step"] = step_;
  if (std::isfinite(best_val_ter_))
    meta["best_val_ter"] = best_val_ter_;
  else
    meta["best_val_ter"] = nullptr;
  meta["adam_steps"] = {{"disc", store.adam_steps(ParamGroup::Discriminator)},
                        {"rest", store.adam_steps(ParamGroup::Rest)}};
  auto& params = meta["params"] = json::array();
  for (const auto& e : store.entries())
    params.push_back({{"name", e.name},
                      {"rows", e.value.rows()},
                      {"cols", e.value.cols()},
                      {"group", group_tag(e.group)}});

  const std::string meta_text = meta.dump();
  std::string out;
  out.append(kCheckpointMagic, 4);
  append_u32(out, kCheckpointVersion);
  append_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  out += meta_text;
  for (const auto& e : store.entries()) {
    append_tensor(out, e.value);
    append_tensor(out, e.m);
    append_tensor(out, e.v);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("checkpoint: cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw InputError("checkpoint: short write to " + path.string());
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open " + path.string());
  CheckpointReader r(std::string((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>()));

  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path.string());
  if (const auto v = r.u32("version"); v != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(v));

  const auto meta_len = r.u32("config length");
  json meta;
  try {
    meta = json::parse(r.bytes(meta_len, "config JSON"));
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint: bad embedded config: ") + e.what());
  }

  const json current = json::parse(run_config_to_text(cfg_));
  const std::string diff = first_config_difference(current, meta.at("run_config"));
  if (!diff.empty())
    throw CheckpointError("checkpoint config mismatch at " + diff);

  ParamStore& store = model_->store();
  const auto& params = meta.at("params");
  if (params.size() != store.size())
    throw CheckpointError("checkpoint lists " + std::to_string(params.size()) +
                          " parameters, model has " + std::to_string(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& e = store.entry(static_cast<int>(i));
    const auto& pj = params[i];
    if (pj.at("name").get<std::string>() != e.name ||
        pj.at("rows").get<Index>() != e.value.rows() ||
        pj.at("cols").get<Index>() != e.value.cols() ||
        pj.at("group").get<std::string>() != group_tag(e.group))
      throw CheckpointError("checkpoint parameter mismatch at " + e.name);
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& e = store.entry(static_cast<int>(i));
    r.read_tensor(e.value, e.name);
    r.read_tensor(e.m, e.name);
    r.read_tensor(e.v, e.name);
    e.grad.setZero();
  }
  r.expect_end();

  step_ = meta.at("step").get<long>();
  const auto& best = meta.at("best_val_ter");
  best_val_ter_ = best.is_null() ? std::numeric_limits<double>::infinity()
                                 : best.get<double>();
  store.set_adam_steps(meta.at("adam_steps").at("disc").get<int>(),
                       meta.at("adam_steps").at("rest").get<int>());
}

RunConfig Trainer::peek_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open " + path.string());
  CheckpointReader r(std::string((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>()));
  if (std::memcmp(r.bytes(4, "magic").data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path.string());
  if (const auto v = r.u32("version"); v != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(v));
  const auto meta_len = r.u32("config length");
  json meta;
  try {
    meta = json::parse(r.bytes(meta_len, "config JSON"));
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint: bad embedded config: ") + e.what());
  }
  return parse_run_config_text(meta.at("run_config").dump());
}

}  // namespace mirgan
