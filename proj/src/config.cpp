#include "mirgan/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

namespace mirgan {

namespace {

using nlohmann::json;

// Wraps one JSON object; every read marks its key consumed, and finish()
// rejects whatever was never asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError("config: " + (path_.empty() ? "document" : path_) +
                        " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    consumed_.insert(key);
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: bad type for " + dotted(key));
    }
  }

  bool has_object(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return false;
    consumed_.insert(key);
    return true;
  }

  const json& child(const char* key) const { return j_.at(key); }

  std::string dotted(const char* key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!consumed_.count(it.key()))
        throw ConfigError("config: unknown key '" + dotted(it.key().c_str()) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> consumed_;
};

void parse_corpus(const json& j, CorpusSpec& c) {
  StrictObject o(j, "corpus");
  o.get("seed", c.seed);
  o.get("n_utterances", c.n_utterances);
  o.get("t_min", c.t_min);
  o.get("t_max", c.t_max);
  o.get("n_classes", c.n_classes);
  o.get("latent_dim", c.latent_dim);
  o.get("d_v_raw", c.d_v_raw);
  o.get("d_a_raw", c.d_a_raw);
  o.get("mix_scale", c.mix_scale);
  o.get("noise_std_v", c.noise_std_v);
  o.get("noise_std_a", c.noise_std_a);
  o.finish();
}

void parse_model(const json& j, ModelConfig& m) {
  StrictObject o(j, "model");
  o.get("d_model", m.d_model);
  o.get("n_heads", m.n_heads);
  o.get("d_ffn", m.d_ffn);
  o.get("n_encoder_layers", m.n_encoder_layers);
  o.get("n_generator_blocks", m.n_generator_blocks);
  o.get("n_recognizer_layers", m.n_recognizer_layers);
  o.get("disc_hidden", m.disc_hidden);
  o.get("dropout", m.dropout);
  o.get("positional_encoding", m.positional_encoding);
  o.get("disc_hidden_act", m.disc_hidden_act);
  o.finish();
}

void parse_train(const json& j, TrainConfig& t) {
  StrictObject o(j, "train");
  o.get("lambda_gan", t.lambda_gan);
  o.get("lambda_mim", t.lambda_mim);
  o.get("tau", t.tau);
  o.get("lr", t.lr);
  o.get("warmup_steps", t.warmup_steps);
  o.get("total_steps", t.total_steps);
  o.get("batch_size", t.batch_size);
  o.get("seed", t.seed);
  o.get("noise_prob", t.noise_prob);
  o.get("train_snr_db", t.train_snr_db);
  o.get("ablation", t.ablation);
  o.get("modality", t.modality);
  o.get("grad_clip", t.grad_clip);
  o.get("eval_interval", t.eval_interval);
  o.get("checkpoint_interval", t.checkpoint_interval);
  o.get("val_fraction", t.val_fraction);
  o.finish();
}

void parse_paths(const json& j, PathsConfig& p) {
  StrictObject o(j, "paths");
  o.get("corpus_dir", p.corpus_dir);
  o.get("out_dir", p.out_dir);
  o.finish();
}

}  // namespace

RunConfig parse_run_config_text(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  RunConfig cfg;
  StrictObject root(doc, "");
  if (root.has_object("corpus")) parse_corpus(root.child("corpus"), cfg.corpus);
  if (root.has_object("model")) parse_model(root.child("model"), cfg.model);
  if (root.has_object("train")) parse_train(root.child("train"), cfg.train);
  if (root.has_object("paths")) parse_paths(root.child("paths"), cfg.paths);
  root.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config_text(text);
}

std::string run_config_to_text(const RunConfig& cfg) {
  json doc;
  doc["corpus"] = {{"seed", cfg.corpus.seed},
                   {"n_utterances", cfg.corpus.n_utterances},
                   {"t_min", cfg.corpus.t_min},
                   {"t_max", cfg.corpus.t_max},
                   {"n_classes", cfg.corpus.n_classes},
                   {"latent_dim", cfg.corpus.latent_dim},
                   {"d_v_raw", cfg.corpus.d_v_raw},
                   {"d_a_raw", cfg.corpus.d_a_raw},
                   {"mix_scale", cfg.corpus.mix_scale},
                   {"noise_std_v", cfg.corpus.noise_std_v},
                   {"noise_std_a", cfg.corpus.noise_std_a}};
  doc["model"] = {{"d_model", cfg.model.d_model},
                  {"n_heads", cfg.model.n_heads},
                  {"d_ffn", cfg.model.d_ffn},
                  {"n_encoder_layers", cfg.model.n_encoder_layers},
                  {"n_generator_blocks", cfg.model.n_generator_blocks},
                  {"n_recognizer_layers", cfg.model.n_recognizer_layers},
                  {"disc_hidden", cfg.model.disc_hidden},
                  {"dropout", cfg.model.dropout},
                  {"positional_encoding", cfg.model.positional_encoding},
                  {"disc_hidden_act", cfg.model.disc_hidden_act}};
  doc["train"] = {{"lambda_gan", cfg.train.lambda_gan},
                  {"lambda_mim", cfg.train.lambda_mim},
                  {"tau", cfg.train.tau},
                  {"lr", cfg.train.lr},
                  {"warmup_steps", cfg.train.warmup_steps},
                  {"total_steps", cfg.train.total_steps},
                  {"batch_size", cfg.train.batch_size},
                  {"seed", cfg.train.seed},
                  {"noise_prob", cfg.train.noise_prob},
                  {"train_snr_db", cfg.train.train_snr_db},
                  {"ablation", cfg.train.ablation},
                  {"modality", cfg.train.modality},
                  {"grad_clip", cfg.train.grad_clip},
                  {"eval_interval", cfg.train.eval_interval},
                  {"checkpoint_interval", cfg.train.checkpoint_interval},
                  {"val_fraction", cfg.train.val_fraction}};
  doc["paths"] = {{"corpus_dir", cfg.paths.corpus_dir},
                  {"out_dir", cfg.paths.out_dir}};
  return doc.dump(2) + "\n";
}

}  // namespace mirgan
