#include "mirgan/synthdata.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace mirgan {

namespace {

constexpr std::uint32_t kBlobVersion = 1;
constexpr char kBlobMagic[4] = {'M', 'I', 'R', 'U'};

std::string utterance_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "utt_%06d", index);
  return buf;
}

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u32(out, bits);
}

// Bounds-checked little-endian cursor over one blob file.
class BlobReader {
 public:
  BlobReader(std::string data, std::string name)
      : data_(std::move(data)), name_(std::move(name)) {}

  std::uint32_t u32(const char* section) {
    require(4, section);
    const auto* p = reinterpret_cast<const unsigned char*>(data_.data() + off_);
    std::uint32_t v = static_cast<std::uint32_t>(p[0]) |
                      (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    off_ += 4;
    return v;
  }

  float f32(const char* section) {
    std::uint32_t bits = u32(section);
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  void expect_end() {
    if (off_ != data_.size())
      throw FormatError("corpus blob " + name_ + ": " +
                        std::to_string(data_.size() - off_) +
                        " trailing bytes after labels at byte offset " +
                        std::to_string(off_));
  }

 private:
  void require(std::size_t n, const char* section) {
    if (off_ + n > data_.size())
      throw FormatError("corpus blob " + name_ + ": truncated in section '" +
                        section + "' at byte offset " + std::to_string(off_));
  }

  std::string data_;
  std::string name_;
  std::size_t off_ = 0;
};

std::string read_file(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(what + ": cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return data;
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw InputError("short write to " + path.string());
}

nlohmann::json spec_to_json(const CorpusSpec& s) {
  return {{"seed", s.seed},           {"n_utterances", s.n_utterances},
          {"t_min", s.t_min},         {"t_max", s.t_max},
          {"n_classes", s.n_classes}, {"latent_dim", s.latent_dim},
          {"d_v_raw", s.d_v_raw},     {"d_a_raw", s.d_a_raw},
          {"mix_scale", s.mix_scale}, {"noise_std_v", s.noise_std_v},
          {"noise_std_a", s.noise_std_a}};
}

CorpusSpec spec_from_json(const nlohmann::json& j) {
  CorpusSpec s;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
    s.n_utterances = j.at("n_utterances").get<int>();
    s.t_min = j.at("t_min").get<int>();
    s.t_max = j.at("t_max").get<int>();
    s.n_classes = j.at("n_classes").get<int>();
    s.latent_dim = j.at("latent_dim").get<int>();
    s.d_v_raw = j.at("d_v_raw").get<int>();
    s.d_a_raw = j.at("d_a_raw").get<int>();
    s.mix_scale = j.at("mix_scale").get<double>();
    s.noise_std_v = j.at("noise_std_v").get<double>();
    s.noise_std_a = j.at("noise_std_a").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corpus manifest: bad spec block: ") + e.what());
  }
  return s;
}

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();

  // Corpus-wide structure: one latent embedding per class and one fixed
  // mixing matrix per modality, each from its own derived stream.
  Rng embed_rng(hash_mix(spec.seed, hash_str("class-embeddings")));
  Matrix<double> embed =
      random_matrix<double>(embed_rng, spec.n_classes, spec.latent_dim, 1.0);
  const double mix_std = spec.mix_scale / std::sqrt(double(spec.latent_dim));
  Rng wv_rng(hash_mix(spec.seed, hash_str("mix-visual")));
  Matrix<double> w_v = random_matrix<double>(wv_rng, spec.latent_dim, spec.d_v_raw, mix_std);
  Rng wa_rng(hash_mix(spec.seed, hash_str("mix-audio")));
  Matrix<double> w_a = random_matrix<double>(wa_rng, spec.latent_dim, spec.d_a_raw, mix_std);

  Corpus corpus;
  corpus.spec = spec;
  corpus.utterances.resize(static_cast<std::size_t>(spec.n_utterances));

  const std::uint64_t utt_base = hash_mix(spec.seed, hash_str("utterance"));
  parallel_for(static_cast<std::size_t>(spec.n_utterances), [&](std::size_t i) {
    Rng rng(hash_mix(utt_base, static_cast<std::uint64_t>(i)));
    Utterance& u = corpus.utterances[i];
    u.id = utterance_id(static_cast<int>(i));

    const Index t = spec.t_min +
        static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(spec.t_max - spec.t_min + 1)));
    u.labels.resize(static_cast<std::size_t>(t));
    u.visual.resize(t, spec.d_v_raw);
    u.audio.resize(t, spec.d_a_raw);

    for (Index f = 0; f < t; ++f) {
      const int cls = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.n_classes)));
      u.labels[static_cast<std::size_t>(f)] = cls;
      Matrix<double> vis = embed.row(cls) * w_v;
      Matrix<double> aud = embed.row(cls) * w_a;
      for (Index j = 0; j < spec.d_v_raw; ++j)
        u.visual(f, j) = static_cast<float>(vis(0, j) + spec.noise_std_v * rng.normal());
      for (Index j = 0; j < spec.d_a_raw; ++j)
        u.audio(f, j) = static_cast<float>(aud(0, j) + spec.noise_std_a * rng.normal());
    }
  });
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  corpus.spec.validate();
  if (static_cast<int>(corpus.utterances.size()) != corpus.spec.n_utterances)
    throw InputError("save_corpus: spec lists " + std::to_string(corpus.spec.n_utterances) +
                     " utterances but corpus holds " + std::to_string(corpus.utterances.size()));
  std::filesystem::create_directories(dir);

  nlohmann::json manifest;
  manifest["format_version"] = kBlobVersion;
  manifest["spec"] = spec_to_json(corpus.spec);
  auto& entries = manifest["utterances"] = nlohmann::json::array();

  for (const Utterance& u : corpus.utterances) {
    const auto t = static_cast<std::uint32_t>(u.frames());
    if (u.audio.rows() != u.frames() ||
        static_cast<Index>(u.labels.size()) != u.frames())
      throw InputError("save_corpus: modality/label length mismatch in " + u.id);

    std::string blob;
    blob.reserve(20 + 4 * static_cast<std::size_t>(u.visual.size() + u.audio.size() + u.frames()));
    blob.append(kBlobMagic, 4);
    put_u32(blob, kBlobVersion);
    put_u32(blob, t);
    put_u32(blob, static_cast<std::uint32_t>(u.visual.cols()));
    put_u32(blob, static_cast<std::uint32_t>(u.audio.cols()));
    for (Index i = 0; i < u.visual.rows(); ++i)
      for (Index j = 0; j < u.visual.cols(); ++j) put_f32(blob, u.visual(i, j));
    for (Index i = 0; i < u.audio.rows(); ++i)
      for (Index j = 0; j < u.audio.cols(); ++j) put_f32(blob, u.audio(i, j));
    for (int label : u.labels) put_u32(blob, static_cast<std::uint32_t>(label));
    write_file(dir / (u.id + ".miru"), blob);

    entries.push_back({{"id", u.id}, {"t", t}});
  }
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path, "corpus manifest"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("corpus manifest " + manifest_path.string() + ": " + e.what());
  }

  Corpus corpus;
  try {
    if (manifest.at("format_version").get<std::uint32_t>() != kBlobVersion)
      throw FormatError("corpus manifest: unsupported format_version " +
                        manifest.at("format_version").dump());
    corpus.spec = spec_from_json(manifest.at("spec"));
    corpus.spec.validate();

    const auto& entries = manifest.at("utterances");
    if (static_cast<int>(entries.size()) != corpus.spec.n_utterances)
      throw FormatError("corpus manifest: spec declares " +
                        std::to_string(corpus.spec.n_utterances) +
                        " utterances but manifest lists " + std::to_string(entries.size()));

    corpus.utterances.reserve(entries.size());
    for (const auto& entry : entries) {
      const auto id = entry.at("id").get<std::string>();
      const auto t_expect = entry.at("t").get<std::uint32_t>();
      const auto blob_path = dir / (id + ".miru");
      if (!std::filesystem::exists(blob_path))
        throw FormatError("corpus manifest lists " + id + " but blob file " +
                          blob_path.string() + " is missing");

      BlobReader r(read_file(blob_path, "corpus blob " + id), id);
      const std::uint32_t magic_word = r.u32("magic");
      char magic[4] = {static_cast<char>(magic_word & 0xff),
                       static_cast<char>((magic_word >> 8) & 0xff),
                       static_cast<char>((magic_word >> 16) & 0xff),
                       static_cast<char>((magic_word >> 24) & 0xff)};
      if (std::memcmp(magic, kBlobMagic, 4) != 0)
        throw FormatError("corpus blob " + id + ": bad magic at byte offset 0");
      if (const auto v = r.u32("version"); v != kBlobVersion)
        throw FormatError("corpus blob " + id + ": unsupported version " +
                          std::to_string(v) + " at byte offset 4");

      const auto t = r.u32("frame count");
      const auto d_v = r.u32("visual dim");
      const auto d_a = r.u32("audio dim");
      if (t != t_expect)
        throw FormatError("corpus blob " + id + ": frame count " + std::to_string(t) +
                          " disagrees with manifest value " + std::to_string(t_expect));
      if (static_cast<int>(d_v) != corpus.spec.d_v_raw ||
          static_cast<int>(d_a) != corpus.spec.d_a_raw)
        throw FormatError("corpus blob " + id + ": dims " + std::to_string(d_v) + "x" +
                          std::to_string(d_a) + " disagree with spec " +
                          std::to_string(corpus.spec.d_v_raw) + "x" +
                          std::to_string(corpus.spec.d_a_raw));

      Utterance u;
      u.id = id;
      u.visual.resize(static_cast<Index>(t), corpus.spec.d_v_raw);
      u.audio.resize(static_cast<Index>(t), corpus.spec.d_a_raw);
      u.labels.resize(t);
      for (Index i = 0; i < u.visual.rows(); ++i)
        for (Index j = 0; j < u.visual.cols(); ++j) u.visual(i, j) = r.f32("visual");
      for (Index i = 0; i < u.audio.rows(); ++i)
        for (Index j = 0; j < u.audio.cols(); ++j) u.audio(i, j) = r.f32("audio");
      for (std::uint32_t i = 0; i < t; ++i) {
        const auto label = r.u32("labels");
        if (label >= static_cast<std::uint32_t>(corpus.spec.n_classes))
          throw FormatError("corpus blob " + id + ": label " + std::to_string(label) +
                            " out of range for " + std::to_string(corpus.spec.n_classes) +
                            " classes");
        u.labels[i] = static_cast<int>(label);
      }
      r.expect_end();
      corpus.utterances.push_back(std::move(u));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corpus manifest " + manifest_path.string() + ": " + e.what());
  }
  return corpus;
}

}  // namespace mirgan
