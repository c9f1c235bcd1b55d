#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mirgan/commands.hpp"
#include "mirgan/metrics.hpp"

#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mirgan;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag)
      : path(fs::temp_directory_path() / (std::string("mirgan_cli_") + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing file: " << p.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  REQUIRE(out.good());
  out << text;
}

// Runs the installed CLI binary through the shell, captures both streams.
struct RunResult {
  int code;
  std::string out;
  std::string err;
};

RunResult run_cli(const TempDir& dir, const std::string& args,
                  const std::string& env = "") {
  const fs::path out = dir.path / "_stdout";
  const fs::path err = dir.path / "_stderr";
  std::ostringstream cmd;
  if (!env.empty()) cmd << env << ' ';
  cmd << MIRGAN_CLI << ' ' << args << " >" << out << " 2>" << err;
  const int status = std::system(cmd.str().c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

// Config small enough that a 30-step training run finishes in about a second.
std::string tiny_config_text() {
  return R"({
  "corpus": {"seed": 9, "n_utterances": 40, "t_min": 3, "t_max": 6,
             "n_classes": 4, "latent_dim": 6, "d_v_raw": 9, "d_a_raw": 7},
  "model": {"d_model": 8, "n_heads": 2, "d_ffn": 16, "n_encoder_layers": 1,
            "n_generator_blocks": 1, "n_recognizer_layers": 1, "dropout": 0.0},
  "train": {"total_steps": 30, "warmup_steps": 5, "batch_size": 5,
            "eval_interval": 10, "checkpoint_interval": 15, "seed": 3,
            "val_fraction": 0.2}
})";
}

long count_lines(const std::string& text) {
  long n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("empty config document yields the documented defaults") {
  const RunConfig cfg = parse_run_config_text("{}");
  CHECK(cfg.corpus.n_utterances == 2000);
  CHECK(cfg.corpus.n_classes == 16);
  CHECK(cfg.model.d_model == 32);
  CHECK(cfg.model.n_heads == 4);
  CHECK(cfg.train.lambda_gan == 0.01);
  CHECK(cfg.train.lambda_mim == 0.005);
  CHECK(cfg.train.tau == 0.1);
  CHECK(cfg.train.total_steps == 2000);
  CHECK(cfg.train.batch_size == 8);
  CHECK(cfg.train.ablation == "full");
  CHECK(cfg.paths.corpus_dir.empty());
}

TEST_CASE("unknown keys are rejected with their dotted path") {
  const std::pair<const char*, const char*> cases[] = {
      {R"({"train": {"foo": 1}})", "train.foo"},
      {R"({"trian": {}})", "trian"},
      {R"({"model": {"d_modle": 16}})", "model.d_modle"},
      {R"({"corpus": {"seed": 1, "frames": 7}})", "corpus.frames"},
  };
  for (const auto& [text, path] : cases) {
    try {
      parse_run_config_text(text);
      FAIL("expected ConfigError for " << text);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(path) != std::string::npos);
    }
  }
}

TEST_CASE("type errors name the offending field") {
  try {
    parse_run_config_text(R"({"train": {"lr": "fast"}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.lr") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_run_config_text("[1, 2]"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text("{not json"), ConfigError);
}

TEST_CASE("parsed configs are validated") {
  // 30 is not divisible by 4 heads.
  CHECK_THROWS_AS(parse_run_config_text(R"({"model": {"d_model": 30}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text(R"({"train": {"batch_size": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config_text(R"({"corpus": {"t_min": 5, "t_max": 3}})"),
                  ConfigError);
}

TEST_CASE("config serialization round-trips to identical bytes") {
  RunConfig cfg;
  cfg.train.lr = 2.5e-4;
  cfg.train.ablation = "no_mim";
  cfg.corpus.noise_std_a = 0.37;
  cfg.paths.corpus_dir = "/data/corpus";
  const std::string once = run_config_to_text(cfg);
  const std::string twice = run_config_to_text(parse_run_config_text(once));
  CHECK(once == twice);
}

TEST_CASE("cli: usage errors exit with code 2") {
  TempDir dir("usage");
  CHECK(run_cli(dir, "").code == 2);                       // no subcommand
  CHECK(run_cli(dir, "transmogrify").code == 2);           // unknown subcommand
  CHECK(run_cli(dir, "train --no-such-flag").code == 2);   // unknown flag
  CHECK(run_cli(dir, "gradcheck --scope bogus").code == 2);
  CHECK(run_cli(dir, "eval --ckpt does/not/exist.mirc").code != 0);

  const RunResult missing_corpus =
      run_cli(dir, "train --out " + (dir.path / "t").string());
  CHECK(missing_corpus.code == 2);
  CHECK(missing_corpus.err.find("corpus") != std::string::npos);
}

TEST_CASE("cli: gen-data writes a corpus, refuses to clobber, repeats bit-identically") {
  TempDir dir("gendata");
  write_file(dir.path / "cfg.json", tiny_config_text());
  const std::string cfg = " --config " + (dir.path / "cfg.json").string();

  const fs::path c1 = dir.path / "c1";
  const RunResult first = run_cli(dir, "gen-data" + cfg + " --out " + c1.string());
  CHECK(first.code == 0);
  CHECK(fs::exists(c1 / "manifest.json"));

  // Occupied directory: refuse without --force, proceed with it.
  const RunResult refuse = run_cli(dir, "gen-data" + cfg + " --out " + c1.string());
  CHECK(refuse.code == 2);
  CHECK(refuse.err.find("--force") != std::string::npos);
  CHECK(run_cli(dir, "gen-data" + cfg + " --out " + c1.string() + " --force").code == 0);

  const fs::path c2 = dir.path / "c2";
  REQUIRE(run_cli(dir, "gen-data" + cfg + " --out " + c2.string()).code == 0);
  CHECK(read_file(c1 / "manifest.json") == read_file(c2 / "manifest.json"));
  const json manifest = json::parse(read_file(c1 / "manifest.json"));
  const std::string blob =
      manifest.at("utterances").at(0).at("id").get<std::string>() + ".miru";
  CHECK(read_file(c1 / blob) == read_file(c2 / blob));

  // A different seed on the command line reaches the generator.
  const fs::path c3 = dir.path / "c3";
  REQUIRE(run_cli(dir, "gen-data" + cfg + " --seed 123 --out " + c3.string()).code == 0);
  CHECK(read_file(c1 / blob) != read_file(c3 / blob));
}

TEST_CASE("cli: train produces the full artifact set and is deterministic") {
  TempDir dir("train");
  write_file(dir.path / "cfg.json", tiny_config_text());
  const std::string cfg = " --config " + (dir.path / "cfg.json").string();
  const fs::path corpus = dir.path / "corpus";
  REQUIRE(run_cli(dir, "gen-data" + cfg + " --out " + corpus.string()).code == 0);

  const fs::path t1 = dir.path / "t1";
  const RunResult r1 = run_cli(
      dir, "train" + cfg + " --corpus " + corpus.string() + " --out " + t1.string());
  CHECK(r1.code == 0);
  CHECK(r1.out.find("trained 30 steps") != std::string::npos);

  const std::string metrics = read_file(t1 / "metrics.csv");
  CHECK(metrics.rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
  CHECK(count_lines(metrics) == 31);  // header + one row per step
  CHECK(fs::exists(t1 / "config.json"));
  CHECK(fs::exists(t1 / "ckpt_000015.mirc"));
  CHECK(fs::exists(t1 / "ckpt_000030.mirc"));
  CHECK(fs::exists(t1 / "final.mirc"));

  // Eval cadence: rows 10, 20, 30 carry validation columns, others leave
  // them empty.
  std::istringstream lines(metrics);
  std::string line;
  std::getline(lines, line);  // header
  for (int s = 1; s <= 30; ++s) {
    REQUIRE(std::getline(lines, line));
    const MetricsRow row = parse_metrics_row(line);
    CHECK(row.step == s);
    CHECK(row.val_ter_clean.has_value() == (s % 10 == 0));
  }

  // Same config, same corpus: byte-identical metrics, even when the thread
  // cap differs.
  const fs::path t2 = dir.path / "t2";
  REQUIRE(run_cli(dir,
                  "train" + cfg + " --corpus " + corpus.string() + " --out " +
                      t2.string(),
                  "MIRGAN_THREADS=3")
              .code == 0);
  CHECK(metrics == read_file(t2 / "metrics.csv"));

  // Occupied out dir refuses without --force.
  CHECK(run_cli(dir, "train" + cfg + " --corpus " + corpus.string() + " --out " +
                         t1.string())
            .code == 2);

  // --seed flows into the recorded config.
  const fs::path t3 = dir.path / "t3";
  REQUIRE(run_cli(dir, "train" + cfg + " --corpus " + corpus.string() + " --seed 77" +
                           " --out " + t3.string())
              .code == 0);
  const RunConfig recorded = parse_run_config_text(read_file(t3 / "config.json"));
  CHECK(recorded.train.seed == 77);
  CHECK(read_file(t3 / "metrics.csv") != metrics);
}

TEST_CASE("cli: resume extends an interrupted run to the same bytes") {
  TempDir dir("resume");
  write_file(dir.path / "cfg.json", tiny_config_text());
  const std::string cfg = " --config " + (dir.path / "cfg.json").string();
  const fs::path corpus = dir.path / "corpus";
  REQUIRE(run_cli(dir, "gen-data" + cfg + " --out " + corpus.string()).code == 0);

  const fs::path full = dir.path / "full";
  REQUIRE(run_cli(dir, "train" + cfg + " --corpus " + corpus.string() + " --out " +
                           full.string())
              .code == 0);

  // Replay the tail from the mid-run checkpoint into a fresh directory.
  const fs::path tail = dir.path / "tail";
  const RunResult resumed =
      run_cli(dir, "train --resume " + (full / "ckpt_000015.mirc").string() +
                       " --corpus " + corpus.string() + " --out " + tail.string());
  CHECK(resumed.code == 0);

  const std::string full_metrics = read_file(full / "metrics.csv");
  const std::string tail_metrics = read_file(tail / "metrics.csv");
  // The tail file holds the header plus rows 16..30, which must match the
  // uninterrupted run byte for byte.
  std::istringstream in(full_metrics);
  std::string line, expected = std::string(kMetricsHeader) + "\n";
  std::getline(in, line);
  for (int s = 1; s <= 30; ++s) {
    REQUIRE(std::getline(in, line));
    if (s > 15) expected += line + "\n";
  }
  CHECK(tail_metrics == expected);
  CHECK(read_file(full / "final.mirc") == read_file(tail / "final.mirc"));
}

TEST_CASE("cli: eval reports per-modality error rates and snr sweeps") {
  TempDir dir("eval");
  write_file(dir.path / "cfg.json", tiny_config_text());
  const std::string cfg = " --config " + (dir.path / "cfg.json").string();
  const fs::path corpus = dir.path / "corpus";
  REQUIRE(run_cli(dir, "gen-data" + cfg + " --out " + corpus.string()).code == 0);
  const fs::path train_dir = dir.path / "run";
  REQUIRE(run_cli(dir, "train" + cfg + " --corpus " + corpus.string() + " --out " +
                           train_dir.string())
              .code == 0);
  const std::string ckpt = (train_dir / "final.mirc").string();

  const fs::path ev = dir.path / "ev";
  const RunResult av = run_cli(dir, "eval --ckpt " + ckpt + " --corpus " +
                                        corpus.string() + " --modality AV --snr 0,5" +
                                        " --out " + ev.string());
  CHECK(av.code == 0);
  const json doc = json::parse(read_file(ev / "eval_AV.json"));
  CHECK(doc.at("modality") == "AV");
  CHECK(doc.at("split") == "val");
  CHECK(doc.at("per_snr").size() == 2);
  CHECK(doc.at("clean_ter").get<double>() >= 0.0);
  CHECK(doc.at("clean_ter").get<double>() <= 1.0);
  CHECK(doc.at("noisy_ter").is_number());

  // Empty sweep: clean-only report, null noisy aggregate.
  const RunResult clean = run_cli(dir, "eval --ckpt " + ckpt + " --corpus " +
                                           corpus.string() +
                                           " --modality A --snr \"\" --out " +
                                           ev.string());
  CHECK(clean.code == 0);
  const json a_doc = json::parse(read_file(ev / "eval_A.json"));
  CHECK(a_doc.at("per_snr").empty());
  CHECK(a_doc.at("noisy_ter").is_null());

  CHECK(run_cli(dir, "eval --ckpt " + ckpt + " --modality audio --out " + ev.string())
            .code == 2);
  CHECK(run_cli(dir, "eval --ckpt " + ckpt + " --snr 0,zap --out " + ev.string())
            .code == 2);

  // Checkpoint/corpus dimension clash is an incompatibility, not a crash.
  std::string other_cfg = tiny_config_text();
  const auto pos = other_cfg.find("\"d_a_raw\": 7");
  REQUIRE(pos != std::string::npos);
  other_cfg.replace(pos, 12, "\"d_a_raw\": 6");
  write_file(dir.path / "cfg6.json", other_cfg);
  const fs::path corpus6 = dir.path / "corpus6";
  REQUIRE(run_cli(dir, "gen-data --config " + (dir.path / "cfg6.json").string() +
                           " --out " + corpus6.string())
              .code == 0);
  const RunResult clash = run_cli(
      dir, "eval --ckpt " + ckpt + " --corpus " + corpus6.string() + " --out " +
               ev.string());
  CHECK(clash.code == 4);
  CHECK(clash.err.find("d_a_raw") != std::string::npos);
}

TEST_CASE("cli: diagnose writes similarity maps and discriminator stats") {
  TempDir dir("diag");
  write_file(dir.path / "cfg.json", tiny_config_text());
  const std::string cfg = " --config " + (dir.path / "cfg.json").string();
  const fs::path corpus = dir.path / "corpus";
  REQUIRE(run_cli(dir, "gen-data" + cfg + " --out " + corpus.string()).code == 0);
  const fs::path train_dir = dir.path / "run";
  REQUIRE(run_cli(dir, "train" + cfg + " --corpus " + corpus.string() + " --out " +
                           train_dir.string())
              .code == 0);

  const fs::path out = dir.path / "diag";
  const RunResult r = run_cli(dir, "diagnose --ckpt " +
                                       (train_dir / "final.mirc").string() +
                                       " --corpus " + corpus.string() + " --out " +
                                       out.string());
  CHECK(r.code == 0);
  for (const char* name : {"similarity_v.csv", "similarity_a.csv", "embeddings.csv",
                           "disc_stats.csv", "diagnose_summary.json"})
    CHECK_MESSAGE(fs::exists(out / name), name);

  const json summary = json::parse(read_file(out / "diagnose_summary.json"));
  CHECK(summary.at("diag_score_v").is_number());
  CHECK(summary.at("diag_score_a").is_number());
  CHECK(summary.at("disc_accuracy").is_number());
  const std::string stats = read_file(out / "disc_stats.csv");
  CHECK(stats.find("inv,") != std::string::npos);
  CHECK(stats.find("audio,") != std::string::npos);
  CHECK(stats.find("visual,") != std::string::npos);
}
