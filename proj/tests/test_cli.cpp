#include "vsteer/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "nlohmann/json.hpp"
#include "vsteer/augment.hpp"
#include "vsteer/model.hpp"
#include "vsteer/tokenizer.hpp"

using namespace vsteer;
using cli::ConfigEntry;
using cli::ConfigSource;
using cli::OptionResolver;

namespace {

const std::filesystem::path kFixtures = VSTEER_FIXTURE_DIR;

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "cli-XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    REQUIRE(mkdtemp(buf.data()) != nullptr);
    path = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

// Snapshots one variable and restores it on scope exit, whatever dispatch or
// the test did to it in between.
struct EnvGuard {
  std::string name;
  std::optional<std::string> old;
  explicit EnvGuard(const std::string& var) : name(var) {
    if (const char* v = std::getenv(var.c_str())) old = v;
  }
  void set(const std::string& value) { setenv(name.c_str(), value.c_str(), 1); }
  void clear() { unsetenv(name.c_str()); }
  ~EnvGuard() {
    if (old) {
      setenv(name.c_str(), old->c_str(), 1);
    } else {
      unsetenv(name.c_str());
    }
  }
};

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  RunResult r;
  r.code = cli::dispatch(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<nlohmann::json> parse_lines(const std::string& text) {
  std::vector<nlohmann::json> lines;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) lines.push_back(nlohmann::json::parse(line));
  }
  return lines;
}

// Artifacts shared by the pipeline cases: one extract + vocab + two tiny
// checkpoints, built through the CLI itself on first use.
struct Artifacts {
  TempDir dir;
  std::filesystem::path corpus, vocab, lm, labeled, disc, train_log;
};

const Artifacts& artifacts() {
  static Artifacts a;
  static bool ready = false;
  if (!ready) {
    a.corpus = a.dir.path / "corpus.jsonl";
    a.vocab = a.dir.path / "vocab.txt";
    a.lm = a.dir.path / "lm.ckpt";
    a.labeled = a.dir.path / "labeled.jsonl";
    a.disc = a.dir.path / "disc.ckpt";
    a.train_log = a.dir.path / "train_log.jsonl";

    auto extract = run_cli({"extract", "--root", (kFixtures / "verilog").string(), "--out",
                            a.corpus.string()});
    REQUIRE(extract.code == 0);
    auto vocab = run_cli(
        {"build-vocab", "--corpus", a.corpus.string(), "--out", a.vocab.string(), "--size", "300"});
    REQUIRE(vocab.code == 0);
    auto lm = run_cli({"train-lm", "--corpus", a.corpus.string(), "--vocab", a.vocab.string(),
                       "--out", a.lm.string(), "--embed", "16", "--layers", "1",
                       "--heads-per-layer", "2", "--epochs", "1", "--batch", "4", "--lr", "1e-3",
                       "--seed", "7", "--log", a.train_log.string()});
    REQUIRE(lm.code == 0);

    std::vector<augment::LabeledExample> labeled(4);
    labeled[0] = {"module a(input x, output y); assign y = x; endmodule", augment::Label::kPos,
                  5.0, std::nullopt, ""};
    labeled[1] = {"q8motx zz", augment::Label::kNeg, std::nullopt, std::nullopt, ""};
    labeled[2] = {"module b(input x, output y); assign y = ~x; endmodule", augment::Label::kPos,
                  6.0, std::nullopt, ""};
    labeled[3] = {"zz q8motx", augment::Label::kNeg, std::nullopt, std::nullopt, ""};
    augment::write_labeled_corpus(a.labeled, labeled, "length:100");
    auto disc = run_cli({"train-disc", "--labeled", a.labeled.string(), "--vocab",
                         a.vocab.string(), "--out", a.disc.string(), "--embed", "16", "--layers",
                         "1", "--heads-per-layer", "2", "--epochs", "1", "--batch", "2", "--lr",
                         "1e-3", "--seed", "3"});
    REQUIRE(disc.code == 0);
    ready = true;
  }
  return a;
}

}  // namespace

TEST_CASE("config text parses sections, comments, and duplicate keys") {
  auto entries = cli::parse_config_text(
      "# a comment\n"
      "top = 1\n"
      "\n"
      "[extract]\n"
      "root = /a\n"
      "root = /b\n"
      "  max-lines = 9   # trailing comment\n"
      "[generate]\n"
      "w = 2.5\n");
  REQUIRE(entries.size() == 5);
  CHECK(entries[0].section == "");
  CHECK(entries[0].key == "top");
  CHECK(entries[0].value == "1");
  CHECK(entries[1].section == "extract");
  CHECK(entries[1].value == "/a");
  CHECK(entries[2].value == "/b");
  CHECK(entries[3].key == "max-lines");
  CHECK(entries[3].value == "9");
  CHECK(entries[4].section == "generate");
  CHECK(entries[4].key == "w");
  CHECK(entries[4].value == "2.5");

  SUBCASE("a duplicate key resolves to its last value") {
    OptionResolver r(entries, "extract");
    CHECK(r.resolve_string("root", false, "", "none") == "/b");
    CHECK(r.last_source() == ConfigSource::kFile);
  }
  SUBCASE("malformed lines report their position") {
    CHECK_THROWS_WITH_AS(cli::parse_config_text("keyvalue\n"),
                         doctest::Contains("line 1"), std::runtime_error);
    CHECK_THROWS_WITH_AS(cli::parse_config_text("[extract]\n[oops\n"),
                         doctest::Contains("line 2"), std::runtime_error);
    CHECK_THROWS_AS(cli::parse_config_text("[]\n"), std::runtime_error);
    CHECK_THROWS_WITH_AS(cli::parse_config_text("[s]\n = v\n"), doctest::Contains("line 2"),
                         std::runtime_error);
  }
  SUBCASE("a missing config file is an error") {
    CHECK_THROWS_AS(cli::load_config_file("/nonexistent/vsteer.cfg"), std::runtime_error);
  }
}

TEST_CASE("environment variable names derive from section and key") {
  CHECK(cli::env_name("generate", "w") == "VSTEER_GENERATE_W");
  CHECK(cli::env_name("extract", "max-lines") == "VSTEER_EXTRACT_MAX_LINES");
  CHECK(cli::env_name("train-lm", "heads-per-layer") == "VSTEER_TRAIN_LM_HEADS_PER_LAYER");
  // tool binaries keep their short, documented names
  CHECK(cli::env_name("tools", "yosys") == "VSTEER_YOSYS");
  CHECK(cli::env_name("tools", "eqy") == "VSTEER_EQY");

  CHECK(cli::source_name(ConfigSource::kDefault) == "default");
  CHECK(cli::source_name(ConfigSource::kFile) == "file");
  CHECK(cli::source_name(ConfigSource::kEnv) == "env");
  CHECK(cli::source_name(ConfigSource::kFlag) == "flag");
}

TEST_CASE("flags outrank environment variables which outrank config files") {
  std::vector<ConfigEntry> with_file = {{"gen", "knob", "1.5"}};
  std::vector<ConfigEntry> no_file;
  EnvGuard env("VSTEER_GEN_KNOB");
  env.clear();

  struct Expect {
    bool flag, env_set, file;
    double value;
    ConfigSource source;
  };
  // every combination of the three layers, plus the default fallback
  const Expect table[] = {
      {true, true, true, 3.5, ConfigSource::kFlag},
      {true, true, false, 3.5, ConfigSource::kFlag},
      {true, false, true, 3.5, ConfigSource::kFlag},
      {true, false, false, 3.5, ConfigSource::kFlag},
      {false, true, true, 2.5, ConfigSource::kEnv},
      {false, true, false, 2.5, ConfigSource::kEnv},
      {false, false, true, 1.5, ConfigSource::kFile},
      {false, false, false, 0.5, ConfigSource::kDefault},
  };
  for (const auto& row : table) {
    CAPTURE(row.flag);
    CAPTURE(row.env_set);
    CAPTURE(row.file);
    if (row.env_set) {
      env.set("2.5");
    } else {
      env.clear();
    }
    OptionResolver r(row.file ? with_file : no_file, "gen");
    CHECK(r.resolve_double("knob", row.flag, 3.5, 0.5) == doctest::Approx(row.value));
    CHECK(r.last_source() == row.source);
  }

  SUBCASE("string and integer values use the same layering") {
    std::vector<ConfigEntry> entries = {{"gen", "name", "from-file"}, {"gen", "count", "11"}};
    OptionResolver r(entries, "gen");
    CHECK(r.resolve_string("name", false, "", "dflt") == "from-file");
    CHECK(r.resolve_uint("count", false, 0, 7) == 11);
    CHECK(r.resolve_uint("missing", false, 0, 7) == 7);
    CHECK(r.last_source() == ConfigSource::kDefault);
  }
  SUBCASE("unparseable layered numbers fail with their origin") {
    env.set("warm");
    OptionResolver r(no_file, "gen");
    CHECK_THROWS_WITH_AS(r.resolve_double("knob", false, 0, 0),
                         doctest::Contains("VSTEER_GEN_KNOB"), std::runtime_error);
    env.clear();
    std::vector<ConfigEntry> bad = {{"gen", "knob", "warm"}};
    OptionResolver r2(bad, "gen");
    CHECK_THROWS_WITH_AS(r2.resolve_double("knob", false, 0, 0), doctest::Contains("[gen] knob"),
                         std::runtime_error);
    CHECK_THROWS_AS(r2.resolve_uint("knob", false, 0, 0), std::runtime_error);
  }
  SUBCASE("every resolution is logged with its source") {
    env.set("2.5");
    OptionResolver r(with_file, "gen");
    r.resolve_double("knob", false, 0, 0);
    r.resolve_string("other", false, "", "x");
    REQUIRE(r.log().size() == 2);
    CHECK(r.log()[0] == "[config] gen.knob = 2.5 (env)");
    CHECK(r.log()[1] == "[config] gen.other = x (default)");
  }
}

TEST_CASE("dispatch reports usage errors and help consistently") {
  SUBCASE("top-level help") {
    auto r = run_cli({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("Usage") != std::string::npos);
    CHECK(r.out.find("extract") != std::string::npos);
    CHECK(r.out.find("eval") != std::string::npos);
  }
  SUBCASE("subcommand help") {
    auto r = run_cli({"generate", "--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("--temperature") != std::string::npos);
    CHECK(r.out.find("--disc") != std::string::npos);
  }
  SUBCASE("no subcommand prints usage and fails") {
    auto r = run_cli({});
    CHECK(r.code == 2);
    CHECK(r.err.find("Usage") != std::string::npos);
  }
  SUBCASE("unknown subcommand") {
    auto r = run_cli({"frobnicate"});
    CHECK(r.code == 2);
    CHECK(r.err.find("frobnicate") != std::string::npos);
    CHECK(r.err.find("Usage") != std::string::npos);
  }
  SUBCASE("unknown flag") {
    auto r = run_cli({"extract", "--bogus"});
    CHECK(r.code == 2);
    CHECK(r.err.find("--bogus") != std::string::npos);
  }
  SUBCASE("missing required option") {
    auto r = run_cli({"generate"});
    CHECK(r.code == 2);
    CHECK(r.err.find("--base") != std::string::npos);
  }
  SUBCASE("a flag value of the wrong type") {
    auto r = run_cli({"generate", "--base", "x", "--vocab", "y", "--n", "abc"});
    CHECK(r.code == 2);
  }
  SUBCASE("trace without a discriminator is a usage error") {
    const auto& a = artifacts();
    auto r = run_cli({"generate", "--base", a.lm.string(), "--vocab", a.vocab.string(), "--trace",
                      (a.dir.path / "t.jsonl").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("--disc") != std::string::npos);
  }
  SUBCASE("domain failures exit with 1") {
    auto r = run_cli({"extract", "--root", "/nonexistent/tree", "--out", "/tmp/never.jsonl"});
    CHECK(r.code == 1);
    CHECK(r.err.find("error:") != std::string::npos);
  }
}

TEST_CASE("the pipeline runs end to end through the command line") {
  const auto& a = artifacts();

  SUBCASE("extract wrote every balanced fixture unit") {
    CHECK(parse_lines(slurp(a.corpus)).size() == 7);
    auto again = a.dir.path / "corpus2.jsonl";
    auto r = run_cli({"extract", "--root", (kFixtures / "verilog").string(), "--out",
                      again.string()});
    REQUIRE(r.code == 0);
    CHECK(r.err.find("units=7") != std::string::npos);
    CHECK(r.err.find("dropped_unbalanced=1") != std::string::npos);
    CHECK(slurp(again) == slurp(a.corpus));  // reruns are byte-identical
  }

  SUBCASE("build-vocab hit the requested size") {
    CHECK(tokenizer::load_vocab(a.vocab.string()).size() == 300);
  }

  SUBCASE("training logged one json line per step") {
    auto lines = parse_lines(slurp(a.train_log));
    REQUIRE(lines.size() >= 2);
    for (const auto& line : lines) {
      CHECK(line.at("epoch").get<int>() == 1);
      CHECK(line.at("step").get<int>() >= 1);
      CHECK(line.at("lr").get<double>() > 0);
      CHECK(std::isfinite(line.at("loss").get<double>()));
      CHECK(line.contains("heldout_acc"));
    }
  }

  SUBCASE("the checkpoints load against the vocabulary") {
    auto vocab = tokenizer::load_vocab(a.vocab.string());
    CHECK(model::param_count(model::load_checkpoint(a.lm, vocab.hash())) > 0);
    CHECK(model::param_count(model::load_checkpoint(a.disc, vocab.hash())) > 0);
  }

  SUBCASE("generate samples to a file, deterministically per seed") {
    auto out1 = a.dir.path / "s1.jsonl";
    auto out2 = a.dir.path / "s2.jsonl";
    auto out3 = a.dir.path / "s3.jsonl";
    std::vector<std::string> args = {"generate", "--base", a.lm.string(), "--vocab",
                                     a.vocab.string(), "--prompt", "module top", "--n", "2",
                                     "--max-new", "12", "--seed", "9", "--out", out1.string()};
    auto r1 = run_cli(args);
    REQUIRE(r1.code == 0);
    CHECK(r1.err.find("guided=no") != std::string::npos);
    CHECK(r1.err.find("[config] generate.seed = 9 (flag)") != std::string::npos);
    auto lines = parse_lines(slurp(out1));
    REQUIRE(lines.size() == 2);
    CHECK(lines[0].at("sample").get<int>() == 0);
    CHECK(lines[1].at("sample").get<int>() == 1);
    CHECK(lines[0].contains("text"));

    args[args.size() - 1] = out2.string();
    REQUIRE(run_cli(args).code == 0);
    CHECK(slurp(out2) == slurp(out1));

    args[args.size() - 3] = "10";  // different seed
    args[args.size() - 1] = out3.string();
    REQUIRE(run_cli(args).code == 0);
    CHECK(slurp(out3) != slurp(out1));
  }

  SUBCASE("omitting --out streams samples to standard output") {
    auto r = run_cli({"generate", "--base", a.lm.string(), "--vocab", a.vocab.string(), "--n",
                      "1", "--max-new", "4", "--seed", "1"});
    REQUIRE(r.code == 0);
    auto lines = parse_lines(r.out);
    REQUIRE(lines.size() == 1);
    CHECK(lines[0].at("sample").get<int>() == 0);
  }

  SUBCASE("guided generation writes a per-step trace") {
    auto trace = a.dir.path / "trace.jsonl";
    auto r = run_cli({"generate", "--base", a.lm.string(), "--vocab", a.vocab.string(), "--disc",
                      a.disc.string(), "--n", "1", "--max-new", "6", "--seed", "2", "--w", "2",
                      "--out", (a.dir.path / "g.jsonl").string(), "--trace", trace.string()});
    REQUIRE(r.code == 0);
    CHECK(r.err.find("guided=yes") != std::string::npos);
    auto lines = parse_lines(slurp(trace));
    REQUIRE(!lines.empty());
    CHECK(lines.size() <= 6);
    for (size_t i = 0; i < lines.size(); ++i) {
      CHECK(lines[i].at("sample").get<int>() == 0);
      CHECK(lines[i].at("step").get<size_t>() == i);
      CHECK(lines[i].at("kept").get<size_t>() >= 1);
      double post = lines[i].at("posterior").get<double>();
      CHECK(post >= 0.0);
      CHECK(post <= 1.0);
    }
  }

  SUBCASE("a vocabulary from another run is rejected") {
    auto other = a.dir.path / "vocab320.txt";
    REQUIRE(run_cli({"build-vocab", "--corpus", a.corpus.string(), "--out", other.string(),
                     "--size", "320"})
                .code == 0);
    auto r = run_cli({"generate", "--base", a.lm.string(), "--vocab", other.string(), "--n", "1"});
    CHECK(r.code == 1);
    CHECK(r.err.find("error:") != std::string::npos);
  }
}

TEST_CASE("augment and eval run from the command line") {
  const auto& a = artifacts();

  SUBCASE("augment labels whatever survives the syntax screen") {
    auto out = a.dir.path / "aug.jsonl";
    auto r = run_cli({"augment", "--base", a.lm.string(), "--vocab", a.vocab.string(), "--heads",
                      (kFixtures / "verilog" / "gate_buf.v").string(), "--out", out.string(),
                      "--labeler", "length:1000", "--n", "3", "--seed", "5"});
    REQUIRE(r.code == 0);
    CHECK(r.err.find("candidates=3") != std::string::npos);
    auto loaded = augment::load_labeled_corpus(out);
    CHECK(loaded.examples.size() <= 3);
  }
  SUBCASE("an unknown labeler id fails the job") {
    auto r = run_cli({"augment", "--base", a.lm.string(), "--vocab", a.vocab.string(), "--heads",
                      (kFixtures / "verilog" / "gate_buf.v").string(), "--out",
                      (a.dir.path / "aug2.jsonl").string(), "--labeler", "mystery"});
    CHECK(r.code == 1);
  }

  SUBCASE("eval writes the report file") {
    TempDir problems;
    write_file(problems.path / "easy.json",
               R"({"module_definition":"","checker":"length:1000000","description":"anything"})");
    write_file(problems.path / "hard.json",
               R"({"module_definition":"","checker":"length:0"})");
    auto report = a.dir.path / "report.jsonl";
    auto r = run_cli({"eval", "--problems", problems.path.string(), "--base", a.lm.string(),
                      "--vocab", a.vocab.string(), "--n", "3", "--k", "1,2", "--max-new", "8",
                      "--seed", "11", "--workers", "1", "--out", report.string()});
    REQUIRE(r.code == 0);
    auto lines = parse_lines(slurp(report));
    REQUIRE(lines.size() == 3);
    CHECK(lines[0].at("id") == "easy");
    CHECK(lines[0].at("c").get<int>() == 3);
    CHECK(lines[1].at("id") == "hard");
    CHECK(lines[1].at("c").get<int>() == 0);
    CHECK(lines[2].at("mean_pass_at_k").at("1").get<double>() == doctest::Approx(0.5));
    CHECK(r.err.find("[eval] problems=2") != std::string::npos);

    SUBCASE("--labeler overrides every problem's checker") {
      auto r2 = run_cli({"eval", "--problems", problems.path.string(), "--base", a.lm.string(),
                         "--vocab", a.vocab.string(), "--labeler", "length:1000000", "--n", "2",
                         "--k", "1", "--max-new", "8", "--seed", "11", "--workers", "1", "--out",
                         report.string()});
      REQUIRE(r2.code == 0);
      auto lines2 = parse_lines(slurp(report));
      CHECK(lines2[0].at("c").get<int>() == 2);
      CHECK(lines2[1].at("c").get<int>() == 2);  // "hard" is judged by the override now
    }
    SUBCASE("an unknown override labeler fails before sampling") {
      auto r2 = run_cli({"eval", "--problems", problems.path.string(), "--base", a.lm.string(),
                         "--vocab", a.vocab.string(), "--labeler", "mystery", "--n", "2", "--k",
                         "1"});
      CHECK(r2.code == 1);
      CHECK(r2.err.find("mystery") != std::string::npos);
    }
    SUBCASE("k larger than n is rejected") {
      auto r2 = run_cli({"eval", "--problems", problems.path.string(), "--base", a.lm.string(),
                         "--vocab", a.vocab.string(), "--n", "3", "--k", "5"});
      CHECK(r2.code == 1);
    }
  }
}

TEST_CASE("a config file and environment variables feed every knob") {
  const auto& a = artifacts();
  auto cfg = a.dir.path / "vsteer.cfg";
  write_file(cfg, "[generate]\n"
                  "base = " + a.lm.string() + "\n"
                  "vocab = " + a.vocab.string() + "\n"
                  "n = 1\n"
                  "max-new = 4\n"
                  "seed = 3\n"
                  "temperature = 0.45\n");

  SUBCASE("file values satisfy required options") {
    auto r = run_cli({"--config", cfg.string(), "generate"});
    REQUIRE(r.code == 0);
    CHECK(r.err.find("[config] loaded " + cfg.string()) != std::string::npos);
    CHECK(r.err.find("[config] generate.temperature = 0.45 (file)") != std::string::npos);
    CHECK(r.err.find("[config] generate.seed = 3 (file)") != std::string::npos);
    CHECK(r.err.find("[config] generate.w = 1.5 (default)") != std::string::npos);
    CHECK(parse_lines(r.out).size() == 1);
  }
  SUBCASE("an environment variable beats the file") {
    EnvGuard env("VSTEER_GENERATE_TEMPERATURE");
    env.set("0.7");
    auto r = run_cli({"--config", cfg.string(), "generate"});
    REQUIRE(r.code == 0);
    CHECK(r.err.find("[config] generate.temperature = 0.7 (env)") != std::string::npos);
  }
  SUBCASE("a flag beats both") {
    EnvGuard env("VSTEER_GENERATE_TEMPERATURE");
    env.set("0.7");
    auto r = run_cli({"--config", cfg.string(), "generate", "--temperature", "0.9"});
    REQUIRE(r.code == 0);
    CHECK(r.err.find("[config] generate.temperature = 0.9 (flag)") != std::string::npos);
  }
  SUBCASE("VSTEER_CONFIG names the file when no flag does") {
    EnvGuard env("VSTEER_CONFIG");
    env.set(cfg.string());
    auto r = run_cli({"generate"});
    REQUIRE(r.code == 0);
    CHECK(r.err.find("[config] loaded " + cfg.string()) != std::string::npos);
  }
  SUBCASE("an unparseable environment number is a domain error") {
    EnvGuard env("VSTEER_GENERATE_TEMPERATURE");
    env.set("warm");
    auto r = run_cli({"--config", cfg.string(), "generate"});
    CHECK(r.code == 1);
    CHECK(r.err.find("VSTEER_GENERATE_TEMPERATURE") != std::string::npos);
  }
  SUBCASE("an unparseable file number is a domain error") {
    auto bad = a.dir.path / "bad.cfg";
    write_file(bad, "[generate]\n"
                    "base = " + a.lm.string() + "\n"
                    "vocab = " + a.vocab.string() + "\n"
                    "temperature = warm\n");
    auto r = run_cli({"--config", bad.string(), "generate"});
    CHECK(r.code == 1);
    CHECK(r.err.find("temperature") != std::string::npos);
  }
}

TEST_CASE("tool paths reach the adapters through the environment") {
  const auto& a = artifacts();
  EnvGuard yosys("VSTEER_YOSYS");
  yosys.clear();

  SUBCASE("the --yosys flag lands in the environment") {
    auto r = run_cli({"--yosys", "/fake/yosys", "build-vocab", "--corpus", a.corpus.string(),
                      "--out", (a.dir.path / "v.txt").string()});
    REQUIRE(r.code == 0);
    REQUIRE(std::getenv("VSTEER_YOSYS") != nullptr);
    CHECK(std::string(std::getenv("VSTEER_YOSYS")) == "/fake/yosys");
    CHECK(r.err.find("[config] tools.yosys = /fake/yosys (flag)") != std::string::npos);
  }
  SUBCASE("a [tools] config section works too") {
    auto cfg = a.dir.path / "tools.cfg";
    write_file(cfg, "[tools]\nyosys = /cfg/yosys\neqy = /cfg/eqy\n");
    auto r = run_cli({"--config", cfg.string(), "build-vocab", "--corpus", a.corpus.string(),
                      "--out", (a.dir.path / "v.txt").string()});
    REQUIRE(r.code == 0);
    EnvGuard eqy("VSTEER_EQY");  // snapshots the value dispatch just set
    REQUIRE(std::getenv("VSTEER_YOSYS") != nullptr);
    CHECK(std::string(std::getenv("VSTEER_YOSYS")) == "/cfg/yosys");
    REQUIRE(std::getenv("VSTEER_EQY") != nullptr);
    CHECK(std::string(std::getenv("VSTEER_EQY")) == "/cfg/eqy");
    eqy.clear();
  }
  SUBCASE("an existing environment value is left alone") {
    yosys.set("/env/yosys");
    auto r = run_cli({"build-vocab", "--corpus", a.corpus.string(), "--out",
                      (a.dir.path / "v.txt").string()});
    REQUIRE(r.code == 0);
    CHECK(std::string(std::getenv("VSTEER_YOSYS")) == "/env/yosys");
    CHECK(r.err.find("[config] tools.yosys = /env/yosys (env)") != std::string::npos);
  }
}
