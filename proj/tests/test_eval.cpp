#include "vsteer/eval.hpp"

#include <bit>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "nlohmann/json.hpp"
#include "vsteer/corpus.hpp"
#include "vsteer/tokenizer.hpp"
#include "vsteer/training.hpp"

using namespace vsteer;
using eval::EvalConfig;
using eval::EvalRecord;
using eval::Problem;
using tokenizer::Vocab;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "eval-XXXXXX").string();
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

struct EnvOverride {
  std::string name;
  std::optional<std::string> old;
  EnvOverride(const std::string& var, const std::string& value) : name(var) {
    if (const char* v = std::getenv(var.c_str())) old = v;
    setenv(var.c_str(), value.c_str(), 1);
  }
  ~EnvOverride() {
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

// Expected pass@k by enumerating every size-k subset of n samples.
double brute_force_pass_at_k(size_t n, size_t c, size_t k) {
  size_t hits = 0;
  size_t total = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<size_t>(std::popcount(mask)) != k) continue;
    total++;
    if (mask & ((1u << c) - 1)) hits++;  // passing samples sit at the low bits
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

model::ModelConfig soup_config() {
  model::ModelConfig c;
  c.context_length = 96;
  c.embed_dim = 16;
  c.num_layers = 1;
  c.num_heads = 2;
  c.vocab_size = Vocab::kBaseSize;
  c.seed = 3;
  return c;
}

Problem simple_problem(const std::string& id, const std::string& checker) {
  Problem p;
  p.id = id;
  p.module_definition = "module " + id + ";";
  p.checker = checker;
  return p;
}

std::vector<nlohmann::json> parse_report(const std::string& text) {
  std::vector<nlohmann::json> lines;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) lines.push_back(nlohmann::json::parse(line));
  return lines;
}

}  // namespace

TEST_CASE("pass@k matches the closed form on pinned cases") {
  CHECK(eval::pass_at_k(20, 0, 1) == 0.0);
  CHECK(eval::pass_at_k(20, 20, 10) == 1.0);
  CHECK(eval::pass_at_k(3, 1, 2) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(eval::pass_at_k(10, 3, 1) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(eval::pass_at_k(20, 15, 10) == 1.0);  // only 5 failures, k = 10

  CHECK_THROWS_AS(eval::pass_at_k(10, 3, 0), std::invalid_argument);
  CHECK_THROWS_AS(eval::pass_at_k(3, 1, 4), std::invalid_argument);
  CHECK_THROWS_AS(eval::pass_at_k(3, 4, 2), std::invalid_argument);
}

TEST_CASE("pass@k equals the subset-enumeration expectation") {
  for (size_t n = 1; n <= 10; ++n) {
    for (size_t c = 0; c <= n; ++c) {
      for (size_t k = 1; k <= n; ++k) {
        double expected = brute_force_pass_at_k(n, c, k);
        double got = eval::pass_at_k(n, c, k);
        CAPTURE(n);
        CAPTURE(c);
        CAPTURE(k);
        CHECK(got == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("pass@k is bounded and monotone in both k and c") {
  const size_t n = 20;
  for (size_t c = 0; c <= n; ++c) {
    for (size_t k = 1; k <= n; ++k) {
      double p = eval::pass_at_k(n, c, k);
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      if (k > 1) CHECK(p >= eval::pass_at_k(n, c, k - 1));
      if (c > 0) CHECK(p >= eval::pass_at_k(n, c - 1, k));
    }
  }
}

TEST_CASE("problems load sorted from a directory of json files") {
  TempDir dir;
  write_file(dir.path / "b_second.json",
             R"({"description": "Majority gate.", "module_definition": "module maj(input a, b, c, output y);", "checker": "keyword:assign"})");
  write_file(dir.path / "a_first.json",
             R"({"module_definition": "module short_one;", "checker": "length:50"})");
  write_file(dir.path / "c_third.json",
             R"({"module_definition": "module t;", "checker": "aig-nodes", "reference": "module t(output y); assign y = 1'b0; endmodule"})");
  write_file(dir.path / "notes.txt", "not a problem");
  std::filesystem::create_directory(dir.path / "sub.json");

  auto problems = eval::load_problems(dir.path);
  REQUIRE(problems.size() == 3);
  CHECK(problems[0].id == "a_first");
  CHECK(problems[1].id == "b_second");
  CHECK(problems[2].id == "c_third");
  CHECK(problems[1].description == "Majority gate.");
  CHECK(problems[0].description.empty());
  CHECK(problems[1].module_definition.find("module maj") == 0);
  CHECK(problems[0].checker == "length:50");
  CHECK(!problems[0].reference.has_value());
  REQUIRE(problems[2].reference.has_value());
  CHECK(problems[2].reference->name == "c_third_reference");
  CHECK(problems[2].reference->full_text.find("assign y") != std::string::npos);

  SUBCASE("an unknown checker fails at load with the filename") {
    write_file(dir.path / "zz_bad.json",
               R"({"module_definition": "module z;", "checker": "mystery"})");
    CHECK_THROWS_WITH_AS(eval::load_problems(dir.path), doctest::Contains("zz_bad"),
                         std::runtime_error);
  }

  SUBCASE("a relative checker with no reference source fails at load") {
    write_file(dir.path / "zz_rel.json",
               R"({"module_definition": "module z;", "checker": "aig-nodes"})");
    CHECK_THROWS_WITH_AS(eval::load_problems(dir.path),
                         doctest::Contains("needs a reference"), std::runtime_error);
  }

  SUBCASE("malformed json fails with the filename") {
    write_file(dir.path / "zz_broken.json", "{ not json");
    CHECK_THROWS_WITH_AS(eval::load_problems(dir.path), doctest::Contains("zz_broken"),
                         std::runtime_error);
  }

  SUBCASE("missing required fields fail") {
    write_file(dir.path / "zz_headless.json", R"({"checker": "syntax"})");
    CHECK_THROWS_WITH_AS(eval::load_problems(dir.path),
                         doctest::Contains("module_definition"), std::runtime_error);
  }

  SUBCASE("a non-object record fails") {
    write_file(dir.path / "zz_array.json", "[1, 2, 3]");
    CHECK_THROWS_AS(eval::load_problems(dir.path), std::runtime_error);
  }

  CHECK_THROWS_AS(eval::load_problems(dir.path / "missing"), std::runtime_error);
}

TEST_CASE("the benchmark harness counts checker verdicts per problem") {
  auto vocab = tokenizer::build_vocab({"module endmodule"}, Vocab::kBaseSize);
  auto params = model::init_parameters(soup_config(), vocab.hash());

  std::vector<Problem> problems = {
      simple_problem("always_pass", "length:1000000"),
      simple_problem("never_pass", "length:0"),
      simple_problem("sometimes", "keyword:e"),
  };

  EvalConfig cfg;
  cfg.n = 6;
  cfg.ks = {1, 2, 6};
  cfg.decode.max_new_tokens = 24;
  cfg.decode.temperature = 1.0;
  cfg.seed = 42;
  cfg.workers = 1;

  auto report = eval::run_benchmark(problems, params, nullptr, vocab, cfg);
  REQUIRE(report.records.size() == 3);
  CHECK(report.records[0].id == "always_pass");
  CHECK(report.records[0].c == 6);
  CHECK(report.records[0].note.empty());
  CHECK(report.records[1].c == 0);
  for (const auto& r : report.records) CHECK(r.outcomes.size() == 6);

  double third = eval::pass_at_k(6, report.records[2].c, 1);
  CHECK(report.mean_pass.at(1) == doctest::Approx((1.0 + 0.0 + third) / 3.0).epsilon(1e-12));
  CHECK(report.mean_pass.at(6) ==
        doctest::Approx((1.0 + 0.0 + eval::pass_at_k(6, report.records[2].c, 6)) / 3.0)
            .epsilon(1e-12));

  SUBCASE("a rerun reproduces the same outcomes") {
    auto again = eval::run_benchmark(problems, params, nullptr, vocab, cfg);
    for (size_t p = 0; p < problems.size(); ++p) {
      CHECK(again.records[p].outcomes == report.records[p].outcomes);
    }
  }

  SUBCASE("the worker count does not change the records") {
    EvalConfig threaded = cfg;
    threaded.workers = 3;
    auto again = eval::run_benchmark(problems, params, nullptr, vocab, threaded);
    for (size_t p = 0; p < problems.size(); ++p) {
      CHECK(again.records[p].outcomes == report.records[p].outcomes);
      CHECK(again.records[p].c == report.records[p].c);
    }
  }

  SUBCASE("no problems means an empty report") {
    auto empty = eval::run_benchmark({}, params, nullptr, vocab, cfg);
    CHECK(empty.records.empty());
    CHECK(empty.mean_pass.empty());
  }

  SUBCASE("checkpoint and vocabulary must agree") {
    auto stranger = model::init_parameters(soup_config(), vocab.hash() + 1);
    CHECK_THROWS_AS(eval::run_benchmark(problems, stranger, nullptr, vocab, cfg),
                    std::invalid_argument);
    CHECK_THROWS_AS(eval::run_benchmark(problems, params, &stranger, vocab, cfg),
                    std::invalid_argument);
  }

  SUBCASE("config knobs are validated") {
    EvalConfig bad = cfg;
    bad.n = 0;
    CHECK_THROWS_AS(eval::run_benchmark(problems, params, nullptr, vocab, bad),
                    std::invalid_argument);
    bad = cfg;
    bad.ks = {};
    CHECK_THROWS_AS(eval::run_benchmark(problems, params, nullptr, vocab, bad),
                    std::invalid_argument);
    bad = cfg;
    bad.ks = {7};  // exceeds n = 6
    CHECK_THROWS_AS(eval::run_benchmark(problems, params, nullptr, vocab, bad),
                    std::invalid_argument);
    bad = cfg;
    bad.decode.w = -1.0;
    CHECK_THROWS_AS(eval::run_benchmark(problems, params, nullptr, vocab, bad),
                    std::invalid_argument);
  }
}

TEST_CASE("a problem that cannot produce samples records zero passes") {
  auto vocab = tokenizer::build_vocab({"module endmodule"}, Vocab::kBaseSize);
  auto params = model::init_parameters(soup_config(), vocab.hash());

  EvalConfig cfg;
  cfg.n = 3;
  cfg.ks = {1};
  cfg.decode.max_new_tokens = 8;
  cfg.workers = 1;

  SUBCASE("oversized module definition") {
    Problem p = simple_problem("huge", "length:1000000");
    p.module_definition = std::string(400, 'x');  // prompt far beyond the context
    auto report = eval::run_benchmark({p}, params, nullptr, vocab, cfg);
    CHECK(report.records[0].c == 0);
    CHECK(!report.records[0].note.empty());
    for (bool outcome : report.records[0].outcomes) CHECK(!outcome);
    CHECK(report.mean_pass.at(1) == 0.0);
  }

  SUBCASE("oversized description") {
    Problem p = simple_problem("wordy", "length:1000000");
    p.description = std::string(400, 'd');
    auto report = eval::run_benchmark({p}, params, nullptr, vocab, cfg);
    CHECK(report.records[0].c == 0);
    CHECK(!report.records[0].note.empty());
  }

  SUBCASE("unknown checker on a hand-built problem") {
    Problem p = simple_problem("odd", "mystery");
    auto report = eval::run_benchmark({p}, params, nullptr, vocab, cfg);
    CHECK(report.records[0].c == 0);
    CHECK(report.records[0].note.find("unknown labeler") != std::string::npos);
  }

  SUBCASE("reference metric failure is contained in the record") {
    EnvOverride poison("VSTEER_YOSYS", "/nonexistent/yosys");
    Problem p = simple_problem("needs_tool", "aig-nodes");
    corpus::VerilogUnit ref;
    ref.name = "r";
    ref.full_text = "module r(output y); assign y = 1'b0; endmodule";
    p.reference = ref;
    auto report = eval::run_benchmark({p}, params, nullptr, vocab, cfg);
    CHECK(report.records[0].c == 0);
    CHECK(report.records[0].note.find("reference metric failed") != std::string::npos);
  }
}

TEST_CASE("synthetic coin-flip records concentrate around the pass rate") {
  std::mt19937_64 rng(7);
  std::bernoulli_distribution coin(0.5);
  std::vector<EvalRecord> records(50);
  for (size_t p = 0; p < records.size(); ++p) {
    records[p].id = "p" + std::to_string(p);
    records[p].n = 20;
    records[p].outcomes.resize(20);
    for (size_t s = 0; s < 20; ++s) records[p].outcomes[s] = coin(rng);
    records[p].c = static_cast<size_t>(
        std::count(records[p].outcomes.begin(), records[p].outcomes.end(), true));
  }

  auto mean = eval::mean_pass_at_k(records, {1, 5});
  CHECK(mean.at(1) > 0.4);
  CHECK(mean.at(1) < 0.6);
  CHECK(mean.at(5) > mean.at(1));

  // pass@1 reduces to the plain pass fraction
  for (const auto& r : records) {
    CHECK(eval::pass_at_k(r.n, r.c, 1) ==
          doctest::Approx(static_cast<double>(r.c) / 20.0).epsilon(1e-12));
  }

  CHECK(eval::mean_pass_at_k({}, {1, 5}).empty());
}

TEST_CASE("reports render with fixed fields and a consistent aggregate") {
  std::vector<EvalRecord> records(2);
  records[0].id = "p1";
  records[0].n = 4;
  records[0].c = 2;
  records[0].outcomes = {true, false, true, false};
  records[1].id = "p2";
  records[1].n = 4;
  records[1].c = 0;
  records[1].outcomes = {false, false, false, false};
  records[1].note = "timeout";

  std::vector<size_t> ks = {1, 2};
  std::string text = eval::render_report(records, ks);
  auto lines = parse_report(text);
  REQUIRE(lines.size() == 3);

  CHECK(lines[0]["id"] == "p1");
  CHECK(lines[0]["n"] == 4);
  CHECK(lines[0]["c"] == 2);
  CHECK(lines[0]["outcomes"] == nlohmann::json({true, false, true, false}));
  CHECK(lines[0]["pass_at_k"]["1"] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(lines[0]["pass_at_k"]["2"] == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(lines[0]["note"] == "");
  CHECK(lines[1]["note"] == "timeout");

  CHECK(lines[2]["problems"] == 2);
  CHECK(lines[2]["mean_pass_at_k"]["1"] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(lines[2]["mean_pass_at_k"]["2"] == doctest::Approx(5.0 / 12.0).epsilon(1e-12));

  SUBCASE("the aggregate equals a recomputation from the per-problem lines") {
    for (size_t k : ks) {
      double sum = 0.0;
      for (size_t p = 0; p < records.size(); ++p) {
        sum += lines[p]["pass_at_k"][std::to_string(k)].get<double>();
      }
      CHECK(lines[2]["mean_pass_at_k"][std::to_string(k)].get<double>() ==
            doctest::Approx(sum / 2.0).epsilon(1e-12));
    }
  }

  SUBCASE("field order is pinned") {
    std::string first = text.substr(0, text.find('\n'));
    CHECK(first.find("\"id\"") < first.find("\"n\""));
    CHECK(first.find("\"n\"") < first.find("\"c\""));
    CHECK(first.find("\"c\"") < first.find("\"outcomes\""));
    CHECK(first.find("\"outcomes\"") < first.find("\"pass_at_k\""));
    CHECK(first.find("\"pass_at_k\"") < first.find("\"note\""));
  }

  SUBCASE("rendering is reproducible and file emission matches") {
    CHECK(eval::render_report(records, ks) == text);
    TempDir dir;
    auto path = dir.path / "report.jsonl";
    eval::report_emit(records, ks, path);
    std::ifstream is(path, std::ios::binary);
    std::ostringstream got;
    got << is.rdbuf();
    CHECK(got.str() == text);
  }

  SUBCASE("no records still yields an aggregate line") {
    auto empty = parse_report(eval::render_report({}, ks));
    REQUIRE(empty.size() == 1);
    CHECK(empty[0]["problems"] == 0);
    CHECK(empty[0]["mean_pass_at_k"]["1"].is_null());
    CHECK(empty[0]["mean_pass_at_k"]["2"].is_null());
  }
}

TEST_CASE("guided decoding lifts pass rates on a steerable task") {
  // Same two-dialect construction as the guidance steering check, but the
  // generator sees the completion instruction during training so benchmark
  // prompts stay in-distribution.
  std::mt19937_64 rng(31);
  auto make = [&](const std::string& alphabet) {
    std::uniform_int_distribution<size_t> len(8, 12);
    std::uniform_int_distribution<size_t> pick(0, alphabet.size() - 1);
    std::string s;
    size_t n = len(rng);
    for (size_t i = 0; i < n; ++i) s += alphabet[pick(rng)];
    return s;
  };

  corpus::VerilogUnit empty_head;
  empty_head.name = "m";
  std::string instruction = corpus::make_autocomplete_instruction(empty_head);

  std::vector<training::LabeledExample> labeled;
  std::vector<corpus::InstructionExample> formatted;
  for (size_t i = 0; i < 24; ++i) {
    std::string a = make("abc ");
    std::string x = make("xyz ");
    labeled.push_back({a, true});
    labeled.push_back({x, false});
    formatted.push_back({instruction, a, corpus::Task::kAutocomplete});
    formatted.push_back({instruction, x, corpus::Task::kAutocomplete});
  }

  auto vocab = tokenizer::build_vocab({"abc xyz"}, Vocab::kBaseSize);
  model::ModelConfig mc;
  mc.context_length = 64;
  mc.embed_dim = 16;
  mc.num_layers = 2;
  mc.num_heads = 2;
  mc.vocab_size = Vocab::kBaseSize;
  mc.seed = 11;

  training::TrainConfig gen_tc;
  gen_tc.epochs = 8;
  gen_tc.batch_size = 8;
  gen_tc.lr_init = 3e-3;
  gen_tc.seed = 5;
  auto base = training::train_generator(formatted, vocab, mc, gen_tc);

  training::TrainConfig disc_tc;
  disc_tc.epochs = 20;  // sequence accuracy saturates early; per-token posteriors need longer
  disc_tc.batch_size = 8;
  disc_tc.lr_init = 6e-3;
  disc_tc.lr_min = 1e-3;
  disc_tc.lambda = 0.5;
  disc_tc.heldout_fraction = 0.25;
  disc_tc.seed = 13;
  model::ModelConfig dc = mc;
  dc.seed = 17;
  auto disc = training::train_discriminator(labeled, vocab, dc, disc_tc);

  std::vector<Problem> problems;
  for (int i = 0; i < 3; ++i) {
    Problem p;
    p.id = "p" + std::to_string(i);
    p.checker = "keyword:a";  // positive dialect emits 'a' almost surely
    problems.push_back(p);
  }

  EvalConfig cfg;
  cfg.n = 12;
  cfg.ks = {1, 4};
  cfg.decode.w = 4.0;
  cfg.decode.rho = 0.9;
  cfg.decode.tau = 0.75;
  cfg.decode.temperature = 0.8;
  cfg.decode.max_new_tokens = 16;
  cfg.seed = 99;
  cfg.workers = 1;

  auto unguided = eval::run_benchmark(problems, base, nullptr, vocab, cfg);
  auto guided = eval::run_benchmark(problems, base, &disc, vocab, cfg);

  double u1 = unguided.mean_pass.at(1);
  double g1 = guided.mean_pass.at(1);
  INFO("unguided pass@1 ", u1, " guided pass@1 ", g1);
  CHECK(u1 > 0.1);  // the mixed generator lands on the dialect about half the time
  CHECK(u1 < 0.9);
  CHECK(g1 > u1);
  CHECK(g1 - u1 >= 0.15);
  CHECK(guided.mean_pass.at(4) >= guided.mean_pass.at(1));

  SUBCASE("guided runs are reproducible") {
    auto again = eval::run_benchmark(problems, base, &disc, vocab, cfg);
    for (size_t p = 0; p < problems.size(); ++p) {
      CHECK(again.records[p].outcomes == guided.records[p].outcomes);
    }
  }
}
