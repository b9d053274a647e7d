#include "vsteer/cli.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "nlohmann/json.hpp"
#include "vsteer/augment.hpp"
#include "vsteer/corpus.hpp"
#include "vsteer/eval.hpp"
#include "vsteer/guidance.hpp"
#include "vsteer/labelers.hpp"
#include "vsteer/model.hpp"
#include "vsteer/tokenizer.hpp"
#include "vsteer/training.hpp"

namespace fs = std::filesystem;

namespace vsteer::cli {

namespace {

// post-parse problems that are still the caller's fault (exit 2, not 1)
struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t sample_seed(std::uint64_t run, std::uint64_t index) {
  return mix64(mix64(run) ^ mix64(index));
}

std::string trimmed(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string upper_key(const std::string& s) {
  std::string out;
  for (char ch : s) {
    out += ch == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  }
  return out;
}

double parse_double(const std::string& text, const std::string& where) {
  try {
    size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": not a number: " + text);
  }
}

std::uint64_t parse_uint(const std::string& text, const std::string& where) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw std::runtime_error(where + ": not a nonnegative integer: " + text);
  }
  return v;
}

std::string show_double(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string slurp_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream is(text);
  while (std::getline(is, part, ',')) {
    part = trimmed(part);
    if (!part.empty()) parts.push_back(part);
  }
  return parts;
}

std::set<corpus::Task> parse_tasks(const std::string& text) {
  std::set<corpus::Task> tasks;
  for (const auto& name : split_commas(text)) {
    auto task = corpus::parse_task(name);
    if (!task) throw std::invalid_argument("unknown task: " + name);
    tasks.insert(*task);
  }
  if (tasks.empty()) throw std::invalid_argument("no tasks requested");
  return tasks;
}

std::vector<size_t> parse_k_list(const std::string& text) {
  std::vector<size_t> ks;
  for (const auto& item : split_commas(text)) {
    ks.push_back(static_cast<size_t>(parse_uint(item, "--k")));
  }
  if (ks.empty()) throw std::invalid_argument("--k needs at least one value");
  return ks;
}

bool given(const CLI::Option* opt) { return opt != nullptr && opt->count() > 0; }

// resolve a path-like option that must end up nonempty from some layer
std::string require_value(OptionResolver& r, const std::string& key, const CLI::Option* opt,
                          const std::string& flag_value, const std::string& flag_name) {
  std::string v = r.resolve_string(key, given(opt), flag_value, "");
  if (v.empty()) {
    throw UsageFailure("missing required " + flag_name + " (or config key " + key + ")");
  }
  return v;
}

void flush_log(const OptionResolver& r, std::ostream& err) {
  for (const auto& line : r.log()) err << line << "\n";
}

training::LogSink jsonl_sink(std::ofstream& os) {
  return [&os](const training::TrainLogEntry& entry) {
    nlohmann::ordered_json j;
    j["epoch"] = entry.epoch;
    j["step"] = entry.step;
    j["lr"] = entry.lr;
    j["loss"] = entry.loss;
    j["loss_g"] = entry.loss_g;
    j["loss_d"] = entry.loss_d;
    if (entry.heldout_acc) {
      j["heldout_acc"] = *entry.heldout_acc;
    } else {
      j["heldout_acc"] = nullptr;
    }
    os << j.dump() << "\n";
  };
}

struct ModelFlags {
  std::uint64_t context = 256, embed = 128, layers = 4, heads = 2, model_seed = 0;
  CLI::Option *context_o = nullptr, *embed_o = nullptr, *layers_o = nullptr, *heads_o = nullptr,
              *model_seed_o = nullptr;

  void wire(CLI::App* cmd) {
    context_o = cmd->add_option("--context", context, "model context length (default 256)");
    embed_o = cmd->add_option("--embed", embed, "embedding width (default 128)");
    layers_o = cmd->add_option("--layers", layers, "transformer blocks (default 4)");
    heads_o = cmd->add_option("--heads-per-layer", heads, "attention heads (default 2)");
    model_seed_o = cmd->add_option("--model-seed", model_seed, "parameter init seed (default 0)");
  }

  model::ModelConfig resolve(OptionResolver& r, size_t vocab_size) const {
    model::ModelConfig mc;
    mc.context_length = r.resolve_uint("context", given(context_o), context, 256);
    mc.embed_dim = r.resolve_uint("embed", given(embed_o), embed, 128);
    mc.num_layers = r.resolve_uint("layers", given(layers_o), layers, 4);
    mc.num_heads = r.resolve_uint("heads-per-layer", given(heads_o), heads, 2);
    mc.seed = r.resolve_uint("model-seed", given(model_seed_o), model_seed, 0);
    mc.vocab_size = vocab_size;
    return mc;
  }
};

struct TrainFlags {
  std::uint64_t epochs = 1, batch = 8;
  double lr = 3e-4, lr_min = 0.0, heldout = 0.2;
  std::uint64_t seed = 0;
  std::string log;
  CLI::Option *epochs_o = nullptr, *batch_o = nullptr, *lr_o = nullptr, *lr_min_o = nullptr,
              *heldout_o = nullptr, *seed_o = nullptr, *log_o = nullptr;

  void wire(CLI::App* cmd) {
    epochs_o = cmd->add_option("--epochs", epochs, "training epochs (default 1)");
    batch_o = cmd->add_option("--batch", batch, "batch size (default 8)");
    lr_o = cmd->add_option("--lr", lr, "peak learning rate (default 3e-4)");
    lr_min_o = cmd->add_option("--lr-min", lr_min, "cosine floor (default 0)");
    heldout_o = cmd->add_option("--heldout", heldout, "heldout fraction (default 0.2)");
    seed_o = cmd->add_option("--seed", seed, "shuffling seed (default 0)");
    log_o = cmd->add_option("--log", log, "JSONL training log path");
  }

  training::TrainConfig resolve(OptionResolver& r, AppConfig& cfg) const {
    training::TrainConfig tc;
    tc.epochs = r.resolve_uint("epochs", given(epochs_o), epochs, 1);
    tc.batch_size = r.resolve_uint("batch", given(batch_o), batch, 8);
    tc.lr_init = r.resolve_double("lr", given(lr_o), lr, 3e-4);
    tc.lr_min = r.resolve_double("lr-min", given(lr_min_o), lr_min, 0.0);
    tc.heldout_fraction = r.resolve_double("heldout", given(heldout_o), heldout, 0.2);
    tc.seed = r.resolve_uint("seed", given(seed_o), seed, 0);
    cfg.seed = tc.seed;
    return tc;
  }
};

struct ExtractCmd {
  std::string root, out, c_dir, tasks;
  std::uint64_t min_lines = 4, max_lines = 10000, max_tokens = 1024;
  CLI::Option *root_o = nullptr, *out_o = nullptr, *c_dir_o = nullptr, *tasks_o = nullptr,
              *min_o = nullptr, *max_o = nullptr, *tok_o = nullptr;

  void wire(CLI::App* cmd) {
    root_o = cmd->add_option("--root", root, "source tree to scan for .v/.sv files");
    out_o = cmd->add_option("--out", out, "corpus file to write");
    min_o = cmd->add_option("--min-lines", min_lines, "smallest file kept (default 4)");
    max_o = cmd->add_option("--max-lines", max_lines, "largest file kept (default 10000)");
    tok_o = cmd->add_option("--max-tokens", max_tokens, "largest unit kept (default 1024)");
    c_dir_o = cmd->add_option("--c-dir", c_dir, "directory of <unit>.c translations");
    tasks_o = cmd->add_option("--tasks", tasks,
                              "tasks the corpus should support (default autocomplete)");
  }

  int run(const std::vector<ConfigEntry>& entries, std::ostream&, std::ostream& err) {
    OptionResolver r(entries, "extract");
    AppConfig cfg;
    std::string root_dir = require_value(r, "root", root_o, root, "--root");
    cfg.corpus = require_value(r, "out", out_o, out, "--out");
    std::uint64_t lo = r.resolve_uint("min-lines", given(min_o), min_lines, 4);
    std::uint64_t hi = r.resolve_uint("max-lines", given(max_o), max_lines, 10000);
    std::uint64_t max_tok = r.resolve_uint("max-tokens", given(tok_o), max_tokens, 1024);
    std::string c_directory = r.resolve_string("c-dir", given(c_dir_o), c_dir, "");
    std::string task_text = r.resolve_string("tasks", given(tasks_o), tasks, "autocomplete");
    flush_log(r, err);

    auto task_set = parse_tasks(task_text);
    if ((task_set.count(corpus::Task::kV2c) || task_set.count(corpus::Task::kC2v)) &&
        c_directory.empty()) {
      throw std::invalid_argument("v2c/c2v corpora need --c-dir");
    }
    if (task_set.count(corpus::Task::kRewrite)) {
      throw std::invalid_argument("rewrite has no derivable answer; extract cannot prepare it");
    }

    auto scan = corpus::scan_tree(root_dir, lo, hi);
    corpus::ExtractReport report;
    std::vector<corpus::VerilogUnit> units;
    for (const auto& file : scan.files) {
      auto found = corpus::extract_units(file, &report);
      units.insert(units.end(), found.begin(), found.end());
    }
    // Token budgets are counted against the raw byte alphabet; at base size no
    // merges are learned, so the seed text is irrelevant.
    auto byte_vocab = tokenizer::build_vocab({"v"}, tokenizer::Vocab::kBaseSize);
    units = corpus::filter_by_tokens(std::move(units), byte_vocab, max_tok);
    units = corpus::dedup(std::move(units));

    size_t translations = 0;
    std::vector<corpus::CorpusRecord> records;
    records.reserve(units.size());
    for (auto& unit : units) {
      corpus::CorpusRecord record{std::move(unit), std::nullopt};
      if (!c_directory.empty()) {
        fs::path c_path = fs::path(c_directory) / (record.unit.name + ".c");
        if (fs::is_regular_file(c_path)) {
          record.c_program = slurp_file(c_path);
          translations++;
        }
      }
      records.push_back(std::move(record));
    }
    corpus::write_unit_corpus(cfg.corpus, records);
    err << "[extract] files=" << scan.files.size() << " units=" << records.size()
        << " translations=" << translations << " dropped_unbalanced=" << report.dropped_unbalanced
        << " dropped_malformed=" << report.dropped_malformed
        << " skipped_unreadable=" << scan.skipped_unreadable << "\n";
    return 0;
  }
};

struct BuildVocabCmd {
  std::string corpus_path, out;
  std::uint64_t size = 512;
  CLI::Option *corpus_o = nullptr, *out_o = nullptr, *size_o = nullptr;

  void wire(CLI::App* cmd) {
    corpus_o = cmd->add_option("--corpus", corpus_path, "unit corpus file");
    out_o = cmd->add_option("--out", out, "vocabulary file to write");
    size_o = cmd->add_option("--size", size, "target vocabulary size (default 512)");
  }

  int run(const std::vector<ConfigEntry>& entries, std::ostream&, std::ostream& err) {
    OptionResolver r(entries, "build-vocab");
    AppConfig cfg;
    cfg.corpus = require_value(r, "corpus", corpus_o, corpus_path, "--corpus");
    cfg.vocab = require_value(r, "out", out_o, out, "--out");
    std::uint64_t target = r.resolve_uint("size", given(size_o), size, 512);
    flush_log(r, err);

    auto records = corpus::load_unit_corpus(cfg.corpus);
    std::vector<std::string> texts;
    texts.reserve(records.size());
    for (const auto& record : records) {
      texts.push_back(record.unit.full_text);
      if (record.c_program) texts.push_back(*record.c_program);
    }
    auto vocab = tokenizer::build_vocab(texts, static_cast<int>(target));
    tokenizer::save_vocab(vocab, cfg.vocab.string());
    err << "[build-vocab] units=" << records.size() << " size=" << vocab.size() << "\n";
    return 0;
  }
};

struct TrainLmCmd {
  std::string corpus_path, vocab_path, out, tasks;
  ModelFlags model;
  TrainFlags train;
  CLI::Option *corpus_o = nullptr, *vocab_o = nullptr, *out_o = nullptr, *tasks_o = nullptr;

  void wire(CLI::App* cmd) {
    corpus_o = cmd->add_option("--corpus", corpus_path, "unit corpus file");
    vocab_o = cmd->add_option("--vocab", vocab_path, "vocabulary file");
    out_o = cmd->add_option("--out", out, "checkpoint to write");
    tasks_o = cmd->add_option("--tasks", tasks, "instruction tasks (default autocomplete)");
    model.wire(cmd);
    train.wire(cmd);
  }

  int run(const std::vector<ConfigEntry>& entries, std::ostream&, std::ostream& err) {
    OptionResolver r(entries, "train-lm");
    AppConfig cfg;
    cfg.corpus = require_value(r, "corpus", corpus_o, corpus_path, "--corpus");
    cfg.vocab = require_value(r, "vocab", vocab_o, vocab_path, "--vocab");
    cfg.out = require_value(r, "out", out_o, out, "--out");
    std::string task_text = r.resolve_string("tasks", given(tasks_o), tasks, "autocomplete");
    std::string log_path = r.resolve_string("log", given(train.log_o), train.log, "");
    auto vocab = tokenizer::load_vocab(cfg.vocab.string());
    model::ModelConfig mc = model.resolve(r, static_cast<size_t>(vocab.size()));
    training::TrainConfig tc = train.resolve(r, cfg);
    flush_log(r, err);

    auto records = corpus::load_unit_corpus(cfg.corpus);
    std::vector<corpus::VerilogUnit> units;
    std::vector<corpus::TranslationPair> translations;
    for (const auto& record : records) {
      units.push_back(record.unit);
      if (record.c_program) translations.push_back({record.unit, *record.c_program});
    }
    auto pairs = corpus::build_instruction_pairs(units, translations, parse_tasks(task_text));
    if (pairs.empty()) throw std::invalid_argument("corpus produced no training examples");

    std::ofstream log_os;
    training::LogSink sink;
    if (!log_path.empty()) {
      log_os.open(log_path, std::ios::binary | std::ios::trunc);
      if (!log_os) throw std::runtime_error("cannot write training log to " + log_path);
      sink = jsonl_sink(log_os);
    }
    auto params = training::train_generator(pairs, vocab, mc, tc, sink);
    model::save_checkpoint(params, cfg.out);
    err << "[train-lm] examples=" << pairs.size() << " params=" << model::param_count(params)
        << "\n";
    return 0;
  }
};

struct TrainDiscCmd {
  std::string labeled_path, vocab_path, out;
  double lambda = 0.5;
  ModelFlags model;
  TrainFlags train;
  CLI::Option *labeled_o = nullptr, *vocab_o = nullptr, *out_o = nullptr, *lambda_o = nullptr;

  void wire(CLI::App* cmd) {
    labeled_o = cmd->add_option("--labeled", labeled_path, "labeled corpus file");
    vocab_o = cmd->add_option("--vocab", vocab_path, "vocabulary file");
    out_o = cmd->add_option("--out", out, "checkpoint to write");
    lambda_o = cmd->add_option("--lambda", lambda,
                               "generative weight in the hybrid objective (default 0.5)");
    model.wire(cmd);
    train.wire(cmd);
  }

  int run(const std::vector<ConfigEntry>& entries, std::ostream&, std::ostream& err) {
    OptionResolver r(entries, "train-disc");
    AppConfig cfg;
    std::string labeled_file = require_value(r, "labeled", labeled_o, labeled_path, "--labeled");
    cfg.vocab = require_value(r, "vocab", vocab_o, vocab_path, "--vocab");
    cfg.out = require_value(r, "out", out_o, out, "--out");
    cfg.lambda = r.resolve_double("lambda", given(lambda_o), lambda, 0.5);
    std::string log_path = r.resolve_string("log", given(train.log_o), train.log, "");
    auto vocab = tokenizer::load_vocab(cfg.vocab.string());
    model::ModelConfig mc = model.resolve(r, static_cast<size_t>(vocab.size()));
    training::TrainConfig tc = train.resolve(r, cfg);
    tc.lambda = cfg.lambda;
    flush_log(r, err);

    auto loaded = augment::load_labeled_corpus(labeled_file);
    auto data = augment::to_training_examples(loaded.examples);
    if (data.empty()) throw std::invalid_argument("labeled corpus is empty");
    size_t pos = 0;
    for (const auto& ex : data) {
      if (ex.positive) pos++;
    }

    std::ofstream log_os;
    training::LogSink sink;
    if (!log_path.empty()) {
      log_os.open(log_path, std::ios::binary | std::ios::trunc);
      if (!log_os) throw std::runtime_error("cannot write training log to " + log_path);
      sink = jsonl_sink(log_os);
    }
    auto params = training::train_discriminator(data, vocab, mc, tc, sink);
    model::save_checkpoint(params, cfg.out);
    err << "[train-disc] examples=" << data.size() << " pos=" << pos
        << " neg=" << data.size() - pos << "\n";
    return 0;
  }
};

struct GenerateCmd {
  std::string base, vocab_path, disc, prompt, out, trace;
  std::uint64_t n = 1, max_new = 128, seed = 0;
  double w = 1.5, rho = 0.9, tau = 0.75, temperature = 0.8;
  CLI::Option *base_o = nullptr, *vocab_o = nullptr, *disc_o = nullptr, *prompt_o = nullptr,
              *out_o = nullptr, *trace_o = nullptr, *n_o = nullptr, *max_new_o = nullptr,
              *seed_o = nullptr, *w_o = nullptr, *rho_o = nullptr, *tau_o = nullptr,
              *temperature_o = nullptr;

  void wire(CLI::App* cmd) {
    base_o = cmd->add_option("--base", base, "generator checkpoint");
    vocab_o = cmd->add_option("--vocab", vocab_path, "vocabulary file");
    disc_o = cmd->add_option("--disc", disc, "discriminator checkpoint (enables guidance)");
    prompt_o = cmd->add_option("--prompt", prompt, "prompt text (default empty)");
    n_o = cmd->add_option("--n", n, "samples to draw (default 1)");
    w_o = cmd->add_option("--w", w, "discriminator weight (default 1.5)");
    rho_o = cmd->add_option("--rho", rho, "cumulative probability cut (default 0.9)");
    tau_o = cmd->add_option("--tau", tau, "posterior threshold (default 0.75)");
    temperature_o =
        cmd->add_option("--temperature", temperature, "sampling temperature (default 0.8)");
    max_new_o = cmd->add_option("--max-new", max_new, "token budget per sample (default 128)");
    seed_o = cmd->add_option("--seed", seed, "run seed (default 0)");
    out_o = cmd->add_option("--out", out, "JSONL output file (default stdout)");
    trace_o = cmd->add_option("--trace", trace, "JSONL per-step trace file (needs --disc)");
  }

  int run(const std::vector<ConfigEntry>& entries, std::ostream& out_stream, std::ostream& err) {
    OptionResolver r(entries, "generate");
    AppConfig cfg;
    cfg.base_checkpoint = require_value(r, "base", base_o, base, "--base");
    cfg.vocab = require_value(r, "vocab", vocab_o, vocab_path, "--vocab");
    std::string disc_path = r.resolve_string("disc", given(disc_o), disc, "");
    std::string prompt_text = r.resolve_string("prompt", given(prompt_o), prompt, "");
    std::uint64_t samples = r.resolve_uint("n", given(n_o), n, 1);
    cfg.w = r.resolve_double("w", given(w_o), w, 1.5);
    cfg.rho = r.resolve_double("rho", given(rho_o), rho, 0.9);
    cfg.tau = r.resolve_double("tau", given(tau_o), tau, 0.75);
    cfg.temperature = r.resolve_double("temperature", given(temperature_o), temperature, 0.8);
    std::uint64_t budget = r.resolve_uint("max-new", given(max_new_o), max_new, 128);
    cfg.seed = r.resolve_uint("seed", given(seed_o), seed, 0);
    std::string out_path = r.resolve_string("out", given(out_o), out, "");
    std::string trace_path = r.resolve_string("trace", given(trace_o), trace, "");
    flush_log(r, err);

    if (samples == 0) throw std::invalid_argument("--n must be positive");
    if (!trace_path.empty() && disc_path.empty()) {
      throw UsageFailure("--trace records guidance decisions and needs --disc");
    }

    auto vocab = tokenizer::load_vocab(cfg.vocab.string());
    auto params = model::load_checkpoint(cfg.base_checkpoint, vocab.hash());
    std::optional<model::ModelParameters> disc_params;
    if (!disc_path.empty()) {
      cfg.disc_checkpoint = disc_path;
      disc_params = model::load_checkpoint(cfg.disc_checkpoint, vocab.hash());
    }

    std::vector<int> prompt_tokens;
    prompt_tokens.push_back(tokenizer::Vocab::kBos);
    for (int id : tokenizer::encode(prompt_text, vocab)) prompt_tokens.push_back(id);

    std::ofstream out_file;
    std::ostream* data = &out_stream;
    if (!out_path.empty()) {
      out_file.open(out_path, std::ios::binary | std::ios::trunc);
      if (!out_file) throw std::runtime_error("cannot write samples to " + out_path);
      data = &out_file;
    }
    std::ofstream trace_os;
    if (!trace_path.empty()) {
      trace_os.open(trace_path, std::ios::binary | std::ios::trunc);
      if (!trace_os) throw std::runtime_error("cannot write trace to " + trace_path);
    }

    for (std::uint64_t i = 0; i < samples; ++i) {
      std::vector<int> tokens;
      if (disc_params) {
        guidance::GuidanceConfig g;
        g.w = cfg.w;
        g.rho = cfg.rho;
        g.tau = cfg.tau;
        g.temperature = cfg.temperature;
        g.max_new_tokens = budget;
        g.seed = sample_seed(cfg.seed, i);
        auto result = guidance::generate(params, *disc_params, prompt_tokens, g);
        tokens = result.tokens;
        if (trace_os.is_open()) {
          for (size_t s = 0; s < result.trace.size(); ++s) {
            nlohmann::ordered_json line;
            line["sample"] = i;
            line["step"] = s;
            line["token"] = result.trace[s].token;
            line["kept"] = result.trace[s].kept;
            line["posterior"] = result.trace[s].posterior;
            trace_os << line.dump() << "\n";
          }
        }
      } else {
        tokens = guidance::sample_sequence(params, prompt_tokens, budget, cfg.temperature,
                                           sample_seed(cfg.seed, i));
      }
      std::vector<int> body;
      for (int id : tokens) {
        if (!vocab.is_special(id)) body.push_back(id);
      }
      nlohmann::ordered_json record;
      record["sample"] = i;
      record["text"] = tokenizer::decode(body, vocab);
      // byte-level sampling can produce invalid UTF-8; keep the record writable
      *data << record.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
    }
    err << "[generate] samples=" << samples << " guided=" << (disc_params ? "yes" : "no")
        << "\n";
    return 0;
  }
};

struct AugmentCmd {
  std::string base, vocab_path, heads, out, labeler = "syntax", reference;
  std::uint64_t n = 8, seed = 0;
  double temperature = 1.2;
  CLI::Option *base_o = nullptr, *vocab_o = nullptr, *heads_o = nullptr, *out_o = nullptr,
              *labeler_o = nullptr, *reference_o = nullptr, *n_o = nullptr, *seed_o = nullptr,
              *temperature_o = nullptr;

  void wire(CLI::App* cmd) {
    base_o = cmd->add_option("--base", base, "generator checkpoint");
    vocab_o = cmd->add_option("--vocab", vocab_path, "vocabulary file");
    heads_o = cmd->add_option("--heads", heads, "Verilog file whose units seed the completions");
    n_o = cmd->add_option("--n", n, "samples per head (default 8)");
    temperature_o =
        cmd->add_option("--temperature", temperature, "sampling temperature (default 1.2)");
    labeler_o = cmd->add_option("--labeler", labeler, "labeler id (default syntax)");
    reference_o =
        cmd->add_option("--reference", reference, "reference design for relative labelers");
    seed_o = cmd->add_option("--seed", seed, "run seed (default 0)");
    out_o = cmd->add_option("--out", out, "labeled corpus file to write");
  }

  int run(const std::vector<ConfigEntry>& entries, std::ostream&, std::ostream& err) {
    OptionResolver r(entries, "augment");
    AppConfig cfg;
    cfg.base_checkpoint = require_value(r, "base", base_o, base, "--base");
    cfg.vocab = require_value(r, "vocab", vocab_o, vocab_path, "--vocab");
    std::string heads_path = require_value(r, "heads", heads_o, heads, "--heads");
    cfg.out = require_value(r, "out", out_o, out, "--out");
    std::uint64_t per_head = r.resolve_uint("n", given(n_o), n, 8);
    cfg.temperature = r.resolve_double("temperature", given(temperature_o), temperature, 1.2);
    std::string labeler_id = r.resolve_string("labeler", given(labeler_o), labeler, "syntax");
    std::string reference_path = r.resolve_string("reference", given(reference_o), reference, "");
    cfg.seed = r.resolve_uint("seed", given(seed_o), seed, 0);
    flush_log(r, err);

    auto vocab = tokenizer::load_vocab(cfg.vocab.string());
    auto params = model::load_checkpoint(cfg.base_checkpoint, vocab.hash());

    corpus::SourceFile source{heads_path, slurp_file(heads_path), 0};
    source.line_count = corpus::count_lines(source.content);
    augment::AugmentJob job;
    job.heads = corpus::extract_units(source);
    if (job.heads.empty()) {
      throw std::invalid_argument("no Verilog units found in " + heads_path);
    }
    job.samples_per_head = per_head;
    job.temperature = cfg.temperature;
    job.labeler_id = labeler_id;
    job.seed = cfg.seed;
    if (!reference_path.empty()) {
      corpus::VerilogUnit ref;
      ref.name = fs::path(reference_path).stem().string();
      ref.full_text = slurp_file(reference_path);
      job.reference = std::move(ref);
    }

    auto result = augment::run_augment_job(params, vocab, job);
    augment::write_labeled_corpus(cfg.out, result.examples, labeler_id);
    size_t pos = 0;
    for (const auto& ex : result.examples) {
      if (ex.label == augment::Label::kPos) pos++;
    }
    err << "[augment] candidates=" << result.candidates << " survivors=" << result.survivors
        << " rejected=" << result.rejected << " checker_failures=" << result.checker_failures
        << " pos=" << pos << " neg=" << result.examples.size() - pos
        << " skipped_heads=" << result.skipped_heads.size() << "\n";
    return 0;
  }
};

struct EvalCmd {
  std::string problems, base, vocab_path, disc, out, labeler, k_list = "1,5,10";
  std::uint64_t n = 20, max_new = 128, seed = 0, workers = 0;
  double w = 1.5, rho = 0.9, tau = 0.75, temperature = 0.8;
  CLI::Option *problems_o = nullptr, *base_o = nullptr, *vocab_o = nullptr, *disc_o = nullptr,
              *out_o = nullptr, *labeler_o = nullptr, *k_o = nullptr, *n_o = nullptr,
              *max_new_o = nullptr, *seed_o = nullptr, *workers_o = nullptr, *w_o = nullptr,
              *rho_o = nullptr, *tau_o = nullptr, *temperature_o = nullptr;

  void wire(CLI::App* cmd) {
    problems_o = cmd->add_option("--problems", problems, "directory of problem json files");
    base_o = cmd->add_option("--base", base, "generator checkpoint");
    vocab_o = cmd->add_option("--vocab", vocab_path, "vocabulary file");
    disc_o = cmd->add_option("--disc", disc, "discriminator checkpoint (enables guidance)");
    labeler_o = cmd->add_option("--labeler", labeler,
                                "judge every problem with this labeler instead of its own");
    n_o = cmd->add_option("--n", n, "samples per problem (default 20)");
    k_o = cmd->add_option("--k", k_list, "comma list of k values (default 1,5,10)");
    w_o = cmd->add_option("--w", w, "discriminator weight (default 1.5)");
    rho_o = cmd->add_option("--rho", rho, "cumulative probability cut (default 0.9)");
    tau_o = cmd->add_option("--tau", tau, "posterior threshold (default 0.75)");
    temperature_o =
        cmd->add_option("--temperature", temperature, "sampling temperature (default 0.8)");
    max_new_o = cmd->add_option("--max-new", max_new, "token budget per sample (default 128)");
    seed_o = cmd->add_option("--seed", seed, "run seed (default 0)");
    workers_o = cmd->add_option("--workers", workers, "worker threads (default: one per core)");
    out_o = cmd->add_option("--out", out, "report file (default stdout)");
  }

  int run(const std::vector<ConfigEntry>& entries, std::ostream& out_stream, std::ostream& err) {
    OptionResolver r(entries, "eval");
    AppConfig cfg;
    std::string problem_dir = require_value(r, "problems", problems_o, problems, "--problems");
    cfg.base_checkpoint = require_value(r, "base", base_o, base, "--base");
    cfg.vocab = require_value(r, "vocab", vocab_o, vocab_path, "--vocab");
    std::string disc_path = r.resolve_string("disc", given(disc_o), disc, "");
    std::string labeler_override = r.resolve_string("labeler", given(labeler_o), labeler, "");
    std::uint64_t samples = r.resolve_uint("n", given(n_o), n, 20);
    std::string k_text = r.resolve_string("k", given(k_o), k_list, "1,5,10");
    cfg.w = r.resolve_double("w", given(w_o), w, 1.5);
    cfg.rho = r.resolve_double("rho", given(rho_o), rho, 0.9);
    cfg.tau = r.resolve_double("tau", given(tau_o), tau, 0.75);
    cfg.temperature = r.resolve_double("temperature", given(temperature_o), temperature, 0.8);
    std::uint64_t budget = r.resolve_uint("max-new", given(max_new_o), max_new, 128);
    cfg.seed = r.resolve_uint("seed", given(seed_o), seed, 0);
    cfg.workers = r.resolve_uint("workers", given(workers_o), workers, 0);
    std::string out_path = r.resolve_string("out", given(out_o), out, "");
    flush_log(r, err);

    auto problem_set = eval::load_problems(problem_dir);
    if (!labeler_override.empty()) {
      auto lab = labelers::make_labeler(labeler_override);
      if (!lab) throw std::invalid_argument("unknown labeler id: " + labeler_override);
      for (auto& p : problem_set) {
        if (lab->spec.kind == labelers::LabelerKind::kRelative && !p.reference &&
            !lab->builtin_reference) {
          throw std::invalid_argument("relative labeler " + labeler_override +
                                      " needs a reference design (problem " + p.id + ")");
        }
        p.checker = labeler_override;
      }
    }
    auto vocab = tokenizer::load_vocab(cfg.vocab.string());
    auto params = model::load_checkpoint(cfg.base_checkpoint, vocab.hash());
    std::optional<model::ModelParameters> disc_params;
    if (!disc_path.empty()) {
      cfg.disc_checkpoint = disc_path;
      disc_params = model::load_checkpoint(cfg.disc_checkpoint, vocab.hash());
    }

    eval::EvalConfig ec;
    ec.n = samples;
    ec.ks = parse_k_list(k_text);
    ec.decode.w = cfg.w;
    ec.decode.rho = cfg.rho;
    ec.decode.tau = cfg.tau;
    ec.decode.temperature = cfg.temperature;
    ec.decode.max_new_tokens = budget;
    ec.seed = cfg.seed;
    ec.workers = cfg.workers;

    auto report = eval::run_benchmark(problem_set, params,
                                      disc_params ? &*disc_params : nullptr, vocab, ec);
    if (out_path.empty()) {
      out_stream << eval::render_report(report.records, ec.ks);
    } else {
      eval::report_emit(report.records, ec.ks, out_path);
    }
    err << "[eval] problems=" << report.records.size();
    for (size_t k : ec.ks) {
      err << " pass@" << k << "="
          << (report.records.empty() ? std::string("n/a") : show_double(report.mean_pass.at(k)));
    }
    err << "\n";
    return 0;
  }
};

}  // namespace

std::string source_name(ConfigSource source) {
  switch (source) {
    case ConfigSource::kDefault: return "default";
    case ConfigSource::kFile: return "file";
    case ConfigSource::kEnv: return "env";
    case ConfigSource::kFlag: return "flag";
  }
  return "unknown";
}

std::vector<ConfigEntry> parse_config_text(const std::string& text) {
  std::vector<ConfigEntry> entries;
  std::istringstream is(text);
  std::string line;
  std::string section;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    lineno++;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trimmed(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.size() < 3 || line.back() != ']') {
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": malformed section header");
      }
      section = trimmed(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw std::runtime_error("config line " + std::to_string(lineno) + ": empty section name");
      }
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key = value");
    }
    std::string key = trimmed(line.substr(0, eq));
    std::string value = trimmed(line.substr(eq + 1));
    if (key.empty()) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
    }
    entries.push_back({section, key, value});
  }
  return entries;
}

std::vector<ConfigEntry> load_config_file(const std::filesystem::path& path) {
  return parse_config_text(slurp_file(path));
}

std::string env_name(const std::string& section, const std::string& key) {
  if (section == "tools") return "VSTEER_" + upper_key(key);
  return "VSTEER_" + upper_key(section) + "_" + upper_key(key);
}

OptionResolver::OptionResolver(const std::vector<ConfigEntry>& entries, std::string section)
    : entries_(entries), section_(std::move(section)) {}

std::optional<std::string> OptionResolver::file_value(const std::string& key) const {
  std::optional<std::string> found;
  for (const auto& entry : entries_) {
    if (entry.section == section_ && entry.key == key) found = entry.value;  // later wins
  }
  return found;
}

std::optional<std::pair<std::string, ConfigSource>> OptionResolver::layered_text(
    const std::string& key) const {
  if (const char* v = std::getenv(env_name(section_, key).c_str())) {
    return {{std::string(v), ConfigSource::kEnv}};
  }
  if (auto fv = file_value(key)) return {{*fv, ConfigSource::kFile}};
  return std::nullopt;
}

void OptionResolver::note(const std::string& key, const std::string& shown,
                          ConfigSource source) {
  last_source_ = source;
  log_.push_back("[config] " + section_ + "." + key + " = " + shown + " (" +
                 source_name(source) + ")");
}

std::string OptionResolver::resolve_string(const std::string& key, bool flag_given,
                                           const std::string& flag_value,
                                           const std::string& fallback) {
  if (flag_given) {
    note(key, flag_value, ConfigSource::kFlag);
    return flag_value;
  }
  if (auto layered = layered_text(key)) {
    note(key, layered->first, layered->second);
    return layered->first;
  }
  note(key, fallback, ConfigSource::kDefault);
  return fallback;
}

double OptionResolver::resolve_double(const std::string& key, bool flag_given, double flag_value,
                                      double fallback) {
  if (flag_given) {
    note(key, show_double(flag_value), ConfigSource::kFlag);
    return flag_value;
  }
  if (auto layered = layered_text(key)) {
    std::string where = layered->second == ConfigSource::kEnv
                            ? "environment variable " + env_name(section_, key)
                            : "config [" + section_ + "] " + key;
    double v = parse_double(layered->first, where);
    note(key, layered->first, layered->second);
    return v;
  }
  note(key, show_double(fallback), ConfigSource::kDefault);
  return fallback;
}

std::uint64_t OptionResolver::resolve_uint(const std::string& key, bool flag_given,
                                           std::uint64_t flag_value, std::uint64_t fallback) {
  if (flag_given) {
    note(key, std::to_string(flag_value), ConfigSource::kFlag);
    return flag_value;
  }
  if (auto layered = layered_text(key)) {
    std::string where = layered->second == ConfigSource::kEnv
                            ? "environment variable " + env_name(section_, key)
                            : "config [" + section_ + "] " + key;
    std::uint64_t v = parse_uint(layered->first, where);
    note(key, layered->first, layered->second);
    return v;
  }
  note(key, std::to_string(fallback), ConfigSource::kDefault);
  return fallback;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"discriminator-guided Verilog generation pipeline"};
  app.name("vsteer");
  app.require_subcommand(0, 1);

  std::string config_flag, yosys_flag, eqy_flag;
  auto* config_o =
      app.add_option("--config", config_flag, "config file ([section] key = value lines)");
  auto* yosys_o = app.add_option("--yosys", yosys_flag, "yosys binary for syntax/netlist checks");
  auto* eqy_o = app.add_option("--eqy", eqy_flag, "eqy binary for equivalence checks");

  ExtractCmd extract;
  extract.wire(app.add_subcommand("extract", "harvest Verilog units into a corpus file"));
  BuildVocabCmd build_vocab;
  build_vocab.wire(app.add_subcommand("build-vocab", "learn a byte-pair vocabulary"));
  TrainLmCmd train_lm;
  train_lm.wire(app.add_subcommand("train-lm", "train the generator on instruction pairs"));
  TrainDiscCmd train_disc;
  train_disc.wire(app.add_subcommand("train-disc", "train the discriminator on labeled text"));
  GenerateCmd generate;
  generate.wire(app.add_subcommand("generate", "sample completions, optionally guided"));
  AugmentCmd augment_cmd;
  augment_cmd.wire(app.add_subcommand("augment", "sample, screen, and label synthetic designs"));
  EvalCmd eval_cmd;
  eval_cmd.wire(app.add_subcommand("eval", "run the pass@k benchmark harness"));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    std::vector<ConfigEntry> entries;
    std::string config_path = config_flag;
    if (!given(config_o)) {
      if (const char* v = std::getenv("VSTEER_CONFIG")) config_path = v;
    }
    if (!config_path.empty()) {
      entries = load_config_file(config_path);
      err << "[config] loaded " << config_path << "\n";
    }

    // Tool paths land in the environment where the adapters look them up.
    OptionResolver tools(entries, "tools");
    std::string yosys = tools.resolve_string("yosys", given(yosys_o), yosys_flag, "");
    if (!yosys.empty() && tools.last_source() != ConfigSource::kEnv) {
      setenv("VSTEER_YOSYS", yosys.c_str(), 1);
    }
    std::string eqy = tools.resolve_string("eqy", given(eqy_o), eqy_flag, "");
    if (!eqy.empty() && tools.last_source() != ConfigSource::kEnv) {
      setenv("VSTEER_EQY", eqy.c_str(), 1);
    }
    if (!yosys.empty() || !eqy.empty()) flush_log(tools, err);

    if (app.got_subcommand("extract")) return extract.run(entries, out, err);
    if (app.got_subcommand("build-vocab")) return build_vocab.run(entries, out, err);
    if (app.got_subcommand("train-lm")) return train_lm.run(entries, out, err);
    if (app.got_subcommand("train-disc")) return train_disc.run(entries, out, err);
    if (app.got_subcommand("generate")) return generate.run(entries, out, err);
    if (app.got_subcommand("augment")) return augment_cmd.run(entries, out, err);
    if (app.got_subcommand("eval")) return eval_cmd.run(entries, out, err);

    err << app.help();
    return 2;  // nothing to do without a subcommand
  } catch (const UsageFailure& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace vsteer::cli
