#include "vsteer/eval.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "nlohmann/json.hpp"
#include "vsteer/augment.hpp"
#include "vsteer/labelers.hpp"

namespace vsteer::eval {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t sample_seed(std::uint64_t job, size_t problem, size_t sample) {
  return mix64(mix64(job) ^ mix64((static_cast<std::uint64_t>(problem) << 32) |
                                  static_cast<std::uint64_t>(sample)));
}

std::string description_comment(const std::string& description) {
  if (description.empty()) return "";
  std::string out;
  std::istringstream lines(description);
  std::string line;
  while (std::getline(lines, line)) out += "// " + line + "\n";
  return out;
}

bool judged_pass(const std::string& text, const labelers::Labeler& labeler,
                 const std::optional<double>& bar) {
  std::vector<std::string> one{text};
  std::vector<augment::LabeledExample> labeled;
  if (labeler.spec.kind == labelers::LabelerKind::kAbsolute) {
    labeled = augment::label_absolute(one, labeler);
  } else {
    labelers::Labeler patched = labeler;
    patched.builtin_reference = *bar;  // measured once per problem, not per sample
    labeled = augment::label_relative(one, patched, std::nullopt);
  }
  return labeled.front().label == augment::Label::kPos;
}

EvalRecord evaluate_problem(const Problem& problem, size_t index,
                            const model::ModelParameters& base,
                            const model::ModelParameters* discriminator,
                            const tokenizer::Vocab& vocab, const EvalConfig& config) {
  EvalRecord rec;
  rec.id = problem.id;
  rec.n = config.n;
  rec.outcomes.assign(config.n, false);

  auto resolved = labelers::make_labeler(problem.checker);
  if (!resolved) {
    rec.note = "unknown labeler id: " + problem.checker;
    return rec;
  }
  const labelers::Labeler& labeler = *resolved;
  std::optional<double> bar;
  if (labeler.spec.kind == labelers::LabelerKind::kRelative) {
    try {
      bar = augment::resolve_reference_metric(labeler, problem.reference);
    } catch (const std::exception& e) {
      rec.note = e.what();
      return rec;
    }
  }

  corpus::VerilogUnit head;
  head.name = problem.id;
  head.definition = description_comment(problem.description) + problem.module_definition;
  std::vector<int> prompt;
  prompt.push_back(tokenizer::Vocab::kBos);
  for (int id : tokenizer::encode(corpus::make_autocomplete_instruction(head), vocab)) {
    prompt.push_back(id);
  }

  for (size_t s = 0; s < config.n; ++s) {
    try {
      std::vector<int> tokens;
      if (discriminator) {
        guidance::GuidanceConfig g = config.decode;
        g.seed = sample_seed(config.seed, index, s);
        tokens = guidance::generate(base, *discriminator, prompt, g).tokens;
      } else {
        tokens = guidance::sample_sequence(base, prompt, config.decode.max_new_tokens,
                                           config.decode.temperature,
                                           sample_seed(config.seed, index, s));
      }
      std::vector<int> body;
      for (int id : tokens) {
        if (!vocab.is_special(id)) body.push_back(id);
      }
      rec.outcomes[s] = judged_pass(tokenizer::decode(body, vocab), labeler, bar);
    } catch (const std::exception& e) {
      if (rec.note.empty()) rec.note = e.what();
    }
  }
  rec.c = static_cast<size_t>(std::count(rec.outcomes.begin(), rec.outcomes.end(), true));
  return rec;
}

}  // namespace

double pass_at_k(size_t n, size_t c, size_t k) {
  if (k < 1) throw std::invalid_argument("pass@k needs k >= 1");
  if (k > n) throw std::invalid_argument("pass@k needs k <= n");
  if (c > n) throw std::invalid_argument("pass@k needs c <= n");
  if (c == 0) return 0.0;
  if (n - c < k) return 1.0;  // every size-k draw contains a pass
  double all_fail = 1.0;
  for (size_t i = 0; i < k; ++i) {
    all_fail *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
  }
  return 1.0 - all_fail;
}

std::vector<Problem> load_problems(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("problem directory " + dir.string() + " does not exist");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());

  std::vector<Problem> problems;
  for (const auto& file : files) {
    std::ifstream is(file, std::ios::binary);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(file.string() + ": " + e.what());
    }
    if (!doc.is_object()) {
      throw std::runtime_error(file.string() + ": problem record must be an object");
    }
    for (const char* field : {"module_definition", "checker"}) {
      if (!doc.contains(field) || !doc[field].is_string()) {
        throw std::runtime_error(file.string() + ": missing string field " +
                                 std::string(field));
      }
    }

    Problem p;
    p.id = file.stem().string();
    p.description = doc.value("description", std::string{});
    p.module_definition = doc["module_definition"].get<std::string>();
    p.checker = doc["checker"].get<std::string>();
    if (doc.contains("reference")) {
      corpus::VerilogUnit ref;
      ref.name = p.id + "_reference";
      ref.full_text = doc["reference"].get<std::string>();
      p.reference = std::move(ref);
    }

    auto labeler = labelers::make_labeler(p.checker);
    if (!labeler) {
      throw std::runtime_error(file.string() + ": unknown labeler id: " + p.checker);
    }
    if (labeler->spec.kind == labelers::LabelerKind::kRelative && !p.reference &&
        !labeler->builtin_reference) {
      throw std::runtime_error(file.string() + ": checker " + p.checker +
                               " needs a reference design");
    }
    problems.push_back(std::move(p));
  }
  return problems;
}

void EvalConfig::validate() const {
  if (n == 0) throw std::invalid_argument("n must be positive");
  if (ks.empty()) throw std::invalid_argument("at least one k is required");
  for (size_t k : ks) {
    if (k < 1 || k > n) throw std::invalid_argument("each k must satisfy 1 <= k <= n");
  }
  decode.validate();
}

BenchmarkReport run_benchmark(const std::vector<Problem>& problems,
                              const model::ModelParameters& base,
                              const model::ModelParameters* discriminator,
                              const tokenizer::Vocab& vocab, const EvalConfig& config) {
  config.validate();
  if (base.vocab_hash != vocab.hash()) {
    throw std::invalid_argument("model checkpoint and vocabulary do not match");
  }
  if (discriminator && discriminator->vocab_hash != vocab.hash()) {
    throw std::invalid_argument("discriminator checkpoint and vocabulary do not match");
  }

  BenchmarkReport report;
  report.records.assign(problems.size(), {});
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t p = next.fetch_add(1); p < problems.size(); p = next.fetch_add(1)) {
      report.records[p] =
          evaluate_problem(problems[p], p, base, discriminator, vocab, config);
    }
  };

  size_t workers = config.workers != 0
                       ? config.workers
                       : std::max<size_t>(1, std::thread::hardware_concurrency());
  workers = std::min(workers, problems.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  report.mean_pass = mean_pass_at_k(report.records, config.ks);
  return report;
}

std::map<size_t, double> mean_pass_at_k(const std::vector<EvalRecord>& records,
                                        const std::vector<size_t>& ks) {
  std::map<size_t, double> mean;
  if (records.empty()) return mean;
  for (size_t k : ks) {
    double sum = 0.0;
    for (const auto& r : records) sum += pass_at_k(r.n, r.c, k);
    mean[k] = sum / static_cast<double>(records.size());
  }
  return mean;
}

std::string render_report(const std::vector<EvalRecord>& records,
                          const std::vector<size_t>& ks) {
  std::ostringstream out;
  for (const auto& r : records) {
    nlohmann::ordered_json rec;
    rec["id"] = r.id;
    rec["n"] = r.n;
    rec["c"] = r.c;
    rec["outcomes"] = r.outcomes;
    nlohmann::ordered_json per_k;
    for (size_t k : ks) per_k[std::to_string(k)] = pass_at_k(r.n, r.c, k);
    rec["pass_at_k"] = per_k;
    rec["note"] = r.note;
    out << rec.dump() << "\n";
  }

  nlohmann::ordered_json agg;
  agg["problems"] = records.size();
  nlohmann::ordered_json mean;
  auto computed = mean_pass_at_k(records, ks);
  for (size_t k : ks) {
    if (records.empty()) {
      mean[std::to_string(k)] = nullptr;
    } else {
      mean[std::to_string(k)] = computed.at(k);
    }
  }
  agg["mean_pass_at_k"] = mean;
  out << agg.dump() << "\n";
  return out.str();
}

void report_emit(const std::vector<EvalRecord>& records, const std::vector<size_t>& ks,
                 const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write report to " + path.string());
  os << render_report(records, ks);
}

}  // namespace vsteer::eval
