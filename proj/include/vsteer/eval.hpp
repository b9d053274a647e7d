#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vsteer/corpus.hpp"
#include "vsteer/guidance.hpp"
#include "vsteer/model.hpp"
#include "vsteer/tokenizer.hpp"

namespace vsteer::eval {

// Unbiased estimator of the chance that at least one of k samples drawn
// without replacement from n attempts (c of which pass) is a pass:
// 1 - C(n-c, k) / C(n, k), evaluated as a product of ratios so large n stays
// finite. Exact 0 when c = 0 and exact 1 when fewer than k samples fail.
double pass_at_k(size_t n, size_t c, size_t k);

// One benchmark task: the model completes the head, the checker judges the
// completion. Relative checkers compare against the reference design (or the
// checker's built-in bar).
struct Problem {
  std::string id;
  std::string description;
  std::string module_definition;
  std::string checker;  // labeler registry id
  std::optional<corpus::VerilogUnit> reference;
};

// Problems live one per file in a directory: every *.json file holds
// {description?, module_definition, checker, reference?} and contributes a
// problem named after the file stem. Unknown checkers and relative checkers
// with no reference source fail here rather than mid-run.
std::vector<Problem> load_problems(const std::filesystem::path& dir);

struct EvalRecord {
  std::string id;
  size_t n = 0;
  size_t c = 0;                // passes among the n samples
  std::vector<bool> outcomes;  // length n, sample order
  std::string note;            // problem-level failure reason, empty when clean
};

struct EvalConfig {
  size_t n = 20;
  std::vector<size_t> ks = {1, 5, 10};
  guidance::GuidanceConfig decode;  // seed field ignored; per-sample seeds derive from `seed`
  std::uint64_t seed = 0;
  size_t workers = 0;  // 0 picks one thread per hardware core

  void validate() const;
};

struct BenchmarkReport {
  std::vector<EvalRecord> records;     // problem id order
  std::map<size_t, double> mean_pass;  // k -> mean pass@k over problems
};

// Samples config.n completions per problem (guided decoding when a
// discriminator is supplied, plain sampling otherwise), judges each with the
// problem's checker, and aggregates. A problem whose samples all error out is
// recorded with c = 0. Deterministic for a given seed and worker-count
// independent; only wall-clock checkers can vary between runs.
BenchmarkReport run_benchmark(const std::vector<Problem>& problems,
                              const model::ModelParameters& base,
                              const model::ModelParameters* discriminator,
                              const tokenizer::Vocab& vocab, const EvalConfig& config);

// Mean of pass_at_k over the records for each requested k. Empty in, empty out.
std::map<size_t, double> mean_pass_at_k(const std::vector<EvalRecord>& records,
                                        const std::vector<size_t>& ks);

// One JSON line per record followed by one aggregate line; field order fixed,
// so identical records render byte-identically.
std::string render_report(const std::vector<EvalRecord>& records,
                          const std::vector<size_t>& ks);
void report_emit(const std::vector<EvalRecord>& records, const std::vector<size_t>& ks,
                 const std::filesystem::path& path);

}  // namespace vsteer::eval
