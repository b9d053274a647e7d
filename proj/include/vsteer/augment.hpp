#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vsteer/corpus.hpp"
#include "vsteer/labelers.hpp"
#include "vsteer/model.hpp"
#include "vsteer/tokenizer.hpp"
#include "vsteer/training.hpp"

namespace vsteer::augment {

// One augmentation batch: sample completions for every head, screen them,
// then label what survives. A relative labeler compares against the reference
// unit's metric (or the labeler's built-in bar when it carries one).
struct AugmentJob {
  std::vector<corpus::VerilogUnit> heads;
  size_t samples_per_head = 8;
  double temperature = 1.2;  // high temperature buys sample diversity
  std::string labeler_id = "syntax";
  std::optional<corpus::VerilogUnit> reference;
  std::uint64_t seed = 0;

  void validate() const;  // knob ranges only; labeler checks happen at use
};

struct CompletionReport {
  std::vector<std::string> candidates;  // ordered by (head index, sample index)
  std::vector<size_t> skipped_heads;    // heads whose prompt exceeds the context
};

// Unguided completions of each head's definition through the autocomplete
// instruction template. Deterministic: each (head, sample) slot derives its
// own sampling seed from the job seed.
CompletionReport complete_heads(const model::ModelParameters& params,
                                const tokenizer::Vocab& vocab, const AugmentJob& job);

struct FilterReport {
  std::vector<std::string> survivors;
  size_t rejected = 0;          // checker said no
  size_t checker_failures = 0;  // checker itself blew up on the candidate

  double survival_rate() const {
    size_t total = survivors.size() + rejected + checker_failures;
    return total == 0 ? 1.0 : static_cast<double>(survivors.size()) / static_cast<double>(total);
  }
};

// Keeps exactly the candidates the checker accepts, in order. A throwing
// checker drops the candidate into its own tally.
FilterReport syntax_filter(const std::vector<std::string>& candidates,
                           const std::function<bool(const std::string&)>& checker);
FilterReport syntax_filter(const std::vector<std::string>& candidates);  // labelers::syntax_ok

enum class Label { kPos, kNeg };

struct LabeledExample {
  std::string text;
  Label label = Label::kNeg;
  std::optional<double> metric_value;
  std::optional<double> reference_metric;  // present for relative labeling
  std::string note;                        // why a measurement error became NEG
};

// Absolute labeling: positive iff the measurement is ok with nonzero value.
// Measurement failures label NEG and keep the reason.
std::vector<LabeledExample> label_absolute(const std::vector<std::string>& candidates,
                                           const labelers::Labeler& labeler);

// The comparison bar for relative labeling: the reference unit's measured
// metric when one is given, else the labeler's built-in bar. A failing
// reference measurement throws; no reference source at all is a caller error.
double resolve_reference_metric(const labelers::Labeler& labeler,
                                const std::optional<corpus::VerilogUnit>& reference);

// Relative labeling, lower metric = better: positive iff the candidate metric
// is strictly below the reference's (ties are negative). A failing reference
// measurement aborts the job; a failing candidate measurement labels NEG.
std::vector<LabeledExample> label_relative(const std::vector<std::string>& candidates,
                                           const labelers::Labeler& labeler,
                                           const std::optional<corpus::VerilogUnit>& reference);

// Discriminator training consumes these.
std::vector<training::LabeledExample> to_training_examples(
    const std::vector<LabeledExample>& examples);

// Positive survivors as autocomplete instruction pairs, for optionally
// growing the generator corpus with synthetic examples.
std::vector<corpus::InstructionExample> pos_examples_as_corpus(
    const std::vector<LabeledExample>& examples);

// Line-delimited records {text, label, metric_value, labeler, reference_metric}.
void write_labeled_corpus(const std::filesystem::path& path,
                          const std::vector<LabeledExample>& examples,
                          const std::string& labeler_name);

struct LoadedCorpus {
  std::vector<LabeledExample> examples;
  std::string labeler_name;
};
LoadedCorpus load_labeled_corpus(const std::filesystem::path& path);

struct AugmentResult {
  std::vector<LabeledExample> examples;
  size_t candidates = 0;
  size_t survivors = 0;
  size_t rejected = 0;
  size_t checker_failures = 0;
  std::vector<size_t> skipped_heads;
};

// complete -> filter -> label, with the labeler resolved from the job id.
AugmentResult run_augment_job(const model::ModelParameters& params, const tokenizer::Vocab& vocab,
                              const AugmentJob& job);

}  // namespace vsteer::augment
