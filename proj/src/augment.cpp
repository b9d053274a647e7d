#include "vsteer/augment.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "vsteer/guidance.hpp"

namespace vsteer::augment {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t slot_seed(std::uint64_t job_seed, size_t head, size_t sample) {
  return mix64(mix64(job_seed) ^ mix64((static_cast<std::uint64_t>(head) << 32) | sample));
}

std::string note_for(const labelers::MetricResult& r) {
  const char* what = "measurement failed";
  switch (r.status) {
    case labelers::MetricStatus::kToolError: what = "tool error"; break;
    case labelers::MetricStatus::kTimeout: what = "timeout"; break;
    case labelers::MetricStatus::kParseError: what = "parse error"; break;
    case labelers::MetricStatus::kOk: break;
  }
  std::string note = what;
  if (!r.raw_output.empty()) {
    note += ": ";
    note += r.raw_output.substr(0, 200);
  }
  return note;
}

labelers::MetricResult safe_measure(const labelers::Labeler& labeler, const std::string& text) {
  try {
    return labeler.measure(text);
  } catch (const std::exception& e) {
    return labelers::metric_error(labelers::MetricStatus::kToolError,
                                  std::string("labeler crashed: ") + e.what());
  }
}

}  // namespace

void AugmentJob::validate() const {
  if (samples_per_head == 0) {
    throw std::invalid_argument("samples_per_head must be positive");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("augmentation temperature must be positive");
  }
}

CompletionReport complete_heads(const model::ModelParameters& params,
                                const tokenizer::Vocab& vocab, const AugmentJob& job) {
  job.validate();
  if (params.vocab_hash != vocab.hash()) {
    throw std::invalid_argument("model checkpoint and vocabulary do not match");
  }
  CompletionReport report;
  size_t context = params.config.context_length;
  for (size_t h = 0; h < job.heads.size(); ++h) {
    std::string instruction = corpus::make_autocomplete_instruction(job.heads[h]);
    std::vector<int> prompt;
    prompt.push_back(tokenizer::Vocab::kBos);
    for (int id : tokenizer::encode(instruction, vocab)) prompt.push_back(id);
    if (prompt.size() >= context) {
      report.skipped_heads.push_back(h);
      continue;
    }
    size_t budget = context - prompt.size();
    for (size_t s = 0; s < job.samples_per_head; ++s) {
      auto tokens = guidance::sample_sequence(params, prompt, budget, job.temperature,
                                              slot_seed(job.seed, h, s));
      std::vector<int> body;
      for (int id : tokens) {
        if (!vocab.is_special(id)) body.push_back(id);
      }
      report.candidates.push_back(tokenizer::decode(body, vocab));
    }
  }
  return report;
}

FilterReport syntax_filter(const std::vector<std::string>& candidates,
                           const std::function<bool(const std::string&)>& checker) {
  if (!checker) throw std::invalid_argument("syntax_filter needs a checker");
  FilterReport report;
  for (const auto& text : candidates) {
    bool keep = false;
    try {
      keep = checker(text);
    } catch (...) {
      report.checker_failures++;
      continue;
    }
    if (keep) {
      report.survivors.push_back(text);
    } else {
      report.rejected++;
    }
  }
  return report;
}

FilterReport syntax_filter(const std::vector<std::string>& candidates) {
  return syntax_filter(candidates,
                       [](const std::string& text) { return labelers::syntax_ok(text); });
}

std::vector<LabeledExample> label_absolute(const std::vector<std::string>& candidates,
                                           const labelers::Labeler& labeler) {
  if (labeler.spec.kind != labelers::LabelerKind::kAbsolute) {
    throw std::invalid_argument("label_absolute needs an absolute labeler, got " +
                                labeler.spec.name);
  }
  std::vector<LabeledExample> out;
  out.reserve(candidates.size());
  for (const auto& text : candidates) {
    LabeledExample ex;
    ex.text = text;
    auto r = safe_measure(labeler, text);
    if (r.ok()) {
      ex.label = (*r.value != 0.0) ? Label::kPos : Label::kNeg;
      ex.metric_value = r.value;
    } else {
      ex.label = Label::kNeg;
      ex.note = note_for(r);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

double resolve_reference_metric(const labelers::Labeler& labeler,
                                const std::optional<corpus::VerilogUnit>& reference) {
  if (reference) {
    auto r = safe_measure(labeler, reference->full_text);
    if (!r.ok()) {
      throw std::runtime_error("reference metric failed: " + note_for(r));
    }
    return *r.value;
  }
  if (labeler.builtin_reference) return *labeler.builtin_reference;
  throw std::invalid_argument("relative labeler " + labeler.spec.name +
                              " needs a reference design");
}

std::vector<LabeledExample> label_relative(const std::vector<std::string>& candidates,
                                           const labelers::Labeler& labeler,
                                           const std::optional<corpus::VerilogUnit>& reference) {
  if (labeler.spec.kind != labelers::LabelerKind::kRelative) {
    throw std::invalid_argument("label_relative needs a metric labeler, got " +
                                labeler.spec.name);
  }
  double bar = resolve_reference_metric(labeler, reference);

  std::vector<LabeledExample> out;
  out.reserve(candidates.size());
  for (const auto& text : candidates) {
    LabeledExample ex;
    ex.text = text;
    ex.reference_metric = bar;
    auto r = safe_measure(labeler, text);
    if (r.ok()) {
      ex.label = (*r.value < bar) ? Label::kPos : Label::kNeg;  // ties stay negative
      ex.metric_value = r.value;
    } else {
      ex.label = Label::kNeg;
      ex.note = note_for(r);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<training::LabeledExample> to_training_examples(
    const std::vector<LabeledExample>& examples) {
  std::vector<training::LabeledExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    out.push_back({ex.text, ex.label == Label::kPos});
  }
  return out;
}

std::vector<corpus::InstructionExample> pos_examples_as_corpus(
    const std::vector<LabeledExample>& examples) {
  std::vector<corpus::InstructionExample> out;
  for (const auto& ex : examples) {
    if (ex.label != Label::kPos) continue;
    auto split = corpus::split_definition_body(ex.text, corpus::UnitKind::kModule);
    if (!split) continue;
    corpus::VerilogUnit unit;
    unit.definition = split->first;
    unit.full_text = ex.text;
    out.push_back({corpus::make_autocomplete_instruction(unit), ex.text,
                   corpus::Task::kAutocomplete});
  }
  return out;
}

void write_labeled_corpus(const std::filesystem::path& path,
                          const std::vector<LabeledExample>& examples,
                          const std::string& labeler_name) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("could not open " + path.string() + " for writing");
  for (const auto& ex : examples) {
    nlohmann::ordered_json rec;
    rec["text"] = ex.text;
    rec["label"] = (ex.label == Label::kPos) ? "pos" : "neg";
    if (ex.metric_value) {
      rec["metric_value"] = *ex.metric_value;
    } else {
      rec["metric_value"] = nullptr;
    }
    rec["labeler"] = labeler_name;
    if (ex.reference_metric) {
      rec["reference_metric"] = *ex.reference_metric;
    } else {
      rec["reference_metric"] = nullptr;
    }
    // sampled candidates are byte-level text and may not be valid UTF-8
    os << rec.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
  }
  if (!os) throw std::runtime_error("failed while writing " + path.string());
}

LoadedCorpus load_labeled_corpus(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("could not open " + path.string());
  LoadedCorpus out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": bad record: " + e.what());
    }
    LabeledExample ex;
    ex.text = rec.at("text").get<std::string>();
    std::string label = rec.at("label").get<std::string>();
    if (label == "pos") {
      ex.label = Label::kPos;
    } else if (label == "neg") {
      ex.label = Label::kNeg;
    } else {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": unknown label " + label);
    }
    if (rec.contains("metric_value") && !rec["metric_value"].is_null()) {
      ex.metric_value = rec["metric_value"].get<double>();
    }
    if (rec.contains("reference_metric") && !rec["reference_metric"].is_null()) {
      ex.reference_metric = rec["reference_metric"].get<double>();
    }
    if (out.examples.empty() && rec.contains("labeler")) {
      out.labeler_name = rec["labeler"].get<std::string>();
    }
    out.examples.push_back(std::move(ex));
  }
  return out;
}

AugmentResult run_augment_job(const model::ModelParameters& params, const tokenizer::Vocab& vocab,
                              const AugmentJob& job) {
  auto labeler = labelers::make_labeler(job.labeler_id);
  if (!labeler) {
    throw std::invalid_argument("unknown labeler id: " + job.labeler_id);
  }
  CompletionReport completions = complete_heads(params, vocab, job);
  FilterReport filtered = syntax_filter(completions.candidates);

  AugmentResult result;
  result.candidates = completions.candidates.size();
  result.survivors = filtered.survivors.size();
  result.rejected = filtered.rejected;
  result.checker_failures = filtered.checker_failures;
  result.skipped_heads = std::move(completions.skipped_heads);
  if (labeler->spec.kind == labelers::LabelerKind::kAbsolute) {
    result.examples = label_absolute(filtered.survivors, *labeler);
  } else {
    result.examples = label_relative(filtered.survivors, *labeler, job.reference);
  }
  return result;
}

}  // namespace vsteer::augment
