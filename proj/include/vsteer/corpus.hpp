#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vsteer/tokenizer.hpp"

namespace vsteer::corpus {

struct SourceFile {
  std::string path;
  std::string content;
  size_t line_count = 0;
};

size_t count_lines(std::string_view content);

struct ScanResult {
  std::vector<SourceFile> files;  // lexicographic by path
  size_t skipped_unreadable = 0;
};

// Collects .v/.sv files under root whose line count is within [min_lines,
// max_lines]. Unreadable root throws; unreadable files are tallied and skipped.
ScanResult scan_tree(const std::filesystem::path& root, size_t min_lines, size_t max_lines);

enum class UnitKind { kModule, kFunction };

struct VerilogUnit {
  UnitKind kind = UnitKind::kModule;
  std::string name;
  std::string definition;
  std::string body;
  std::string full_text;  // always definition + body
  size_t token_count = 0;
  std::string source_path;
};

struct ExtractReport {
  size_t dropped_unbalanced = 0;
  size_t dropped_malformed = 0;
};

// Replaces comments and string literals with spaces (newlines kept), so the
// keyword scan and the emitted offsets line up with the original text.
std::string mask_comments(std::string_view text);

// One unit per balanced module...endmodule / function...endfunction region of
// the masked text, in source order. Functions nested in modules yield both.
// Dangling regions are dropped and counted, never emitted.
std::vector<VerilogUnit> extract_units(const SourceFile& file, ExtractReport* report = nullptr);

// Definition = header through the port/IO declaration region (including
// contiguous leading input/output/inout statements); body = the rest.
// Concatenation is byte-identical to the input. Header parse failure -> nullopt.
std::optional<std::pair<std::string, std::string>> split_definition_body(
    std::string_view full_text, UnitKind kind);

std::vector<VerilogUnit> filter_by_tokens(std::vector<VerilogUnit> units, const tokenizer::Vocab& vocab,
                                          size_t max_tokens);

// Exact-duplicate removal after collapsing whitespace runs; first wins.
std::vector<VerilogUnit> dedup(std::vector<VerilogUnit> units);

struct TranslationPair {
  VerilogUnit verilog;
  std::string c_program;
};

enum class Task { kV2c, kC2v, kAutocomplete, kRewrite };

std::optional<Task> parse_task(std::string_view name);
std::string task_name(Task task);

struct InstructionExample {
  std::string instruction;
  std::string answer;
  Task task = Task::kAutocomplete;
};

// Fixed instruction templates; the only place prompt wording lives.
namespace templates {
inline constexpr std::string_view kAutocomplete =
    "Complete the following Verilog module.\n\n";
inline constexpr std::string_view kV2c =
    "Translate the following Verilog into an equivalent C program.\n\n";
inline constexpr std::string_view kC2v =
    "Translate the following C program into an equivalent Verilog module.\n\n";
inline constexpr std::string_view kRewriteNodes =
    "Rewrite the following Verilog module so that it is functionally equivalent "
    "but produces fewer netlist nodes after synthesis.\n\n";
inline constexpr std::string_view kRewriteSat =
    "Rewrite the following Verilog module so that it is functionally equivalent "
    "but takes less SAT solving time to verify.\n\n";
}  // namespace templates

std::string make_autocomplete_instruction(const VerilogUnit& unit);
std::string make_rewrite_instruction(const VerilogUnit& unit, bool sat_variant = false);

// Autocomplete: one example per unit. v2c/c2v: one per translation pair.
// Requesting v2c/c2v without translations, or rewrite (which has no derivable
// answer in the corpus), throws.
std::vector<InstructionExample> build_instruction_pairs(
    const std::vector<VerilogUnit>& units, const std::vector<TranslationPair>& translations,
    const std::set<Task>& tasks);

// Balanced-structure fallback used for syntax screening when no external
// checker is configured: rescans the text and requires at least one unit and
// no dangling regions.
bool balanced_structure_ok(std::string_view text);

// One corpus file line: the unit, plus its C translation when one was found.
struct CorpusRecord {
  VerilogUnit unit;
  std::optional<std::string> c_program;
};

// Line-delimited records {kind, name, definition, body, full_text,
// token_count, source_path} with c_program appended when present; UTF-8, LF.
void write_unit_corpus(const std::filesystem::path& path,
                       const std::vector<CorpusRecord>& records);
std::vector<CorpusRecord> load_unit_corpus(const std::filesystem::path& path);

}  // namespace vsteer::corpus
