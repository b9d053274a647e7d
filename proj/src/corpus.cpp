#include "vsteer/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nlohmann/json.hpp"

namespace vsteer::corpus {

namespace fs = std::filesystem;

namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

bool is_verilog_ext(const fs::path& p) {
  auto ext = p.extension().string();
  return ext == ".v" || ext == ".sv";
}

struct KeywordHit {
  size_t pos;
  size_t len;
  enum Type { kModule, kEndmodule, kFunction, kEndfunction } type;
};

std::vector<KeywordHit> find_keywords(std::string_view masked) {
  static const std::pair<std::string_view, KeywordHit::Type> kTable[] = {
      {"module", KeywordHit::kModule},
      {"endmodule", KeywordHit::kEndmodule},
      {"function", KeywordHit::kFunction},
      {"endfunction", KeywordHit::kEndfunction},
  };
  std::vector<KeywordHit> hits;
  size_t i = 0;
  while (i < masked.size()) {
    if (!is_ident_start(masked[i]) || (i > 0 && is_ident_char(masked[i - 1]))) {
      ++i;
      continue;
    }
    size_t j = i;
    while (j < masked.size() && is_ident_char(masked[j])) ++j;
    std::string_view word = masked.substr(i, j - i);
    // Longest keywords first so "endmodule" is not read as "module".
    for (const auto& [kw, type] : {kTable[1], kTable[3], kTable[0], kTable[2]}) {
      if (word == kw) {
        hits.push_back({i, kw.size(), type});
        break;
      }
    }
    i = j;
  }
  return hits;
}

size_t skip_spaces(std::string_view s, size_t i) {
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  return i;
}

// Returns the position after the matching ')', or npos when unbalanced.
size_t skip_parens(std::string_view s, size_t open) {
  int depth = 0;
  for (size_t i = open; i < s.size(); ++i) {
    if (s[i] == '(') ++depth;
    if (s[i] == ')' && --depth == 0) return i + 1;
  }
  return std::string_view::npos;
}

std::string_view word_at(std::string_view s, size_t i) {
  if (i >= s.size() || !is_ident_start(s[i])) return {};
  size_t j = i;
  while (j < s.size() && is_ident_char(s[j])) ++j;
  return s.substr(i, j - i);
}

struct HeaderInfo {
  std::string name;
  size_t definition_len;
};

// The region starts at its opening keyword; masked is mask_comments(full_text).
std::optional<HeaderInfo> analyze_header(std::string_view masked, UnitKind kind) {
  size_t pos = (kind == UnitKind::kModule) ? 6 : 8;  // strlen("module"/"function")
  std::string name;

  if (kind == UnitKind::kModule) {
    pos = skip_spaces(masked, pos);
    std::string_view w = word_at(masked, pos);
    if (w.empty()) return std::nullopt;
    name = std::string(w);
    pos = skip_spaces(masked, pos + w.size());
    if (pos < masked.size() && masked[pos] == '#') {
      pos = skip_spaces(masked, pos + 1);
      if (pos >= masked.size() || masked[pos] != '(') return std::nullopt;
      pos = skip_parens(masked, pos);
      if (pos == std::string_view::npos) return std::nullopt;
      pos = skip_spaces(masked, pos);
    }
    if (pos < masked.size() && masked[pos] == '(') {
      pos = skip_parens(masked, pos);
      if (pos == std::string_view::npos) return std::nullopt;
      pos = skip_spaces(masked, pos);
    }
    if (pos >= masked.size() || masked[pos] != ';') return std::nullopt;
    ++pos;
  } else {
    // Header runs to the first ';' at paren depth 0; the name is the last
    // identifier seen at depth 0 before any '(' or that ';'.
    int depth = 0;
    size_t semi = std::string_view::npos;
    bool seen_paren = false;
    for (size_t i = pos; i < masked.size(); ++i) {
      char c = masked[i];
      if (c == '(') {
        ++depth;
        seen_paren = true;
      } else if (c == ')') {
        --depth;
      } else if (c == ';' && depth == 0) {
        semi = i;
        break;
      } else if (depth == 0 && !seen_paren && is_ident_start(c) &&
                 (i == 0 || !is_ident_char(masked[i - 1]))) {
        std::string_view w = word_at(masked, i);
        name = std::string(w);
        i += w.size() - 1;
      }
    }
    if (semi == std::string_view::npos || name.empty()) return std::nullopt;
    pos = semi + 1;
  }

  // Contiguous leading IO declarations extend the definition.
  for (;;) {
    size_t next = skip_spaces(masked, pos);
    std::string_view w = word_at(masked, next);
    if (w != "input" && w != "output" && w != "inout") break;
    size_t semi = masked.find(';', next);
    if (semi == std::string_view::npos) break;
    pos = semi + 1;
  }
  return HeaderInfo{std::move(name), pos};
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_ws = true;  // also trims leading whitespace
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!in_ws) out += ' ';
      in_ws = true;
    } else {
      out += c;
      in_ws = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

}  // namespace

size_t count_lines(std::string_view content) {
  if (content.empty()) return 0;
  size_t n = static_cast<size_t>(std::count(content.begin(), content.end(), '\n'));
  if (content.back() != '\n') ++n;
  return n;
}

ScanResult scan_tree(const fs::path& root, size_t min_lines, size_t max_lines) {
  std::error_code ec;
  if (!fs::exists(root, ec) || ec) {
    throw std::runtime_error("scan_tree: cannot read root " + root.string());
  }
  ScanResult result;
  fs::recursive_directory_iterator it(root, fs::directory_options::skip_permission_denied, ec);
  if (ec) throw std::runtime_error("scan_tree: cannot read root " + root.string());
  for (fs::recursive_directory_iterator end; it != end; it.increment(ec)) {
    if (ec) {
      ++result.skipped_unreadable;
      ec.clear();
      continue;
    }
    if (!it->is_regular_file(ec) || !is_verilog_ext(it->path())) continue;
    std::ifstream f(it->path(), std::ios::binary);
    if (!f) {
      ++result.skipped_unreadable;
      continue;
    }
    std::ostringstream buf;
    buf << f.rdbuf();
    SourceFile sf{it->path().string(), buf.str(), 0};
    sf.line_count = count_lines(sf.content);
    if (sf.line_count < min_lines || sf.line_count > max_lines) continue;
    result.files.push_back(std::move(sf));
  }
  std::sort(result.files.begin(), result.files.end(),
            [](const SourceFile& a, const SourceFile& b) { return a.path < b.path; });
  return result;
}

std::string mask_comments(std::string_view text) {
  std::string out(text);
  enum State { kCode, kLine, kBlock, kString } state = kCode;
  for (size_t i = 0; i < out.size(); ++i) {
    char c = out[i];
    switch (state) {
      case kCode:
        if (c == '/' && i + 1 < out.size() && out[i + 1] == '/') {
          out[i] = out[i + 1] = ' ';
          ++i;
          state = kLine;
        } else if (c == '/' && i + 1 < out.size() && out[i + 1] == '*') {
          out[i] = out[i + 1] = ' ';
          ++i;
          state = kBlock;
        } else if (c == '"') {
          out[i] = ' ';
          state = kString;
        }
        break;
      case kLine:
        if (c == '\n') state = kCode;
        else out[i] = ' ';
        break;
      case kBlock:
        if (c == '*' && i + 1 < out.size() && out[i + 1] == '/') {
          out[i] = out[i + 1] = ' ';
          ++i;
          state = kCode;
        } else if (c != '\n') {
          out[i] = ' ';
        }
        break;
      case kString:
        if (c == '\\' && i + 1 < out.size() && out[i + 1] != '\n') {
          out[i] = out[i + 1] = ' ';
          ++i;
        } else if (c == '"' || c == '\n') {
          if (c == '"') out[i] = ' ';
          state = kCode;
        } else {
          out[i] = ' ';
        }
        break;
    }
  }
  return out;
}

std::optional<std::pair<std::string, std::string>> split_definition_body(
    std::string_view full_text, UnitKind kind) {
  std::string masked = mask_comments(full_text);
  auto info = analyze_header(masked, kind);
  if (!info || info->definition_len > full_text.size()) return std::nullopt;
  return std::make_pair(std::string(full_text.substr(0, info->definition_len)),
                        std::string(full_text.substr(info->definition_len)));
}

std::vector<VerilogUnit> extract_units(const SourceFile& file, ExtractReport* report) {
  ExtractReport local;
  if (!report) report = &local;

  std::string masked = mask_comments(file.content);
  auto hits = find_keywords(masked);

  struct Region {
    size_t start, end;
    UnitKind kind;
  };
  std::vector<Region> regions;
  std::vector<size_t> module_stack, function_stack;
  for (const auto& hit : hits) {
    switch (hit.type) {
      case KeywordHit::kModule: module_stack.push_back(hit.pos); break;
      case KeywordHit::kFunction: function_stack.push_back(hit.pos); break;
      case KeywordHit::kEndmodule:
        if (module_stack.empty()) {
          ++report->dropped_unbalanced;
        } else {
          regions.push_back({module_stack.back(), hit.pos + hit.len, UnitKind::kModule});
          module_stack.pop_back();
        }
        break;
      case KeywordHit::kEndfunction:
        if (function_stack.empty()) {
          ++report->dropped_unbalanced;
        } else {
          regions.push_back({function_stack.back(), hit.pos + hit.len, UnitKind::kFunction});
          function_stack.pop_back();
        }
        break;
    }
  }
  report->dropped_unbalanced += module_stack.size() + function_stack.size();

  std::stable_sort(regions.begin(), regions.end(),
                   [](const Region& a, const Region& b) { return a.start < b.start; });

  std::vector<VerilogUnit> units;
  for (const auto& region : regions) {
    std::string full(file.content.substr(region.start, region.end - region.start));
    std::string masked_full(masked.substr(region.start, region.end - region.start));
    auto info = analyze_header(masked_full, region.kind);
    if (!info || info->definition_len > full.size()) {
      ++report->dropped_malformed;
      continue;
    }
    VerilogUnit unit;
    unit.kind = region.kind;
    unit.name = info->name;
    unit.definition = full.substr(0, info->definition_len);
    unit.body = full.substr(info->definition_len);
    unit.full_text = std::move(full);
    unit.source_path = file.path;
    units.push_back(std::move(unit));
  }
  return units;
}

std::vector<VerilogUnit> filter_by_tokens(std::vector<VerilogUnit> units, const tokenizer::Vocab& vocab,
                                          size_t max_tokens) {
  std::vector<VerilogUnit> kept;
  kept.reserve(units.size());
  for (auto& unit : units) {
    size_t n = encode(unit.full_text, vocab).size();
    if (n <= max_tokens) {
      unit.token_count = n;
      kept.push_back(std::move(unit));
    }
  }
  return kept;
}

std::vector<VerilogUnit> dedup(std::vector<VerilogUnit> units) {
  std::set<std::string> seen;
  std::vector<VerilogUnit> kept;
  kept.reserve(units.size());
  for (auto& unit : units) {
    if (seen.insert(normalize_whitespace(unit.full_text)).second) {
      kept.push_back(std::move(unit));
    }
  }
  return kept;
}

std::optional<Task> parse_task(std::string_view name) {
  if (name == "v2c") return Task::kV2c;
  if (name == "c2v") return Task::kC2v;
  if (name == "autocomplete") return Task::kAutocomplete;
  if (name == "rewrite") return Task::kRewrite;
  return std::nullopt;
}

std::string task_name(Task task) {
  switch (task) {
    case Task::kV2c: return "v2c";
    case Task::kC2v: return "c2v";
    case Task::kAutocomplete: return "autocomplete";
    case Task::kRewrite: return "rewrite";
  }
  return "?";
}

std::string make_autocomplete_instruction(const VerilogUnit& unit) {
  return std::string(templates::kAutocomplete) + unit.definition;
}

std::string make_rewrite_instruction(const VerilogUnit& unit, bool sat_variant) {
  return std::string(sat_variant ? templates::kRewriteSat : templates::kRewriteNodes) +
         unit.full_text;
}

std::vector<InstructionExample> build_instruction_pairs(
    const std::vector<VerilogUnit>& units, const std::vector<TranslationPair>& translations,
    const std::set<Task>& tasks) {
  if (tasks.count(Task::kRewrite)) {
    throw std::invalid_argument(
        "build_instruction_pairs: rewrite has no derivable answer in the corpus");
  }
  if ((tasks.count(Task::kV2c) || tasks.count(Task::kC2v)) && translations.empty()) {
    throw std::invalid_argument("build_instruction_pairs: v2c/c2v require translation pairs");
  }

  std::vector<InstructionExample> examples;
  if (tasks.count(Task::kAutocomplete)) {
    for (const auto& unit : units) {
      examples.push_back({make_autocomplete_instruction(unit), unit.full_text,
                          Task::kAutocomplete});
    }
  }
  if (tasks.count(Task::kV2c)) {
    for (const auto& tp : translations) {
      examples.push_back({std::string(templates::kV2c) + tp.verilog.full_text, tp.c_program,
                          Task::kV2c});
    }
  }
  if (tasks.count(Task::kC2v)) {
    for (const auto& tp : translations) {
      examples.push_back({std::string(templates::kC2v) + tp.c_program, tp.verilog.full_text,
                          Task::kC2v});
    }
  }
  return examples;
}

bool balanced_structure_ok(std::string_view text) {
  SourceFile mem{"<memory>", std::string(text), 0};
  ExtractReport report;
  auto units = extract_units(mem, &report);
  return !units.empty() && report.dropped_unbalanced == 0 && report.dropped_malformed == 0;
}

void write_unit_corpus(const std::filesystem::path& path,
                       const std::vector<CorpusRecord>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write corpus to " + path.string());
  for (const auto& record : records) {
    nlohmann::ordered_json line;
    line["kind"] = record.unit.kind == UnitKind::kModule ? "module" : "function";
    line["name"] = record.unit.name;
    line["definition"] = record.unit.definition;
    line["body"] = record.unit.body;
    line["full_text"] = record.unit.full_text;
    line["token_count"] = record.unit.token_count;
    line["source_path"] = record.unit.source_path;
    if (record.c_program) line["c_program"] = *record.c_program;
    os << line.dump() << "\n";
  }
}

std::vector<CorpusRecord> load_unit_corpus(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read corpus from " + path.string());
  std::vector<CorpusRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    lineno++;
    if (line.empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": bad corpus record");
    }
    auto context = [&] { return path.string() + ":" + std::to_string(lineno); };
    if (!doc.is_object()) throw std::runtime_error(context() + ": bad corpus record");
    for (const char* field : {"kind", "name", "definition", "body", "full_text",
                              "source_path"}) {
      if (!doc.contains(field) || !doc[field].is_string()) {
        throw std::runtime_error(context() + ": missing string field " + std::string(field));
      }
    }
    CorpusRecord record;
    std::string kind = doc["kind"].get<std::string>();
    if (kind == "module") {
      record.unit.kind = UnitKind::kModule;
    } else if (kind == "function") {
      record.unit.kind = UnitKind::kFunction;
    } else {
      throw std::runtime_error(context() + ": unknown unit kind " + kind);
    }
    record.unit.name = doc["name"].get<std::string>();
    record.unit.definition = doc["definition"].get<std::string>();
    record.unit.body = doc["body"].get<std::string>();
    record.unit.full_text = doc["full_text"].get<std::string>();
    record.unit.source_path = doc["source_path"].get<std::string>();
    if (doc.contains("token_count")) {
      if (!doc["token_count"].is_number_unsigned()) {
        throw std::runtime_error(context() + ": token_count must be a nonnegative integer");
      }
      record.unit.token_count = doc["token_count"].get<size_t>();
    }
    if (doc.contains("c_program")) {
      if (!doc["c_program"].is_string()) {
        throw std::runtime_error(context() + ": c_program must be a string");
      }
      record.c_program = doc["c_program"].get<std::string>();
    }
    records.push_back(std::move(record));
  }
  return records;
}

}  // namespace vsteer::corpus
