#include "vsteer/labelers.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <semaphore>
#include <sstream>
#include <stdexcept>

#include "vsteer/corpus.hpp"

namespace vsteer::labelers {

namespace {

namespace fs = std::filesystem;

std::counting_semaphore<64> tool_slots(4);

struct SlotGuard {
  SlotGuard() { tool_slots.acquire(); }
  ~SlotGuard() { tool_slots.release(); }
};

struct TempDir {
  fs::path path;

  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "vsteer-XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (::mkdtemp(buf.data()) == nullptr) {
      throw std::runtime_error("could not create a temp workspace");
    }
    path = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream os(p, std::ios::binary);
  os << content;
  if (!os) throw std::runtime_error("could not write " + p.string());
}

bool executable_file(const fs::path& p) {
  struct stat st{};
  if (::stat(p.c_str(), &st) != 0) return false;
  if (!S_ISREG(st.st_mode)) return false;
  return ::access(p.c_str(), X_OK) == 0;
}

std::string env_or(const char* name, const char* fallback) {
  const char* v = std::getenv(name);
  return (v && *v) ? v : fallback;
}

// Runs a yosys script over one design file inside a throwaway workspace.
CommandResult run_yosys_script(const std::string& binary, const std::string& design_name,
                               const std::string& design_text, const std::string& script,
                               double timeout_seconds) {
  TempDir ws;
  write_file(ws.path / design_name, design_text);
  write_file(ws.path / "run.ys", script);
  return run_command({binary, "-s", "run.ys"}, timeout_seconds, ws.path);
}

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

bool is_port_keyword(const std::string& word) {
  static const std::vector<std::string> kw = {
      "input", "output", "inout",  "wire",     "reg",  "logic", "signed",
      "unsigned", "var",  "bit",   "integer",  "int",  "byte",  "real",
      "time", "tri",  "supply0", "supply1", "parameter", "localparam"};
  return std::find(kw.begin(), kw.end(), word) != kw.end();
}

// Last non-keyword identifier of a port chunk; ranges were stripped already.
std::optional<std::string> port_name_of(const std::string& chunk) {
  std::optional<std::string> name;
  size_t i = 0;
  while (i < chunk.size()) {
    if (is_ident_start(chunk[i])) {
      size_t j = i;
      while (j < chunk.size() && is_ident_char(chunk[j])) ++j;
      std::string word = chunk.substr(i, j - i);
      if (!is_port_keyword(word)) name = word;
      i = j;
    } else {
      ++i;
    }
  }
  return name;
}

double median_of(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  size_t n = xs.size();
  if (n % 2 == 1) return xs[n / 2];
  return 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

size_t whitespace_token_count(const std::string& text) {
  std::istringstream is(text);
  std::string word;
  size_t n = 0;
  while (is >> word) ++n;
  return n;
}

}  // namespace

MetricResult metric_ok(double value, std::string raw) {
  MetricResult r;
  r.status = MetricStatus::kOk;
  r.value = value;
  r.raw_output = std::move(raw);
  return r;
}

MetricResult metric_error(MetricStatus status, std::string raw) {
  if (status == MetricStatus::kOk) {
    throw std::invalid_argument("metric_error cannot carry ok status");
  }
  MetricResult r;
  r.status = status;
  r.raw_output = std::move(raw);
  return r;
}

CommandResult run_command(const std::vector<std::string>& argv, double timeout_seconds,
                          const std::filesystem::path& workdir) {
  if (argv.empty()) throw std::invalid_argument("run_command: empty argv");
  if (!(timeout_seconds > 0.0)) {
    throw std::invalid_argument("run_command: timeout must be positive");
  }
  SlotGuard slot;

  int fds[2];
  if (::pipe(fds) != 0) throw std::runtime_error("pipe failed");
  pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    throw std::runtime_error("fork failed");
  }
  if (pid == 0) {
    if (!workdir.empty() && ::chdir(workdir.c_str()) != 0) _exit(126);
    ::dup2(fds[1], STDOUT_FILENO);
    ::dup2(fds[1], STDERR_FILENO);
    ::close(fds[0]);
    ::close(fds[1]);
    std::vector<char*> cargv;
    cargv.reserve(argv.size() + 1);
    for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
    cargv.push_back(nullptr);
    ::execvp(cargv[0], cargv.data());
    _exit(127);
  }
  ::close(fds[1]);

  CommandResult res;
  auto deadline = std::chrono::steady_clock::now() +
                  std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                      std::chrono::duration<double>(timeout_seconds));
  char buf[4096];
  bool open = true;
  while (open) {
    auto remaining = deadline - std::chrono::steady_clock::now();
    if (remaining <= std::chrono::steady_clock::duration::zero()) {
      ::kill(pid, SIGKILL);
      res.timed_out = true;
      break;
    }
    int wait_ms = static_cast<int>(
        std::chrono::duration_cast<std::chrono::milliseconds>(remaining).count());
    struct pollfd p = {fds[0], POLLIN, 0};
    int rv = ::poll(&p, 1, std::max(wait_ms, 1));
    if (rv < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (rv == 0) continue;  // deadline check happens at the top
    ssize_t n = ::read(fds[0], buf, sizeof buf);
    if (n > 0) {
      res.output.append(buf, static_cast<size_t>(n));
    } else if (n == 0 || errno != EINTR) {
      open = false;
    }
  }
  ::close(fds[0]);

  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (!res.timed_out && WIFEXITED(status)) {
    res.exit_code = WEXITSTATUS(status);
  }
  return res;
}

std::optional<std::string> find_tool(const std::string& name) {
  if (name.empty()) return std::nullopt;
  if (name.find('/') != std::string::npos) {
    if (executable_file(name)) return name;
    return std::nullopt;
  }
  const char* path = std::getenv("PATH");
  if (path == nullptr) return std::nullopt;
  std::istringstream is(path);
  std::string dir;
  while (std::getline(is, dir, ':')) {
    if (dir.empty()) continue;
    fs::path candidate = fs::path(dir) / name;
    if (executable_file(candidate)) return candidate.string();
  }
  return std::nullopt;
}

std::string yosys_binary() { return env_or("VSTEER_YOSYS", "yosys"); }
std::string eqy_binary() { return env_or("VSTEER_EQY", "eqy"); }

std::string syntax_script() { return "read_verilog design.v\nprep\n"; }

std::string aig_script() { return "read_verilog design.v\nproc; aigmap; stat\n"; }

std::string sat_script() {
  return "read_verilog -sv design.sv\n"
         "hierarchy; proc; opt; sat -verify -seq 100 -tempinduct -prove-asserts\n";
}

std::string equivalence_config(const std::string& top_module) {
  return "[gold]\nread_verilog gold.v\nprep -top " + top_module +
         "\n\n[gate]\nread_verilog gate.v\nprep -top " + top_module +
         "\n\n[strategy basic]\nuse sat\ndepth 10\n";
}

MetricResult yosys_syntax_check(const std::string& verilog, double timeout_seconds) {
  auto bin = find_tool(yosys_binary());
  if (!bin) {
    return metric_error(MetricStatus::kToolError,
                        "yosys binary '" + yosys_binary() + "' not found");
  }
  CommandResult cmd = run_yosys_script(*bin, "design.v", verilog, syntax_script(), timeout_seconds);
  if (cmd.timed_out) {
    return metric_error(MetricStatus::kTimeout,
                        "syntax check exceeded " + std::to_string(timeout_seconds) + " s");
  }
  if (cmd.exit_code == 127 && cmd.output.empty()) {
    return metric_error(MetricStatus::kToolError, "could not execute " + *bin);
  }
  return metric_ok(cmd.exit_code == 0 ? 1.0 : 0.0, cmd.output);
}

MetricResult yosys_aig_nodes(const std::string& verilog, double timeout_seconds) {
  auto bin = find_tool(yosys_binary());
  if (!bin) {
    return metric_error(MetricStatus::kToolError,
                        "yosys binary '" + yosys_binary() + "' not found");
  }
  CommandResult cmd = run_yosys_script(*bin, "design.v", verilog, aig_script(), timeout_seconds);
  if (cmd.timed_out) {
    return metric_error(MetricStatus::kTimeout,
                        "node count exceeded " + std::to_string(timeout_seconds) + " s");
  }
  if (cmd.exit_code != 0) {
    return metric_error(MetricStatus::kToolError, cmd.output);
  }
  // one "Number of cells:" line per module section; the design total is their sum
  static const std::regex cells_re(R"(Number of cells:\s+(\d+))");
  auto begin = std::sregex_iterator(cmd.output.begin(), cmd.output.end(), cells_re);
  auto end = std::sregex_iterator();
  if (begin == end) {
    return metric_error(MetricStatus::kParseError, cmd.output);
  }
  double total = 0.0;
  for (auto it = begin; it != end; ++it) {
    total += std::stod((*it)[1].str());
  }
  return metric_ok(total, cmd.output);
}

MetricResult yosys_sat_runtime(const std::string& systemverilog, int repetitions,
                               double timeout_seconds) {
  if (repetitions < 1) {
    throw std::invalid_argument("sat runtime needs at least one repetition");
  }
  std::string masked = corpus::mask_comments(systemverilog);
  if (masked.find("assert") == std::string::npos) {
    return metric_error(MetricStatus::kToolError,
                        "design has no assertions; nothing for the SAT proof to check");
  }
  auto bin = find_tool(yosys_binary());
  if (!bin) {
    return metric_error(MetricStatus::kToolError,
                        "yosys binary '" + yosys_binary() + "' not found");
  }
  std::vector<double> seconds;
  std::string last_output;
  for (int i = 0; i < repetitions; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    CommandResult cmd =
        run_yosys_script(*bin, "design.sv", systemverilog, sat_script(), timeout_seconds);
    auto t1 = std::chrono::steady_clock::now();
    if (cmd.timed_out) {
      return metric_error(MetricStatus::kTimeout,
                          "SAT proof exceeded " + std::to_string(timeout_seconds) + " s");
    }
    if (cmd.exit_code != 0) {
      return metric_error(MetricStatus::kToolError, cmd.output);
    }
    seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    last_output = std::move(cmd.output);
  }
  return metric_ok(median_of(std::move(seconds)), last_output);
}

MetricResult yosys_equivalence(const std::string& candidate, const std::string& reference,
                               double timeout_seconds) {
  auto cand_ports = parse_ports(candidate);
  auto ref_ports = parse_ports(reference);
  if (!cand_ports || !ref_ports) {
    return metric_error(MetricStatus::kToolError, "could not parse a module interface");
  }
  if (cand_ports->module_name != ref_ports->module_name) {
    return metric_error(MetricStatus::kToolError,
                        "module names differ: " + cand_ports->module_name + " vs " +
                            ref_ports->module_name);
  }
  if (cand_ports->ports != ref_ports->ports) {
    return metric_error(MetricStatus::kToolError,
                        "port interfaces differ for module " + cand_ports->module_name);
  }
  auto bin = find_tool(eqy_binary());
  if (!bin) {
    return metric_error(MetricStatus::kToolError, "eqy binary '" + eqy_binary() + "' not found");
  }
  TempDir ws;
  write_file(ws.path / "gold.v", reference);
  write_file(ws.path / "gate.v", candidate);
  write_file(ws.path / "check.eqy", equivalence_config(cand_ports->module_name));
  CommandResult cmd = run_command({*bin, "-f", "check.eqy"}, timeout_seconds, ws.path);
  if (cmd.timed_out) {
    return metric_error(MetricStatus::kTimeout,
                        "equivalence exceeded " + std::to_string(timeout_seconds) + " s");
  }
  if (cmd.exit_code == 127 && cmd.output.empty()) {
    return metric_error(MetricStatus::kToolError, "could not execute " + *bin);
  }
  return metric_ok(cmd.exit_code == 0 ? 1.0 : 0.0, cmd.output);
}

bool syntax_ok(const std::string& verilog) {
  if (find_tool(yosys_binary())) {
    MetricResult r = yosys_syntax_check(verilog);
    if (r.ok()) return *r.value != 0.0;
    // fall through when the tool broke mid-run
  }
  return corpus::balanced_structure_ok(verilog);
}

std::optional<PortInterface> parse_ports(const std::string& verilog) {
  std::string masked = corpus::mask_comments(verilog);
  static const std::regex mod_re(R"(\bmodule\s+([A-Za-z_][A-Za-z0-9_$]*))");
  std::smatch m;
  if (!std::regex_search(masked, m, mod_re)) return std::nullopt;
  PortInterface pi;
  pi.module_name = m[1].str();

  size_t pos = static_cast<size_t>(m.position(0) + m.length(0));
  auto skip_ws = [&] {
    while (pos < masked.size() && std::isspace(static_cast<unsigned char>(masked[pos]))) ++pos;
  };
  auto skip_balanced = [&]() -> bool {  // expects masked[pos] == '('
    int depth = 0;
    size_t start = pos;
    for (; pos < masked.size(); ++pos) {
      if (masked[pos] == '(') depth++;
      if (masked[pos] == ')') {
        depth--;
        if (depth == 0) {
          ++pos;
          return true;
        }
      }
    }
    pos = start;
    return false;
  };

  skip_ws();
  if (pos < masked.size() && masked[pos] == '#') {
    ++pos;
    skip_ws();
    if (pos >= masked.size() || masked[pos] != '(' || !skip_balanced()) return std::nullopt;
    skip_ws();
  }
  if (pos >= masked.size()) return std::nullopt;
  if (masked[pos] != '(') {
    // old-style header without a port list: "module name;"
    if (masked[pos] == ';') return pi;
    return std::nullopt;
  }

  size_t open = pos;
  if (!skip_balanced()) return std::nullopt;
  std::string inside = masked.substr(open + 1, pos - open - 2);
  // ranges carry colons but never commas we care about; drop them
  inside = std::regex_replace(inside, std::regex(R"(\[[^\]]*\])"), " ");

  std::string chunk;
  std::istringstream is(inside);
  while (std::getline(is, chunk, ',')) {
    if (auto name = port_name_of(chunk)) pi.ports.push_back(*name);
  }
  std::sort(pi.ports.begin(), pi.ports.end());
  return pi;
}

Labeler keyword_labeler(const std::string& pattern) {
  Labeler l;
  l.spec = {"keyword:" + pattern, LabelerKind::kAbsolute, "", 60.0};
  l.measure = [pattern](const std::string& text) {
    std::string masked = corpus::mask_comments(text);
    bool found = masked.find(pattern) != std::string::npos;
    return metric_ok(found ? 1.0 : 0.0);
  };
  return l;
}

Labeler length_labeler(size_t threshold) {
  Labeler l;
  l.spec = {"length:" + std::to_string(threshold), LabelerKind::kRelative, "", 60.0};
  l.measure = [](const std::string& text) {
    return metric_ok(static_cast<double>(whitespace_token_count(text)));
  };
  l.builtin_reference = static_cast<double>(threshold);
  return l;
}

Labeler syntax_labeler() {
  Labeler l;
  l.spec = {"syntax", LabelerKind::kAbsolute, syntax_script(), 60.0};
  l.measure = [](const std::string& text) { return metric_ok(syntax_ok(text) ? 1.0 : 0.0); };
  return l;
}

Labeler aig_nodes_labeler() {
  Labeler l;
  l.spec = {"aig-nodes", LabelerKind::kRelative, aig_script(), 60.0};
  l.measure = [](const std::string& text) { return yosys_aig_nodes(text); };
  return l;
}

Labeler sat_runtime_labeler() {
  Labeler l;
  l.spec = {"sat-runtime", LabelerKind::kRelative, sat_script(), 600.0};
  l.measure = [](const std::string& text) { return yosys_sat_runtime(text); };
  return l;
}

std::optional<Labeler> make_labeler(const std::string& id) {
  if (id == "syntax") return syntax_labeler();
  if (id == "aig-nodes") return aig_nodes_labeler();
  if (id == "sat-runtime") return sat_runtime_labeler();
  const std::string kw = "keyword:";
  if (id.rfind(kw, 0) == 0 && id.size() > kw.size()) {
    return keyword_labeler(id.substr(kw.size()));
  }
  const std::string len = "length:";
  if (id.rfind(len, 0) == 0 && id.size() > len.size()) {
    size_t value = 0;
    const char* first = id.data() + len.size();
    const char* last = id.data() + id.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec == std::errc{} && ptr == last) return length_labeler(value);
  }
  return std::nullopt;
}

}  // namespace vsteer::labelers
