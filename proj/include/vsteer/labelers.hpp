#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace vsteer::labelers {

enum class MetricStatus { kOk, kToolError, kTimeout, kParseError };

// Every adapter outcome is one of these; adapters never throw on tool
// failures. A value is carried exactly when the measurement succeeded.
struct MetricResult {
  MetricStatus status = MetricStatus::kToolError;
  std::optional<double> value;
  std::string raw_output;

  bool ok() const { return status == MetricStatus::kOk; }
};

MetricResult metric_ok(double value, std::string raw = "");
MetricResult metric_error(MetricStatus status, std::string raw);

enum class LabelerKind { kAbsolute, kRelative };

struct LabelerSpec {
  std::string name;
  LabelerKind kind = LabelerKind::kAbsolute;
  std::string command_recipe;  // exact tool script; empty for built-ins
  double timeout_seconds = 60.0;
};

// A labeler measures one candidate text. Absolute labelers encode pass/fail
// in the value (nonzero = positive); relative labelers yield a metric where
// lower is better and may carry a fixed comparison bar of their own.
struct Labeler {
  LabelerSpec spec;
  std::function<MetricResult(const std::string&)> measure;
  std::optional<double> builtin_reference;
};

// ---- subprocess plumbing ----

struct CommandResult {
  int exit_code = -1;  // -1 when killed or signalled
  bool timed_out = false;
  std::string output;  // stdout and stderr merged
};

// fork/exec with merged output capture and a wall-clock timeout; the child is
// killed when the deadline passes. A process-wide semaphore bounds how many
// tool processes run at once.
CommandResult run_command(const std::vector<std::string>& argv, double timeout_seconds,
                          const std::filesystem::path& workdir = {});

// Resolves a binary against PATH (or verifies it directly when the name
// contains a slash). Returns the usable path, or nothing.
std::optional<std::string> find_tool(const std::string& name);

// Binary names, overridable through VSTEER_YOSYS / VSTEER_EQY.
std::string yosys_binary();
std::string eqy_binary();

// The exact script each adapter feeds the tool; tests pin these byte for byte.
std::string syntax_script();
std::string aig_script();
std::string sat_script();
std::string equivalence_config(const std::string& top_module);

// ---- external adapters ----

// Runs read + prep; ok with value 1 on tool success, ok with value 0 when the
// tool rejects the design, tool_error when the binary is missing or unusable.
MetricResult yosys_syntax_check(const std::string& verilog, double timeout_seconds = 60.0);

// Runs proc; aigmap; stat and parses the cell total of the mapped design
// (summed over module sections). Unparseable statistics give parse_error with
// the raw log retained.
MetricResult yosys_aig_nodes(const std::string& verilog, double timeout_seconds = 60.0);

// Median wall-clock seconds over `repetitions` successful proof runs of the
// temporal-induction SAT script. The design must contain an assertion.
MetricResult yosys_sat_runtime(const std::string& systemverilog, int repetitions = 3,
                               double timeout_seconds = 600.0);

// Equivalence via eqy, gold = reference, gate = candidate. The port
// interfaces are compared first; a mismatch is reported without running the
// tool. ok value 1 = proved equivalent, 0 = not proved.
MetricResult yosys_equivalence(const std::string& candidate, const std::string& reference,
                               double timeout_seconds = 600.0);

// Syntax screen for the data pipeline: the external check when the tool is
// available, otherwise the structural balance scan.
bool syntax_ok(const std::string& verilog);

// Port interface of the first module in the text, for the equivalence
// precheck. Port names come back sorted.
struct PortInterface {
  std::string module_name;
  std::vector<std::string> ports;
};
std::optional<PortInterface> parse_ports(const std::string& verilog);

// ---- built-in labelers ----

// Positive iff the pattern occurs outside comments and string literals.
Labeler keyword_labeler(const std::string& pattern);

// Relative labeler with metric = whitespace token count; the threshold is its
// built-in comparison bar for reference-free use.
Labeler length_labeler(size_t threshold);

Labeler syntax_labeler();
Labeler aig_nodes_labeler();
Labeler sat_runtime_labeler();

// "keyword:PAT", "length:N", "syntax", "aig-nodes", "sat-runtime".
std::optional<Labeler> make_labeler(const std::string& id);

}  // namespace vsteer::labelers
