#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace vsteer::cli {

// Where a resolved option value came from, in ascending precedence.
enum class ConfigSource { kDefault, kFile, kEnv, kFlag };
std::string source_name(ConfigSource source);

struct ConfigEntry {
  std::string section;
  std::string key;
  std::string value;
};

// "[section]" headers and "key = value" lines; '#' starts a comment, blank
// lines are skipped, later duplicates win. Malformed lines throw with their
// line number. Keys before any header land in section "".
std::vector<ConfigEntry> parse_config_text(const std::string& text);
std::vector<ConfigEntry> load_config_file(const std::filesystem::path& path);

// VSTEER_<SECTION>_<KEY>, uppercased, '-' mapped to '_'. The [tools] section
// drops the section infix so the names line up with what the external-tool
// adapters read (VSTEER_YOSYS, VSTEER_EQY).
std::string env_name(const std::string& section, const std::string& key);

// Layered lookup for one subcommand's options: command-line flag beats
// environment beats config file beats built-in default. Each resolve call
// appends one log line recording the value and its source.
class OptionResolver {
 public:
  OptionResolver(const std::vector<ConfigEntry>& entries, std::string section);

  std::string resolve_string(const std::string& key, bool flag_given,
                             const std::string& flag_value, const std::string& fallback);
  double resolve_double(const std::string& key, bool flag_given, double flag_value,
                        double fallback);
  std::uint64_t resolve_uint(const std::string& key, bool flag_given,
                             std::uint64_t flag_value, std::uint64_t fallback);

  ConfigSource last_source() const { return last_source_; }
  const std::vector<std::string>& log() const { return log_; }

 private:
  std::optional<std::string> file_value(const std::string& key) const;
  std::optional<std::pair<std::string, ConfigSource>> layered_text(const std::string& key) const;
  void note(const std::string& key, const std::string& shown, ConfigSource source);

  std::vector<ConfigEntry> entries_;
  std::string section_;
  ConfigSource last_source_ = ConfigSource::kDefault;
  std::vector<std::string> log_;
};

// The resolved settings a subcommand runs with. Each subcommand fills the
// subset it uses and validates it up front.
struct AppConfig {
  std::filesystem::path corpus;
  std::filesystem::path vocab;
  std::filesystem::path base_checkpoint;
  std::filesystem::path disc_checkpoint;
  std::filesystem::path out;
  std::string yosys;
  std::string eqy;
  double lambda = 0.5;
  double w = 1.5;
  double rho = 0.9;
  double tau = 0.75;
  double temperature = 0.8;
  std::uint64_t seed = 0;
  std::uint64_t workers = 0;
};

// Routes to the subcommands (extract, build-vocab, train-lm, train-disc,
// generate, augment, eval). Returns 0 on success, 1 on a domain error, 2 on a
// usage error. Data goes to `out`; diagnostics and the resolved-config log go
// to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vsteer::cli
