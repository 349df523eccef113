#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace hitmdp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kConfigVersion = 1;

// Bad config, override or argument; maps to exit status 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Subcommand { TrainVmoc, SolveTabular, CheckHomomorphism, Coldstart, ReplayMetrics };

Subcommand subcommand_from_string(const std::string& s);
std::string to_string(Subcommand c);

// Full default config of a subcommand, including version, seed, out, threads.
nlohmann::json default_config(Subcommand c);

// Overlays user onto base. Every key of user must exist in base; nested
// objects merge recursively. Errors name the dotted key.
void merge_config(nlohmann::json& base, const nlohmann::json& user, const std::string& prefix = "");

// Applies "a.b.c=value". The value is parsed as a JSON literal and falls
// back to a plain string.
void apply_override(nlohmann::json& cfg, const std::string& assignment);

struct Invocation {
  Subcommand command = Subcommand::TrainVmoc;
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
};

// Reads the config file, merges it over the defaults, applies overrides and
// flags, and checks the version. Throws ValidationError.
nlohmann::json resolve_config(const Invocation& inv);

// Runs one workflow and writes its artifacts. Returns the exit status.
int run(const Invocation& inv, std::ostream& out, std::ostream& err);

// Parses argv and calls run().
int main_entry(int argc, char** argv);

// Summary of a VMOC metrics CSV with trailing-window smoothing.
struct SeriesSummary {
  std::string name;
  double first = 0.0;  // smoothed
  double final = 0.0;  // smoothed
};

struct MetricsSummary {
  int rows = 0;
  int window = 20;
  long final_step = 0;
  double final_return = 0.0;           // raw
  double final_return_smoothed = 0.0;
  double best_return_smoothed = 0.0;
  long best_step = 0;
  std::vector<SeriesSummary> series;   // losses, temperatures, entropies
  std::vector<std::vector<double>> smoothed;  // rows x columns, step column raw
};

// Mean of the last min(window, i + 1) rows at each row i.
std::vector<double> trailing_mean(const std::vector<double>& x, int window);

// Throws std::runtime_error naming the line on a malformed file.
MetricsSummary replay_metrics(const std::string& path, int window = 20);
std::string format_summary(const MetricsSummary& s);
nlohmann::json to_json(const MetricsSummary& s);

}  // namespace hitmdp::cli
