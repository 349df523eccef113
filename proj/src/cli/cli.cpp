#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "commands.h"
#include "hitmdp/cli/cli.h"
#include "hitmdp/core/json_io.h"

namespace hitmdp::cli {

namespace {

void setup_logging() {
  auto logger = spdlog::get("hitmdp_lab");
  if (!logger) logger = spdlog::stderr_color_mt("hitmdp_lab");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("HITMDP_LAB_LOG");
  std::string level = env ? env : "info";
  if (level == "error")
    spdlog::set_level(spdlog::level::err);
  else if (level == "info")
    spdlog::set_level(spdlog::level::info);
  else if (level == "debug")
    spdlog::set_level(spdlog::level::debug);
  else
    throw ValidationError("HITMDP_LAB_LOG must be error, info or debug, got '" + level + "'");
}

}  // namespace

int run(const Invocation& inv, std::ostream& out, std::ostream& err) {
  Job job;
  std::filesystem::path dir;
  try {
    setup_logging();
    nlohmann::json cfg = resolve_config(inv);
    job = make_job(inv.command, cfg);
    dir = cfg["out"].get<std::string>();
    std::filesystem::create_directories(dir);
    write_json_file((dir / "config-resolved.json").string(), cfg);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  try {
    spdlog::info("{} -> {}", to_string(inv.command), dir.string());
    job(out);
  } catch (const std::exception& e) {
    err << "runtime fault: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int main_entry(int argc, char** argv) {
  CLI::App app{"Hidden-temporal MDP experiment runner"};
  app.require_subcommand(1);
  Invocation inv;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 1;
  for (const char* name : {"train-vmoc", "solve-tabular", "check-homomorphism", "coldstart",
                           "replay-metrics"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", inv.config_path, "JSON config file")->required();
    sub->add_option("--set", inv.overrides, "override key=value (dotted key, JSON value)");
    sub->add_option("--seed", seed, "root seed");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--threads", threads, "worker cap")->check(CLI::PositiveNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  CLI::App* sub = app.get_subcommands().front();
  inv.command = subcommand_from_string(sub->get_name());
  if (sub->count("--seed")) inv.seed = seed;
  if (sub->count("--out")) inv.out = out;
  if (sub->count("--threads")) inv.threads = threads;
  return run(inv, std::cout, std::cerr);
}

}  // namespace hitmdp::cli
