#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hitmdp/cli/cli.h"
#include "hitmdp/core/json_io.h"

using namespace hitmdp;
using namespace hitmdp::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("hitmdp_cli_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string write_config(const fs::path& dir, const json& j) {
  fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(Subcommand cmd, const std::string& config, std::vector<std::string> sets = {},
               std::optional<std::string> out = std::nullopt) {
  Invocation inv;
  inv.command = cmd;
  inv.config_path = config;
  inv.overrides = std::move(sets);
  inv.out = out;
  std::ostringstream o, e;
  int code = run(inv, o, e);
  return {code, o.str(), e.str()};
}

std::string metrics_csv(const std::vector<std::vector<double>>& rows) {
  std::string s = "step,ret_mean,ret_std,loss_qa,loss_qo,loss_pa,loss_po,alpha_a,alpha_o,ent_a,ent_o\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + std::to_string(r[i]);
    s += "\n";
  }
  return s;
}

std::vector<double> row(double step, double ret) {
  return {step, ret, 0.5, 1, 2, 3, 4, 0.05, 0.05, -1, 1};
}

}  // namespace

TEST(CliConfigTest, SubcommandNamesRoundTrip) {
  for (auto c : {Subcommand::TrainVmoc, Subcommand::SolveTabular, Subcommand::CheckHomomorphism,
                 Subcommand::Coldstart, Subcommand::ReplayMetrics})
    EXPECT_EQ(subcommand_from_string(to_string(c)), c);
  EXPECT_THROW(subcommand_from_string("train"), ValidationError);
}

TEST(CliConfigTest, MergeRejectsUnknownNestedKeyByName) {
  json base = default_config(Subcommand::TrainVmoc);
  try {
    merge_config(base, json{{"agent", {{"gama", 0.9}}}});
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("agent.gama"), std::string::npos);
  }
}

TEST(CliConfigTest, MergeKeepsUntouchedDefaults) {
  json base = default_config(Subcommand::TrainVmoc);
  merge_config(base, json{{"agent", {{"gamma", 0.95}}}});
  EXPECT_DOUBLE_EQ(base["agent"]["gamma"].get<double>(), 0.95);
  EXPECT_DOUBLE_EQ(base["agent"]["tau"].get<double>(), 0.005);
  EXPECT_EQ(base["trainer"]["env"], "pendulum");
}

TEST(CliConfigTest, OverridesParseJsonLiteralsAndFallBackToStrings) {
  json cfg = default_config(Subcommand::TrainVmoc);
  apply_override(cfg, "agent.gamma=0.97");
  apply_override(cfg, "agent.hidden=[32,32]");
  apply_override(cfg, "agent.auto_alpha=false");
  apply_override(cfg, "trainer.env=chain:5");
  EXPECT_DOUBLE_EQ(cfg["agent"]["gamma"].get<double>(), 0.97);
  EXPECT_EQ(cfg["agent"]["hidden"], json::array({32, 32}));
  EXPECT_EQ(cfg["agent"]["auto_alpha"], false);
  EXPECT_EQ(cfg["trainer"]["env"], "chain:5");
  EXPECT_THROW(apply_override(cfg, "agent.gama=1"), ValidationError);
  EXPECT_THROW(apply_override(cfg, "agent=1"), ValidationError);
  EXPECT_THROW(apply_override(cfg, "agent.gamma"), ValidationError);
  EXPECT_THROW(apply_override(cfg, "agent.gamma.x=1"), ValidationError);
}

TEST(CliConfigTest, VersionIsRequiredAndChecked) {
  fs::path d = fresh_dir("version");
  Invocation inv;
  inv.command = Subcommand::SolveTabular;
  inv.config_path = write_config(d, json{{"env", "chain:5"}});
  EXPECT_THROW(resolve_config(inv), ValidationError);
  inv.config_path = write_config(d, json{{"version", 2}});
  EXPECT_THROW(resolve_config(inv), ValidationError);
  inv.config_path = write_config(d, json{{"version", 1}});
  inv.seed = 7;
  inv.threads = 3;
  json cfg = resolve_config(inv);
  EXPECT_EQ(cfg["seed"], 7);
  EXPECT_EQ(cfg["threads"], 3);
}

TEST(CliRunTest, UnknownKeyExitsOneNamingTheKey) {
  fs::path d = fresh_dir("gama");
  auto r = invoke(Subcommand::SolveTabular, write_config(d, json{{"version", 1}, {"gama", 0.9}}));
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("gama"), std::string::npos);
}

TEST(CliRunTest, UnreadableConfigExitsOne) {
  auto r = invoke(Subcommand::SolveTabular, "/nonexistent/hitmdp/config.json");
  EXPECT_EQ(r.code, kExitValidation);
}

TEST(CliRunTest, OutOfRangeValueExitsOne) {
  fs::path d = fresh_dir("range");
  std::string cfg = write_config(d, json{{"version", 1}});
  EXPECT_EQ(invoke(Subcommand::SolveTabular, cfg, {"discount=1.0"}).code, kExitValidation);
  EXPECT_EQ(invoke(Subcommand::SolveTabular, cfg, {"n_options=\"two\""}).code, kExitValidation);
  EXPECT_EQ(invoke(Subcommand::TrainVmoc, cfg, {"agent.gamma=2"}).code, kExitValidation);
  EXPECT_EQ(invoke(Subcommand::Coldstart, cfg, {"model.n_latent=0"}).code, kExitValidation);
}

TEST(CliRunTest, UnwritableOutputExitsTwo) {
  fs::path d = fresh_dir("unwritable");
  std::ofstream(d / "blocker") << "x";
  auto r = invoke(Subcommand::SolveTabular, write_config(d, json{{"version", 1}}), {},
                  (d / "blocker" / "run").string());
  EXPECT_EQ(r.code, kExitRuntime);
}

TEST(CliRunTest, SolveTabularWritesQTablesAndMonotoneTrace) {
  fs::path d = fresh_dir("solve");
  auto r = invoke(Subcommand::SolveTabular, write_config(d, json{{"version", 1}}), {},
                  (d / "run").string());
  ASSERT_EQ(r.code, kExitOk) << r.err;
  json sol = read_json_file((d / "run" / "solution.json").string());
  ASSERT_TRUE(sol.contains("q_option") && sol.contains("q_action"));
  EXPECT_EQ(sol["q_option"].size(), 5u);
  const auto trace = sol["elbo_trace"].get<std::vector<double>>();
  ASSERT_GE(trace.size(), 2u);
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_GE(trace[i], trace[i - 1] - 1e-10);
  EXPECT_TRUE(fs::exists(d / "run" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(d / "run" / "config-resolved.json"));
  EXPECT_TRUE(fs::exists(d / "run" / "checkpoints" / "policies.json"));
}

TEST(CliRunTest, CheckHomomorphismOnMirrorFixturePasses) {
  fs::path d = fresh_dir("homo");
  auto r = invoke(Subcommand::CheckHomomorphism, write_config(d, json{{"version", 1}}), {},
                  (d / "run").string());
  ASSERT_EQ(r.code, kExitOk) << r.err;
  json rep = read_json_file((d / "run" / "report.json").string());
  EXPECT_EQ(rep["status"], "pass");
  EXPECT_LT(rep["gap_optimal"].get<double>(), 1e-6);
  EXPECT_LT(rep["gap_fixed_policy"].get<double>(), 1e-6);
}

TEST(CliRunTest, RerunAndResolvedConfigReproduceMetrics) {
  fs::path d = fresh_dir("rerun");
  std::string cfg = write_config(
      d, json{{"version", 1}, {"seed", 3}, {"init", "random"}, {"env", "chain:4"}});
  ASSERT_EQ(invoke(Subcommand::SolveTabular, cfg, {}, (d / "a").string()).code, kExitOk);
  ASSERT_EQ(invoke(Subcommand::SolveTabular, cfg, {}, (d / "b").string()).code, kExitOk);
  ASSERT_EQ(invoke(Subcommand::SolveTabular, (d / "a" / "config-resolved.json").string(), {},
                   (d / "c").string())
                .code,
            kExitOk);
  std::string a = slurp(d / "a" / "metrics.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(d / "b" / "metrics.csv"));
  EXPECT_EQ(a, slurp(d / "c" / "metrics.csv"));
}

TEST(CliRunTest, ColdstartShortRunWritesArtifacts) {
  fs::path d = fresh_dir("coldstart");
  std::string cfg = write_config(d, json{{"version", 1},
                                         {"train_samples", 10},
                                         {"held_out_samples", 5},
                                         {"eval_interval", 1},
                                         {"model", {{"n_latent", 2}, {"latent_len", 2}}},
                                         {"train", {{"epochs", 2}}}});
  auto r = invoke(Subcommand::Coldstart, cfg, {}, (d / "run").string());
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::string csv = slurp(d / "run" / "metrics.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_TRUE(fs::exists(d / "run" / "checkpoints" / "model.json"));
  EXPECT_TRUE(fs::exists(d / "run" / "train.tsv"));
  json s = read_json_file((d / "run" / "summary.json").string());
  EXPECT_GT(s["final_elbo"].get<double>(), s["initial_elbo"].get<double>());
}

TEST(CliReplayTest, TrailingMeanUsesAvailableRows) {
  auto m = trailing_mean({1, 2, 3, 4}, 2);
  EXPECT_DOUBLE_EQ(m[0], 1.0);
  EXPECT_DOUBLE_EQ(m[1], 1.5);
  EXPECT_DOUBLE_EQ(m[3], 3.5);
}

TEST(CliReplayTest, ConstantReturnSmoothedEqualsRaw) {
  fs::path d = fresh_dir("replay_const");
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 50; ++i) rows.push_back(row(i * 100, -200.0));
  std::ofstream(d / "m.csv") << metrics_csv(rows);
  MetricsSummary s = replay_metrics((d / "m.csv").string());
  for (const auto& r : s.smoothed) EXPECT_DOUBLE_EQ(r[1], -200.0);
  EXPECT_DOUBLE_EQ(s.final_return_smoothed, -200.0);
}

TEST(CliReplayTest, SingleRowSummaryEqualsRow) {
  fs::path d = fresh_dir("replay_single");
  std::ofstream(d / "m.csv") << metrics_csv({row(500, 12.5)});
  MetricsSummary s = replay_metrics((d / "m.csv").string());
  EXPECT_EQ(s.rows, 1);
  EXPECT_EQ(s.final_step, 500);
  EXPECT_DOUBLE_EQ(s.final_return, 12.5);
  EXPECT_DOUBLE_EQ(s.final_return_smoothed, 12.5);
  EXPECT_DOUBLE_EQ(s.best_return_smoothed, 12.5);
  for (const auto& sr : s.series) EXPECT_DOUBLE_EQ(sr.first, sr.final);
}

TEST(CliReplayTest, RampTailIsMeanOfLastTwenty) {
  fs::path d = fresh_dir("replay_ramp");
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 100; ++i) rows.push_back(row(i, i));
  std::ofstream(d / "m.csv") << metrics_csv(rows);
  MetricsSummary s = replay_metrics((d / "m.csv").string(), 20);
  EXPECT_NEAR(s.final_return_smoothed, 89.5, 1e-12);
  EXPECT_EQ(s.best_step, 99);
  EXPECT_NE(format_summary(s).find("89.5"), std::string::npos);
  EXPECT_DOUBLE_EQ(to_json(s)["final_return_smoothed"].get<double>(), s.final_return_smoothed);
}

TEST(CliReplayTest, MalformedRowNamesLineNumber) {
  fs::path d = fresh_dir("replay_bad");
  std::string csv = metrics_csv({row(0, 1), row(1, 2)}) + "2,3,4\n";
  std::ofstream(d / "m.csv") << csv;
  try {
    replay_metrics((d / "m.csv").string());
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(":4:"), std::string::npos) << e.what();
  }
  std::ofstream(d / "h.csv") << "step,ret\n0,1\n";
  EXPECT_THROW(replay_metrics((d / "h.csv").string()), std::runtime_error);
}

TEST(CliReplayTest, ReplaySubcommandPrintsTextAndJson) {
  fs::path d = fresh_dir("replay_cmd");
  std::ofstream(d / "m.csv") << metrics_csv({row(0, 1), row(1, 3)});
  std::string cfg = write_config(d, json{{"version", 1}, {"metrics", (d / "m.csv").string()}});
  auto r = invoke(Subcommand::ReplayMetrics, cfg, {}, (d / "out").string());
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("final return"), std::string::npos);
  EXPECT_NE(r.out.find("\"final_return_smoothed\": 2.0"), std::string::npos);
  std::ofstream(d / "bad.csv") << metrics_csv({row(0, 1)}) + "1,2\n";
  auto bad = invoke(Subcommand::ReplayMetrics, cfg, {"metrics=\"" + (d / "bad.csv").string() + "\""},
                    (d / "out2").string());
  EXPECT_EQ(bad.code, kExitValidation);
  EXPECT_NE(bad.err.find(":3:"), std::string::npos);
}
