#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hitmdp/envs/env.h"
#include "hitmdp/vmoc/agent.h"

namespace hitmdp::vmoc {

struct TrainerConfig {
  std::string env = "pendulum";
  long total_steps = 50000;
  long start_steps = 1000;   // uniformly random options and actions before this
  long update_after = 1000;  // first step that runs train_step
  int updates_per_step = 1;
  int batch_size = 64;
  long buffer_capacity = 1000000;
  long eval_interval = 5000;
  int eval_episodes = 10;
  bool normalize_obs = true;
  double action_scale = 0.0;  // 0 picks the env's torque bound (1 for discrete envs)
  int threads = 1;            // >= 2 runs rollouts on a separate actor thread

  void validate() const;
};

struct EvalResult {
  std::vector<double> returns;
  double mean = 0.0, std = 0.0, median = 0.0;
  double success_rate = 0.0;             // fraction of episodes ending in a terminal state
  std::vector<long> option_counts;       // options chosen during evaluation
  double option_usage_entropy() const;  // entropy of the normalized option counts
};

struct MetricsRow {
  long step = 0;
  double ret_mean = 0.0, ret_std = 0.0;
  TrainMetrics train;  // averaged over the updates since the previous row
};

struct RunResult {
  std::vector<MetricsRow> rows;
  EvalResult initial, final;
  // |H[pi^O] - target| after every update.
  std::vector<double> option_entropy_gap;
  std::vector<double> action_entropy_gap;
  long env_steps = 0;
  long updates = 0;
};

// Fills obs/action fields of the agent config from the environment.
AgentConfig agent_config_for(const envs::EnvSpec& spec, AgentConfig base);

EvalResult evaluate(const AgentParams& params, const envs::RunningNormalizer& norm,
                    envs::Env& env, int episodes, double action_scale);

// Trains on the configured environment. When out_dir is non-empty writes
// metrics.csv and checkpoints/ there.
RunResult run_vmoc(const AgentConfig& agent, const TrainerConfig& trainer, std::uint64_t seed,
                   const std::string& out_dir = "",
                   const std::function<void(const MetricsRow&)>& on_row = {});

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
inline constexpr const char* kMetricsHeader =
    "step,ret_mean,ret_std,loss_qa,loss_qo,loss_pa,loss_po,alpha_a,alpha_o,ent_a,ent_o";

}  // namespace hitmdp::vmoc
