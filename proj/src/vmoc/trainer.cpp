#include "hitmdp/vmoc/trainer.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "hitmdp/nn/checkpoint.h"

namespace hitmdp::vmoc {

using Eigen::VectorXd;

void TrainerConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("trainer config: " + m); };
  if (total_steps < 1) fail("total_steps must be >= 1");
  if (start_steps < 0 || update_after < 0) fail("start_steps and update_after must be >= 0");
  if (updates_per_step < 1) fail("updates_per_step must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (buffer_capacity < batch_size) fail("buffer_capacity must be >= batch_size");
  if (eval_interval < 1) fail("eval_interval must be >= 1");
  if (eval_episodes < 1) fail("eval_episodes must be >= 1");
  if (action_scale < 0.0) fail("action_scale must be >= 0");
  if (threads < 1) fail("threads must be >= 1");
}

double EvalResult::option_usage_entropy() const {
  double total = 0.0;
  for (long c : option_counts) total += static_cast<double>(c);
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (long c : option_counts)
    if (c > 0) {
      double p = static_cast<double>(c) / total;
      h -= p * std::log(p);
    }
  return h;
}

AgentConfig agent_config_for(const envs::EnvSpec& spec, AgentConfig base) {
  base.obs_dim = spec.obs_dim;
  base.action_count = spec.action_count;
  base.action_dim = spec.discrete() ? 1 : spec.action_dim;
  return base;
}

namespace {

double resolve_scale(const envs::Env& env, double scale) {
  if (scale > 0.0) return scale;
  if (env.spec().discrete()) return 1.0;
  return env.id() == "pendulum" ? envs::PendulumEnv::kMaxTorque : 1.0;
}

VectorXd env_action(const Agent::Decision& d, bool discrete, double scale) {
  return discrete ? d.a : VectorXd(d.a * scale);
}

Agent::Decision random_decision(const AgentConfig& cfg, Rng& rng) {
  Agent::Decision d;
  d.o = rng.uniform_int(cfg.n_options);
  if (cfg.discrete()) {
    d.a = VectorXd::Constant(1, rng.uniform_int(cfg.action_count));
  } else {
    d.a.resize(cfg.action_dim);
    for (int j = 0; j < cfg.action_dim; ++j) d.a(j) = rng.uniform(-1.0, 1.0);
  }
  return d;
}

struct Accumulator {
  TrainMetrics sum;
  long n = 0;
  void add(const TrainMetrics& m) {
    sum.loss_qa += m.loss_qa;
    sum.loss_qo += m.loss_qo;
    sum.loss_pa += m.loss_pa;
    sum.loss_po += m.loss_po;
    sum.loss_alpha_a += m.loss_alpha_a;
    sum.loss_alpha_o += m.loss_alpha_o;
    sum.ent_a += m.ent_a;
    sum.ent_o += m.ent_o;
    ++n;
  }
  TrainMetrics mean(const AgentParams& p) const {
    TrainMetrics m;
    if (n > 0) {
      double k = static_cast<double>(n);
      m.loss_qa = sum.loss_qa / k;
      m.loss_qo = sum.loss_qo / k;
      m.loss_pa = sum.loss_pa / k;
      m.loss_po = sum.loss_po / k;
      m.loss_alpha_a = sum.loss_alpha_a / k;
      m.loss_alpha_o = sum.loss_alpha_o / k;
      m.ent_a = sum.ent_a / k;
      m.ent_o = sum.ent_o / k;
    }
    m.alpha_a = p.alpha_a();
    m.alpha_o = p.alpha_o();
    return m;
  }
};

// Rollout state of one environment instance.
struct Collector {
  std::unique_ptr<envs::Env> env;
  VectorXd raw_obs;
  int o_prev = 0;
  double scale = 1.0;

  // Takes one step with decision d and returns the transition; `norm` maps
  // raw observations to agent inputs.
  Transition step(const Agent::Decision& d, const VectorXd& s_in, envs::RunningNormalizer& norm,
                  bool update_norm) {
    envs::StepResult r = env->step(env_action(d, env->spec().discrete(), scale));
    if (update_norm) norm.update(r.obs);
    Transition t;
    t.s = s_in;
    t.o_prev = o_prev;
    t.a = d.a;
    t.r = r.reward;
    t.s_next = norm.apply(r.obs);
    t.o = d.o;
    t.done = r.done;
    if (r.done || r.truncated) {
      raw_obs = env->reset();
      if (update_norm) norm.update(raw_obs);
      o_prev = 0;
    } else {
      raw_obs = r.obs;
      o_prev = d.o;
    }
    return t;
  }
};

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void save_normalizer(const std::string& stem, const envs::RunningNormalizer& n) {
  std::vector<double> mean(n.mean().data(), n.mean().data() + n.mean().size());
  std::vector<double> m2(n.m2().data(), n.m2().data() + n.m2().size());
  int d = static_cast<int>(mean.size());
  nn::save_tensors(stem, {{"count", {1}, {n.count()}}, {"mean", {d}, mean}, {"m2", {d}, m2}});
}

}  // namespace

EvalResult evaluate(const AgentParams& params, const envs::RunningNormalizer& norm,
                    envs::Env& env, int episodes, double action_scale) {
  EvalResult res;
  res.option_counts.assign(params.cfg.n_options, 0);
  Rng unused(0);  // greedy acting draws nothing
  double scale = resolve_scale(env, action_scale);
  long successes = 0;
  for (int e = 0; e < episodes; ++e) {
    VectorXd obs = env.reset();
    int o_prev = 0;
    double ret = 0.0;
    for (;;) {
      Agent::Decision d = act_with(params, norm.apply(obs), o_prev, ActMode::Greedy, unused);
      ++res.option_counts[d.o];
      envs::StepResult r = env.step(env_action(d, env.spec().discrete(), scale));
      ret += r.reward;
      if (r.done) ++successes;
      if (r.done || r.truncated) break;
      obs = r.obs;
      o_prev = d.o;
    }
    res.returns.push_back(ret);
  }
  double n = static_cast<double>(episodes);
  for (double r : res.returns) res.mean += r / n;
  for (double r : res.returns) res.std += (r - res.mean) * (r - res.mean) / n;
  res.std = std::sqrt(res.std);
  std::vector<double> sorted = res.returns;
  std::sort(sorted.begin(), sorted.end());
  std::size_t m = sorted.size();
  res.median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  res.success_rate = static_cast<double>(successes) / n;
  return res;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kMetricsHeader << "\n";
  for (const MetricsRow& r : rows) {
    const TrainMetrics& t = r.train;
    out << r.step << ',' << fmt_double(r.ret_mean) << ',' << fmt_double(r.ret_std) << ','
        << fmt_double(t.loss_qa) << ',' << fmt_double(t.loss_qo) << ',' << fmt_double(t.loss_pa)
        << ',' << fmt_double(t.loss_po) << ',' << fmt_double(t.alpha_a) << ','
        << fmt_double(t.alpha_o) << ',' << fmt_double(t.ent_a) << ',' << fmt_double(t.ent_o)
        << "\n";
  }
}

RunResult run_vmoc(const AgentConfig& agent_cfg, const TrainerConfig& tc, std::uint64_t seed,
                   const std::string& out_dir,
                   const std::function<void(const MetricsRow&)>& on_row) {
  tc.validate();
  Collector col;
  col.env = envs::make_env(tc.env, Rng::derive(seed, "env"));
  auto eval_env = envs::make_env(tc.env, Rng::derive(seed, "eval"));
  AgentConfig cfg = agent_config_for(col.env->spec(), agent_cfg);
  Agent agent(cfg, Rng::derive(seed, "agent"));
  ReplayBuffer buffer(static_cast<std::size_t>(tc.buffer_capacity));
  Rng explore = Rng::substream(seed, "explore");
  envs::RunningNormalizer norm(cfg.obs_dim);
  envs::RunningNormalizer frozen(cfg.obs_dim);  // identity when normalization is off
  envs::RunningNormalizer& active = tc.normalize_obs ? norm : frozen;
  col.scale = resolve_scale(*col.env, tc.action_scale);

  RunResult res;
  Accumulator acc;
  auto record = [&](long step, const envs::RunningNormalizer& n) {
    EvalResult ev = evaluate(agent.params(), n, *eval_env, tc.eval_episodes, tc.action_scale);
    MetricsRow row{step, ev.mean, ev.std, acc.mean(agent.params())};
    res.rows.push_back(row);
    if (res.rows.size() == 1) res.initial = ev;
    res.final = ev;
    acc = Accumulator{};
    if (on_row) on_row(row);
  };
  auto update = [&]() {
    for (int u = 0; u < tc.updates_per_step; ++u) {
      TrainMetrics m = agent.train_step(buffer, tc.batch_size);
      acc.add(m);
      res.option_entropy_gap.push_back(std::abs(m.ent_o - agent.params().target_entropy_o));
      res.action_entropy_gap.push_back(std::abs(m.ent_a - agent.params().target_entropy_a));
      ++res.updates;
    }
  };

  record(0, active);
  col.raw_obs = col.env->reset();
  if (tc.normalize_obs) norm.update(col.raw_obs);

  if (tc.threads <= 1) {
    for (long step = 1; step <= tc.total_steps; ++step) {
      VectorXd s_in = active.apply(col.raw_obs);
      Agent::Decision d = step <= tc.start_steps
                              ? random_decision(cfg, explore)
                              : agent.act(s_in, col.o_prev, ActMode::Explore, explore);
      buffer.add(col.step(d, s_in, active, tc.normalize_obs));
      ++res.env_steps;
      if (step >= tc.update_after && buffer.size() >= static_cast<std::size_t>(tc.batch_size))
        update();
      if (step % tc.eval_interval == 0) record(step, active);
    }
  } else {
    // The actor thread acts on immutable parameter snapshots and owns the
    // normalizer, which it publishes the same way; the learner is the single
    // writer of the agent.
    SnapshotSlot<AgentParams> params_slot;
    SnapshotSlot<envs::RunningNormalizer> norm_slot;
    TransitionQueue queue;
    params_slot.publish(std::make_shared<const AgentParams>(agent.params()));
    norm_slot.publish(std::make_shared<const envs::RunningNormalizer>(active));
    std::atomic<bool> stop{false};
    std::thread actor([&] {
      envs::RunningNormalizer local = active;
      long t = 0;
      while (!stop.load()) {
        auto snap = params_slot.get();
        VectorXd s_in = local.apply(col.raw_obs);
        Agent::Decision d = ++t <= tc.start_steps
                                ? random_decision(cfg, explore)
                                : act_with(*snap, s_in, col.o_prev, ActMode::Explore, explore);
        Transition tr = col.step(d, s_in, local, tc.normalize_obs);
        norm_slot.publish(std::make_shared<const envs::RunningNormalizer>(local));
        queue.push(std::move(tr));
        if (t >= tc.total_steps) break;
      }
      queue.close();
    });
    long step = 0;
    while (step < tc.total_steps) {
      auto t = queue.pop_wait();
      if (!t) break;
      buffer.add(std::move(*t));
      ++step;
      ++res.env_steps;
      if (step >= tc.update_after && buffer.size() >= static_cast<std::size_t>(tc.batch_size)) {
        update();
        params_slot.publish(std::make_shared<const AgentParams>(agent.params()));
      }
      if (step % tc.eval_interval == 0) record(step, *norm_slot.get());
    }
    stop.store(true);
    actor.join();
    active = *norm_slot.get();
  }

  if (!out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), res.rows);
    std::string ck = (fs::path(out_dir) / "checkpoints").string();
    agent.save(ck);
    save_normalizer((fs::path(ck) / "normalizer").string(), active);
  }
  return res;
}

}  // namespace hitmdp::vmoc
