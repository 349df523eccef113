#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>

#include <spdlog/spdlog.h>

#include "commands.h"
#include "hitmdp/coldstart/model.h"
#include "hitmdp/core/json_io.h"
#include "hitmdp/homomorphism/homomorphism.h"
#include "hitmdp/solver/soft_solver.h"
#include "hitmdp/vmoc/trainer.h"

namespace hitmdp::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Typed access to a resolved config; errors name the dotted key.
class Cfg {
 public:
  explicit Cfg(const json& j) : j_(j) {}

  const json& at(const std::string& path) const {
    const json* node = &j_;
    std::size_t start = 0;
    while (true) {
      std::size_t dot = path.find('.', start);
      std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(part))
        throw ValidationError("missing config key '" + path + "'");
      node = &(*node)[part];
      if (dot == std::string::npos) return *node;
      start = dot + 1;
    }
  }

  double num(const std::string& path) const {
    const json& v = at(path);
    if (!v.is_number()) fail(path, "a number");
    return v.get<double>();
  }
  std::optional<double> opt_num(const std::string& path) const {
    if (at(path).is_null()) return std::nullopt;
    return num(path);
  }
  long integer(const std::string& path) const {
    const json& v = at(path);
    if (v.is_number_integer()) return v.get<long>();
    if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>() &&
        std::abs(v.get<double>()) < 9e15)
      return static_cast<long>(v.get<double>());
    fail(path, "an integer");
  }
  int i32(const std::string& path) const {
    long v = integer(path);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
      fail(path, "a 32-bit integer");
    return static_cast<int>(v);
  }
  std::uint64_t u64(const std::string& path) const {
    const json& v = at(path);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      fail(path, "a non-negative integer");
    return v.get<std::uint64_t>();
  }
  bool flag(const std::string& path) const {
    const json& v = at(path);
    if (!v.is_boolean()) fail(path, "true or false");
    return v.get<bool>();
  }
  std::string str(const std::string& path) const {
    const json& v = at(path);
    if (!v.is_string()) fail(path, "a string");
    return v.get<std::string>();
  }
  std::optional<std::string> opt_str(const std::string& path) const {
    if (at(path).is_null()) return std::nullopt;
    return str(path);
  }
  std::vector<int> ints(const std::string& path) const {
    const json& v = at(path);
    if (!v.is_array()) fail(path, "an array of integers");
    std::vector<int> out;
    for (const json& e : v) {
      if (!e.is_number_integer()) fail(path, "an array of integers");
      out.push_back(e.get<int>());
    }
    return out;
  }
  // Range check with the key in the message.
  void require(bool ok, const std::string& path, const std::string& what) const {
    if (!ok) throw ValidationError("config key '" + path + "' " + what);
  }

 private:
  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ValidationError("config key '" + path + "' must be " + what);
  }
  const json& j_;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

RegularizerMode regularizer_from(const Cfg& c, const std::string& key) {
  std::string r = c.str(key);
  if (r == "zero") return RegularizerMode::Zero;
  if (r == "mutual_info") return RegularizerMode::MutualInfo;
  throw ValidationError("config key '" + key + "' must be \"zero\" or \"mutual_info\"");
}

// Module validate() functions throw invalid_argument; those are config errors.
template <class F>
void checked(F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
}

json eval_to_json(const vmoc::EvalResult& e) {
  return {{"mean", e.mean},
          {"std", e.std},
          {"median", e.median},
          {"success_rate", e.success_rate},
          {"option_counts", e.option_counts},
          {"option_usage_entropy", e.option_usage_entropy()},
          {"returns", e.returns}};
}

std::pair<double, double> quarter_means(const std::vector<double>& g) {
  std::size_t q = g.size() / 4;
  if (q == 0) return {0.0, 0.0};
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < q; ++i) {
    first += g[i];
    last += g[g.size() - q + i];
  }
  return {first / q, last / q};
}

// ------------------------------------------------------------------ train-vmoc

Job train_vmoc_job(const Cfg& c, std::uint64_t seed, int threads, const fs::path& out) {
  vmoc::AgentConfig a;
  a.n_options = c.i32("agent.n_options");
  a.embed_dim = c.i32("agent.embed_dim");
  a.hidden = c.ints("agent.hidden");
  a.gamma = c.num("agent.gamma");
  a.lr = c.num("agent.lr");
  a.adam_eps = c.num("agent.adam_eps");
  a.tau = c.num("agent.tau");
  a.auto_alpha = c.flag("agent.auto_alpha");
  a.alpha_a = c.num("agent.alpha_a");
  a.alpha_o = c.num("agent.alpha_o");
  if (auto t = c.opt_num("agent.target_entropy_a")) a.target_entropy_a = *t;
  if (auto t = c.opt_num("agent.target_entropy_o")) a.target_entropy_o = *t;
  a.regularizer = regularizer_from(c, "agent.regularizer");
  a.reward_scale = c.num("agent.reward_scale");
  std::string ota = c.str("agent.option_target_action");
  if (ota == "buffer")
    a.option_target_action = vmoc::OptionTargetAction::Buffer;
  else if (ota == "policy")
    a.option_target_action = vmoc::OptionTargetAction::Policy;
  else if (ota == "expected")
    a.option_target_action = vmoc::OptionTargetAction::Expected;
  else
    throw ValidationError(
        "config key 'agent.option_target_action' must be \"buffer\", \"policy\" or \"expected\"");
  a.explore_noise = c.num("agent.explore_noise");
  a.log_std_min = c.num("agent.log_std_min");
  a.log_std_max = c.num("agent.log_std_max");

  vmoc::TrainerConfig t;
  t.env = c.str("trainer.env");
  t.total_steps = c.integer("trainer.total_steps");
  t.start_steps = c.integer("trainer.start_steps");
  t.update_after = c.integer("trainer.update_after");
  t.updates_per_step = c.i32("trainer.updates_per_step");
  t.batch_size = c.i32("trainer.batch_size");
  t.buffer_capacity = c.integer("trainer.buffer_capacity");
  t.eval_interval = c.integer("trainer.eval_interval");
  t.eval_episodes = c.i32("trainer.eval_episodes");
  t.normalize_obs = c.flag("trainer.normalize_obs");
  t.action_scale = c.num("trainer.action_scale");
  t.threads = threads;

  checked([&] {
    t.validate();
    auto env = envs::make_env(t.env, 0);
    vmoc::agent_config_for(env->spec(), a).validate();
  });
  if (threads > 1)
    spdlog::warn("threads > 1 runs rollouts on a separate thread; metrics are not reproducible");

  return [a, t, seed, out](std::ostream&) {
    auto t0 = std::chrono::steady_clock::now();
    vmoc::RunResult r = vmoc::run_vmoc(a, t, seed, out.string(), [&](const vmoc::MetricsRow& row) {
      double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      spdlog::info("step {} return {:.3f} loss_qa {:.4f} alpha_o {:.4f} ({:.0f}s)", row.step,
                   row.ret_mean, row.train.loss_qa, row.train.alpha_o, el);
    });
    auto [ga0, ga1] = quarter_means(r.action_entropy_gap);
    auto [go0, go1] = quarter_means(r.option_entropy_gap);
    json s = {{"initial", eval_to_json(r.initial)},
              {"final", eval_to_json(r.final)},
              {"env_steps", r.env_steps},
              {"updates", r.updates},
              {"option_entropy_gap", {{"first_quarter", go0}, {"last_quarter", go1}}},
              {"action_entropy_gap", {{"first_quarter", ga0}, {"last_quarter", ga1}}}};
    write_json_file((out / "summary.json").string(), s);
    spdlog::info("final median return {:.3f} (initial {:.3f}), success rate {:.3f}",
                 r.final.median, r.initial.median, r.final.success_rate);
  };
}

// --------------------------------------------------------------- solve-tabular

Job solve_tabular_job(const Cfg& c, std::uint64_t seed, const fs::path& out) {
  std::string env_id = c.str("env");
  int k = c.i32("n_options");
  double gamma = c.num("discount");
  TemperaturePair temps{c.num("alpha_a"), c.num("alpha_o")};
  RegularizerMode reg = regularizer_from(c, "regularizer");
  std::string init = c.str("init");
  double tol = c.num("tol");
  int max_rounds = c.i32("max_rounds");
  c.require(k >= 1, "n_options", "must be >= 1");
  c.require(gamma >= 0.0 && gamma < 1.0, "discount", "must be in [0, 1)");
  c.require(tol > 0.0, "tol", "must be > 0");
  c.require(max_rounds >= 1, "max_rounds", "must be >= 1");
  c.require(init == "uniform" || init == "random", "init", "must be \"uniform\" or \"random\"");

  FiniteHiTMDP mdp;
  checked([&] {
    temps.validate();
    auto env = envs::make_env(env_id, 0);
    auto* fe = dynamic_cast<envs::FiniteEnv*>(env.get());
    if (!fe) throw std::invalid_argument("environment '" + env_id + "' has no tabular model");
    mdp = fe->model(k, gamma);
    mdp.regularizer_mode = reg;
    mdp.validate();
  });

  return [=](std::ostream&) {
    TabularPolicies pols = TabularPolicies::uniform(mdp.n_states, mdp.n_options, mdp.n_actions);
    if (init == "random") {
      Rng rng = Rng::substream(seed, "init");
      pols = TabularPolicies::random(mdp.n_states, mdp.n_options, mdp.n_actions, rng);
    }
    PolicyIterationResult r = soft_option_policy_iteration(mdp, pols, temps, tol, max_rounds);
    fs::create_directories(out / "checkpoints");
    write_json_file((out / "solution.json").string(), solver_result_to_json(r.q, r.elbo_trace));
    write_json_file((out / "checkpoints" / "policies.json").string(),
                    {{"option_policy", table_to_json(r.policies.option_policy)},
                     {"action_policy", table_to_json(r.policies.action_policy)}});
    write_json_file((out / "checkpoints" / "mdp.json").string(), to_json(mdp));
    std::string csv = "round,elbo,elbo_delta\n";
    for (std::size_t i = 0; i < r.elbo_trace.size(); ++i)
      csv += std::to_string(i) + "," + fmt(r.elbo_trace[i]) + "," +
             fmt(i == 0 ? 0.0 : r.elbo_trace[i] - r.elbo_trace[i - 1]) + "\n";
    write_text(out / "metrics.csv", csv);
    spdlog::info("{} rounds, final ELBO {:.10g}, residual {:.3g}", r.rounds, r.elbo_trace.back(),
                 backup_residual(mdp, r.policies, temps, r.q));
  };
}

// ---------------------------------------------------------- check-homomorphism

Job check_homomorphism_job(const Cfg& c, std::uint64_t seed, const fs::path& out) {
  std::string fixture = c.str("fixture");
  double tol = c.num("tol");
  double gap_tol = c.num("gap_tolerance");
  std::string policy = c.str("policy");
  std::optional<double> alpha = c.opt_num("entropy_alpha");
  c.require(tol > 0.0, "tol", "must be > 0");
  c.require(gap_tol > 0.0, "gap_tolerance", "must be > 0");
  c.require(policy == "uniform" || policy == "random", "policy",
            "must be \"uniform\" or \"random\"");
  c.require(!alpha || *alpha > 0.0, "entropy_alpha", "must be null or > 0");

  FiniteHomomorphism h;
  checked([&] {
    if (fixture == "mirror") {
      h = mirror_fixture();
    } else {
      try {
        h = homomorphism_from_json(read_json_file(fixture));
      } catch (const std::exception& e) {
        throw std::invalid_argument("cannot load fixture '" + fixture + "': " + e.what());
      }
    }
    h.check_dimensions();
  });

  return [=](std::ostream&) {
    ValidationReport rep = validate_homomorphism(h, tol);
    json gap_opt = nullptr, gap_fp = nullptr;
    bool pass = rep.pass;
    if (rep.pass) {
      const FiniteHiTMDP& m = h.abstract_mdp;
      TabularPolicies pol = TabularPolicies::uniform(m.n_states, m.n_options, m.n_actions);
      if (policy == "random") {
        Rng rng = Rng::substream(seed, "policy");
        pol = TabularPolicies::random(m.n_states, m.n_options, m.n_actions, rng);
      }
      std::optional<TemperaturePair> temps;
      if (alpha) temps = TemperaturePair{*alpha, *alpha};
      double go = value_equivalence_gap(h, std::nullopt, EquivalenceMode::Optimal);
      double gf = value_equivalence_gap(h, temps, EquivalenceMode::FixedPolicy, &pol);
      gap_opt = go;
      gap_fp = gf;
      pass = go < gap_tol && gf < gap_tol;
    }
    json report = {{"status", pass ? "pass" : "fail"},
                   {"validation", to_json(rep)},
                   {"gap_optimal", gap_opt},
                   {"gap_fixed_policy", gap_fp},
                   {"gap_tolerance", gap_tol}};
    fs::create_directories(out / "checkpoints");
    write_json_file((out / "report.json").string(), report);
    write_json_file((out / "checkpoints" / "homomorphism.json").string(), to_json(h));
    std::string csv = "check,value,pass\n";
    csv += "violations," + std::to_string(rep.violations) + "," + (rep.pass ? "1" : "0") + "\n";
    auto row = [&](const char* name, const json& g) {
      if (g.is_null())
        csv += std::string(name) + ",,0\n";
      else
        csv += std::string(name) + "," + fmt(g.get<double>()) + "," +
               (g.get<double>() < gap_tol ? "1" : "0") + "\n";
    };
    row("gap_optimal", gap_opt);
    row("gap_fixed_policy", gap_fp);
    write_text(out / "metrics.csv", csv);
    spdlog::info("homomorphism check: {} ({} violations)", pass ? "pass" : "fail", rep.violations);
  };
}

// ------------------------------------------------------------------- coldstart

Job coldstart_job(const Cfg& c, std::uint64_t seed, const fs::path& out) {
  using namespace coldstart;
  ModelConfig mc;
  mc.n_latent = c.i32("model.n_latent");
  mc.latent_len = c.i32("model.latent_len");
  mc.token_dim = c.i32("model.token_dim");
  mc.cot_dim = c.i32("model.cot_dim");
  mc.latent_dim = c.i32("model.latent_dim");
  mc.max_positions = c.i32("model.max_positions");
  mc.kl_weight = c.num("model.kl_weight");
  mc.gumbel_temperature = c.num("model.gumbel_temperature");
  TrainOptions opts;
  std::string mode = c.str("train.mode");
  opts.lr = c.num("train.lr");
  opts.batch_size = c.i32("train.batch_size");
  opts.latent_lr_scale = c.num("train.latent_lr_scale");
  opts.seed = Rng::derive(seed, "train");
  int epochs = c.i32("train.epochs");
  int eval_interval = c.i32("eval_interval");
  std::string task_name = c.str("task");
  int n_train = c.i32("train_samples");
  int n_held = c.i32("held_out_samples");
  auto corpus = c.opt_str("corpus");
  auto held_corpus = c.opt_str("held_out_corpus");
  c.require(epochs >= 0, "train.epochs", "must be >= 0");
  c.require(eval_interval >= 1, "eval_interval", "must be >= 1");
  c.require(opts.lr > 0.0, "train.lr", "must be > 0");
  c.require(opts.batch_size >= 1, "train.batch_size", "must be >= 1");
  c.require(n_train >= 1, "train_samples", "must be >= 1");
  c.require(n_held >= 0, "held_out_samples", "must be >= 0");

  std::vector<ReasoningSample> train, held;
  checked([&] {
    opts.mode = train_mode_from_string(mode);
    if (!(opts.latent_lr_scale > 0.0)) throw std::invalid_argument("config key 'train.latent_lr_scale' must be > 0");
    mc.validate();
    Task task = task_from_string(task_name);
    try {
      train = corpus ? read_corpus(*corpus)
                     : make_synthetic_corpus(task, n_train, Rng::derive(seed, "corpus"));
      if (held_corpus)
        held = read_corpus(*held_corpus);
      else if (n_held > 0)
        held = held_out_samples(task, train, n_held, Rng::derive(seed, "held_out"));
    } catch (const std::runtime_error& e) {
      throw std::invalid_argument(e.what());
    }
    if (train.empty()) throw std::invalid_argument("training corpus is empty");
    for (const auto& s : train) s.validate(mc.vocab);
    for (const auto& s : held) s.validate(mc.vocab);
    if (mc.latent_space() > 1000000)
      throw std::invalid_argument("n_latent^latent_len exceeds the enumeration guard (1e6)");
  });

  return [=](std::ostream&) {
    fs::create_directories(out / "checkpoints");
    write_corpus((out / "train.tsv").string(), train);
    write_corpus((out / "held_out.tsv").string(), held);
    LatentReasoningModel m = LatentReasoningModel::create(mc, Rng::derive(seed, "init"));
    ColdstartTrainer trainer(m, opts);
    std::uint64_t eval_seed = Rng::derive(seed, "eval");

    std::string csv = "epoch,train_loss,elbo,recon_cot,recon_ans,kl,held_out_match\n";
    double initial_elbo = 0.0, final_elbo = 0.0, held_match = 0.0;
    auto record = [&](int epoch, double train_loss) {
      ElboParts sum;
      for (const ReasoningSample& s : train) {
        ElboParts p = elbo_sft_exact(m, s);
        sum.elbo += p.elbo;
        sum.recon_cot += p.recon_cot;
        sum.recon_ans += p.recon_ans;
        sum.kl += p.kl;
      }
      double n = static_cast<double>(train.size());
      double elbo = sum.elbo / n;
      held_match = held.empty() ? 0.0 : answer_exact_match(m, held, eval_seed);
      if (epoch == 0) {
        initial_elbo = elbo;
        train_loss = -elbo;
      }
      final_elbo = elbo;
      csv += std::to_string(epoch) + "," + fmt(train_loss) + "," + fmt(elbo) + "," +
             fmt(sum.recon_cot / n) + "," + fmt(sum.recon_ans / n) + "," + fmt(sum.kl / n) + "," +
             fmt(held_match) + "\n";
      spdlog::info("epoch {} elbo {:.4f} kl {:.4f} held-out match {:.3f}", epoch, elbo, sum.kl / n,
                   held_match);
    };
    record(0, 0.0);
    for (int e = 1; e <= epochs; ++e) {
      EpochMetrics em = trainer.train_epoch(train);
      spdlog::debug("epoch {} loss {:.5f} kl {:.5f}", e, em.loss, em.kl);
      if (e % eval_interval == 0 || e == epochs) record(e, em.loss);
    }
    write_text(out / "metrics.csv", csv);
    m.save((out / "checkpoints" / "model").string());
    json s = {{"initial_elbo", initial_elbo},
              {"final_elbo", final_elbo},
              {"held_out_match", held_match},
              {"train_match", answer_exact_match(m, train, eval_seed)},
              {"epochs", epochs}};
    write_json_file((out / "summary.json").string(), s);
  };
}

// -------------------------------------------------------------- replay-metrics

Job replay_job(const Cfg& c, const fs::path& out) {
  std::string path = c.str("metrics");
  int window = c.i32("window");
  c.require(!path.empty(), "metrics", "must name a metrics CSV");
  c.require(window >= 1, "window", "must be >= 1");
  MetricsSummary s;
  try {
    s = replay_metrics(path, window);
  } catch (const std::exception& e) {
    throw ValidationError(e.what());
  }
  return [s, out](std::ostream& os) {
    os << format_summary(s) << "\n" << to_json(s).dump(2) << "\n";
    write_json_file((out / "summary.json").string(), to_json(s));
    std::string csv = std::string(vmoc::kMetricsHeader) + "\n";
    for (const auto& row : s.smoothed) {
      csv += std::to_string(static_cast<long>(row[0]));
      for (std::size_t i = 1; i < row.size(); ++i) csv += "," + fmt(row[i]);
      csv += "\n";
    }
    write_text(out / "metrics.csv", csv);
  };
}

}  // namespace

Job make_job(Subcommand cmd, const json& cfg) {
  Cfg c(cfg);
  std::uint64_t seed = c.u64("seed");
  int threads = c.i32("threads");
  c.require(threads >= 1, "threads", "must be >= 1");
  std::string out_str = c.str("out");
  c.require(!out_str.empty(), "out", "must be a directory path");
  fs::path out(out_str);
  switch (cmd) {
    case Subcommand::TrainVmoc:
      return train_vmoc_job(c, seed, threads, out);
    case Subcommand::SolveTabular:
      return solve_tabular_job(c, seed, out);
    case Subcommand::CheckHomomorphism:
      return check_homomorphism_job(c, seed, out);
    case Subcommand::Coldstart:
      return coldstart_job(c, seed, out);
    case Subcommand::ReplayMetrics:
      return replay_job(c, out);
  }
  throw ValidationError("unknown subcommand");
}

}  // namespace hitmdp::cli
