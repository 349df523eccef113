#include <fstream>
#include <sstream>

#include "hitmdp/cli/cli.h"
#include "hitmdp/coldstart/model.h"
#include "hitmdp/vmoc/trainer.h"

namespace hitmdp::cli {

using nlohmann::json;

namespace {

const char* kNames[] = {"train-vmoc", "solve-tabular", "check-homomorphism", "coldstart",
                        "replay-metrics"};

json agent_defaults() {
  vmoc::AgentConfig a;
  return {{"n_options", a.n_options},
          {"embed_dim", a.embed_dim},
          {"hidden", a.hidden},
          {"gamma", a.gamma},
          {"lr", a.lr},
          {"adam_eps", a.adam_eps},
          {"tau", a.tau},
          {"auto_alpha", a.auto_alpha},
          {"alpha_a", a.alpha_a},
          {"alpha_o", a.alpha_o},
          {"target_entropy_a", nullptr},
          {"target_entropy_o", nullptr},
          {"regularizer", "zero"},
          {"reward_scale", a.reward_scale},
          {"option_target_action", "buffer"},
          {"explore_noise", a.explore_noise},
          {"log_std_min", a.log_std_min},
          {"log_std_max", a.log_std_max}};
}

json trainer_defaults() {
  vmoc::TrainerConfig t;
  return {{"env", t.env},
          {"total_steps", t.total_steps},
          {"start_steps", t.start_steps},
          {"update_after", t.update_after},
          {"updates_per_step", t.updates_per_step},
          {"batch_size", t.batch_size},
          {"buffer_capacity", t.buffer_capacity},
          {"eval_interval", t.eval_interval},
          {"eval_episodes", t.eval_episodes},
          {"normalize_obs", t.normalize_obs},
          {"action_scale", t.action_scale}};
}

json coldstart_model_defaults() {
  coldstart::ModelConfig m;
  return {{"n_latent", m.n_latent},
          {"latent_len", m.latent_len},
          {"token_dim", m.token_dim},
          {"cot_dim", m.cot_dim},
          {"latent_dim", m.latent_dim},
          {"max_positions", m.max_positions},
          {"kl_weight", m.kl_weight},
          {"gumbel_temperature", m.gumbel_temperature}};
}

json coldstart_train_defaults() {
  coldstart::TrainOptions o;
  return {{"mode", "exact"},
          {"epochs", 200},
          {"lr", o.lr},
          {"batch_size", o.batch_size},
          {"latent_lr_scale", o.latent_lr_scale}};
}

std::vector<std::string> split_path(const std::string& dotted) {
  std::vector<std::string> parts;
  std::stringstream ss(dotted);
  std::string p;
  while (std::getline(ss, p, '.')) parts.push_back(p);
  if (parts.empty() || dotted.back() == '.') parts.push_back("");
  return parts;
}

}  // namespace

Subcommand subcommand_from_string(const std::string& s) {
  for (int i = 0; i < 5; ++i)
    if (s == kNames[i]) return static_cast<Subcommand>(i);
  throw ValidationError("unknown subcommand: " + s);
}

std::string to_string(Subcommand c) { return kNames[static_cast<int>(c)]; }

json default_config(Subcommand c) {
  json j = {{"version", kConfigVersion},
            {"seed", 0},
            {"out", "runs/" + to_string(c)},
            {"threads", 1}};
  switch (c) {
    case Subcommand::TrainVmoc:
      j["agent"] = agent_defaults();
      j["trainer"] = trainer_defaults();
      break;
    case Subcommand::SolveTabular:
      j["env"] = "chain:5";
      j["n_options"] = 2;
      j["discount"] = 0.9;
      j["alpha_a"] = 1.0;
      j["alpha_o"] = 1.0;
      j["regularizer"] = "zero";
      j["init"] = "uniform";
      j["tol"] = 1e-9;
      j["max_rounds"] = 1000;
      break;
    case Subcommand::CheckHomomorphism:
      j["fixture"] = "mirror";
      j["tol"] = 1e-9;
      j["gap_tolerance"] = 1e-6;
      j["policy"] = "uniform";
      j["entropy_alpha"] = nullptr;
      break;
    case Subcommand::Coldstart:
      j["task"] = "add2";
      j["train_samples"] = 200;
      j["held_out_samples"] = 200;
      j["corpus"] = nullptr;
      j["held_out_corpus"] = nullptr;
      j["eval_interval"] = 10;
      j["model"] = coldstart_model_defaults();
      j["train"] = coldstart_train_defaults();
      break;
    case Subcommand::ReplayMetrics:
      j["metrics"] = "";
      j["window"] = 20;
      break;
  }
  return j;
}

void merge_config(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ValidationError("config" + (prefix.empty() ? "" : " key '" + prefix + "'") + " must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ValidationError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object())
      merge_config(slot, it.value(), key);
    else
      slot = it.value();
  }
}

void apply_override(json& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override must look like key=value: '" + assignment + "'");
  std::string key = assignment.substr(0, eq);
  std::string text = assignment.substr(eq + 1);
  json* node = &cfg;
  for (const std::string& part : split_path(key)) {
    if (!node->is_object() || part.empty() || !node->contains(part))
      throw ValidationError("unknown config key '" + key + "'");
    node = &(*node)[part];
  }
  if (node->is_object()) throw ValidationError("override of section '" + key + "' needs a leaf key");
  json value = json::parse(text, nullptr, false);
  *node = value.is_discarded() ? json(text) : value;
}

json resolve_config(const Invocation& inv) {
  std::ifstream in(inv.config_path);
  if (!in) throw ValidationError("cannot read config: " + inv.config_path);
  json user = json::parse(in, nullptr, false);
  if (user.is_discarded()) throw ValidationError("config is not valid JSON: " + inv.config_path);
  if (!user.is_object()) throw ValidationError("config must be a JSON object");
  if (!user.contains("version")) throw ValidationError("config is missing required key 'version'");

  json cfg = default_config(inv.command);
  merge_config(cfg, user);
  for (const std::string& o : inv.overrides) apply_override(cfg, o);
  if (inv.seed) cfg["seed"] = *inv.seed;
  if (inv.out) cfg["out"] = *inv.out;
  if (inv.threads) cfg["threads"] = *inv.threads;

  if (!cfg["version"].is_number_integer() || cfg["version"].get<int>() != kConfigVersion)
    throw ValidationError("unsupported config version " + cfg["version"].dump() + " (expected " +
                          std::to_string(kConfigVersion) + ")");
  return cfg;
}

}  // namespace hitmdp::cli
