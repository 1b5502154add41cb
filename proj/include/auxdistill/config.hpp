#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "auxdistill/harness.hpp"

namespace auxdistill {

inline constexpr int kConfigSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Experiment configs are JSON objects:
// {"schema_version": 1, "method": "auxdistill",
//  "aux_tasks": ["pick", "place", "open_container", "pick_from_container"],
//  "seeds": [0, 1, 2], "eval_episodes": 200, "output_dir": "runs/x",
//  "checkpoint_every": 0, "train": {<any TrainConfig field>}}
// Every key is optional except schema_version; unknown keys are rejected.
namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.contains(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline std::array<bool, kNumTasks> task_mask(const nlohmann::json& j, const char* key) {
  if (!j.is_array()) throw ConfigError(std::string("'") + key + "' must be a list of auxiliary task names");
  std::array<bool, kNumTasks> mask{};
  for (const auto& n : j) {
    TaskId t;
    try {
      t = task_from_name(n.get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(std::string("'") + key + "': " + e.what());
    }
    if (t.is_main()) throw ConfigError(std::string("'") + key + "' may list auxiliary tasks only");
    mask[t.index] = true;
  }
  return mask;
}

inline nlohmann::json mask_json(const std::array<bool, kNumTasks>& mask) {
  auto out = nlohmann::json::array();
  for (int i = 1; i < kNumTasks; ++i)
    if (mask[i]) out.push_back(std::string(task_name(TaskId{i})));
  return out;
}

}  // namespace detail

inline void apply_train_overrides(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("'train' must be an object");
  detail::reject_unknown(j,
                         {"lambda", "clip", "gamma", "gae_lambda", "entropy_coef", "value_coef", "lr", "lr_decay_steps",
                          "horizon", "envs_per_task", "slots", "ppo_epochs", "minibatches", "total_steps",
                          "popart_beta", "hidden", "distill_enabled", "distill_stop_grad", "rl_averaging",
                          "distill_scaling", "max_grad_norm", "seed", "metrics_window", "num_threads", "distill_from"},
                         "train");
  using detail::read_opt;
  read_opt(j, "lambda", c.lambda);
  read_opt(j, "clip", c.clip);
  read_opt(j, "gamma", c.gamma);
  read_opt(j, "gae_lambda", c.gae_lambda);
  read_opt(j, "entropy_coef", c.entropy_coef);
  read_opt(j, "value_coef", c.value_coef);
  read_opt(j, "lr", c.lr);
  read_opt(j, "lr_decay_steps", c.lr_decay_steps);
  read_opt(j, "horizon", c.horizon);
  if (j.contains("envs_per_task")) {
    int m = 0;
    read_opt(j, "envs_per_task", m);
    c.set_envs_per_task(m);
  }
  if (j.contains("slots")) {
    const auto& s = j.at("slots");
    if (!s.is_object()) throw ConfigError("'slots' must map task names to env counts");
    for (auto it = s.begin(); it != s.end(); ++it) {
      try {
        c.slots[task_from_name(it.key()).index] = it.value().get<int>();
      } catch (const std::exception& e) {
        throw ConfigError(std::string("'slots': ") + e.what());
      }
    }
  }
  read_opt(j, "ppo_epochs", c.ppo_epochs);
  read_opt(j, "minibatches", c.minibatches);
  read_opt(j, "total_steps", c.total_steps);
  read_opt(j, "popart_beta", c.popart_beta);
  read_opt(j, "hidden", c.hidden);
  read_opt(j, "distill_enabled", c.distill_enabled);
  read_opt(j, "distill_stop_grad", c.distill_stop_grad);
  if (j.contains("rl_averaging")) {
    std::string s;
    read_opt(j, "rl_averaging", s);
    if (s == "one_over_n") c.rl_averaging = RlAveraging::one_over_n;
    else if (s == "exact_mean") c.rl_averaging = RlAveraging::exact_mean;
    else throw ConfigError("rl_averaging must be one_over_n or exact_mean");
  }
  if (j.contains("distill_scaling")) {
    std::string s;
    read_opt(j, "distill_scaling", s);
    if (s == "per_step") c.distill_scaling = DistillScaling::per_step;
    else if (s == "per_aux_task") c.distill_scaling = DistillScaling::per_aux_task;
    else throw ConfigError("distill_scaling must be per_step or per_aux_task");
  }
  read_opt(j, "max_grad_norm", c.max_grad_norm);
  read_opt(j, "seed", c.seed);
  read_opt(j, "metrics_window", c.metrics_window);
  read_opt(j, "num_threads", c.num_threads);
  if (j.contains("distill_from")) c.distill_from = detail::task_mask(j.at("distill_from"), "distill_from");
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  detail::reject_unknown(j,
                         {"schema_version", "method", "aux_tasks", "seeds", "eval_episodes", "output_dir",
                          "checkpoint_every", "train"},
                         "config");
  if (!j.contains("schema_version")) throw ConfigError("missing schema_version");
  int version = 0;
  detail::read_opt(j, "schema_version", version);
  if (version != kConfigSchemaVersion)
    throw ConfigError("unsupported schema_version " + std::to_string(version) + " (expected " +
                      std::to_string(kConfigSchemaVersion) + ")");
  ExperimentConfig ec;
  if (j.contains("method")) {
    std::string m;
    detail::read_opt(j, "method", m);
    try {
      ec.method = method_from_name(m);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  if (j.contains("aux_tasks")) ec.aux_subset = detail::task_mask(j.at("aux_tasks"), "aux_tasks");
  detail::read_opt(j, "seeds", ec.seeds);
  detail::read_opt(j, "eval_episodes", ec.eval_episodes);
  detail::read_opt(j, "output_dir", ec.output_dir);
  detail::read_opt(j, "checkpoint_every", ec.checkpoint_every);
  if (j.contains("train")) apply_train_overrides(j.at("train"), ec.train);
  try {
    ec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return ec;
}

inline ExperimentConfig parse_experiment(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return experiment_from_json(j);
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_experiment(ss.str());
}

inline nlohmann::json train_to_json(const TrainConfig& c) {
  nlohmann::json slots;
  for (int i = 0; i < kNumTasks; ++i) slots[std::string(task_name(TaskId{i}))] = c.slots[i];
  return {{"lambda", c.lambda},
          {"clip", c.clip},
          {"gamma", c.gamma},
          {"gae_lambda", c.gae_lambda},
          {"entropy_coef", c.entropy_coef},
          {"value_coef", c.value_coef},
          {"lr", c.lr},
          {"lr_decay_steps", c.lr_decay_steps},
          {"horizon", c.horizon},
          {"slots", slots},
          {"ppo_epochs", c.ppo_epochs},
          {"minibatches", c.minibatches},
          {"total_steps", c.total_steps},
          {"popart_beta", c.popart_beta},
          {"hidden", c.hidden},
          {"distill_enabled", c.distill_enabled},
          {"distill_stop_grad", c.distill_stop_grad},
          {"rl_averaging", c.rl_averaging == RlAveraging::one_over_n ? "one_over_n" : "exact_mean"},
          {"distill_scaling", c.distill_scaling == DistillScaling::per_step ? "per_step" : "per_aux_task"},
          {"max_grad_norm", c.max_grad_norm},
          {"seed", c.seed},
          {"metrics_window", c.metrics_window},
          {"num_threads", c.num_threads},
          {"distill_from", detail::mask_json(c.distill_from)}};
}

inline nlohmann::json experiment_to_json(const ExperimentConfig& ec) {
  return {{"schema_version", kConfigSchemaVersion},
          {"method", std::string(method_name(ec.method))},
          {"aux_tasks", detail::mask_json(ec.aux_subset)},
          {"seeds", ec.seeds},
          {"eval_episodes", ec.eval_episodes},
          {"output_dir", ec.output_dir},
          {"checkpoint_every", ec.checkpoint_every},
          {"train", train_to_json(ec.train)}};
}

}  // namespace auxdistill
