#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "auxdistill/environment.hpp"
#include "auxdistill/nn.hpp"
#include "auxdistill/popart.hpp"
#include "auxdistill/relevance.hpp"

namespace auxdistill {

inline constexpr int kNumTasks = TaskId::kNumTasks;
using TaskArray = std::array<double, kNumTasks>;

// How the RL terms are averaged: literally 1/N over the N+1 task losses, or
// the exact mean 1/(N+1).
enum class RlAveraging { one_over_n, exact_mean };

// Distillation term scaling: plain per-step weighted KL, or additionally
// divided by the number of auxiliary tasks.
enum class DistillScaling { per_step, per_aux_task };

struct TrainConfig {
  double lambda = 0.1;
  double clip = 0.2;
  double gamma = 0.999;
  double gae_lambda = 0.95;
  double entropy_coef = 0.001;
  double value_coef = 0.5;
  double lr = 3e-4;
  std::int64_t lr_decay_steps = 0;  // 0 means decay to zero over total_steps
  int horizon = 128;
  std::array<int, kNumTasks> slots{8, 8, 8, 8, 8};  // env instances per task; 0 disables a task
  int ppo_epochs = 16;
  int minibatches = 8;
  std::int64_t total_steps = 2'000'000;
  double popart_beta = kPopArtDefaultBeta;
  int hidden = nn::kDefaultHidden;
  bool distill_enabled = true;
  bool distill_stop_grad = false;
  RlAveraging rl_averaging = RlAveraging::one_over_n;
  DistillScaling distill_scaling = DistillScaling::per_step;
  double max_grad_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  int metrics_window = 100;
  int num_threads = 1;
  // Auxiliary tasks whose relevance may drive distillation. Defaults to every
  // auxiliary task; ablations switch entries off.
  std::array<bool, kNumTasks> distill_from{false, true, true, true, true};

  void set_envs_per_task(int m) { slots.fill(m); }

  int total_slots() const { return std::accumulate(slots.begin(), slots.end(), 0); }
  std::int64_t steps_per_update() const { return static_cast<std::int64_t>(horizon) * total_slots(); }
  int active_aux_count() const {
    int n = 0;
    for (int i = 1; i < kNumTasks; ++i) n += slots[i] > 0 ? 1 : 0;
    return n;
  }
  int active_task_count() const { return active_aux_count() + (slots[0] > 0 ? 1 : 0); }

  // Weight applied to the sum of per-task RL losses.
  double rl_weight() const {
    if (rl_averaging == RlAveraging::exact_mean) return 1.0 / std::max(active_task_count(), 1);
    return 1.0 / std::max(active_aux_count(), 1);
  }

  double distill_scale() const {
    return distill_scaling == DistillScaling::per_aux_task ? 1.0 / std::max(active_aux_count(), 1) : 1.0;
  }

  void validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must be in (0, 1]");
    if (!(clip > 0.0 && clip < 1.0)) throw std::invalid_argument("clip must be in (0, 1)");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw std::invalid_argument("gae_lambda must be in [0, 1]");
    if (horizon <= 0 || ppo_epochs <= 0 || minibatches <= 0) throw std::invalid_argument("horizon/epochs/minibatches must be positive");
    if (total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
    if (lr < 0.0) throw std::invalid_argument("lr must be >= 0");
    if (hidden <= 0) throw std::invalid_argument("hidden must be positive");
    for (int s : slots)
      if (s < 0) throw std::invalid_argument("slot counts must be >= 0");
    if (total_slots() == 0) throw std::invalid_argument("at least one task needs env slots");
    for (int i = 0; i < kNumTasks; ++i)
      if (slots[i] > 0 && slots[i] * horizon < minibatches)
        throw std::invalid_argument("each task needs at least one row per minibatch");
  }
};

// ---- rollout storage ---------------------------------------------------------

struct EpisodeRecord {
  TaskId task;
  Difficulty difficulty = Difficulty::easy;
  std::uint64_t seed = 0;
  bool success = false;
  double episode_return = 0.0;
  int length = 0;
};

// One task's B x M block, row index = t * envs + e.
struct TaskRollout {
  TaskId task;
  int envs = 0;
  int horizon = 0;
  nn::Tensor2 obs;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
  std::vector<double> values;  // value-head slot `task`, normalized scale
  std::vector<double> log_probs;
  std::vector<double> bootstrap_values;  // per env, normalized scale
  std::vector<EnvState> states;               // main task only
  std::vector<RelevanceVector> relevance;     // main task only
  std::vector<double> advantages;  // raw scale
  std::vector<double> returns;     // raw scale

  std::size_t size() const { return actions.size(); }
  std::size_t row(int t, int e) const { return static_cast<std::size_t>(t) * envs + e; }
};

struct RolloutBuffer {
  std::vector<TaskRollout> tasks;
  std::vector<EpisodeRecord> episodes;    // completed during this phase
  std::vector<std::uint64_t> seeds_used;  // every episode seed that entered a rollout

  std::size_t transitions() const {
    std::size_t n = 0;
    for (const auto& t : tasks) n += t.size();
    return n;
  }

  const TaskRollout* find(TaskId id) const {
    for (const auto& t : tasks)
      if (t.task == id) return &t;
    return nullptr;
  }
};

// Env instances for one task, owned by one rollout worker.
struct EnvWorker {
  TaskId task;
  std::vector<EnvState> states;
  std::vector<double> running_return;
  std::mt19937_64 rng;
  std::vector<std::uint64_t> new_seeds;

  EpisodeConfig fresh_episode(const MiniRearrange& env) {
    for (;;) {
      const std::uint64_t seed = rng() % kTrainSeedCount;
      EpisodeConfig ep = env.generate_episode(seed, Split::train);
      if (env.compatible(task, ep)) {
        new_seeds.push_back(ep.seed);
        return ep;
      }
    }
  }

  void reset_all(const MiniRearrange& env, int count) {
    states.clear();
    running_return.assign(static_cast<std::size_t>(count), 0.0);
    for (int e = 0; e < count; ++e) states.push_back(env.reset(task, fresh_episode(env)));
  }
};

inline nn::Tensor2 observe_batch(const MiniRearrange& env, std::span<const EnvState> states) {
  nn::Tensor2 obs(static_cast<Eigen::Index>(states.size()), Observation::kDim);
  for (std::size_t e = 0; e < states.size(); ++e) {
    const auto flat = env.observe(states[e]).flatten();
    for (int c = 0; c < Observation::kDim; ++c) obs(static_cast<Eigen::Index>(e), c) = flat[static_cast<std::size_t>(c)];
  }
  return obs;
}

// Advances every env in `worker` by `horizon` steps under a frozen policy.
inline TaskRollout collect_task_rollout(const MiniRearrange& env, const nn::PolicyParams& params, EnvWorker& worker,
                                        int horizon, std::vector<EpisodeRecord>& finished) {
  const int envs = static_cast<int>(worker.states.size());
  const int task = worker.task.index;
  TaskRollout ro;
  ro.task = worker.task;
  ro.envs = envs;
  ro.horizon = horizon;
  const auto rows = static_cast<std::size_t>(horizon) * envs;
  ro.obs.resize(static_cast<Eigen::Index>(rows), Observation::kDim);
  ro.actions.resize(rows);
  ro.rewards.resize(rows);
  ro.dones.resize(rows);
  ro.values.resize(rows);
  ro.log_probs.resize(rows);
  if (worker.task.is_main()) {
    ro.states.reserve(rows);
    ro.relevance.reserve(rows);
  }
  for (int t = 0; t < horizon; ++t) {
    const nn::Tensor2 obs = observe_batch(env, worker.states);
    const nn::PolicyOutput out = nn::forward(params, obs);
    for (int e = 0; e < envs; ++e) {
      const std::size_t r = ro.row(t, e);
      ro.obs.row(static_cast<Eigen::Index>(r)) = obs.row(e);
      const auto [action, logp] = nn::sample_action(nn::row(out.logits, e), worker.rng);
      ro.actions[r] = action;
      ro.log_probs[r] = logp;
      ro.values[r] = out.values(e, task);
      EnvState& s = worker.states[static_cast<std::size_t>(e)];
      if (worker.task.is_main()) {
        ro.states.push_back(s);
        ro.relevance.push_back(relevance(env, s));
      }
      const StepResult res = env.step(s, action);
      ro.rewards[r] = res.reward;
      ro.dones[r] = res.done ? 1 : 0;
      double& ret = worker.running_return[static_cast<std::size_t>(e)];
      ret += res.reward;
      if (res.done) {
        finished.push_back({worker.task, s.episode.difficulty, s.episode.seed, res.success, ret,
                            res.next_state.step_count});
        ret = 0.0;
        s = env.reset(worker.task, worker.fresh_episode(env));
      } else {
        s = res.next_state;
      }
    }
  }
  const nn::PolicyOutput last = nn::forward(params, observe_batch(env, worker.states));
  ro.bootstrap_values.resize(static_cast<std::size_t>(envs));
  for (int e = 0; e < envs; ++e) ro.bootstrap_values[static_cast<std::size_t>(e)] = last.values(e, task);
  return ro;
}

inline RolloutBuffer collect_rollouts(const MiniRearrange& env, const nn::PolicyParams& params,
                                      std::vector<EnvWorker>& workers, int horizon, int num_threads = 1) {
  RolloutBuffer buf;
  buf.tasks.resize(workers.size());
  std::vector<std::vector<EpisodeRecord>> finished(workers.size());
  for (auto& w : workers) {
    buf.seeds_used.insert(buf.seeds_used.end(), w.new_seeds.begin(), w.new_seeds.end());
    w.new_seeds.clear();
  }
  auto run = [&](std::size_t k) { buf.tasks[k] = collect_task_rollout(env, params, workers[k], horizon, finished[k]); };
  if (num_threads > 1 && workers.size() > 1) {
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < workers.size(); ++k) pool.emplace_back(run, k);
  } else {
    for (std::size_t k = 0; k < workers.size(); ++k) run(k);
  }
  for (std::size_t k = 0; k < workers.size(); ++k) {
    buf.episodes.insert(buf.episodes.end(), finished[k].begin(), finished[k].end());
    buf.seeds_used.insert(buf.seeds_used.end(), workers[k].new_seeds.begin(), workers[k].new_seeds.end());
    workers[k].new_seeds.clear();
  }
  return buf;
}

// ---- advantage estimation ---------------------------------------------------

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// One env's time series. `dones[t]` marks that the transition at t ended the
// episode, so nothing bootstraps across it.
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                             std::span<const std::uint8_t> dones, double bootstrap_value, double gamma,
                             double gae_lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw std::invalid_argument("compute_gae: length mismatch");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double next_value = k + 1 < n ? values[k + 1] : bootstrap_value;
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * live - values[k];
    next_adv = delta + gamma * gae_lambda * live * next_adv;
    out.advantages[k] = next_adv;
    out.returns[k] = next_adv + values[k];
  }
  return out;
}

// Fills advantages/returns of a task block using raw-scale value estimates.
inline void compute_task_gae(TaskRollout& ro, const PopArtState& popart, double gamma, double gae_lambda) {
  const int task = ro.task.index;
  ro.advantages.assign(ro.size(), 0.0);
  ro.returns.assign(ro.size(), 0.0);
  std::vector<double> r(static_cast<std::size_t>(ro.horizon)), v(r.size());
  std::vector<std::uint8_t> d(r.size());
  for (int e = 0; e < ro.envs; ++e) {
    for (int t = 0; t < ro.horizon; ++t) {
      const std::size_t i = ro.row(t, e);
      r[static_cast<std::size_t>(t)] = ro.rewards[i];
      v[static_cast<std::size_t>(t)] = popart.denormalize(task, ro.values[i]);
      d[static_cast<std::size_t>(t)] = ro.dones[i];
    }
    const double boot = popart.denormalize(task, ro.bootstrap_values[static_cast<std::size_t>(e)]);
    const GaeResult g = compute_gae(r, v, d, boot, gamma, gae_lambda);
    for (int t = 0; t < ro.horizon; ++t) {
      ro.advantages[ro.row(t, e)] = g.advantages[static_cast<std::size_t>(t)];
      ro.returns[ro.row(t, e)] = g.returns[static_cast<std::size_t>(t)];
    }
  }
}

inline void standardize(std::span<double> xs, double eps = 1e-8) {
  if (xs.empty()) return;
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / n);
  for (double& x : xs) x = (x - mean) / (sd + eps);
}

// ---- losses ------------------------------------------------------------------

struct MiniBatch {
  nn::Tensor2 obs;
  std::vector<int> task;
  std::vector<int> actions;
  std::vector<double> old_log_probs;
  std::vector<double> advantages;     // before per-minibatch standardization
  std::vector<double> value_targets;  // normalized scale
  std::vector<RelevanceVector> relevance;  // consulted on main-task rows only

  std::size_t size() const { return task.size(); }
};

struct LossReport {
  TaskArray policy_loss{};
  TaskArray value_loss{};
  TaskArray entropy{};
  std::array<int, kNumTasks> rows{};
  double distill = 0.0;
  double rl_weight = 1.0;
  double lambda = 0.0;
  double total = 0.0;

  // L_i = policy + c_v * value - c_e * entropy.
  double task_loss(int i, double value_coef, double entropy_coef) const {
    return policy_loss[i] + value_coef * value_loss[i] - entropy_coef * entropy[i];
  }

  double rl_sum(double value_coef, double entropy_coef) const {
    double s = 0.0;
    for (int i = 0; i < kNumTasks; ++i)
      if (rows[i] > 0) s += task_loss(i, value_coef, entropy_coef);
    return s;
  }
};

// Combined objective: rl_weight * sum_i L_i + lambda * distill.
inline double total_loss(const TaskArray& rl_terms, double distill, double lambda, double rl_weight) {
  double s = 0.0;
  for (double t : rl_terms) s += t;
  return rl_weight * s + lambda * distill;
}

// Clipped surrogate for one row; returns the loss and d loss / d log pi(a).
inline std::pair<double, double> clipped_surrogate(double log_prob, double old_log_prob, double advantage,
                                                   double clip) {
  const double ratio = std::exp(log_prob - old_log_prob);
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage;
  if (unclipped <= clipped) return {-unclipped, -unclipped};
  return {-clipped, 0.0};
}

namespace detail {

struct DistillPair {
  std::size_t row;  // main-task row within the minibatch
  int aux;          // auxiliary task index
  double weight;
};

}  // namespace detail

// Evaluates the full objective on one minibatch. When `grads` is non-null the
// exact gradient of `total` is accumulated into it.
inline LossReport loss_and_grad(const nn::PolicyParams& params, const MiniBatch& mb, const TrainConfig& cfg,
                                nn::PolicyParams* grads) {
  const std::size_t n = mb.size();
  LossReport rep;
  rep.rl_weight = cfg.rl_weight();
  rep.lambda = cfg.lambda;

  std::vector<double> adv = mb.advantages;
  standardize(adv);

  nn::ForwardCache cache;
  const nn::PolicyOutput out = nn::forward(params, mb.obs, grads ? &cache : nullptr);
  nn::Tensor2 dlogits = nn::Tensor2::Zero(static_cast<Eigen::Index>(n), nn::kNumActions);
  nn::Tensor2 dvalues = nn::Tensor2::Zero(static_cast<Eigen::Index>(n), params.num_tasks);

  for (std::size_t r = 0; r < n; ++r) rep.rows[mb.task[r]] += 1;

  for (std::size_t r = 0; r < n; ++r) {
    const int i = mb.task[r];
    const double inv = 1.0 / rep.rows[i];
    const auto ri = static_cast<Eigen::Index>(r);
    const auto lp = nn::log_softmax(nn::row(out.logits, ri));
    const int a = mb.actions[r];
    const auto [pl, dlogp] = clipped_surrogate(lp[static_cast<std::size_t>(a)], mb.old_log_probs[r], adv[r], cfg.clip);
    double h = 0.0;
    for (double l : lp) h -= std::exp(l) * l;
    const double v = out.values(ri, i);
    const double err = v - mb.value_targets[r];
    rep.policy_loss[i] += pl * inv;
    rep.entropy[i] += h * inv;
    rep.value_loss[i] += err * err * inv;
    if (grads) {
      const double w = rep.rl_weight * inv;
      for (int k = 0; k < nn::kNumActions; ++k) {
        const double pk = std::exp(lp[static_cast<std::size_t>(k)]);
        const double dlogp_dz = (k == a ? 1.0 : 0.0) - pk;
        const double dh_dz = -pk * (lp[static_cast<std::size_t>(k)] + h);
        dlogits(ri, k) += w * (dlogp * dlogp_dz - cfg.entropy_coef * dh_dz);
      }
      dvalues(ri, i) += w * cfg.value_coef * 2.0 * err;
    }
  }

  // Relevance-weighted KL between the main-task head and each relevant
  // auxiliary head on the same observation.
  nn::ForwardCache aux_cache;
  std::vector<detail::DistillPair> pairs;
  nn::Tensor2 aux_logits;
  const int main_rows = rep.rows[TaskId::kMain];
  if (cfg.distill_enabled && main_rows > 0) {
    for (std::size_t r = 0; r < n; ++r) {
      if (mb.task[r] != TaskId::kMain) continue;
      for (int j = 1; j < kNumTasks; ++j) {
        const double w = cfg.distill_from[j] ? mb.relevance[r].weights[static_cast<std::size_t>(j - 1)] : 0.0;
        if (w != 0.0) pairs.push_back({r, j, w});
      }
    }
    if (!pairs.empty()) {
      // The task indicator occupies the last num_tasks input columns.
      const int ind = params.obs_dim - params.num_tasks;
      nn::Tensor2 swapped(static_cast<Eigen::Index>(pairs.size()), params.obs_dim);
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto rk = static_cast<Eigen::Index>(k);
        swapped.row(rk) = mb.obs.row(static_cast<Eigen::Index>(pairs[k].row));
        for (int c = 0; c < params.num_tasks; ++c) swapped(rk, ind + c) = 0.0;
        swapped(rk, ind + pairs[k].aux) = 1.0;
      }
      const bool need_grad = grads && cfg.lambda != 0.0;
      aux_logits = nn::forward(params, swapped, need_grad ? &aux_cache : nullptr).logits;
      const double scale = cfg.distill_scale() / main_rows;
      nn::Tensor2 daux = nn::Tensor2::Zero(aux_logits.rows(), nn::kNumActions);
      std::array<double, nn::kNumActions> dp{}, dq{};
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto rk = static_cast<Eigen::Index>(k);
        const auto rm = static_cast<Eigen::Index>(pairs[k].row);
        rep.distill += scale * pairs[k].weight * nn::kl_categorical(nn::row(out.logits, rm), nn::row(aux_logits, rk));
        if (need_grad) {
          nn::kl_categorical_grad(nn::row(out.logits, rm), nn::row(aux_logits, rk), dp, dq);
          const double c = cfg.lambda * scale * pairs[k].weight;
          for (int a = 0; a < nn::kNumActions; ++a) {
            dlogits(rm, a) += c * dp[static_cast<std::size_t>(a)];
            if (!cfg.distill_stop_grad) daux(rk, a) += c * dq[static_cast<std::size_t>(a)];
          }
        }
      }
      if (need_grad && !cfg.distill_stop_grad) {
        const nn::Tensor2 zero_values = nn::Tensor2::Zero(aux_logits.rows(), params.num_tasks);
        nn::backward_accumulate(params, aux_cache, daux, zero_values, *grads);
      }
    }
  }

  if (grads) nn::backward_accumulate(params, cache, dlogits, dvalues, *grads);

  TaskArray terms{};
  for (int i = 0; i < kNumTasks; ++i)
    if (rep.rows[i] > 0) terms[i] = rep.task_loss(i, cfg.value_coef, cfg.entropy_coef);
  rep.total = total_loss(terms, rep.distill, cfg.lambda, rep.rl_weight);
  return rep;
}

// Weighted KL term alone, for a block of main-task observations.
inline double distill_loss(const nn::PolicyParams& params, const nn::Tensor2& main_obs,
                           std::span<const RelevanceVector> relevance, const TrainConfig& cfg) {
  MiniBatch mb;
  mb.obs = main_obs;
  const auto n = static_cast<std::size_t>(main_obs.rows());
  mb.task.assign(n, TaskId::kMain);
  mb.actions.assign(n, 0);
  mb.old_log_probs.assign(n, 0.0);
  mb.advantages.assign(n, 0.0);
  mb.value_targets.assign(n, 0.0);
  mb.relevance.assign(relevance.begin(), relevance.end());
  return loss_and_grad(params, mb, cfg, nullptr).distill;
}

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::string dump) : std::runtime_error(what), dump_(std::move(dump)) {}
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

inline std::string dump_minibatch(const MiniBatch& mb, const LossReport& rep) {
  std::ostringstream os;
  os.precision(17);
  os << "distill=" << rep.distill << " total=" << rep.total << "\n";
  for (int i = 0; i < kNumTasks; ++i)
    os << "task " << i << " rows=" << rep.rows[i] << " policy=" << rep.policy_loss[i] << " value=" << rep.value_loss[i]
       << " entropy=" << rep.entropy[i] << "\n";
  os << "row,task,action,old_log_prob,advantage,value_target,obs...\n";
  for (std::size_t r = 0; r < mb.size(); ++r) {
    os << r << ',' << mb.task[r] << ',' << mb.actions[r] << ',' << mb.old_log_probs[r] << ',' << mb.advantages[r] << ','
       << mb.value_targets[r];
    for (Eigen::Index c = 0; c < mb.obs.cols(); ++c) os << ',' << mb.obs(static_cast<Eigen::Index>(r), c);
    os << '\n';
  }
  return os.str();
}

inline double grad_norm(const nn::PolicyParams& g) {
  double s = 0.0;
  g.for_each_array([&s](std::span<const double> xs) {
    for (double x : xs) s += x * x;
  });
  return std::sqrt(s);
}

inline void scale_grads(nn::PolicyParams& g, double c) {
  g.for_each_array([c](std::span<double> xs) {
    for (double& x : xs) x *= c;
  });
}

// ---- training loop -----------------------------------------------------------

struct UpdateMetrics {
  std::int64_t update = 0;
  std::int64_t env_steps = 0;
  std::array<std::int64_t, kNumTasks> task_steps{};
  TaskArray success{};  // rolling window; NaN before any episode finishes
  TaskArray mean_return{};
  double main_easy_success = 0.0;
  double main_hard_success = 0.0;
  double policy_loss = 0.0;  // summed over tasks
  double value_loss = 0.0;
  double entropy = 0.0;
  double distill_loss = 0.0;
  double total_loss = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;
  std::array<double, kNumTasks> popart_mu{};
  std::array<double, kNumTasks> popart_sigma{};
};

// Mutable learning state carried between training phases.
struct LearnerState {
  nn::PolicyParams params;
  nn::AdamState adam;
  PopArtState popart;
};

inline LearnerState make_learner(const TrainConfig& cfg) {
  LearnerState st;
  st.params = nn::init_policy(Observation::kDim, kNumTasks, detail::splitmix64(cfg.seed * 7919 + 1), cfg.hidden);
  st.adam = nn::AdamState(st.params);
  st.popart = PopArtState(kNumTasks, cfg.popart_beta);
  return st;
}

class RollingRate {
 public:
  RollingRate() = default;
  explicit RollingRate(std::size_t window) : window_(window) {}
  void push(double x) {
    buf_.push_back(x);
    sum_ += x;
    if (buf_.size() > window_) {
      sum_ -= buf_.front();
      buf_.pop_front();
    }
  }
  double mean() const { return buf_.empty() ? std::nan("") : sum_ / static_cast<double>(buf_.size()); }
  std::size_t count() const { return buf_.size(); }

 private:
  std::size_t window_ = 100;
  std::deque<double> buf_;
  double sum_ = 0.0;
};

class Trainer {
 public:
  using MetricsSink = std::function<void(const UpdateMetrics&, const Trainer&)>;

  Trainer(const MiniRearrange& env, TrainConfig cfg) : Trainer(env, cfg, make_learner(cfg)) {}

  Trainer(const MiniRearrange& env, TrainConfig cfg, LearnerState state)
      : env_(&env), cfg_(std::move(cfg)), state_(std::move(state)) {
    cfg_.validate();
    if (state_.params.obs_dim != Observation::kDim || state_.params.num_tasks != kNumTasks)
      throw std::invalid_argument("learner state has the wrong architecture");
    shuffle_rng_.seed(detail::splitmix64(cfg_.seed * 7919 + 2));
    for (int i = 0; i < kNumTasks; ++i) {
      success_[i] = RollingRate(static_cast<std::size_t>(cfg_.metrics_window));
      returns_[i] = RollingRate(static_cast<std::size_t>(cfg_.metrics_window));
      if (cfg_.slots[i] == 0) continue;
      EnvWorker w;
      w.task = TaskId{i};
      w.rng.seed(detail::splitmix64(cfg_.seed * 7919 + 100 + static_cast<std::uint64_t>(i)));
      w.reset_all(env, cfg_.slots[i]);
      workers_.push_back(std::move(w));
    }
    main_easy_ = RollingRate(static_cast<std::size_t>(cfg_.metrics_window));
    main_hard_ = RollingRate(static_cast<std::size_t>(cfg_.metrics_window));
  }

  const TrainConfig& config() const { return cfg_; }
  const LearnerState& state() const { return state_; }
  LearnerState release_state() { return std::move(state_); }
  const nn::PolicyParams& params() const { return state_.params; }
  std::int64_t env_steps() const { return env_steps_; }
  std::int64_t updates_done() const { return updates_; }
  const std::vector<std::uint64_t>& seeds_seen() const { return seeds_seen_; }

  std::int64_t planned_updates() const { return cfg_.total_steps / cfg_.steps_per_update(); }

  double current_lr() const {
    const double horizon = static_cast<double>(cfg_.lr_decay_steps > 0 ? cfg_.lr_decay_steps : cfg_.total_steps);
    if (horizon <= 0.0) return cfg_.lr;
    return cfg_.lr * std::max(0.0, 1.0 - static_cast<double>(env_steps_) / horizon);
  }

  RolloutBuffer collect() { return collect_rollouts(*env_, state_.params, workers_, cfg_.horizon, cfg_.num_threads); }

  // GAE, PopArt statistics, then K epochs of minibatch updates.
  LossReport update(RolloutBuffer& buf, double lr) {
    for (auto& ro : buf.tasks) compute_task_gae(ro, state_.popart, cfg_.gamma, cfg_.gae_lambda);
    std::vector<std::span<const double>> returns(static_cast<std::size_t>(kNumTasks));
    for (const auto& ro : buf.tasks) returns[static_cast<std::size_t>(ro.task.index)] = ro.returns;
    popart_update(state_.popart, returns, state_.params);

    std::vector<std::vector<std::size_t>> order(buf.tasks.size());
    LossReport mean;
    int count = 0;
    for (int epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
      for (std::size_t k = 0; k < buf.tasks.size(); ++k) {
        order[k].resize(buf.tasks[k].size());
        std::iota(order[k].begin(), order[k].end(), 0);
        std::shuffle(order[k].begin(), order[k].end(), shuffle_rng_);
      }
      for (int m = 0; m < cfg_.minibatches; ++m) {
        const MiniBatch mb = make_minibatch(buf, order, m);
        nn::PolicyParams grads = state_.params.zeros_like();
        const LossReport rep = loss_and_grad(state_.params, mb, cfg_, &grads);
        if (!std::isfinite(rep.total)) throw TrainingAborted("non-finite loss at update " + std::to_string(updates_), dump_minibatch(mb, rep));
        if (cfg_.max_grad_norm > 0.0) {
          const double gn = grad_norm(grads);
          if (gn > cfg_.max_grad_norm) scale_grads(grads, cfg_.max_grad_norm / gn);
        }
        nn::adam_step(state_.adam, state_.params, grads, lr);
        accumulate(mean, rep);
        ++count;
      }
    }
    scale_report(mean, 1.0 / count);
    return mean;
  }

  // Runs until the step budget is exhausted; returns the number of updates.
  std::int64_t train(const MetricsSink& sink = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t updates = planned_updates();
    for (std::int64_t u = 0; u < updates; ++u) {
      const double lr = current_lr();
      RolloutBuffer buf = collect();
      seeds_seen_.insert(seeds_seen_.end(), buf.seeds_used.begin(), buf.seeds_used.end());
      env_steps_ += static_cast<std::int64_t>(buf.transitions());
      for (const auto& ro : buf.tasks) task_steps_[ro.task.index] += static_cast<std::int64_t>(ro.size());
      for (const auto& ep : buf.episodes) {
        success_[ep.task.index].push(ep.success ? 1.0 : 0.0);
        returns_[ep.task.index].push(ep.episode_return);
        if (ep.task.is_main()) (ep.difficulty == Difficulty::easy ? main_easy_ : main_hard_).push(ep.success ? 1.0 : 0.0);
      }
      const LossReport rep = update(buf, lr);
      ++updates_;
      if (sink) {
        UpdateMetrics m;
        m.update = updates_;
        m.env_steps = env_steps_;
        m.task_steps = task_steps_;
        for (int i = 0; i < kNumTasks; ++i) {
          m.success[i] = success_[i].mean();
          m.mean_return[i] = returns_[i].mean();
          m.popart_mu[i] = state_.popart.mu[i];
          m.popart_sigma[i] = state_.popart.sigma[i];
          m.policy_loss += rep.rows[i] > 0 ? rep.policy_loss[i] : 0.0;
          m.value_loss += rep.rows[i] > 0 ? rep.value_loss[i] : 0.0;
          m.entropy += rep.rows[i] > 0 ? rep.entropy[i] : 0.0;
        }
        m.main_easy_success = main_easy_.mean();
        m.main_hard_success = main_hard_.mean();
        m.distill_loss = rep.distill;
        m.total_loss = rep.total;
        m.lr = lr;
        m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        sink(m, *this);
      }
    }
    return updates;
  }

 private:
  MiniBatch make_minibatch(const RolloutBuffer& buf, const std::vector<std::vector<std::size_t>>& order, int m) const {
    MiniBatch mb;
    std::size_t rows = 0;
    for (std::size_t k = 0; k < buf.tasks.size(); ++k) {
      const std::size_t n = order[k].size();
      rows += n * static_cast<std::size_t>(m + 1) / cfg_.minibatches - n * static_cast<std::size_t>(m) / cfg_.minibatches;
    }
    mb.obs.resize(static_cast<Eigen::Index>(rows), Observation::kDim);
    mb.task.reserve(rows);
    std::size_t out = 0;
    for (std::size_t k = 0; k < buf.tasks.size(); ++k) {
      const TaskRollout& ro = buf.tasks[k];
      const int task = ro.task.index;
      const std::size_t n = order[k].size();
      const std::size_t lo = n * static_cast<std::size_t>(m) / cfg_.minibatches;
      const std::size_t hi = n * static_cast<std::size_t>(m + 1) / cfg_.minibatches;
      const double sigma = state_.popart.sigma[task];
      for (std::size_t j = lo; j < hi; ++j, ++out) {
        const std::size_t i = order[k][j];
        mb.obs.row(static_cast<Eigen::Index>(out)) = ro.obs.row(static_cast<Eigen::Index>(i));
        mb.task.push_back(task);
        mb.actions.push_back(ro.actions[i]);
        mb.old_log_probs.push_back(ro.log_probs[i]);
        mb.advantages.push_back(ro.advantages[i] / sigma);
        mb.value_targets.push_back(state_.popart.normalize(task, ro.returns[i]));
        mb.relevance.push_back(ro.task.is_main() ? ro.relevance[i] : RelevanceVector{});
      }
    }
    return mb;
  }

  static void accumulate(LossReport& acc, const LossReport& r) {
    for (int i = 0; i < kNumTasks; ++i) {
      acc.policy_loss[i] += r.policy_loss[i];
      acc.value_loss[i] += r.value_loss[i];
      acc.entropy[i] += r.entropy[i];
      acc.rows[i] = r.rows[i];
    }
    acc.distill += r.distill;
    acc.total += r.total;
    acc.rl_weight = r.rl_weight;
    acc.lambda = r.lambda;
  }

  static void scale_report(LossReport& r, double c) {
    for (int i = 0; i < kNumTasks; ++i) {
      r.policy_loss[i] *= c;
      r.value_loss[i] *= c;
      r.entropy[i] *= c;
    }
    r.distill *= c;
    r.total *= c;
  }

  const MiniRearrange* env_;
  TrainConfig cfg_;
  LearnerState state_;
  std::vector<EnvWorker> workers_;
  std::mt19937_64 shuffle_rng_;
  std::int64_t env_steps_ = 0;
  std::int64_t updates_ = 0;
  std::array<std::int64_t, kNumTasks> task_steps_{};
  std::array<RollingRate, kNumTasks> success_{};
  std::array<RollingRate, kNumTasks> returns_{};
  RollingRate main_easy_;
  RollingRate main_hard_;
  std::vector<std::uint64_t> seeds_seen_;
};

}  // namespace auxdistill
