#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <map>
#include <queue>
#include <random>
#include <tuple>

#include "auxdistill/environment.hpp"
#include "auxdistill/ppo.hpp"
#include "oracles.hpp"

namespace fixture {

using namespace auxdistill;
using nn::Tensor2;

inline oracle::Net to_oracle(const nn::PolicyParams& p) {
  auto mat = [](const nn::DenseLayer& l) {
    oracle::Matrix m(static_cast<std::size_t>(l.in()), std::vector<double>(static_cast<std::size_t>(l.out())));
    for (int i = 0; i < l.in(); ++i)
      for (int o = 0; o < l.out(); ++o) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(o)] = l.weight(i, o);
    return m;
  };
  auto vec = [](const nn::DenseLayer& l) { return std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size()); };
  return {mat(p.enc1), mat(p.enc2), mat(p.policy_head), mat(p.value_head),
          vec(p.enc1), vec(p.enc2), vec(p.policy_head), vec(p.value_head)};
}

inline nn::PolicyParams random_params(int obs, int tasks, int width, std::mt19937_64& rng, double sd = 0.5) {
  nn::PolicyParams p(obs, tasks, width);
  std::normal_distribution<double> n(0.0, sd);
  p.for_each_array([&](std::span<double> s) {
    for (double& x : s) x = n(rng);
  });
  return p;
}

inline std::vector<double> row_of(const Tensor2& t, int r) {
  return std::vector<double>(t.row(r).data(), t.row(r).data() + t.cols());
}

// Random minibatch over `features` environment columns followed by a
// one-hot task indicator. Old log-probs sit away from the clip kinks.
inline MiniBatch random_minibatch(const nn::PolicyParams& p, int rows, std::mt19937_64& rng, double clip) {
  const int features = p.obs_dim - p.num_tasks;
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  MiniBatch mb;
  mb.obs = Tensor2::Zero(rows, p.obs_dim);
  for (int r = 0; r < rows; ++r) {
    const int task = r % p.num_tasks == 0 || r < 2 ? 0 : r % p.num_tasks;
    for (int c = 0; c < features; ++c) mb.obs(r, c) = n(rng);
    mb.obs(r, features + task) = 1.0;
    mb.task.push_back(task);
    mb.actions.push_back(static_cast<int>(rng() % nn::kNumActions));
    mb.advantages.push_back(n(rng));
    mb.value_targets.push_back(n(rng));
    RelevanceVector w;
    w.weights[rng() % 4] = 1.0;
    mb.relevance.push_back(w);
  }
  const auto out = nn::forward(p, mb.obs);
  for (int r = 0; r < rows; ++r) {
    const auto lp = nn::log_softmax(nn::row(out.logits, r));
    double off = 0.0;
    do {
      off = u(rng);
    } while (std::abs(std::abs(off) - std::log1p(clip)) < 0.05 || std::abs(std::abs(off) + std::log1p(-clip)) < 0.05);
    mb.old_log_probs.push_back(lp[static_cast<std::size_t>(mb.actions[static_cast<std::size_t>(r)])] + off);
  }
  return mb;
}

struct OracleLoss {
  TaskArray policy{}, value{}, entropy{};
  std::array<int, kNumTasks> rows{};
  double distill = 0.0;
  double total = 0.0;
};

// Straight-line evaluation of the full objective. When `frozen` is set the
// auxiliary-task distributions come from those fixed parameters.
inline OracleLoss oracle_loss(const oracle::Net& net, const MiniBatch& mb, const TrainConfig& cfg, int num_tasks,
                       const oracle::Net* frozen = nullptr) {
  OracleLoss o;
  const int n = static_cast<int>(mb.size());
  const int cols = static_cast<int>(mb.obs.cols());
  const int features = cols - num_tasks;
  const auto adv = oracle::standardized(mb.advantages);
  for (int r = 0; r < n; ++r) ++o.rows[static_cast<std::size_t>(mb.task[static_cast<std::size_t>(r)])];
  int main_rows = o.rows[0];
  for (int r = 0; r < n; ++r) {
    const auto rr = static_cast<std::size_t>(r);
    const int i = mb.task[rr];
    const auto x = row_of(mb.obs, r);
    const auto [lg, vl] = oracle::forward(net, x);
    const auto p = oracle::probs(lg);
    const double logp = std::log(p[static_cast<std::size_t>(mb.actions[rr])]);
    const double rho = std::exp(logp - mb.old_log_probs[rr]);
    const double clipped = std::min(std::max(rho, 1 - cfg.clip), 1 + cfg.clip);
    const double inv = 1.0 / o.rows[static_cast<std::size_t>(i)];
    o.policy[static_cast<std::size_t>(i)] -= std::min(rho * adv[rr], clipped * adv[rr]) * inv;
    const double e = vl[static_cast<std::size_t>(i)] - mb.value_targets[rr];
    o.value[static_cast<std::size_t>(i)] += e * e * inv;
    o.entropy[static_cast<std::size_t>(i)] += oracle::entropy(lg) * inv;
    if (i != 0 || !cfg.distill_enabled) continue;
    for (int j = 1; j < num_tasks; ++j) {
      const double w = cfg.distill_from[static_cast<std::size_t>(j)] ? mb.relevance[rr].weights[static_cast<std::size_t>(j - 1)] : 0.0;
      if (w == 0.0) continue;
      auto xs = x;
      for (int c = 0; c < num_tasks; ++c) xs[static_cast<std::size_t>(features + c)] = c == j ? 1.0 : 0.0;
      const auto q = oracle::forward(frozen ? *frozen : net, xs).first;
      o.distill += cfg.distill_scale() * w * oracle::kl(lg, q) / main_rows;
    }
  }
  double rl = 0.0;
  for (int i = 0; i < num_tasks; ++i)
    if (o.rows[static_cast<std::size_t>(i)] > 0)
      rl += o.policy[static_cast<std::size_t>(i)] + cfg.value_coef * o.value[static_cast<std::size_t>(i)] -
            cfg.entropy_coef * o.entropy[static_cast<std::size_t>(i)];
  o.total = cfg.rl_weight() * rl + cfg.lambda * o.distill;
  return o;
}

inline GridWorldSpec small_spec() {
  GridWorldSpec s;
  s.width = 5;
  s.height = 5;
  s.container_cell = {1, 1};
  s.goal_cell = {3, 3};
  s.walls = {{2, 0}, {2, 1}};
  s.max_steps_main = 40;
  s.max_steps_aux = 20;
  return s;
}

using Key = std::tuple<int, int, int, int, bool, bool, bool>;

inline Key key(const EnvState& s) {
  return {s.agent_pos.x, s.agent_pos.y, s.object_pos.x, s.object_pos.y, s.holding, s.container_open, s.did_pick};
}

// Every main-task state reachable from any valid start, ignoring the step
// counter. Visits each (state, action, next) edge once.
template <class F>
void for_each_reachable_edge(const MiniRearrange& env, F&& on_edge) {
  const auto& spec = env.spec();
  std::map<Key, EnvState> seen;
  std::queue<EnvState> q;
  for (int a = 0; a < spec.cell_count(); ++a)
    for (int o = 0; o < spec.cell_count(); ++o)
      for (bool hard : {false, true}) {
        EpisodeConfig ep;
        ep.agent_spawn = spec.coord(a);
        ep.object_start = hard ? spec.container_cell : spec.coord(o);
        ep.difficulty = hard ? Difficulty::hard : Difficulty::easy;
        ep.object_in_container = hard;
        if (!spec.is_free(ep.agent_spawn) || !spec.is_free(ep.object_start) || ep.agent_spawn == ep.object_start)
          continue;
        if (!hard && (ep.object_start == spec.container_cell || ep.object_start == spec.goal_cell)) continue;
        const EnvState s = env.reset(kMainTask, ep);
        if (seen.emplace(key(s), s).second) q.push(s);
      }
  while (!q.empty()) {
    EnvState s = q.front();
    q.pop();
    s.step_count = 0;
    if (env.success(s)) continue;
    for (int a = 0; a < kNumActions; ++a) {
      const StepResult r = env.step(s, a);
      on_edge(s, r);
      EnvState n = r.next_state;
      n.step_count = 0;
      if (seen.emplace(key(n), n).second) q.push(n);
    }
  }
}

}  // namespace fixture
