#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "auxdistill/nn.hpp"

namespace auxdistill {

inline constexpr double kPopArtMinSigma = 1e-4;
inline constexpr double kPopArtDefaultBeta = 3e-4;

// Per-task running moments of returns. The value head predicts returns on the
// normalized scale; sigma * v + mu recovers the raw prediction.
struct PopArtState {
  std::vector<double> mu;
  std::vector<double> nu;
  std::vector<double> sigma;
  std::vector<bool> seeded;
  double beta = kPopArtDefaultBeta;

  PopArtState() = default;
  explicit PopArtState(int num_tasks, double b = kPopArtDefaultBeta)
      : mu(num_tasks, 0.0), nu(num_tasks, 1.0), sigma(num_tasks, 1.0), seeded(num_tasks, false), beta(b) {}

  int num_tasks() const { return static_cast<int>(mu.size()); }

  double normalize(int task, double x) const { return (x - mu[task]) / sigma[task]; }
  double denormalize(int task, double v) const { return sigma[task] * v + mu[task]; }

  static double sigma_from(double mu, double nu) { return std::max(std::sqrt(std::max(nu - mu * mu, 0.0)), kPopArtMinSigma); }

  friend bool operator==(const PopArtState&, const PopArtState&) = default;
};

// Updates the statistics of every task that has returns in this batch and
// rescales the matching value-head column so raw predictions are unchanged.
// A task's first batch seeds the moments directly; later batches blend in
// with weight beta.
inline void popart_update(PopArtState& st, const std::vector<std::span<const double>>& returns_per_task,
                          nn::PolicyParams& params) {
  if (static_cast<int>(returns_per_task.size()) != st.num_tasks() || params.num_tasks != st.num_tasks())
    throw std::invalid_argument("popart_update: task count mismatch");
  for (int i = 0; i < st.num_tasks(); ++i) {
    const auto g = returns_per_task[static_cast<std::size_t>(i)];
    if (g.empty()) continue;
    double m1 = 0.0;
    double m2 = 0.0;
    for (double x : g) {
      m1 += x;
      m2 += x * x;
    }
    m1 /= static_cast<double>(g.size());
    m2 /= static_cast<double>(g.size());

    const double mu_old = st.mu[i];
    const double sigma_old = st.sigma[i];
    if (!st.seeded[i]) {
      st.mu[i] = m1;
      st.nu[i] = m2;
      st.seeded[i] = true;
    } else {
      st.mu[i] = (1.0 - st.beta) * st.mu[i] + st.beta * m1;
      st.nu[i] = (1.0 - st.beta) * st.nu[i] + st.beta * m2;
    }
    st.nu[i] = std::max(st.nu[i], st.mu[i] * st.mu[i]);
    st.sigma[i] = PopArtState::sigma_from(st.mu[i], st.nu[i]);

    const double sigma_new = st.sigma[i];
    const double mu_new = st.mu[i];
    params.value_head.weight.col(i) *= sigma_old / sigma_new;
    params.value_head.bias(i) = (sigma_old * params.value_head.bias(i) + mu_old - mu_new) / sigma_new;
  }
}

}  // namespace auxdistill
