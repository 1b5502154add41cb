#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace auxdistill::nn {

using Tensor2 = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

inline constexpr int kNumActions = 7;
inline constexpr int kDefaultHidden = 64;

// y = x * weight + bias, weight stored (in x out).
struct DenseLayer {
  Tensor2 weight;
  RowVector bias;

  DenseLayer() = default;
  DenseLayer(int in, int out) : weight(Tensor2::Zero(in, out)), bias(RowVector::Zero(out)) {}

  int in() const { return static_cast<int>(weight.rows()); }
  int out() const { return static_cast<int>(weight.cols()); }
};

struct PolicyParams {
  int obs_dim = 0;
  int num_tasks = 0;
  int hidden = 0;
  DenseLayer enc1;
  DenseLayer enc2;
  DenseLayer policy_head;
  DenseLayer value_head;

  PolicyParams() = default;
  PolicyParams(int obs, int tasks, int width = kDefaultHidden)
      : obs_dim(obs), num_tasks(tasks), hidden(width), enc1(obs, width), enc2(width, width),
        policy_head(width, kNumActions), value_head(width, tasks) {}

  // Same shapes, all zeros. Used for gradients and optimizer moments.
  PolicyParams zeros_like() const { return PolicyParams(obs_dim, num_tasks, hidden); }

  template <class F>
  void for_each_array(F&& f) {
    for (DenseLayer* l : {&enc1, &enc2, &policy_head, &value_head}) {
      f(std::span<double>(l->weight.data(), static_cast<std::size_t>(l->weight.size())));
      f(std::span<double>(l->bias.data(), static_cast<std::size_t>(l->bias.size())));
    }
  }

  template <class F>
  void for_each_array(F&& f) const {
    for (const DenseLayer* l : {&enc1, &enc2, &policy_head, &value_head}) {
      f(std::span<const double>(l->weight.data(), static_cast<std::size_t>(l->weight.size())));
      f(std::span<const double>(l->bias.data(), static_cast<std::size_t>(l->bias.size())));
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_array([&n](auto s) { n += s.size(); });
    return n;
  }

  static std::size_t parameter_count(int obs, int tasks, int width = kDefaultHidden) {
    const auto dense = [](std::size_t in, std::size_t out) { return in * out + out; };
    return dense(obs, width) + dense(width, width) + dense(width, kNumActions) + dense(width, tasks);
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for_each_array([&out](auto s) { out.insert(out.end(), s.begin(), s.end()); });
    return out;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw std::invalid_argument("flat parameter size mismatch");
    std::size_t off = 0;
    for_each_array([&](std::span<double> s) {
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                flat.begin() + static_cast<std::ptrdiff_t>(off + s.size()), s.begin());
      off += s.size();
    });
  }

  bool same_shape(const PolicyParams& o) const {
    return obs_dim == o.obs_dim && num_tasks == o.num_tasks && hidden == o.hidden;
  }

  friend bool operator==(const PolicyParams& a, const PolicyParams& b) {
    return a.same_shape(b) && a.flatten() == b.flatten();
  }
};

struct PolicyOutput {
  Tensor2 logits;  // batch x 7
  Tensor2 values;  // batch x num_tasks (normalized scale)
};

// Activations kept from a forward pass for the matching backward pass.
struct ForwardCache {
  Tensor2 input;
  Tensor2 h1;
  Tensor2 h2;
};

namespace detail {

inline Tensor2 orthogonal(int rows, int cols, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Eigen::MatrixXd g(big, small);
  for (int i = 0; i < big; ++i)
    for (int j = 0; j < small; ++j) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  // Sign fix makes the draw uniform over the orthogonal group.
  const Eigen::MatrixXd r = qr.matrixQR();
  for (int j = 0; j < small; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  Tensor2 out(rows, cols);
  if (rows >= cols)
    out = q;
  else
    out = q.transpose();
  return out * gain;
}

}  // namespace detail

// Orthogonal hidden layers (gain sqrt 2), policy head gain 0.01, value head
// gain 1.0, zero biases.
inline PolicyParams init_policy(int obs_dim, int num_tasks, std::uint64_t seed, int hidden = kDefaultHidden) {
  PolicyParams p(obs_dim, num_tasks, hidden);
  std::mt19937_64 rng(seed);
  p.enc1.weight = detail::orthogonal(obs_dim, hidden, std::sqrt(2.0), rng);
  p.enc2.weight = detail::orthogonal(hidden, hidden, std::sqrt(2.0), rng);
  p.policy_head.weight = detail::orthogonal(hidden, kNumActions, 0.01, rng);
  p.value_head.weight = detail::orthogonal(hidden, num_tasks, 1.0, rng);
  return p;
}

inline PolicyOutput forward(const PolicyParams& p, const Tensor2& obs, ForwardCache* cache = nullptr) {
  if (obs.cols() != p.obs_dim) throw std::invalid_argument("forward: observation width mismatch");
  Tensor2 h1 = ((obs * p.enc1.weight).rowwise() + p.enc1.bias).array().tanh().matrix();
  Tensor2 h2 = ((h1 * p.enc2.weight).rowwise() + p.enc2.bias).array().tanh().matrix();
  PolicyOutput out;
  out.logits = (h2 * p.policy_head.weight).rowwise() + p.policy_head.bias;
  out.values = (h2 * p.value_head.weight).rowwise() + p.value_head.bias;
  if (cache != nullptr) {
    cache->input = obs;
    cache->h1 = std::move(h1);
    cache->h2 = std::move(h2);
  }
  return out;
}

// Exact reverse-mode gradients given upstream gradients on logits and values.
// Accumulates into `grads` so several loss branches can share one buffer.
inline void backward_accumulate(const PolicyParams& p, const ForwardCache& cache, const Tensor2& dlogits,
                                const Tensor2& dvalues, PolicyParams& grads) {
  const auto batch = cache.input.rows();
  if (dlogits.rows() != batch || dlogits.cols() != kNumActions || dvalues.rows() != batch ||
      dvalues.cols() != p.num_tasks)
    throw std::invalid_argument("backward: upstream gradient shape mismatch");
  grads.policy_head.weight.noalias() += cache.h2.transpose() * dlogits;
  grads.policy_head.bias += dlogits.colwise().sum();
  grads.value_head.weight.noalias() += cache.h2.transpose() * dvalues;
  grads.value_head.bias += dvalues.colwise().sum();

  Tensor2 dh2 = dlogits * p.policy_head.weight.transpose() + dvalues * p.value_head.weight.transpose();
  dh2.array() *= (1.0 - cache.h2.array().square());
  grads.enc2.weight.noalias() += cache.h1.transpose() * dh2;
  grads.enc2.bias += dh2.colwise().sum();

  Tensor2 dh1 = dh2 * p.enc2.weight.transpose();
  dh1.array() *= (1.0 - cache.h1.array().square());
  grads.enc1.weight.noalias() += cache.input.transpose() * dh1;
  grads.enc1.bias += dh1.colwise().sum();
}

inline PolicyParams backward(const PolicyParams& p, const ForwardCache& cache, const Tensor2& dlogits,
                             const Tensor2& dvalues) {
  PolicyParams g = p.zeros_like();
  backward_accumulate(p, cache, dlogits, dvalues, g);
  return g;
}

// ---- categorical distribution helpers -------------------------------------

inline double log_sum_exp(std::span<const double> z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

inline std::vector<double> log_softmax(std::span<const double> z) {
  const double lse = log_sum_exp(z);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

inline std::vector<double> softmax(std::span<const double> z) {
  auto out = log_softmax(z);
  for (double& v : out) v = std::exp(v);
  return out;
}

inline std::span<const double> row(const Tensor2& t, Eigen::Index r) {
  return {t.data() + r * t.cols(), static_cast<std::size_t>(t.cols())};
}

// KL(softmax(p) || softmax(q)) computed from log-probabilities.
inline double kl_categorical(std::span<const double> p_logits, std::span<const double> q_logits) {
  if (p_logits.size() != q_logits.size()) throw std::invalid_argument("kl_categorical: length mismatch");
  const auto lp = log_softmax(p_logits);
  const auto lq = log_softmax(q_logits);
  double kl = 0.0;
  for (std::size_t a = 0; a < lp.size(); ++a) kl += std::exp(lp[a]) * (lp[a] - lq[a]);
  return std::max(kl, 0.0);
}

// d KL / d p_logits and d KL / d q_logits.
inline void kl_categorical_grad(std::span<const double> p_logits, std::span<const double> q_logits,
                                std::span<double> dp, std::span<double> dq) {
  const auto lp = log_softmax(p_logits);
  const auto lq = log_softmax(q_logits);
  double kl = 0.0;
  for (std::size_t a = 0; a < lp.size(); ++a) kl += std::exp(lp[a]) * (lp[a] - lq[a]);
  for (std::size_t a = 0; a < lp.size(); ++a) {
    const double pa = std::exp(lp[a]);
    dp[a] = pa * (lp[a] - lq[a]) - pa * kl;
    dq[a] = std::exp(lq[a]) - pa;
  }
}

inline double entropy(std::span<const double> logits) {
  const auto lp = log_softmax(logits);
  double h = 0.0;
  for (double l : lp) h -= std::exp(l) * l;
  return h;
}

inline std::pair<int, double> sample_action(std::span<const double> logits, std::mt19937_64& rng) {
  const auto lp = log_softmax(logits);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  int chosen = static_cast<int>(lp.size()) - 1;
  for (std::size_t a = 0; a < lp.size(); ++a) {
    acc += std::exp(lp[a]);
    if (u < acc) {
      chosen = static_cast<int>(a);
      break;
    }
  }
  return {chosen, lp[static_cast<std::size_t>(chosen)]};
}

inline int argmax(std::span<const double> logits) {
  int best = 0;
  for (std::size_t a = 1; a < logits.size(); ++a)
    if (logits[a] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(a);
  return best;
}

// ---- optimizer --------------------------------------------------------------

struct AdamState {
  std::int64_t step = 0;
  PolicyParams m;
  PolicyParams v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(const PolicyParams& like) : m(like.zeros_like()), v(like.zeros_like()) {}
};

// One bias-corrected Adam update on a flat array. `step` is the 1-based
// update count after incrementing.
inline void adam_update(std::span<double> param, std::span<double> m, std::span<double> v,
                        std::span<const double> grad, std::int64_t step, double lr, double beta1 = 0.9,
                        double beta2 = 0.999, double eps = 1e-8) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    param[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
  }
}

inline void adam_step(AdamState& st, PolicyParams& params, const PolicyParams& grads, double lr) {
  if (!params.same_shape(grads) || !params.same_shape(st.m))
    throw std::invalid_argument("adam_step: shape mismatch");
  st.step += 1;
  std::vector<std::span<double>> ps, ms, vs;
  std::vector<std::span<const double>> gs;
  params.for_each_array([&](std::span<double> s) { ps.push_back(s); });
  st.m.for_each_array([&](std::span<double> s) { ms.push_back(s); });
  st.v.for_each_array([&](std::span<double> s) { vs.push_back(s); });
  grads.for_each_array([&](std::span<const double> s) { gs.push_back(s); });
  for (std::size_t k = 0; k < ps.size(); ++k)
    adam_update(ps[k], ms[k], vs[k], gs[k], st.step, lr, st.beta1, st.beta2, st.eps);
}

}  // namespace auxdistill::nn
