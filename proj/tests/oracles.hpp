#pragma once

// Reference computations written independently of the library: plain loops,
// no Eigen, no shared helpers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <vector>

#include "auxdistill/grid.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline std::vector<double> probs(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

inline double kl(const std::vector<double>& pz, const std::vector<double>& qz) {
  const auto p = probs(pz);
  const auto q = probs(qz);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

inline double entropy(const std::vector<double>& z) {
  const auto p = probs(z);
  double h = 0.0;
  for (double v : p) h -= v * std::log(v);
  return h;
}

// y = x W + b for one row; W is in x out.
inline std::vector<double> dense(const std::vector<double>& x, const Matrix& w, const std::vector<double>& b) {
  std::vector<double> y(b);
  for (std::size_t o = 0; o < b.size(); ++o)
    for (std::size_t i = 0; i < x.size(); ++i) y[o] += x[i] * w[i][o];
  return y;
}

struct Net {
  Matrix w1, w2, wp, wv;
  std::vector<double> b1, b2, bp, bv;
};

inline std::pair<std::vector<double>, std::vector<double>> forward(const Net& n, const std::vector<double>& x) {
  auto h1 = dense(x, n.w1, n.b1);
  for (double& v : h1) v = std::tanh(v);
  auto h2 = dense(h1, n.w2, n.b2);
  for (double& v : h2) v = std::tanh(v);
  return {dense(h2, n.wp, n.bp), dense(h2, n.wv, n.bv)};
}

// A_t as the explicit discounted sum of TD errors, truncated at episode ends.
inline std::pair<std::vector<double>, std::vector<double>> gae(const std::vector<double>& r,
                                                               const std::vector<double>& v,
                                                               const std::vector<std::uint8_t>& done,
                                                               double bootstrap, double gamma, double lam) {
  const std::size_t n = r.size();
  std::vector<double> delta(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double next = t + 1 < n ? v[t + 1] : bootstrap;
    delta[t] = r[t] + (done[t] ? 0.0 : gamma * next) - v[t];
  }
  std::vector<double> adv(n, 0.0), ret(n);
  for (std::size_t t = 0; t < n; ++t) {
    double coef = 1.0;
    for (std::size_t k = t; k < n; ++k) {
      adv[t] += coef * delta[k];
      if (done[k]) break;
      coef *= gamma * lam;
    }
    ret[t] = adv[t] + v[t];
  }
  return {adv, ret};
}

inline std::vector<double> standardized(std::vector<double> x) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  s = std::sqrt(s / static_cast<double>(x.size()));
  for (double& v : x) v = (v - m) / (s + 1e-8);
  return x;
}

// -mean(min(rho A, clip(rho) A)) for one task's rows.
inline double ppo_policy_term(const std::vector<double>& logp, const std::vector<double>& old_logp,
                              const std::vector<double>& adv, double eps) {
  double s = 0.0;
  for (std::size_t i = 0; i < logp.size(); ++i) {
    const double rho = std::exp(logp[i] - old_logp[i]);
    const double c = std::min(std::max(rho, 1.0 - eps), 1.0 + eps);
    s += std::min(rho * adv[i], c * adv[i]);
  }
  return -s / static_cast<double>(logp.size());
}

// Exponential moving average of the first two moments with the first batch
// taken verbatim.
struct Moments {
  double mu = 0.0;
  double nu = 1.0;
  bool seeded = false;
  void push(const std::vector<double>& g, double beta) {
    double m1 = 0.0, m2 = 0.0;
    for (double x : g) {
      m1 += x;
      m2 += x * x;
    }
    m1 /= static_cast<double>(g.size());
    m2 /= static_cast<double>(g.size());
    if (!seeded) {
      mu = m1;
      nu = m2;
      seeded = true;
    } else {
      mu = (1.0 - beta) * mu + beta * m1;
      nu = (1.0 - beta) * nu + beta * m2;
    }
  }
  double sigma() const { return std::max(std::sqrt(std::max(nu - mu * mu, 0.0)), 1e-4); }
};

// Single-source BFS over free cells of a grid spec.
inline std::vector<int> bfs(const auxdistill::GridWorldSpec& spec, auxdistill::Coord src) {
  std::vector<int> d(static_cast<std::size_t>(spec.width * spec.height), -1);
  std::queue<auxdistill::Coord> q;
  d[static_cast<std::size_t>(src.y * spec.width + src.x)] = 0;
  q.push(src);
  const int dx[4] = {0, 1, 0, -1};
  const int dy[4] = {-1, 0, 1, 0};
  while (!q.empty()) {
    const auto c = q.front();
    q.pop();
    for (int k = 0; k < 4; ++k) {
      const auxdistill::Coord n{c.x + dx[k], c.y + dy[k]};
      if (n.x < 0 || n.y < 0 || n.x >= spec.width || n.y >= spec.height) continue;
      if (std::find(spec.walls.begin(), spec.walls.end(), n) != spec.walls.end()) continue;
      auto& dn = d[static_cast<std::size_t>(n.y * spec.width + n.x)];
      if (dn >= 0) continue;
      dn = d[static_cast<std::size_t>(c.y * spec.width + c.x)] + 1;
      q.push(n);
    }
  }
  return d;
}

}  // namespace oracle
