#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "poclab/io.hpp"
#include "poclab/kernels.hpp"
#include "poclab/mc.hpp"
#include "poclab/rng.hpp"

namespace poclab {

// Weighted ensemble of teacher alignments alpha in [0,1], with cached power
// moments r_k = E alpha^k.
struct AlphaEnsemble {
  Eigen::VectorXd alphas;
  Eigen::VectorXd weights;  // sums to 1
  int d = 2;
  Eigen::VectorXd moments;  // r_0 .. r_K

  int size() const { return static_cast<int>(alphas.size()); }

  void refresh_moments(int K) {
    moments = Eigen::VectorXd::Zero(K + 1);
    for (int i = 0; i < size(); ++i) {
      double p = 1.0;
      for (int k = 0; k <= K; ++k) {
        moments(k) += weights(i) * p;
        p *= alphas(i);
      }
    }
  }

  double r(int k) const { return moments(k); }
};

// Alignment of a uniform unit vector with a fixed direction: |g_1| / ||g||.
inline AlphaEnsemble alpha_ensemble_sphere(int d, int n, std::uint64_t seed, int K) {
  if (n < 1 || d < 2) throw std::invalid_argument("alpha_ensemble_sphere: bad n or d");
  AlphaEnsemble ens;
  ens.d = d;
  ens.alphas.resize(n);
  ens.weights = Eigen::VectorXd::Constant(n, 1.0 / n);
  CounterRng rng(seed, 41);
  for (int i = 0; i < n; ++i) {
    double first = 0.0, sq = 0.0;
    for (int j = 0; j < d; ++j) {
      const double g = rng.gaussian(static_cast<std::uint64_t>(i) * d + j);
      if (j == 0) first = g;
      sq += g * g;
    }
    ens.alphas(i) = std::abs(first) / std::sqrt(sq);
  }
  ens.refresh_moments(K);
  return ens;
}

// Deterministic quantile grid of the same alignment law (midpoint quantiles of a
// large fixed-seed sample), for noise-free ODE studies.
inline AlphaEnsemble alpha_ensemble_quantile(int d, int n, int K, int base_samples = 1 << 17) {
  AlphaEnsemble big = alpha_ensemble_sphere(d, base_samples, 0xa11a5ULL, 0);
  std::vector<double> sorted(big.alphas.data(), big.alphas.data() + big.alphas.size());
  std::sort(sorted.begin(), sorted.end());
  AlphaEnsemble ens;
  ens.d = d;
  ens.alphas.resize(n);
  ens.weights = Eigen::VectorXd::Constant(n, 1.0 / n);
  for (int i = 0; i < n; ++i) {
    const double p = (i + 0.5) / n;
    ens.alphas(i) = sorted[static_cast<std::size_t>(p * base_samples)];
  }
  ens.refresh_moments(K);
  return ens;
}

enum class ReducedMode { Polynomial, MonteCarlo };

// Leading-order alignment velocity sum_k q_k alpha^k (1-alpha^2)(1-r_{k+1}),
// with q_k the coefficients of the derivative pair kernel.
inline double reduced_velocity_poly(double alpha, const AlphaEnsemble& ens,
                                    const PairKernel& qd) {
  if (ens.size() == 0) throw std::invalid_argument("reduced_velocity: empty ensemble");
  double s = 0.0;
  const double om = 1.0 - alpha * alpha;
  double ak = 1.0;
  for (std::size_t k = 0; k < qd.q.size(); ++k) {
    if (qd.q[k] != 0.0) s += qd.q[k] * ak * om * (1.0 - ens.r(static_cast<int>(k) + 1));
    ak *= alpha;
  }
  return s;
}

inline double reduced_velocity(double alpha, const AlphaEnsemble& ens, const LinkFunction& link,
                               ReducedMode mode = ReducedMode::Polynomial, long n_mc = 20000,
                               std::uint64_t seed = 5, double* stderr_out = nullptr) {
  const PairKernel qd = pair_kernel_dsigma(link);
  if (mode == ReducedMode::Polynomial) return reduced_velocity_poly(alpha, ens, qd);
  if (ens.size() == 0) throw std::invalid_argument("reduced_velocity: empty ensemble");
  // Full pair expectation: v = q'(alpha)(1-alpha^2) - E[q'(z)(alpha' - alpha z)],
  // z = alpha alpha' + sqrt((1-alpha^2)(1-alpha'^2)) beta with beta the overlap of
  // two uniform directions orthogonal to the teacher.
  SequentialRng rng(seed, 43);
  // inverse-CDF table over ensemble weights
  std::vector<double> cdf(ens.size());
  double acc = 0.0;
  for (int i = 0; i < ens.size(); ++i) {
    acc += ens.weights(i);
    cdf[static_cast<std::size_t>(i)] = acc;
  }
  const int dm = ens.d - 1;
  double sum = 0.0, sumsq = 0.0;
  for (long t = 0; t < n_mc; ++t) {
    const double u = rng.uniform();
    const int idx = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    const double ap = ens.alphas(std::min(idx, ens.size() - 1));
    double first = 0.0, sq = 0.0;
    for (int j = 0; j < dm; ++j) {
      const double g = rng.gaussian();
      if (j == 0) first = g;
      sq += g * g;
    }
    const double beta = first / std::sqrt(sq);
    const double z =
        alpha * ap + std::sqrt(std::max(0.0, (1 - alpha * alpha) * (1 - ap * ap))) * beta;
    const double term = qd(z) * (ap - alpha * z);
    sum += term;
    sumsq += term * term;
  }
  const double mean = sum / n_mc;
  if (stderr_out) {
    const double var = std::max(0.0, sumsq / n_mc - mean * mean);
    *stderr_out = std::sqrt(var / n_mc);
  }
  return qd(alpha) * (1 - alpha * alpha) - mean;
}

// d/dalpha of the polynomial-mode velocity.
inline double reduced_dvelocity(double alpha, const AlphaEnsemble& ens,
                                const LinkFunction& link) {
  const PairKernel qd = pair_kernel_dsigma(link);
  double s = 0.0;
  for (std::size_t k = 0; k < qd.q.size(); ++k) {
    if (qd.q[k] == 0.0) continue;
    const double kk = static_cast<double>(k);
    const double akm = k == 0 ? 0.0 : kk * std::pow(alpha, kk - 1);
    s += qd.q[k] * (1.0 - ens.r(static_cast<int>(k) + 1)) *
         (akm - (kk + 2.0) * std::pow(alpha, kk + 1));
  }
  return s;
}

// E (f - f*)^2 proxy: sum_k k! c_k^2 (1 - r_k)^2.
inline double reduced_loss_proxy(const AlphaEnsemble& ens, const LinkFunction& link) {
  const PairKernel q = pair_kernel_sigma(link);
  double s = 0.0;
  for (std::size_t k = 0; k < q.q.size(); ++k) {
    const double g = 1.0 - ens.r(static_cast<int>(k));
    s += q.q[k] * g * g;
  }
  return s;
}

struct ReducedTrajectory {
  std::vector<double> times;
  std::vector<double> loss_proxy;
  std::vector<Eigen::VectorXd> alphas;  // per record
  Eigen::VectorXd weights;
  Eigen::VectorXd first_crossing;  // per particle, first time alpha > 0.5 (-1 if never)
  double eta = 0.0;
  int d = 2;
  long clamp_events = 0;
  double T_delta = -1.0;  // -1 => not converged within max_steps
  bool converged = false;
};

// Euler flow of the alpha ensemble under the polynomial velocity; stops when the
// loss proxy reaches delta^2. Steps are clamped to [0,1] and clamps counted; the
// default eta keeps the count at zero for every polynomial link used here.
inline ReducedTrajectory run_reduced(const LinkFunction& link, int d, AlphaEnsemble ens,
                                     double eta = 0.002, double delta_target = 0.3,
                                     long max_steps = 400000, int record_every = 100) {
  if (!(delta_target > 0 && delta_target < 1))
    throw std::invalid_argument("run_reduced: delta in (0,1) required");
  const PairKernel qd = pair_kernel_dsigma(link);
  const int K = link.degree;
  ens.d = d;
  ens.refresh_moments(K);

  ReducedTrajectory traj;
  traj.eta = eta;
  traj.d = d;
  traj.weights = ens.weights;
  traj.first_crossing = Eigen::VectorXd::Constant(ens.size(), -1.0);
  for (int i = 0; i < ens.size(); ++i)
    if (ens.alphas(i) > 0.5) traj.first_crossing(i) = 0.0;

  const double target_sq = delta_target * delta_target;
  auto record = [&](long s) {
    traj.times.push_back(s * eta);
    traj.loss_proxy.push_back(reduced_loss_proxy(ens, link));
    traj.alphas.push_back(ens.alphas);
  };
  record(0);
  if (traj.loss_proxy.back() <= target_sq) {
    traj.converged = true;
    traj.T_delta = 0.0;
    return traj;
  }

  for (long s = 0; s < max_steps; ++s) {
    Eigen::VectorXd next(ens.size());
    for (int i = 0; i < ens.size(); ++i) {
      double a = ens.alphas(i) + eta * reduced_velocity_poly(ens.alphas(i), ens, qd);
      if (a < 0.0) {
        a = 0.0;
        ++traj.clamp_events;
      } else if (a > 1.0) {
        a = 1.0;
        ++traj.clamp_events;
      }
      next(i) = a;
    }
    ens.alphas = next;
    ens.refresh_moments(K);
    const double t = (s + 1) * eta;
    for (int i = 0; i < ens.size(); ++i)
      if (traj.first_crossing(i) < 0 && ens.alphas(i) > 0.5) traj.first_crossing(i) = t;
    const double loss = reduced_loss_proxy(ens, link);
    if ((s + 1) % record_every == 0) record(s + 1);
    if (loss <= target_sq) {
      if ((s + 1) % record_every != 0) record(s + 1);
      traj.converged = true;
      traj.T_delta = t;
      return traj;
    }
  }
  return traj;  // not converged; reported, not fatal
}

// Scalar stability factor: d ell / dt = (dv/dalpha) ell along the particle path.
inline double ell_ts(const ReducedTrajectory& traj, const LinkFunction& link,
                     const Eigen::VectorXd& weights_ignored, int particle, int s_idx,
                     int t_idx) {
  (void)weights_ignored;
  if (s_idx < 0 || t_idx >= static_cast<int>(traj.alphas.size()) || s_idx > t_idx)
    throw std::out_of_range("ell_ts: record range");
  double ell = 1.0;
  for (int k = s_idx; k < t_idx; ++k) {
    AlphaEnsemble ens;
    ens.alphas = traj.alphas[static_cast<std::size_t>(k)];
    ens.weights = traj.weights;
    ens.d = traj.d;
    ens.refresh_moments(link.degree);
    const double dt = (k + 1 < static_cast<int>(traj.times.size()))
                          ? traj.times[static_cast<std::size_t>(k) + 1] -
                                traj.times[static_cast<std::size_t>(k)]
                          : traj.eta;
    ell *= 1.0 + dt * reduced_dvelocity(ens.alphas(particle), ens, link);
  }
  return ell;
}

struct StarCheck {
  double mass = 0.0;
  bool passes = false;
};

// Dispersion hypothesis: mass of alpha in [iota, 1-iota] is at most iota.
inline StarCheck check_star(const AlphaEnsemble& ens, double iota) {
  if (!(iota > 0 && iota < 0.5)) throw std::invalid_argument("check_star: iota in (0, 0.5)");
  StarCheck c;
  for (int i = 0; i < ens.size(); ++i)
    if (ens.alphas(i) >= iota && ens.alphas(i) <= 1.0 - iota) c.mass += ens.weights(i);
  c.passes = c.mass <= iota;
  return c;
}

}  // namespace poclab
