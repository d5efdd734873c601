#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "poclab/data.hpp"
#include "poclab/kernels.hpp"
#include "poclab/rng.hpp"

namespace poclab {

struct McEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
};

enum class PairDeriv { None, First };

// Monte-Carlo estimate of E sigma(w.x) sigma(v.x) (or the sigma' variant).
// Even links on symmetric covariates use antithetic pairs (x, -x).
inline McEstimate mc_pair_expectation(const Activation& act, const CovariateSpec& cov,
                                      const Eigen::VectorXd& w, const Eigen::VectorXd& v,
                                      long n_mc, std::uint64_t seed,
                                      PairDeriv deriv = PairDeriv::None) {
  if (n_mc < 1) throw std::invalid_argument("mc_pair_expectation: n_mc >= 1 required");
  if (std::abs(w.norm() - 1.0) > 1e-9 || std::abs(v.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("mc_pair_expectation: w, v must be unit vectors");
  if (w.size() != cov.d || v.size() != cov.d)
    throw std::invalid_argument("mc_pair_expectation: dimension mismatch");

  const bool antithetic = act.kind == Activation::Kind::Hermite && act.link.parity_even;
  CounterRng rng(seed, /*stream=*/7);
  const int d = cov.d;
  Eigen::VectorXd x(d);

  auto term = [&](double zw, double zv) {
    return deriv == PairDeriv::None ? act.value(zw) * act.value(zv)
                                    : act.deriv(zw) * act.deriv(zv);
  };

  double sum = 0.0, sumsq = 0.0;
  const long n_draws = antithetic ? (n_mc + 1) / 2 : n_mc;
  for (long i = 0; i < n_draws; ++i) {
    for (int j = 0; j < d; ++j) {
      const std::uint64_t ctr = static_cast<std::uint64_t>(i) * d + j;
      x(j) = cov.kind == CovariateSpec::Kind::GaussianIso ? rng.gaussian(ctr) : rng.sign(ctr);
    }
    const double zw = w.dot(x), zv = v.dot(x);
    double t = term(zw, zv);
    if (antithetic) t = 0.5 * (t + term(-zw, -zv));
    sum += t;
    sumsq += t * t;
  }
  McEstimate est;
  est.mean = sum / n_draws;
  const double var = std::max(0.0, sumsq / n_draws - est.mean * est.mean);
  est.stderr_ = n_draws > 1 ? std::sqrt(var / (n_draws - 1)) : std::sqrt(var);
  return est;
}

// Empirical regularity constant for a link: 11 * max_j (E|sigma^(j)(Z)|^5)^{1/5}
// over derivative orders j <= 2, Z standard normal. Reported, never assumed.
inline double creg_estimate(const LinkFunction& link, long n_mc = 100000,
                            std::uint64_t seed = 1234) {
  CounterRng rng(seed, /*stream=*/8);
  double best = 0.0;
  for (int order = 0; order <= 2; ++order) {
    // d^order sigma in the Hermite basis: He_k -> k He_{k-1} per order.
    std::vector<double> c(link.coeffs);
    for (int r = 0; r < order; ++r) {
      std::vector<double> nc(c.size() > 1 ? c.size() - 1 : 1, 0.0);
      for (std::size_t k = 1; k < c.size(); ++k) nc[k - 1] = c[k] * static_cast<double>(k);
      c = std::move(nc);
    }
    double s = 0.0;
    for (long i = 0; i < n_mc; ++i) {
      const double z = rng.gaussian(static_cast<std::uint64_t>(order) * n_mc + i);
      double val = 0.0;
      for (std::size_t k = 0; k < c.size(); ++k)
        if (c[k] != 0.0) val += c[k] * hermite_eval(static_cast<int>(k), z);
      s += std::pow(std::abs(val), 5.0);
    }
    best = std::max(best, std::pow(s / n_mc, 0.2));
  }
  return 11.0 * best;
}

}  // namespace poclab
