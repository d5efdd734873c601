#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "poclab/coupling.hpp"
#include "poclab/dynamics.hpp"

namespace poclab {

inline Eigen::MatrixXd tangent_projector(const Eigen::VectorXd& w) {
  return Eigen::MatrixXd::Identity(w.size(), w.size()) - w * w.transpose();
}

// --- local Hessian: derivative of the particle's velocity in its own position,
// right-projected to the tangent space.

// Ambient gradient of nu(w) = g(w) - (w.g)w with g the unprojected drift.
inline Eigen::MatrixXd velocity_gradient(const Eigen::VectorXd& w, const ParticleSystem& system,
                                         const TargetSpec& target, const LinkFunction& link) {
  const auto [ws, as] = target.atoms();
  const PairKernel qd = pair_kernel_dsigma(link);
  const PairKernel qdd = pair_kernel_ddsigma(link);
  const int d = static_cast<int>(w.size());
  const Eigen::VectorXd b = system.layer_vector();

  Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index t = 0; t < ws.rows(); ++t) {
    const double z = w.dot(ws.row(t));
    g += as(t) * qd(z) * ws.row(t).transpose();
    G += as(t) * qdd(z) * ws.row(t).transpose() * ws.row(t);
  }
  for (int j = 0; j < system.width(); ++j) {
    const double z = w.dot(system.weights.row(j));
    const double c = b(j) / system.width();
    g -= c * qd(z) * system.weights.row(j).transpose();
    G -= c * qdd(z) * system.weights.row(j).transpose() * system.weights.row(j);
  }
  return G - w * (g + G * w).transpose() - w.dot(g) * Eigen::MatrixXd::Identity(d, d);
}

inline Eigen::MatrixXd local_hessian(const Eigen::VectorXd& w, const ParticleSystem& system,
                                     const TargetSpec& target, const LinkFunction& link) {
  return velocity_gradient(w, system, target, link) * tangent_projector(w);
}

inline Eigen::MatrixXd local_hessian_fd(const Eigen::VectorXd& w, const ParticleSystem& system,
                                        const TargetSpec& target, const LinkFunction& link,
                                        double h = 1e-5) {
  const int d = static_cast<int>(w.size());
  Eigen::MatrixXd J(d, d);
  for (int b = 0; b < d; ++b) {
    Eigen::VectorXd wp = w, wm = w;
    wp(b) += h;
    wm(b) -= h;
    J.col(b) = (population_velocity(wp, system, target, link) -
                population_velocity(wm, system, target, link)) /
               (2 * h);
  }
  return J * tangent_projector(w);
}

// Top eigenvalue of the symmetric part, restricted to the tangent space.
inline double hessian_top_eigenvalue(const Eigen::MatrixXd& D) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (D + D.transpose()));
  return es.eigenvalues().maxCoeff();
}

// --- interaction Hessian

inline Eigen::MatrixXd interaction_hessian(const Eigen::VectorXd& w, const Eigen::VectorXd& v,
                                           const LinkFunction& link) {
  const PairKernel qd = pair_kernel_dsigma(link);
  const PairKernel qdd = pair_kernel_ddsigma(link);
  const double z = w.dot(v);
  const int d = static_cast<int>(w.size());
  Eigen::MatrixXd core =
      qdd(z) * v * w.transpose() + qd(z) * Eigen::MatrixXd::Identity(d, d);
  return tangent_projector(w) * core * tangent_projector(v);
}

// Monte-Carlo feature-map form E_x phi_x(w) phi_x(v)^T, phi_x(w) = P_w sigma'(w.x) x.
inline Eigen::MatrixXd interaction_hessian_mc(const Eigen::VectorXd& w, const Eigen::VectorXd& v,
                                              const Activation& act, const CovariateSpec& cov,
                                              long n_mc, std::uint64_t seed) {
  CounterRng rng(seed, 31);
  const int d = cov.d;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd x(d);
  for (long i = 0; i < n_mc; ++i) {
    for (int j = 0; j < d; ++j) {
      const std::uint64_t ctr = static_cast<std::uint64_t>(i) * d + j;
      x(j) = cov.kind == CovariateSpec::Kind::GaussianIso ? rng.gaussian(ctr) : rng.sign(ctr);
    }
    const Eigen::VectorXd pw = act.deriv(w.dot(x)) * (x - w.dot(x) * w);
    const Eigen::VectorXd pv = act.deriv(v.dot(x)) * (x - v.dot(x) * v);
    acc += pw * pv.transpose();
  }
  return acc / static_cast<double>(n_mc);
}

inline Eigen::MatrixXd interaction_hessian_fd(const Eigen::VectorXd& w, const Eigen::VectorXd& v,
                                              const LinkFunction& link, double h = 1e-5) {
  const PairKernel qd = pair_kernel_dsigma(link);
  const int d = static_cast<int>(w.size());
  const Eigen::MatrixXd Pw = tangent_projector(w);
  Eigen::MatrixXd J(d, d);
  for (int b = 0; b < d; ++b) {
    Eigen::VectorXd vp = v, vm = v;
    vp(b) += h;
    vm(b) -= h;
    const Eigen::VectorXd fp = qd(w.dot(vp)) * (Pw * vp);
    const Eigen::VectorXd fm = qd(w.dot(vm)) * (Pw * vm);
    J.col(b) = (fp - fm) / (2 * h);
  }
  return J * tangent_projector(v);
}

// md x md block operator [b_i b_j H(w_i, w_j) / m]; PSD up to numerical noise.
inline Eigen::MatrixXd assemble_interaction_operator(const ParticleSystem& system,
                                                     const LinkFunction& link) {
  const int m = system.width(), d = system.dim();
  Eigen::MatrixXd H(m * d, m * d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      H.block(i * d, j * d, d, d) =
          interaction_hessian(system.weights.row(i), system.weights.row(j), link);
  return 0.5 * (H + H.transpose());
}

// --- local stability matrix

// Jacobian of one discrete update w -> (w + eta nu(w)) / ||.|| at the recorded state.
inline Eigen::MatrixXd step_tangent_map(const Eigen::VectorXd& w, const ParticleSystem& system,
                                        const TargetSpec& target, const LinkFunction& link,
                                        double eta) {
  const int d = static_cast<int>(w.size());
  const Eigen::VectorXd u = w + eta * population_velocity(w, system, target, link);
  const double nrm = u.norm();
  const Eigen::VectorXd s = u / nrm;
  const Eigen::MatrixXd A =
      Eigen::MatrixXd::Identity(d, d) + eta * velocity_gradient(w, system, target, link);
  return (Eigen::MatrixXd::Identity(d, d) - s * s.transpose()) * A / nrm;
}

// J_{t,s}: product of per-step tangent maps along the recorded trajectory,
// seeded with the tangent projector at time s. Requires record_every == 1.
inline Eigen::MatrixXd stability_matrix(const Trajectory& traj, const ProblemSpec& problem,
                                        int particle, int s_idx, int t_idx) {
  if (!traj.has_snapshots || s_idx < 0 || t_idx >= static_cast<int>(traj.snapshots.size()) ||
      s_idx > t_idx)
    throw std::out_of_range("stability_matrix: snapshot range");
  const Eigen::VectorXd ws = traj.snapshots[s_idx].weights.row(particle);
  Eigen::MatrixXd J = tangent_projector(ws);
  for (int k = s_idx; k < t_idx; ++k) {
    const Eigen::VectorXd wk = traj.snapshots[k].weights.row(particle);
    J = step_tangent_map(wk, traj.snapshots[k], problem.target, problem.link(), traj.eta) * J;
  }
  return J;
}

// Replays the characteristic of one particle in the recorded environment from a
// shifted start; finite differences of this map are the oracle for J_{t,s}.
inline Eigen::VectorXd replay_particle(const Trajectory& traj, const ProblemSpec& problem,
                                       int particle, int s_idx, int t_idx,
                                       const Eigen::VectorXd& start) {
  Eigen::VectorXd w = start;
  for (int k = s_idx; k < t_idx; ++k) {
    const Eigen::VectorXd v =
        population_velocity(w, traj.snapshots[k], problem.target, problem.link());
    w = w + traj.eta * v;
    w /= w.norm();
  }
  return w;
}

inline double spectral_norm(const Eigen::MatrixXd& A) {
  return A.jacobiSvd().singularValues()(0);
}

struct JMaxResult {
  double value = 0.0;
  int particle = -1, s_idx = -1, t_idx = -1;
};

inline JMaxResult j_max_estimate(const Trajectory& traj, const ProblemSpec& problem,
                                 const std::vector<int>& particles,
                                 const std::vector<std::pair<int, int>>& st_pairs) {
  JMaxResult best;
  for (auto [s, t] : st_pairs)
    for (int p : particles) {
      const double v = spectral_norm(stability_matrix(traj, problem, p, s, t));
      if (v > best.value) best = {v, p, s, t};
    }
  return best;
}

inline double alignment(const Eigen::VectorXd& w, const TargetSpec& target) {
  if (!target.atomic_like()) throw std::invalid_argument("alignment: atomic target required");
  double a = 0.0;
  for (Eigen::Index t = 0; t < target.teachers.rows(); ++t)
    a = std::max(a, std::abs(w.dot(target.teachers.row(t))));
  return a;
}

inline bool in_ball(const Eigen::VectorXd& w, const TargetSpec& target, double tau) {
  if (!target.atomic_like()) throw std::invalid_argument("in_ball: atomic target required");
  if (!(tau > 0)) throw std::invalid_argument("in_ball: tau > 0 required");
  for (Eigen::Index t = 0; t < target.teachers.rows(); ++t)
    if ((w - target.teachers.row(t).transpose()).norm() <= tau) return true;
  return false;
}

// sup over sampled (s,t,w',v) of E_w ||J_{t,s}(w) H(w_s, w') v||, excluding
// particles inside B_tau at time t. A sampled lower bound of the assumption's sup.
inline double j_avg_estimate(const Trajectory& traj, const ProblemSpec& problem, double tau,
                             int n_st = 32, int n_wv = 16, std::uint64_t seed = 97) {
  if (!(tau > 0)) throw std::invalid_argument("j_avg_estimate: tau > 0 required");
  const int T = static_cast<int>(traj.snapshots.size());
  const int m = traj.snapshots.front().width();
  const int d = traj.snapshots.front().dim();
  SequentialRng rng(seed, 5);
  double sup = 0.0;
  for (int a = 0; a < n_st; ++a) {
    const int s = static_cast<int>(rng.below(T));
    const int t = s + static_cast<int>(rng.below(T - s));
    for (int b = 0; b < n_wv; ++b) {
      Eigen::VectorXd wp(d), v(d);
      for (int j = 0; j < d; ++j) wp(j) = rng.gaussian();
      wp /= wp.norm();
      for (int j = 0; j < d; ++j) v(j) = rng.gaussian();
      v /= v.norm();
      double acc = 0.0;
      int counted = 0;
      for (int i = 0; i < m; ++i) {
        const Eigen::VectorXd wt = traj.snapshots[t].weights.row(i);
        if (in_ball(wt, problem.target, tau)) continue;
        const Eigen::MatrixXd J = stability_matrix(traj, problem, i, s, t);
        const Eigen::VectorXd ws = traj.snapshots[s].weights.row(i);
        acc += (J * interaction_hessian(ws, wp, problem.link()) * v).norm();
        ++counted;
      }
      acc /= m;
      if (acc > sup) sup = acc;
      (void)counted;
    }
  }
  return sup;
}

// --- error-dynamics residual

// Linearized coupling drift for neuron i: D(i) Delta(i) - (1/m) sum_j b_j H(i,j) Delta(j).
inline Eigen::MatrixXd linearized_coupling_drift(const ParticleSystem& base,
                                                 const Eigen::MatrixXd& delta,
                                                 const TargetSpec& target,
                                                 const LinkFunction& link) {
  const int m = base.width(), d = base.dim();
  const Eigen::VectorXd b = base.layer_vector();
  Eigen::MatrixXd out(m, d);
  for (int i = 0; i < m; ++i) {
    const Eigen::VectorXd wi = base.weights.row(i);
    Eigen::VectorXd r = local_hessian(wi, base, target, link) * delta.row(i).transpose();
    for (int j = 0; j < m; ++j)
      r -= (b(j) / m) * interaction_hessian(wi, base.weights.row(j), link) *
           delta.row(j).transpose();
    out.row(i) = r;
  }
  return out;
}

// ||nu(shifted by c*Delta) - nu(base) - c*linearized drift|| per neuron; the
// second-order remainder of the error dynamics, scaling as c^2.
inline Eigen::VectorXd coupling_nonlinearity(const ParticleSystem& base,
                                             const Eigen::MatrixXd& delta,
                                             const TargetSpec& target, const LinkFunction& link,
                                             double c) {
  ParticleSystem shifted = base;
  shifted.weights += c * delta;
  shifted.renormalize();
  const Eigen::MatrixXd drift = linearized_coupling_drift(base, delta, target, link);
  const int m = base.width();
  Eigen::VectorXd norms(m);
  for (int i = 0; i < m; ++i) {
    const Eigen::VectorXd vi =
        population_velocity(shifted.weights.row(i), shifted, target, link);
    const Eigen::VectorXd vb = population_velocity(base.weights.row(i), base, target, link);
    norms(i) = (vi - vb - c * drift.row(i).transpose()).norm();
  }
  return norms;
}

struct DuhamelReport {
  Eigen::VectorXd residual_norms;  // per neuron
  double mean_residual = 0.0;
  double mean_delta = 0.0;
  double mean_delta_sq = 0.0;
  double quad_bound_scale = 0.0;  // fitted c with residual <= c * (||D(i)||^2 + E||D||^2)
};

// Finite-difference dDelta/dt between neighbouring records minus the linearized
// drift evaluated on the proxy trajectory.
inline DuhamelReport duhamel_residual(const CouplingRecord& rec, std::size_t width_idx,
                                      const ProblemSpec& problem, std::size_t k) {
  if (!rec.has_snapshots) throw std::invalid_argument("duhamel_residual: snapshots required");
  if (k == 0 || k + 1 >= rec.times.size())
    throw std::out_of_range("duhamel_residual: interior record index required");
  const WidthSeries& ws = rec.widths.at(width_idx);
  const int m = ws.width;
  const double dt = rec.times[k + 1] - rec.times[k - 1];

  auto delta_at = [&](std::size_t r) {
    return Eigen::MatrixXd(ws.snapshots[r].weights -
                           rec.proxy_snapshots[r].weights.topRows(m));
  };
  const Eigen::MatrixXd ddelta = (delta_at(k + 1) - delta_at(k - 1)) / dt;
  const Eigen::MatrixXd delta = delta_at(k);

  ParticleSystem base = rec.proxy_snapshots[k].prefix(m);
  const Eigen::MatrixXd drift =
      linearized_coupling_drift(base, delta, problem.target, problem.link());

  DuhamelReport rep;
  rep.residual_norms.resize(m);
  double quad = 0.0;
  const double mean_dsq = delta.rowwise().norm().array().square().mean();
  for (int i = 0; i < m; ++i) {
    rep.residual_norms(i) = (ddelta.row(i) - drift.row(i)).norm();
    const double di = delta.row(i).norm();
    quad = std::max(quad, rep.residual_norms(i) / std::max(1e-300, di * di + mean_dsq));
  }
  rep.mean_residual = rep.residual_norms.mean();
  rep.mean_delta = delta.rowwise().norm().mean();
  rep.mean_delta_sq = mean_dsq;
  rep.quad_bound_scale = quad;
  return rep;
}

}  // namespace poclab
