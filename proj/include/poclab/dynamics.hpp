#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "poclab/data.hpp"
#include "poclab/io.hpp"
#include "poclab/kernels.hpp"
#include "poclab/mc.hpp"
#include "poclab/particles.hpp"
#include "poclab/rng.hpp"

namespace poclab {

struct ProblemSpec {
  CovariateSpec cov;
  TargetSpec target;
  Activation act;
  SecondLayerSpec second_layer;

  const LinkFunction& link() const {
    if (!act.closed_form()) throw std::invalid_argument("ProblemSpec: no closed-form link");
    return act.link;
  }
};

struct FlowSchedule {
  enum class Mode { Population, Empirical };
  double eta = 0.01;
  int n_steps = 100;
  int record_every = 10;
  int batch_size = 0;  // 0 => full batch
  Mode mode = Mode::Population;
  bool store_snapshots = true;
  int dataset_size = 0;  // Empirical mode; 0 invalid there
};

// --- velocities

// nu(w, rho) for one particle under the closed-form population velocity.
inline Eigen::VectorXd population_velocity(const Eigen::VectorXd& w, const ParticleSystem& system,
                                           const TargetSpec& target, const LinkFunction& link) {
  const auto [ws, as] = target.atoms();
  const PairKernel qd = pair_kernel_dsigma(link);
  const int d = static_cast<int>(w.size());
  Eigen::VectorXd raw = Eigen::VectorXd::Zero(d);
  for (Eigen::Index t = 0; t < ws.rows(); ++t)
    raw += as(t) * qd(w.dot(ws.row(t))) * ws.row(t).transpose();
  const Eigen::VectorXd b = system.layer_vector();
  for (int j = 0; j < system.width(); ++j)
    raw -= (b(j) / system.width()) * qd(w.dot(system.weights.row(j))) *
           system.weights.row(j).transpose();
  return raw - w.dot(raw) * w;
}

// All-particle population velocities via pairwise Gram products.
inline Eigen::MatrixXd population_velocities(const ParticleSystem& system,
                                             const TargetSpec& target, const LinkFunction& link) {
  const auto [ws, as] = target.atoms();
  const PairKernel qd = pair_kernel_dsigma(link);
  const Eigen::MatrixXd& W = system.weights;
  const int m = system.width();
  const Eigen::VectorXd b = system.layer_vector();

  Eigen::MatrixXd gram_t = (W * ws.transpose()).unaryExpr([&](double z) { return qd(z); });
  Eigen::MatrixXd raw = gram_t * (as.asDiagonal() * ws);

  Eigen::MatrixXd gram_s = (W * W.transpose()).unaryExpr([&](double z) { return qd(z); });
  raw.noalias() -= gram_s * (b.asDiagonal() * W) / m;

  raw.array().colwise() *= b.array();
  const Eigen::VectorXd rowdot = (raw.array() * W.array()).rowwise().sum();
  raw.noalias() -= rowdot.asDiagonal() * W;
  return raw;
}

// Mini-batch network predictions: f(x) = (1/m) sum_j b_j sigma(w_j . x).
inline Eigen::VectorXd predict(const ParticleSystem& system, const Eigen::MatrixXd& xs,
                               const Activation& act) {
  Eigen::MatrixXd G = xs * system.weights.transpose();
  G = G.unaryExpr([&](double z) { return act.value(z); });
  return G * system.layer_vector() / system.width();
}

// Tangent-projected empirical gradient step direction for every particle.
inline Eigen::MatrixXd empirical_velocities(const ParticleSystem& system, const Eigen::MatrixXd& xs,
                                            const Eigen::VectorXd& ys, const Activation& act) {
  if (xs.rows() == 0) throw std::invalid_argument("empirical_velocities: empty batch");
  const Eigen::MatrixXd& W = system.weights;
  const long n = xs.rows();
  const Eigen::VectorXd b = system.layer_vector();

  const long m = system.width();
  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(m, xs.cols());
  // polynomial activations evaluate as vectorized Horner passes over the chunk
  std::vector<double> cv, cd;
  if (act.kind == Activation::Kind::Hermite) {
    cv = act.link.sigma_monomial();
    for (std::size_t j = 1; j < cv.size(); ++j) cd.push_back(j * cv[j]);
    if (cd.empty()) cd.push_back(0.0);
  }
  Eigen::ArrayXXd horner_buf;
  auto horner = [&](const std::vector<double>& c, const Eigen::MatrixXd& z) -> Eigen::ArrayXXd& {
    horner_buf.setConstant(z.rows(), z.cols(), c.back());
    for (std::size_t k = c.size() - 1; k-- > 0;) horner_buf = horner_buf * z.array() + c[k];
    return horner_buf;
  };
  // chunk the sample axis; a full n x m intermediate thrashes memory at large width
  const long nb = std::max<long>(64, (1L << 22) / m);
  Eigen::MatrixXd G;
  for (long s0 = 0; s0 < n; s0 += nb) {
    const long nc = std::min(nb, n - s0);
    const auto xc = xs.middleRows(s0, nc);
    G.noalias() = xc * W.transpose();  // nc x m
    Eigen::VectorXd resid = ys.segment(s0, nc);
    if (act.kind == Activation::Kind::Hermite) {
      resid.noalias() -= horner(cv, G).matrix() * b / static_cast<double>(m);
      G = horner(cd, G).matrix();
    } else {
      resid.noalias() -=
          G.unaryExpr([&](double z) { return act.value(z); }) * b / static_cast<double>(m);
      G = G.unaryExpr([&](double z) { return act.deriv(z); });
    }
    G.array().colwise() *= resid.array();
    raw.noalias() += G.transpose() * xc;
  }
  raw /= static_cast<double>(n);
  raw.array().colwise() *= b.array();
  const Eigen::VectorXd rowdot = (raw.array() * W.array()).rowwise().sum();
  raw.noalias() -= rowdot.asDiagonal() * W;
  return raw;
}

inline Eigen::VectorXd empirical_velocity(int particle, const ParticleSystem& system,
                                          const Eigen::MatrixXd& xs, const Eigen::VectorXd& ys,
                                          const Activation& act) {
  if (xs.rows() == 0) throw std::invalid_argument("empirical_velocity: empty batch");
  const Eigen::VectorXd w = system.weights.row(particle);
  Eigen::VectorXd pred = predict(system, xs, act);
  Eigen::VectorXd raw = Eigen::VectorXd::Zero(w.size());
  for (long t = 0; t < xs.rows(); ++t) {
    const double z = w.dot(xs.row(t));
    raw += (ys(t) - pred(t)) * act.deriv(z) * xs.row(t).transpose();
  }
  raw *= system.layer_vector()(particle) / static_cast<double>(xs.rows());
  return raw - w.dot(raw) * w;
}

// --- stepping

inline ParticleSystem step(const ParticleSystem& system, const Eigen::MatrixXd& velocities,
                           double eta) {
  ParticleSystem next = system;
  next.weights += eta * velocities;
  next.renormalize();
  return next;
}

// --- losses

// Population squared loss from pair kernels; exact O(m^2) up to the threshold,
// unbiased partner subsampling above it.
inline double loss_population(const ParticleSystem& system, const TargetSpec& target,
                              const LinkFunction& link, int exact_threshold = 4096,
                              int subsample = 4096) {
  const auto [ws, as] = target.atoms();
  const PairKernel q = pair_kernel_sigma(link);
  const Eigen::MatrixXd& W = system.weights;
  const int m = system.width();
  const Eigen::VectorXd b = system.layer_vector();

  double self_term;
  if (m <= exact_threshold) {
    Eigen::MatrixXd Z = (W * W.transpose()).unaryExpr([&](double z) { return q(z); });
    self_term = b.dot(Z * b) / (static_cast<double>(m) * m);
  } else {
    SequentialRng rng(0xb10c5ULL, 11);
    double s = 0.0;
    for (int i = 0; i < m; ++i) {
      double si = 0.0;
      for (int k = 0; k < subsample; ++k) {
        const int j = static_cast<int>(rng.below(m));
        si += b(j) * q(W.row(i).dot(W.row(j)));
      }
      s += b(i) * si / subsample;
    }
    self_term = s / m;
  }

  Eigen::MatrixXd Zt = (W * ws.transpose()).unaryExpr([&](double z) { return q(z); });
  const double cross_term = (b.asDiagonal() * Zt * as).sum() / m;

  double target_term = 0.0;
  for (Eigen::Index s = 0; s < ws.rows(); ++s)
    for (Eigen::Index t = 0; t < ws.rows(); ++t)
      target_term += as(s) * as(t) * q(ws.row(s).dot(ws.row(t)));

  return self_term - 2.0 * cross_term + target_term;
}

inline double loss_empirical(const ParticleSystem& system, const Eigen::MatrixXd& xs,
                             const Eigen::VectorXd& ys, const Activation& act) {
  return (predict(system, xs, act) - ys).squaredNorm() / static_cast<double>(xs.rows());
}

inline double mean_alignment(const ParticleSystem& system, const TargetSpec& target) {
  if (!target.atomic_like()) return 0.0;
  const auto [ws, as] = target.atoms();
  double s = 0.0;
  for (int i = 0; i < system.width(); ++i) {
    double a = 0.0;
    for (Eigen::Index t = 0; t < ws.rows(); ++t)
      a = std::max(a, std::abs(system.weights.row(i).dot(ws.row(t))));
    s += a;
  }
  return s / system.width();
}

// --- batch schedule: fixed shuffle order per epoch derived from the seed, so
// coupled runs of different widths consume identical batches.

class BatchSchedule {
 public:
  BatchSchedule(int n, int batch_size, std::uint64_t seed)
      : n_(n), batch_(batch_size > 0 ? batch_size : n), seed_(seed) {
    if (n < 1) throw std::invalid_argument("BatchSchedule: n >= 1");
  }

  // Row indices for the given global step.
  std::vector<int> batch_indices(long step) {
    const long per_epoch = (n_ + batch_ - 1) / batch_;
    const long epoch = step / per_epoch;
    const long slot = step % per_epoch;
    if (epoch != cached_epoch_) {
      perm_.resize(n_);
      std::iota(perm_.begin(), perm_.end(), 0);
      SequentialRng rng(seed_ ^ 0x5b7a3cULL, static_cast<std::uint64_t>(epoch) + 17);
      for (int i = n_ - 1; i > 0; --i)
        std::swap(perm_[i], perm_[static_cast<std::size_t>(rng.below(i + 1))]);
      cached_epoch_ = epoch;
    }
    const long lo = slot * batch_, hi = std::min<long>(n_, lo + batch_);
    return std::vector<int>(perm_.begin() + lo, perm_.begin() + hi);
  }

 private:
  int n_, batch_;
  std::uint64_t seed_;
  long cached_epoch_ = -1;
  std::vector<int> perm_;
};

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& xs, const std::vector<int>& idx) {
  Eigen::MatrixXd out(static_cast<long>(idx.size()), xs.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<long>(k)) = xs.row(idx[k]);
  return out;
}

inline Eigen::VectorXd gather(const Eigen::VectorXd& ys, const std::vector<int>& idx) {
  Eigen::VectorXd out(static_cast<long>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<long>(k)) = ys(idx[k]);
  return out;
}

// --- trajectories

struct Trajectory {
  std::vector<int> steps;
  std::vector<double> times;
  std::vector<double> losses;       // population loss when closed form, else empirical
  std::vector<double> losses_emp;   // full-dataset empirical loss (empirical mode)
  std::vector<double> mean_alignments;
  std::vector<ParticleSystem> snapshots;  // aligned with steps when stored
  double eta = 0.0;
  bool has_snapshots = false;
};

struct NumericalAbort : std::runtime_error {
  ParticleSystem dump;
  long at_step;
  NumericalAbort(ParticleSystem sys, long step_idx)
      : std::runtime_error("non-finite weights at step " + std::to_string(step_idx)),
        dump(std::move(sys)),
        at_step(step_idx) {}
};

struct RunSeeds {
  std::uint64_t init = 1;
  std::uint64_t data = 2;
  std::uint64_t batch = 3;
};

inline Trajectory run_flow(const ProblemSpec& problem, const FlowSchedule& schedule,
                           const RunSeeds& seeds, ParticleSystem system,
                           const Dataset* dataset = nullptr) {
  Trajectory traj;
  traj.eta = schedule.eta;
  traj.has_snapshots = schedule.store_snapshots;

  const bool empirical = schedule.mode == FlowSchedule::Mode::Empirical;
  Dataset local;
  if (empirical && dataset == nullptr) {
    if (schedule.dataset_size < 1)
      throw std::invalid_argument("run_flow: empirical mode needs dataset_size");
    local = sample_dataset(problem.cov, problem.target, schedule.dataset_size, seeds.data);
    dataset = &local;
  }
  BatchSchedule batches(empirical ? dataset->size() : 1,
                        empirical ? schedule.batch_size : 1, seeds.batch);

  auto record = [&](int s) {
    traj.steps.push_back(s);
    traj.times.push_back(s * schedule.eta);
    if (problem.act.closed_form() && problem.target.kind != TargetSpec::Kind::Boolean)
      traj.losses.push_back(loss_population(system, problem.target, problem.link()));
    else
      traj.losses.push_back(loss_empirical(system, dataset->xs, dataset->ys, problem.act));
    traj.losses_emp.push_back(
        empirical ? loss_empirical(system, dataset->xs, dataset->ys, problem.act)
                  : traj.losses.back());
    traj.mean_alignments.push_back(mean_alignment(system, problem.target));
    if (schedule.store_snapshots) traj.snapshots.push_back(system);
  };

  record(0);
  for (int s = 0; s < schedule.n_steps; ++s) {
    Eigen::MatrixXd vel;
    if (empirical) {
      const auto idx = batches.batch_indices(s);
      vel = empirical_velocities(system, gather_rows(dataset->xs, idx), gather(dataset->ys, idx),
                                 problem.act);
    } else {
      vel = population_velocities(system, problem.target, problem.link());
    }
    system = step(system, vel, schedule.eta);
    if (!system.weights.allFinite()) throw NumericalAbort(system, s + 1);
    if ((s + 1) % schedule.record_every == 0 || s + 1 == schedule.n_steps) record(s + 1);
  }
  return traj;
}

inline Trajectory run_flow(const ProblemSpec& problem, const FlowSchedule& schedule,
                           const RunSeeds& seeds, int width) {
  ParticleSystem sys = init_particles(problem.cov.d, width, seeds.init, problem.second_layer);
  return run_flow(problem, schedule, seeds, std::move(sys));
}

}  // namespace poclab
