#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "poclab/dynamics.hpp"

namespace poclab {

// Mean of b_i b'_j q(a_i . a'_j) over all cross pairs, row-blocked to bound memory.
inline double pair_mean(const ParticleSystem& A, const ParticleSystem& B, const PairKernel& q) {
  const Eigen::VectorXd ba = A.layer_vector(), bb = B.layer_vector();
  const int block = 1024;
  double s = 0.0;
  for (int lo = 0; lo < A.width(); lo += block) {
    const int hi = std::min(A.width(), lo + block);
    Eigen::MatrixXd Z = (A.weights.middleRows(lo, hi - lo) * B.weights.transpose())
                            .unaryExpr([&](double z) { return q(z); });
    s += ba.segment(lo, hi - lo).dot(Z * bb);
  }
  return s / (static_cast<double>(A.width()) * B.width());
}

// E_x (f_A(x) - f_B(x))^2, closed form for Gaussian data + polynomial link,
// Monte-Carlo otherwise.
inline double function_error(const ParticleSystem& A, const ParticleSystem& B,
                             const CovariateSpec& cov, const Activation& act, long n_eval = 0,
                             std::uint64_t seed = 0) {
  if (A.dim() != B.dim()) throw std::invalid_argument("function_error: dimension mismatch");
  if (act.closed_form() && cov.kind == CovariateSpec::Kind::GaussianIso) {
    const PairKernel q = pair_kernel_sigma(act.link);
    return pair_mean(A, A, q) - 2.0 * pair_mean(A, B, q) + pair_mean(B, B, q);
  }
  if (n_eval < 1) throw std::invalid_argument("function_error: MC mode needs n_eval");
  const Eigen::MatrixXd xs = sample_covariates(cov, static_cast<int>(n_eval), seed, 21);
  Eigen::VectorXd diff = predict(A, xs, act) - predict(B, xs, act);
  return diff.squaredNorm() / static_cast<double>(n_eval);
}

struct DeltaHistogram {
  double time = 0.0;
  std::vector<double> edges;   // 65 edges, log-spaced in [1e-8, 2]
  std::vector<long> counts;    // 64 bins; underflow folded into bin 0
};

inline DeltaHistogram delta_histogram(const Eigen::VectorXd& norms, double time) {
  DeltaHistogram h;
  h.time = time;
  const int bins = 64;
  const double lo = 1e-8, hi = 2.0;
  h.edges.resize(bins + 1);
  for (int b = 0; b <= bins; ++b)
    h.edges[b] = lo * std::pow(hi / lo, static_cast<double>(b) / bins);
  h.counts.assign(bins, 0);
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    const double v = std::max(norms(i), lo);
    int b = static_cast<int>(std::floor(std::log(v / lo) / std::log(hi / lo) * bins));
    b = std::min(std::max(b, 0), bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

struct WidthSeries {
  int width = 0;
  std::vector<double> mean_delta;
  std::vector<double> mean_delta_sq;
  std::vector<double> func_error;          // vs the width-M proxy
  std::vector<double> risk;                // vs the target
  std::vector<double> scaled_func_error;   // m * func_error
  std::vector<double> scaled_param_error;  // m * (mean_delta)^2
  std::vector<DeltaHistogram> histograms;
  std::vector<ParticleSystem> snapshots;
};

struct CouplingRecord {
  std::vector<int> steps;
  std::vector<double> times;
  int proxy_width = 0;
  std::vector<WidthSeries> widths;
  std::vector<ParticleSystem> proxy_snapshots;
  bool has_snapshots = false;
};

// Prefix-initialized networks of every width evolve in lockstep on identical
// batches; the width-M network stands in for the mean-field limit.
inline CouplingRecord run_coupled(const ProblemSpec& problem, const std::vector<int>& widths,
                                  int proxy_width, const FlowSchedule& schedule,
                                  const RunSeeds& seeds, int histogram_checkpoints = 8) {
  for (int m : widths)
    if (m >= proxy_width) throw std::invalid_argument("run_coupled: width must be < proxy width");

  ParticleSystem proxy = init_particles(problem.cov.d, proxy_width, seeds.init,
                                        problem.second_layer);
  std::vector<ParticleSystem> systems;
  for (int m : widths) systems.push_back(proxy.prefix(m));

  const bool empirical = schedule.mode == FlowSchedule::Mode::Empirical;
  Dataset dataset;
  if (empirical) {
    if (schedule.dataset_size < 1)
      throw std::invalid_argument("run_coupled: empirical mode needs dataset_size");
    dataset = sample_dataset(problem.cov, problem.target, schedule.dataset_size, seeds.data);
  }
  BatchSchedule batches(empirical ? dataset.size() : 1, empirical ? schedule.batch_size : 1,
                        seeds.batch);

  CouplingRecord rec;
  rec.proxy_width = proxy_width;
  rec.has_snapshots = schedule.store_snapshots;
  rec.widths.resize(widths.size());
  for (std::size_t k = 0; k < widths.size(); ++k) rec.widths[k].width = widths[k];

  const int n_records = schedule.n_steps / schedule.record_every + 1;
  const int hist_stride = std::max(1, n_records / histogram_checkpoints);

  const bool closed_fe =
      problem.act.closed_form() && problem.cov.kind == CovariateSpec::Kind::GaussianIso;
  const PairKernel q_fe = closed_fe ? pair_kernel_sigma(problem.act.link) : PairKernel{};

  int record_index = 0;
  auto record = [&](int s) {
    rec.steps.push_back(s);
    const double t = s * schedule.eta;
    rec.times.push_back(t);
    if (schedule.store_snapshots) rec.proxy_snapshots.push_back(proxy);
    // the proxy self-term is shared by every width at this record
    const double proxy_self = closed_fe ? pair_mean(proxy, proxy, q_fe) : 0.0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      WidthSeries& ws = rec.widths[k];
      const ParticleSystem& sys = systems[k];
      const int m = widths[k];
      Eigen::VectorXd norms(m);
      for (int i = 0; i < m; ++i)
        norms(i) = (sys.weights.row(i) - proxy.weights.row(i)).norm();
      const double md = norms.mean();
      ws.mean_delta.push_back(md);
      ws.mean_delta_sq.push_back(norms.squaredNorm() / m);
      const double fe =
          closed_fe ? pair_mean(sys, sys, q_fe) - 2.0 * pair_mean(sys, proxy, q_fe) + proxy_self
                    : function_error(sys, proxy, problem.cov, problem.act, 1 << 14,
                                     seeds.data ^ 0x77);
      ws.func_error.push_back(fe);
      ws.scaled_func_error.push_back(m * fe);
      ws.scaled_param_error.push_back(m * md * md);
      if (problem.act.closed_form() && problem.target.atomic_like())
        ws.risk.push_back(loss_population(sys, problem.target, problem.link()));
      else
        ws.risk.push_back(loss_empirical(sys, dataset.xs, dataset.ys, problem.act));
      if (record_index % hist_stride == 0) ws.histograms.push_back(delta_histogram(norms, t));
      if (schedule.store_snapshots) ws.snapshots.push_back(sys);
    }
    ++record_index;
  };

  record(0);
  for (int s = 0; s < schedule.n_steps; ++s) {
    Eigen::MatrixXd xb;
    Eigen::VectorXd yb;
    if (empirical) {
      const auto idx = batches.batch_indices(s);
      xb = gather_rows(dataset.xs, idx);
      yb = gather(dataset.ys, idx);
    }
    auto advance = [&](ParticleSystem& sys) {
      Eigen::MatrixXd vel = empirical
                                ? empirical_velocities(sys, xb, yb, problem.act)
                                : population_velocities(sys, problem.target, problem.link());
      sys = step(sys, vel, schedule.eta);
      if (!sys.weights.allFinite()) throw NumericalAbort(sys, s + 1);
    };
    for (auto& sys : systems) advance(sys);
    advance(proxy);
    if ((s + 1) % schedule.record_every == 0 || s + 1 == schedule.n_steps) record(s + 1);
  }
  return rec;
}

struct CouplingCheck {
  double func_error = 0.0;
  double bound = 0.0;  // (E_i ||Delta||)^2 + log(m)/m
  double ratio = 0.0;
  bool flagged = false;
};

inline CouplingCheck coupling_inequality_check(const WidthSeries& ws, std::size_t record_idx,
                                               double flag_constant = 100.0) {
  if (record_idx >= ws.func_error.size())
    throw std::out_of_range("coupling_inequality_check: record index");
  CouplingCheck chk;
  chk.func_error = ws.func_error[record_idx];
  const double md = ws.mean_delta[record_idx];
  chk.bound = md * md + std::log(static_cast<double>(ws.width)) / ws.width;
  chk.ratio = chk.func_error / chk.bound;
  chk.flagged = chk.ratio > flag_constant;
  return chk;
}

}  // namespace poclab
