#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "poclab/diagnostics.hpp"
#include "poclab/dynamics.hpp"

namespace poclab {

struct TeacherAssignment {
  Eigen::VectorXi xi;     // nearest teacher index per particle
  Eigen::VectorXd dist;   // distance to that teacher
  int n_teachers = 0;
};

// Nearest-teacher map at the final state; ties go to the lowest teacher index.
inline TeacherAssignment assign_xi_infinity(const ParticleSystem& system,
                                            const Eigen::MatrixXd& teachers) {
  if (teachers.rows() == 0) throw std::invalid_argument("assign_xi_infinity: no teachers");
  TeacherAssignment asg;
  asg.n_teachers = static_cast<int>(teachers.rows());
  asg.xi.resize(system.width());
  asg.dist.resize(system.width());
  for (int i = 0; i < system.width(); ++i) {
    int best = 0;
    double bd = (system.weights.row(i) - teachers.row(0)).norm();
    for (int t = 1; t < asg.n_teachers; ++t) {
      const double dd = (system.weights.row(i) - teachers.row(t)).norm();
      if (dd < bd) {
        bd = dd;
        best = t;
      }
    }
    asg.xi(i) = best;
    asg.dist(i) = bd;
  }
  return asg;
}

// Limiting interaction block: depends on (i, j) only through the assigned teachers.
inline Eigen::MatrixXd h_infinity_block(int i, int j, const TeacherAssignment& asg,
                                        const Eigen::MatrixXd& teachers,
                                        const LinkFunction& link) {
  return interaction_hessian(teachers.row(asg.xi(i)), teachers.row(asg.xi(j)), link);
}

struct SpectralCluster {
  double lambda = 0.0;
  Eigen::MatrixXd frame;  // (n_teachers * d) x n_v; column v stacks u_a over teachers a
  double eta = 0.0;       // max_i lambda_max(sum_v v(w_i) v(w_i)^T), square-rooted
};

struct SpectralDecomposition {
  Eigen::MatrixXd teachers;
  Eigen::VectorXi class_of;    // per particle
  Eigen::VectorXd occupancy;   // fraction per teacher
  std::vector<SpectralCluster> clusters;
  double balance_constant = 0.0;  // C_b = sum eta^2
  int d = 0;
  bool degenerate_occupancy = false;

  Eigen::VectorXd eigenfunction(int cluster, int v, int particle) const {
    return clusters[static_cast<std::size_t>(cluster)].frame.block(class_of(particle) * d, v, d,
                                                                   1);
  }
};

// Eigen-decomposition of the class-constant operator v -> E_j H_inf(i,j) v(j).
// Constant-per-class eigenfunctions reduce it to the symmetric weighted problem
// sqrt(p_a) sqrt(p_b) H(a,b); eigenvalues are clustered at relative tolerance.
inline SpectralDecomposition spectral_decompose(const TeacherAssignment& asg,
                                                const Eigen::MatrixXd& teachers,
                                                const LinkFunction& link,
                                                double cluster_rel_tol = 1e-8) {
  const int A = static_cast<int>(teachers.rows());
  const int d = static_cast<int>(teachers.cols());
  const int m = static_cast<int>(asg.xi.size());

  SpectralDecomposition bsd;
  bsd.teachers = teachers;
  bsd.class_of = asg.xi;
  bsd.d = d;
  bsd.occupancy = Eigen::VectorXd::Zero(A);
  for (int i = 0; i < m; ++i) bsd.occupancy(asg.xi(i)) += 1.0 / m;
  for (int a = 0; a < A; ++a)
    if (bsd.occupancy(a) == 0.0) bsd.degenerate_occupancy = true;

  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(A * d, A * d);
  for (int a = 0; a < A; ++a)
    for (int b = 0; b < A; ++b) {
      const double w = std::sqrt(bsd.occupancy(a) * bsd.occupancy(b));
      if (w == 0.0) continue;
      M.block(a * d, b * d, d, d) =
          w * interaction_hessian(teachers.row(a), teachers.row(b), link);
    }
  M = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  const Eigen::VectorXd evals = es.eigenvalues();
  const Eigen::MatrixXd evecs = es.eigenvectors();
  const double lmax = evals.cwiseAbs().maxCoeff();
  const double drop = std::max(1e-12 * std::max(lmax, 1.0), 1e-14);

  // group eigenvalues (ascending from Eigen) into clusters, largest first
  std::vector<std::pair<double, std::vector<int>>> groups;
  for (int k = A * d - 1; k >= 0; --k) {
    const double lam = evals(k);
    if (lam <= drop) continue;
    if (!groups.empty() &&
        std::abs(groups.back().first - lam) <= cluster_rel_tol * std::abs(groups.back().first))
      groups.back().second.push_back(k);
    else
      groups.push_back({lam, {k}});
  }

  for (const auto& [lam, idxs] : groups) {
    SpectralCluster cl;
    cl.lambda = lam;
    cl.frame.resize(A * d, static_cast<long>(idxs.size()));
    for (std::size_t v = 0; v < idxs.size(); ++v) {
      Eigen::VectorXd col = evecs.col(idxs[v]);
      // undo the sqrt(p) weighting: u_a = col_a / sqrt(p_a) on occupied classes
      for (int a = 0; a < A; ++a) {
        const double p = bsd.occupancy(a);
        col.segment(a * d, d) = p > 0 ? (col.segment(a * d, d) / std::sqrt(p)).eval()
                                      : Eigen::VectorXd::Zero(d);
      }
      cl.frame.col(static_cast<long>(v)) = col;
    }
    // eta^2: largest frame-operator eigenvalue over occupied classes
    double eta_sq = 0.0;
    for (int a = 0; a < A; ++a) {
      if (bsd.occupancy(a) == 0.0) continue;
      const Eigen::MatrixXd Fa = cl.frame.middleRows(a * d, d);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> fs(Fa * Fa.transpose());
      eta_sq = std::max(eta_sq, fs.eigenvalues().maxCoeff());
    }
    cl.eta = std::sqrt(eta_sq);
    bsd.balance_constant += eta_sq;
    bsd.clusters.push_back(std::move(cl));
  }
  return bsd;
}

// Reconstruction of H_inf(a,b) from the decomposition, for validation.
inline Eigen::MatrixXd bsd_reconstruct_block(const SpectralDecomposition& bsd, int a, int b) {
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(bsd.d, bsd.d);
  for (const auto& cl : bsd.clusters)
    H += cl.lambda * cl.frame.middleRows(a * bsd.d, bsd.d) *
         cl.frame.middleRows(b * bsd.d, bsd.d).transpose();
  return H;
}

struct PotentialValue {
  double phi = 0.0;
  double omega = 0.0;  // E_i ||Delta(i)||
  double psi = 0.0;    // sum_lambda eta sqrt(sum_v phi_v^2)
};

inline PotentialValue potential_value(const Eigen::MatrixXd& delta,
                                      const SpectralDecomposition& bsd) {
  const int m = static_cast<int>(delta.rows());
  if (delta.cols() != bsd.d) throw std::invalid_argument("potential_value: dimension mismatch");
  PotentialValue pv;
  pv.omega = delta.rowwise().norm().mean();
  for (const auto& cl : bsd.clusters) {
    double ssq = 0.0;
    for (long v = 0; v < cl.frame.cols(); ++v) {
      double phi_v = 0.0;
      for (int i = 0; i < m; ++i)
        phi_v += cl.frame.block(bsd.class_of(i) * bsd.d, v, bsd.d, 1).col(0).dot(
            delta.row(i));
      phi_v = std::abs(phi_v / m);
      ssq += phi_v * phi_v;
    }
    pv.psi += cl.eta * std::sqrt(ssq);
  }
  pv.phi = pv.omega + pv.psi;
  return pv;
}

struct PotentialGradient {
  Eigen::MatrixXd grad;  // m x d; pairing <grad, G> = sum_i grad(i).G(i)
  int zero_norm_indices = 0;   // particles given the zero subgradient
  int zero_phi_clusters = 0;   // clusters with all phi_v = 0
};

inline PotentialGradient potential_gradient(const Eigen::MatrixXd& delta,
                                            const SpectralDecomposition& bsd) {
  const int m = static_cast<int>(delta.rows());
  PotentialGradient pg;
  pg.grad = Eigen::MatrixXd::Zero(m, bsd.d);
  for (int i = 0; i < m; ++i) {
    const double n = delta.row(i).norm();
    if (n > 0)
      pg.grad.row(i) = delta.row(i) / (n * m);
    else
      ++pg.zero_norm_indices;
  }
  for (const auto& cl : bsd.clusters) {
    Eigen::VectorXd phis(cl.frame.cols());
    Eigen::VectorXd signs(cl.frame.cols());
    for (long v = 0; v < cl.frame.cols(); ++v) {
      double raw = 0.0;
      for (int i = 0; i < m; ++i)
        raw += cl.frame.block(bsd.class_of(i) * bsd.d, v, bsd.d, 1).col(0).dot(delta.row(i));
      raw /= m;
      phis(v) = std::abs(raw);
      signs(v) = raw >= 0 ? 1.0 : -1.0;
    }
    const double nrm = phis.norm();
    if (nrm == 0.0) {
      ++pg.zero_phi_clusters;
      continue;
    }
    for (int i = 0; i < m; ++i) {
      Eigen::VectorXd g = Eigen::VectorXd::Zero(bsd.d);
      for (long v = 0; v < cl.frame.cols(); ++v)
        g += (phis(v) * signs(v) / nrm) *
             cl.frame.block(bsd.class_of(i) * bsd.d, v, bsd.d, 1).col(0);
      pg.grad.row(i) += (cl.eta / m) * g.transpose();
    }
  }
  return pg;
}

struct L1Check {
  double lhs = 0.0;  // |<grad Phi, G>|
  double rhs = 0.0;  // (1 + C_b) E_i ||G(i)||
  bool pass = false;
};

inline L1Check l1_perturbation_check(const Eigen::MatrixXd& delta, const Eigen::MatrixXd& G,
                                     const SpectralDecomposition& bsd) {
  const PotentialGradient pg = potential_gradient(delta, bsd);
  L1Check c;
  c.lhs = std::abs((pg.grad.array() * G.array()).sum());
  c.rhs = (1.0 + bsd.balance_constant) * G.rowwise().norm().mean();
  c.pass = c.lhs <= c.rhs * (1.0 + 1e-12);
  return c;
}

struct DescentReport {
  double interaction_pairing = 0.0;  // <grad Phi, -H (.) Delta>
  double local_pairing = 0.0;        // <grad Phi, D (.) Delta>
  double phi = 0.0;
  int zero_norm_indices = 0;
  int zero_phi_clusters = 0;
};

// Pairings of the potential subgradient with the two linearized drift pieces at
// the given particle configuration.
inline DescentReport lemma_descent_report(const ParticleSystem& system,
                                          const Eigen::MatrixXd& delta,
                                          const SpectralDecomposition& bsd,
                                          const TargetSpec& target, const LinkFunction& link) {
  const int m = system.width();
  const PotentialGradient pg = potential_gradient(delta, bsd);
  const Eigen::VectorXd b = system.layer_vector();

  DescentReport rep;
  rep.zero_norm_indices = pg.zero_norm_indices;
  rep.zero_phi_clusters = pg.zero_phi_clusters;
  rep.phi = potential_value(delta, bsd).phi;
  for (int i = 0; i < m; ++i) {
    const Eigen::VectorXd wi = system.weights.row(i);
    Eigen::VectorXd hterm = Eigen::VectorXd::Zero(system.dim());
    for (int j = 0; j < m; ++j)
      hterm += (b(j) / m) * interaction_hessian(wi, system.weights.row(j), link) *
               delta.row(j).transpose();
    rep.interaction_pairing += pg.grad.row(i).dot(-hterm);
    const Eigen::VectorXd dterm =
        local_hessian(wi, system, target, link) * delta.row(i).transpose();
    rep.local_pairing += pg.grad.row(i).dot(dterm);
  }
  return rep;
}

}  // namespace poclab
