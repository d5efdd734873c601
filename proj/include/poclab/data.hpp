#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "poclab/kernels.hpp"
#include "poclab/particles.hpp"
#include "poclab/rng.hpp"

namespace poclab {

struct CovariateSpec {
  enum class Kind { GaussianIso, RademacherCube };
  Kind kind = Kind::GaussianIso;
  int d = 2;

  static CovariateSpec gaussian(int d) { return make(Kind::GaussianIso, d); }
  static CovariateSpec rademacher(int d) { return make(Kind::RademacherCube, d); }

 private:
  static CovariateSpec make(Kind k, int d) {
    if (d < 2) throw std::invalid_argument("CovariateSpec: d >= 2 required");
    CovariateSpec c;
    c.kind = k;
    c.d = d;
    return c;
  }
};

struct BooleanFn {
  enum class Kind { Xor, Staircase };
  Kind kind = Kind::Xor;
  std::vector<int> index_set;          // k distinct coordinates
  std::vector<double> mixing = {0.25, 0.75};  // staircase: linear + parity weight
};

// Target function zoo: atomic teacher mixtures (single-index as one atom),
// a circle manifold of teachers, and Boolean functions on the hypercube.
struct TargetSpec {
  enum class Kind { Atomic, ManifoldCircle, Boolean };

  Kind kind = Kind::Atomic;
  Eigen::MatrixXd teachers;        // T x d, unit rows (Atomic); 2 x d basis (Circle)
  Eigen::VectorXd teacher_weights; // sums to 1 for averaged targets
  LinkFunction link;               // Atomic / Circle
  BooleanFn boolean;
  double noise_std = 0.0;
  int circle_quadrature = 256;

  static TargetSpec single_index(LinkFunction l, Eigen::VectorXd wstar) {
    TargetSpec t;
    t.kind = Kind::Atomic;
    t.link = std::move(l);
    const double n = wstar.norm();
    if (!(n > 0)) throw std::invalid_argument("TargetSpec: zero teacher vector");
    t.teachers = (wstar / n).transpose();
    t.teacher_weights = Eigen::VectorXd::Ones(1);
    return t;
  }

  static TargetSpec atomic(LinkFunction l, Eigen::MatrixXd ws, Eigen::VectorXd as) {
    if (ws.rows() != as.size()) throw std::invalid_argument("TargetSpec: teacher/weight mismatch");
    TargetSpec t;
    t.kind = Kind::Atomic;
    t.link = std::move(l);
    for (Eigen::Index i = 0; i < ws.rows(); ++i) {
      const double n = ws.row(i).norm();
      if (!(n > 0)) throw std::invalid_argument("TargetSpec: zero teacher vector");
      ws.row(i) /= n;
    }
    t.teachers = std::move(ws);
    t.teacher_weights = std::move(as);
    return t;
  }

  static TargetSpec circle(LinkFunction l, Eigen::MatrixXd basis2xd, int quad = 256) {
    if (basis2xd.rows() != 2) throw std::invalid_argument("TargetSpec: circle basis must be 2 x d");
    TargetSpec t;
    t.kind = Kind::ManifoldCircle;
    t.link = std::move(l);
    t.teachers = std::move(basis2xd);
    t.circle_quadrature = quad;
    return t;
  }

  static TargetSpec xor_k(std::vector<int> idx) {
    TargetSpec t;
    t.kind = Kind::Boolean;
    t.boolean.kind = BooleanFn::Kind::Xor;
    t.boolean.index_set = std::move(idx);
    return t;
  }

  static TargetSpec staircase(std::vector<int> idx, double lin = 0.25, double par = 0.75) {
    TargetSpec t;
    t.kind = Kind::Boolean;
    t.boolean.kind = BooleanFn::Kind::Staircase;
    t.boolean.index_set = std::move(idx);
    t.boolean.mixing = {lin, par};
    return t;
  }

  bool atomic_like() const { return kind == Kind::Atomic; }

  // Teachers + weights for closed-form expressions. The circle manifold is exposed
  // as its fixed-order quadrature atoms; error is spectrally small for the
  // polynomial links used here.
  std::pair<Eigen::MatrixXd, Eigen::VectorXd> atoms() const {
    if (kind == Kind::Atomic) return {teachers, teacher_weights};
    if (kind == Kind::ManifoldCircle) {
      const int q = circle_quadrature;
      Eigen::MatrixXd ws(q, teachers.cols());
      for (int j = 0; j < q; ++j) {
        const double th = 2.0 * M_PI * j / q;
        ws.row(j) = std::cos(th) * teachers.row(0) + std::sin(th) * teachers.row(1);
      }
      return {ws, Eigen::VectorXd::Constant(q, 1.0 / q)};
    }
    throw std::invalid_argument("TargetSpec: Boolean target has no teacher atoms");
  }
};

// Noiseless f*(x).
inline double eval_target(const TargetSpec& target, const Eigen::VectorXd& x) {
  switch (target.kind) {
    case TargetSpec::Kind::Atomic: {
      double s = 0.0;
      for (Eigen::Index i = 0; i < target.teachers.rows(); ++i)
        s += target.teacher_weights(i) * target.link.sigma(target.teachers.row(i).dot(x));
      return s;
    }
    case TargetSpec::Kind::ManifoldCircle: {
      double s = 0.0;
      const int q = target.circle_quadrature;
      for (int j = 0; j < q; ++j) {
        const double th = 2.0 * M_PI * j / q;
        const double z =
            std::cos(th) * target.teachers.row(0).dot(x) + std::sin(th) * target.teachers.row(1).dot(x);
        s += target.link.sigma(z);
      }
      return s / q;
    }
    case TargetSpec::Kind::Boolean: {
      double prod = 1.0;
      for (int i : target.boolean.index_set) prod *= x(i);
      if (target.boolean.kind == BooleanFn::Kind::Xor) return prod;
      return target.boolean.mixing[0] * x(target.boolean.index_set.front()) +
             target.boolean.mixing[1] * prod;
    }
  }
  throw std::logic_error("eval_target: unreachable");
}

struct Dataset {
  Eigen::MatrixXd xs;  // n x d
  Eigen::VectorXd ys;  // n
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(xs.rows()); }
  int dim() const { return static_cast<int>(xs.cols()); }
};

// Sampled by (sample, coordinate) counters, so the draw is deterministic per seed
// and parallelizable by sample index.
inline Eigen::MatrixXd sample_covariates(const CovariateSpec& cov, int n, std::uint64_t seed,
                                         std::uint64_t stream = 0) {
  CounterRng rng(seed, stream);
  Eigen::MatrixXd xs(n, cov.d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < cov.d; ++j) {
      const std::uint64_t ctr = static_cast<std::uint64_t>(i) * cov.d + j;
      xs(i, j) = cov.kind == CovariateSpec::Kind::GaussianIso ? rng.gaussian(ctr)
                                                             : rng.sign(ctr);
    }
  }
  return xs;
}

inline Dataset sample_dataset(const CovariateSpec& cov, const TargetSpec& target, int n,
                              std::uint64_t seed) {
  if (target.kind != TargetSpec::Kind::Boolean && target.teachers.cols() != cov.d)
    throw std::invalid_argument("sample_dataset: dimension mismatch");
  Dataset ds;
  ds.seed = seed;
  ds.xs = sample_covariates(cov, n, seed, /*stream=*/1);
  ds.ys.resize(n);
  CounterRng noise(seed, /*stream=*/2);
  for (int i = 0; i < n; ++i) {
    double y = eval_target(target, ds.xs.row(i).transpose());
    if (target.noise_std > 0) y += target.noise_std * noise.gaussian(i);
    ds.ys(i) = y;
  }
  return ds;
}

struct SecondLayerSpec {
  bool enabled = false;
  double scale = 1.0;  // signs drawn +/- scale with equal probability
};

// m i.i.d. uniform unit vectors. The (m, seed) draw is the exact prefix of any
// (M, seed) draw with M >= m; the coupled-width protocol depends on this.
inline ParticleSystem init_particles(int d, int m, std::uint64_t seed,
                                     const SecondLayerSpec& second = {}) {
  if (m < 1) throw std::invalid_argument("init_particles: m >= 1 required");
  CounterRng rng(seed, /*stream=*/3);
  ParticleSystem sys;
  sys.weights.resize(m, d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j)
      sys.weights(i, j) = rng.gaussian(static_cast<std::uint64_t>(i) * d + j);
  sys.renormalize();
  if (second.enabled) {
    CounterRng srng(seed, /*stream=*/4);
    sys.second_layer.resize(m);
    for (int i = 0; i < m; ++i) sys.second_layer(i) = second.scale * srng.sign(i);
  }
  return sys;
}

// --- Dataset persistence: 16-byte header (magic, version, n, d), little-endian
// row-major xs then ys.

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  const std::uint32_t magic = 0x53444350;  // "PCDS"
  const std::uint32_t version = 1;
  const std::uint32_t n = static_cast<std::uint32_t>(ds.size());
  const std::uint32_t d = static_cast<std::uint32_t>(ds.dim());
  out.write(reinterpret_cast<const char*>(&magic), 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&n), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  for (int i = 0; i < ds.size(); ++i)
    for (int j = 0; j < ds.dim(); ++j) {
      const double v = ds.xs(i, j);
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
  for (int i = 0; i < ds.size(); ++i) {
    const double v = ds.ys(i);
    out.write(reinterpret_cast<const char*>(&v), 8);
  }
}

inline void save_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset_csv: cannot open " + path);
  for (int j = 0; j < ds.dim(); ++j) out << "x" << j << ",";
  out << "y\n";
  char buf[32];
  for (int i = 0; i < ds.size(); ++i) {
    for (int j = 0; j < ds.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.xs(i, j));
      out << buf << ",";
    }
    std::snprintf(buf, sizeof(buf), "%.17g", ds.ys(i));
    out << buf << "\n";
  }
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  std::uint32_t magic = 0, version = 0, n = 0, d = 0;
  in.read(reinterpret_cast<char*>(&magic), 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&n), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  if (magic != 0x53444350 || version != 1)
    throw std::runtime_error("load_dataset: bad header in " + path);
  Dataset ds;
  ds.xs.resize(n, d);
  ds.ys.resize(n);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < d; ++j) in.read(reinterpret_cast<char*>(&ds.xs(i, j)), 8);
  for (std::uint32_t i = 0; i < n; ++i) in.read(reinterpret_cast<char*>(&ds.ys(i)), 8);
  if (!in) throw std::runtime_error("load_dataset: truncated file " + path);
  return ds;
}

}  // namespace poclab
