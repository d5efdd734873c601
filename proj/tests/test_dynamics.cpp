#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "poclab/dynamics.hpp"

using namespace poclab;

namespace {

Eigen::VectorXd e1(int d) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
  v(0) = 1;
  return v;
}

ProblemSpec he4_sim(int d) {
  ProblemSpec p;
  p.cov = CovariateSpec::gaussian(d);
  p.act = Activation::hermite(LinkFunction::he(4));
  p.target = TargetSpec::single_index(p.act.link, e1(d));
  return p;
}

ParticleSystem random_system(int m, int d, std::uint64_t seed) {
  ParticleSystem sys;
  sys.weights.resize(m, d);
  SequentialRng rng(seed, 2);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) sys.weights(i, j) = rng.gaussian();
  sys.renormalize();
  return sys;
}

}  // namespace

TEST_CASE("population velocity hand values") {
  const int d = 5;
  const ProblemSpec p = he4_sim(d);

  ParticleSystem at_target;
  at_target.weights = e1(d).transpose();
  const Eigen::VectorXd v0 = population_velocity(e1(d), at_target, p.target, p.act.link);
  CHECK(v0.norm() < 1e-12);

  // single particle at 60 degrees from the teacher; self-interaction is killed
  // by the projector, so the teacher component is q'(0.5)(1 - 0.25) = 9.
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  w(0) = 0.5;
  w(1) = std::sqrt(0.75);
  ParticleSystem solo;
  solo.weights = w.transpose();
  const Eigen::VectorXd v = population_velocity(w, solo, p.target, p.act.link);
  CHECK_THAT(v.dot(e1(d)), Catch::Matchers::WithinAbs(9.0, 1e-12));
  CHECK(std::abs(v.dot(w)) < 1e-10);
}

TEST_CASE("batched population velocities match per-particle form") {
  const int d = 6, m = 9;
  const ProblemSpec p = he4_sim(d);
  const ParticleSystem sys = random_system(m, d, 31);
  const Eigen::MatrixXd V = population_velocities(sys, p.target, p.act.link);
  for (int i = 0; i < m; ++i) {
    const Eigen::VectorXd vi =
        population_velocity(sys.weights.row(i), sys, p.target, p.act.link);
    CHECK((V.row(i).transpose() - vi).norm() < 1e-12);
    CHECK(std::abs(V.row(i).dot(sys.weights.row(i))) < 1e-10);
  }
}

TEST_CASE("population velocity is rotation equivariant") {
  const int d = 5, m = 6;
  const LinkFunction link = LinkFunction::he(4);
  SequentialRng rng(77, 1);
  Eigen::MatrixXd A(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) A(i, j) = rng.gaussian();
  const Eigen::MatrixXd R = Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ();

  const ParticleSystem sys = random_system(m, d, 13);
  Eigen::VectorXd wstar(d);
  for (int j = 0; j < d; ++j) wstar(j) = rng.gaussian();
  const TargetSpec target = TargetSpec::single_index(link, wstar);
  const TargetSpec rtarget =
      TargetSpec::single_index(link, (R * (wstar / wstar.norm())).eval());
  ParticleSystem rsys = sys;
  rsys.weights = sys.weights * R.transpose();

  for (int i = 0; i < m; ++i) {
    const Eigen::VectorXd v = population_velocity(sys.weights.row(i), sys, target, link);
    const Eigen::VectorXd rv =
        population_velocity(rsys.weights.row(i), rsys, rtarget, link);
    CHECK((rv - R * v).norm() < 1e-10);
  }
}

TEST_CASE("empirical velocity equals the projected loss gradient") {
  const int d = 6, m = 5, n = 48;
  const ProblemSpec p = he4_sim(d);
  ParticleSystem sys = random_system(m, d, 41);
  sys.second_layer = Eigen::VectorXd::Ones(m);
  sys.second_layer(2) = -1.0;
  const Dataset ds = sample_dataset(p.cov, p.target, n, 19);

  const Eigen::MatrixXd V = empirical_velocities(sys, ds.xs, ds.ys, p.act);
  const double h = 1e-5;
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd grad(d);
    for (int b = 0; b < d; ++b) {
      ParticleSystem pp = sys, pm = sys;
      pp.weights(i, b) += h;
      pm.weights(i, b) -= h;
      grad(b) = (loss_empirical(pp, ds.xs, ds.ys, p.act) -
                 loss_empirical(pm, ds.xs, ds.ys, p.act)) /
                (2 * h);
    }
    const Eigen::VectorXd w = sys.weights.row(i);
    const Eigen::VectorXd expected = -(m / 2.0) * (grad - w.dot(grad) * w);
    CHECK((V.row(i).transpose() - expected).norm() <= 1e-6 * std::max(1.0, expected.norm()));

    const Eigen::VectorXd single = empirical_velocity(i, sys, ds.xs, ds.ys, p.act);
    CHECK((V.row(i).transpose() - single).norm() < 1e-12);
  }
  CHECK_THROWS(empirical_velocities(sys, Eigen::MatrixXd(0, d), Eigen::VectorXd(), p.act));
}

TEST_CASE("empirical velocity converges to the population velocity") {
  const int d = 4, m = 3, n = 1 << 17;
  const ProblemSpec p = he4_sim(d);
  const ParticleSystem sys = random_system(m, d, 53);
  const Dataset ds = sample_dataset(p.cov, p.target, n, 29);

  const Eigen::VectorXd w = sys.weights.row(0);
  const Eigen::VectorXd vpop = population_velocity(w, sys, p.target, p.act.link);

  // per-sample projected contributions, for a componentwise standard error
  const Eigen::VectorXd pred = predict(sys, ds.xs, p.act);
  Eigen::MatrixXd contrib(n, d);
  for (int t = 0; t < n; ++t) {
    const Eigen::VectorXd x = ds.xs.row(t);
    Eigen::VectorXd raw = (ds.ys(t) - pred(t)) * p.act.deriv(w.dot(x)) * x;
    contrib.row(t) = raw - w.dot(raw) * w;
  }
  for (int b = 0; b < d; ++b) {
    const double mean = contrib.col(b).mean();
    const double var = (contrib.col(b).array() - mean).square().sum() / (n - 1);
    const double se = std::sqrt(var / n);
    CHECK(std::abs(mean - vpop(b)) <= 5 * se + 1e-12);
  }
}

TEST_CASE("euler step with retraction") {
  const int d = 4;
  ParticleSystem sys;
  sys.weights = e1(d).transpose();
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(1, d);

  CHECK(step(sys, v, 0.5).weights == sys.weights);
  v(0, 1) = 1.0;
  CHECK(step(sys, v, 0.0).weights == sys.weights);
  const ParticleSystem moved = step(sys, v, 1.0);
  CHECK_THAT(moved.weights(0, 0), Catch::Matchers::WithinAbs(1.0 / std::sqrt(2.0), 1e-14));
  CHECK_THAT(moved.weights(0, 1), Catch::Matchers::WithinAbs(1.0 / std::sqrt(2.0), 1e-14));
}

TEST_CASE("population loss hand values and sphere preservation") {
  const int d = 5;
  const ProblemSpec p = he4_sim(d);

  ParticleSystem at_target;
  at_target.weights = e1(d).transpose();
  CHECK(std::abs(loss_population(at_target, p.target, p.act.link)) < 1e-12);

  ParticleSystem ortho;
  ortho.weights = Eigen::MatrixXd::Zero(1, d);
  ortho.weights(0, 1) = 1.0;
  CHECK_THAT(loss_population(ortho, p.target, p.act.link),
             Catch::Matchers::WithinAbs(48.0, 1e-12));
}

TEST_CASE("population loss matches a monte-carlo estimate") {
  const int d = 4, m = 6, n = 100000;
  const ProblemSpec p = he4_sim(d);
  const ParticleSystem sys = random_system(m, d, 61);
  const double closed = loss_population(sys, p.target, p.act.link);

  const Eigen::MatrixXd xs = sample_covariates(p.cov, n, 37);
  const Eigen::VectorXd pred = predict(sys, xs, p.act);
  Eigen::VectorXd sq(n);
  for (int t = 0; t < n; ++t) {
    const double diff = pred(t) - eval_target(p.target, xs.row(t).transpose());
    sq(t) = diff * diff;
  }
  const double mean = sq.mean();
  const double se = std::sqrt((sq.array() - mean).square().sum() / (n - 1) / n);
  CHECK(std::abs(closed - mean) <= 4 * se);
}

TEST_CASE("subsampled loss stays close to the exact pairwise loss") {
  const int d = 6, m = 64;
  const ProblemSpec p = he4_sim(d);
  const ParticleSystem sys = random_system(m, d, 71);
  const double exact = loss_population(sys, p.target, p.act.link);
  const double sub = loss_population(sys, p.target, p.act.link, /*exact_threshold=*/1, 4096);
  CHECK(std::abs(sub - exact) < 0.05 * std::max(1.0, std::abs(exact)));
}

TEST_CASE("flow fixed point and descent") {
  const int d = 8, m = 16;
  const ProblemSpec p = he4_sim(d);

  // all particles at the teacher: exact fixed point of the population flow
  FlowSchedule sched;
  sched.eta = 0.01;
  sched.n_steps = 100;
  sched.record_every = 10;
  sched.store_snapshots = false;
  ParticleSystem pinned;
  pinned.weights = e1(d).transpose().replicate(m, 1);
  const Trajectory fixed = run_flow(p, sched, {1, 2, 3}, pinned);
  for (double l : fixed.losses) CHECK(std::abs(l) < 1e-20);

  // generic start: loss is non-increasing at small step size
  FlowSchedule sched2;
  sched2.eta = 0.01;
  sched2.n_steps = 200;
  sched2.record_every = 5;
  sched2.store_snapshots = true;
  const Trajectory traj = run_flow(p, sched2, {11, 2, 3}, 64);
  for (std::size_t k = 1; k < traj.losses.size(); ++k)
    CHECK(traj.losses[k] <= traj.losses[k - 1] + 1e-8 * sched2.record_every);
  for (const auto& snap : traj.snapshots) CHECK(snap.max_norm_error() < 1e-9);
}

TEST_CASE("antipodal symmetry is preserved in population mode") {
  const int d = 6, m = 8;  // m pairs
  const ProblemSpec p = he4_sim(d);
  ParticleSystem sys = random_system(m, d, 83);
  ParticleSystem paired;
  paired.weights.resize(2 * m, d);
  paired.weights.topRows(m) = sys.weights;
  paired.weights.bottomRows(m) = -sys.weights;
  for (int s = 0; s < 50; ++s) {
    const Eigen::MatrixXd v = population_velocities(paired, p.target, p.act.link);
    paired = step(paired, v, 0.01);
  }
  CHECK((paired.weights.topRows(m) + paired.weights.bottomRows(m)).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("empirical flow runs deterministically") {
  const int d = 6;
  const ProblemSpec p = he4_sim(d);
  FlowSchedule sched;
  sched.mode = FlowSchedule::Mode::Empirical;
  sched.eta = 0.01;
  sched.n_steps = 40;
  sched.record_every = 10;
  sched.batch_size = 32;
  sched.dataset_size = 256;
  sched.store_snapshots = false;
  const Trajectory a = run_flow(p, sched, {5, 6, 7}, 32);
  const Trajectory b = run_flow(p, sched, {5, 6, 7}, 32);
  CHECK(a.losses == b.losses);
  CHECK(a.losses_emp == b.losses_emp);
}

TEST_CASE("batch schedule partitions each epoch") {
  BatchSchedule bs(100, 32, 9);
  std::vector<int> seen;
  const long per_epoch = 4;  // ceil(100/32)
  for (long s = 0; s < per_epoch; ++s) {
    const auto idx = bs.batch_indices(s);
    seen.insert(seen.end(), idx.begin(), idx.end());
  }
  std::sort(seen.begin(), seen.end());
  REQUIRE(seen.size() == 100);
  for (int i = 0; i < 100; ++i) CHECK(seen[static_cast<std::size_t>(i)] == i);

  BatchSchedule bs2(100, 32, 9);
  CHECK(bs2.batch_indices(7) == bs.batch_indices(7));
}
