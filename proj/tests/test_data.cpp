#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cstdio>
#include <filesystem>

#include "poclab/data.hpp"

using namespace poclab;

namespace {
Eigen::VectorXd e1(int d) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
  v(0) = 1;
  return v;
}
}  // namespace

TEST_CASE("target evaluation hand values") {
  const int d = 6;
  const TargetSpec sim = TargetSpec::single_index(LinkFunction::he(4), e1(d));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
  CHECK_THAT(eval_target(sim, x), Catch::Matchers::WithinAbs(3.0, 1e-12));
  x(0) = std::sqrt(2.0);
  CHECK_THAT(eval_target(sim, x), Catch::Matchers::WithinAbs(-5.0, 1e-12));

  Eigen::MatrixXd ws = Eigen::MatrixXd::Zero(2, d);
  ws(0, 0) = 1;
  ws(1, 1) = 1;
  const TargetSpec atomic = TargetSpec::atomic(LinkFunction::he(4), ws,
                                               Eigen::VectorXd::Constant(2, 0.5));
  Eigen::VectorXd x2 = Eigen::VectorXd::Zero(d);
  x2(2) = 5.0;  // orthogonal to both teachers
  CHECK_THAT(eval_target(atomic, x2), Catch::Matchers::WithinAbs(3.0, 1e-12));

  const TargetSpec circle = TargetSpec::circle(LinkFunction::he(4), ws);
  CHECK_THAT(eval_target(circle, Eigen::VectorXd::Zero(d)),
             Catch::Matchers::WithinAbs(3.0, 1e-12));

  const TargetSpec xor4 = TargetSpec::xor_k({0, 1, 2, 3});
  const TargetSpec stair = TargetSpec::staircase({0, 1, 2, 3});
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(d);
  CHECK(eval_target(xor4, ones) == 1.0);
  CHECK(eval_target(stair, ones) == 1.0);
  ones(1) = -1;
  CHECK(eval_target(xor4, ones) == -1.0);
  CHECK_THAT(eval_target(stair, ones), Catch::Matchers::WithinAbs(0.25 - 0.75, 1e-15));
}

TEST_CASE("sampled labels follow the target and seed") {
  const int d = 5;
  const CovariateSpec cov = CovariateSpec::gaussian(d);
  TargetSpec sim = TargetSpec::single_index(LinkFunction::he(4), e1(d));
  const Dataset ds = sample_dataset(cov, sim, 64, 7);
  for (int i = 0; i < ds.size(); ++i)
    CHECK_THAT(ds.ys(i), Catch::Matchers::WithinAbs(hermite_eval(4, ds.xs(i, 0)), 1e-12));

  const Dataset again = sample_dataset(cov, sim, 64, 7);
  CHECK(ds.xs == again.xs);
  CHECK(ds.ys == again.ys);

  sim.noise_std = 0.5;
  const Dataset noisy = sample_dataset(cov, sim, 64, 7);
  CHECK(noisy.xs == ds.xs);
  CHECK(noisy.ys != ds.ys);

  const CovariateSpec rad = CovariateSpec::rademacher(d);
  const Dataset bds = sample_dataset(rad, TargetSpec::xor_k({0, 1, 2, 3}), 128, 3);
  for (int i = 0; i < bds.size(); ++i) {
    for (int j = 0; j < d; ++j) CHECK(std::abs(bds.xs(i, j)) == 1.0);
    CHECK(std::abs(bds.ys(i)) == 1.0);
  }
}

TEST_CASE("gaussian covariates have near-identity second moment") {
  const int d = 4, n = 100000;
  const Eigen::MatrixXd xs = sample_covariates(CovariateSpec::gaussian(d), n, 11);
  const Eigen::MatrixXd cov = xs.transpose() * xs / n;
  const Eigen::MatrixXd err = cov - Eigen::MatrixXd::Identity(d, d);
  CHECK(err.cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("atomic labels are rotation invariant") {
  const int d = 6;
  Eigen::MatrixXd ws(2, d);
  SequentialRng rng(21, 0);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < d; ++j) ws(i, j) = rng.gaussian();
    ws.row(i) /= ws.row(i).norm();
  }
  const TargetSpec t = TargetSpec::atomic(LinkFunction::he(4), ws,
                                          Eigen::VectorXd::Constant(2, 0.5));
  Eigen::MatrixXd A(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) A(i, j) = rng.gaussian();
  const Eigen::MatrixXd R = Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ();
  Eigen::MatrixXd rws = ws * R.transpose();
  const TargetSpec rt = TargetSpec::atomic(LinkFunction::he(4), rws,
                                           Eigen::VectorXd::Constant(2, 0.5));
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd x(d);
    for (int j = 0; j < d; ++j) x(j) = rng.gaussian();
    CHECK_THAT(eval_target(t, x), Catch::Matchers::WithinAbs(eval_target(rt, R * x), 1e-10));
  }
}

TEST_CASE("particle initialization is unit norm and prefix stable") {
  const int d = 7;
  for (int m : {1, 8, 33}) {
    const ParticleSystem sys = init_particles(d, m, 5);
    CHECK(sys.max_norm_error() < 1e-12);
  }
  const ParticleSystem small = init_particles(d, 8, 5);
  const ParticleSystem big = init_particles(d, 32, 5);
  CHECK(small.weights == big.weights.topRows(8));

  SecondLayerSpec second{true, 8.0};
  const ParticleSystem s2 = init_particles(d, 16, 5, second);
  const ParticleSystem s3 = init_particles(d, 64, 5, second);
  CHECK(s2.second_layer == s3.second_layer.head(16));
  for (int i = 0; i < 16; ++i) CHECK(std::abs(s2.layer(i)) == 8.0);
}

TEST_CASE("uniform sphere initialization is centered") {
  const int m = 100000, d = 3;
  const ParticleSystem sys = init_particles(d, m, 9);
  CHECK(std::abs(sys.weights.col(0).mean()) < 4.0 / std::sqrt(static_cast<double>(m)));
}

TEST_CASE("dataset round trip is bit exact") {
  const auto dir = std::filesystem::temp_directory_path() / "poclab_data_test";
  std::filesystem::create_directories(dir);
  const CovariateSpec cov = CovariateSpec::gaussian(4);
  const TargetSpec t = TargetSpec::single_index(LinkFunction::he(4), e1(4));
  const Dataset ds = sample_dataset(cov, t, 50, 13);
  const std::string path = (dir / "ds.bin").string();
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  CHECK(back.xs == ds.xs);
  CHECK(back.ys == ds.ys);
  save_dataset_csv(ds, (dir / "ds.csv").string());
  CHECK(std::filesystem::file_size(dir / "ds.csv") > 0);
  std::filesystem::remove_all(dir);
}
