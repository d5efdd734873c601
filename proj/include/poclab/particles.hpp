#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace poclab {

// m unit vectors in R^d (one per row), with optional fixed second-layer weights.
struct ParticleSystem {
  Eigen::MatrixXd weights;      // m x d, rows unit norm
  Eigen::VectorXd second_layer; // empty => all ones

  int width() const { return static_cast<int>(weights.rows()); }
  int dim() const { return static_cast<int>(weights.cols()); }

  double layer(int i) const {
    return second_layer.size() == 0 ? 1.0 : second_layer(i);
  }

  Eigen::VectorXd layer_vector() const {
    if (second_layer.size() == weights.rows()) return second_layer;
    return Eigen::VectorXd::Ones(weights.rows());
  }

  void renormalize() {
    for (Eigen::Index i = 0; i < weights.rows(); ++i) {
      const double n = weights.row(i).norm();
      if (!(n > 0) || !std::isfinite(n))
        throw std::runtime_error("ParticleSystem: degenerate row norm");
      weights.row(i) /= n;
    }
  }

  double max_norm_error() const {
    double e = 0.0;
    for (Eigen::Index i = 0; i < weights.rows(); ++i)
      e = std::max(e, std::abs(weights.row(i).norm() - 1.0));
    return e;
  }

  ParticleSystem prefix(int m) const {
    ParticleSystem sub;
    sub.weights = weights.topRows(m);
    if (second_layer.size() > 0) sub.second_layer = second_layer.head(m);
    return sub;
  }
};

}  // namespace poclab
