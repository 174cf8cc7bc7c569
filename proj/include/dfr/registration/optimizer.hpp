#pragma once

#include <Eigen/Core>

#include <cmath>

namespace dfr {

struct OptimizerConfig {
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Backtrack each step until the energy does not increase (monotone trace within
  // a correspondence window).
  bool line_search = false;
  int max_backtracks = 8;
};

// Adaptive-moment gradient descent over a flat parameter vector.
class Adam {
 public:
  Adam(Eigen::Index size, const OptimizerConfig& cfg)
      : cfg_(cfg), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

  // Proposed update (to be added to the parameters) for gradient g.
  Eigen::VectorXd step(const Eigen::VectorXd& g) {
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    return -cfg_.learning_rate *
           ((m_ / c1).array() / ((v_ / c2).array().sqrt() + cfg_.epsilon)).matrix();
  }

  long steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

}  // namespace dfr
