#pragma once

#include <Eigen/Dense>

#include "rbhomog/tensor.hpp"

namespace rbhomog {

/// PK1 stress sampled at every quadrature point, with the matching integration
/// weights. Components per point are stored [P11, P12, P21, P22].
struct QuadratureStressField {
  Eigen::VectorXd stress;   // 4 * n_qp
  Eigen::VectorXd weights;  // n_qp
  double total_volume = 0.0;

  QuadratureStressField() = default;
  QuadratureStressField(Eigen::VectorXd stress_, Eigen::VectorXd weights_);

  int n_qp() const { return static_cast<int>(weights.size()); }

  Tensor2 at(int q) const {
    Tensor2 p;
    p << stress(4 * q), stress(4 * q + 1), stress(4 * q + 2), stress(4 * q + 3);
    return p;
  }
  void set(int q, const Tensor2& p) {
    stress(4 * q) = p(0, 0);
    stress(4 * q + 1) = p(0, 1);
    stress(4 * q + 2) = p(1, 0);
    stress(4 * q + 3) = p(1, 1);
  }

  /// Volume-weighted L2 inner product with another field on the same layout.
  double inner(const QuadratureStressField& other) const;
  double l2_norm() const { return std::sqrt(std::max(0.0, inner(*this))); }
};

/// Volume average |Omega|^-1 sum_q w_q P_q.
Tensor2 average_stress(const QuadratureStressField& field);

}  // namespace rbhomog
