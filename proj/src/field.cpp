#include "rbhomog/field.hpp"

#include <stdexcept>

namespace rbhomog {

QuadratureStressField::QuadratureStressField(Eigen::VectorXd stress_, Eigen::VectorXd weights_)
    : stress(std::move(stress_)), weights(std::move(weights_)) {
  if (stress.size() != 4 * weights.size())
    throw std::invalid_argument("QuadratureStressField: stress size must be 4 * weight count");
  if ((weights.array() <= 0.0).any())
    throw std::invalid_argument("QuadratureStressField: integration weights must be positive");
  total_volume = weights.sum();
}

double QuadratureStressField::inner(const QuadratureStressField& other) const {
  if (other.n_qp() != n_qp())
    throw std::invalid_argument("QuadratureStressField: quadrature layout mismatch");
  double acc = 0.0;
  for (int q = 0; q < n_qp(); ++q) {
    double dot = 0.0;
    for (int c = 0; c < 4; ++c) dot += stress(4 * q + c) * other.stress(4 * q + c);
    acc += weights(q) * dot;
  }
  return acc;
}

Tensor2 average_stress(const QuadratureStressField& field) {
  Tensor2 p = Tensor2::Zero();
  for (int q = 0; q < field.n_qp(); ++q) {
    const double w = field.weights(q);
    p(0, 0) += w * field.stress(4 * q);
    p(0, 1) += w * field.stress(4 * q + 1);
    p(1, 0) += w * field.stress(4 * q + 2);
    p(1, 1) += w * field.stress(4 * q + 3);
  }
  return p / field.total_volume;
}

}  // namespace rbhomog
