#include "rbhomog/pod.hpp"

#include <stdexcept>

#include "rbhomog/errors.hpp"

namespace rbhomog {

namespace {

// Rows scaled by sqrt(w_q); the plain Gram matrix of the result is the
// L2 correlation matrix.
Eigen::MatrixXd weighted_snapshots(const Eigen::MatrixXd& stress, const Eigen::VectorXd& weights) {
  Eigen::MatrixXd sw = stress;
  for (int q = 0; q < weights.size(); ++q) {
    const double s = std::sqrt(weights(q));
    sw.middleRows(4 * q, 4) *= s;
  }
  return sw;
}

}  // namespace

Eigen::MatrixXd correlation_matrix(const SnapshotSet& set) {
  set.validate();
  const Eigen::MatrixXd sw = weighted_snapshots(set.stress, set.weights);
  Eigen::MatrixXd c = sw.transpose() * sw;
  c = 0.5 * (c + c.transpose());  // exact symmetry against rounding
  return c;
}

PodBasis compute_basis(const SnapshotSet& set, const BasisSelector& selector) {
  const int n = set.n();
  if (selector.count > n)
    throw std::invalid_argument("compute_basis: requested " + std::to_string(selector.count) +
                                " functions from " + std::to_string(n) + " snapshots");
  if (selector.count <= 0 && !(selector.energy > 0.0 && selector.energy < 1.0))
    throw std::invalid_argument("compute_basis: selector needs a count or an energy in (0,1)");

  const Eigen::MatrixXd c = correlation_matrix(set);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  if (es.info() != Eigen::Success) throw std::runtime_error("compute_basis: eigensolver failed");

  // descending order, negatives clamped to zero
  Eigen::VectorXd lambda(n);
  Eigen::MatrixXd v(n, n);
  for (int l = 0; l < n; ++l) {
    lambda(l) = std::max(0.0, es.eigenvalues()(n - 1 - l));
    v.col(l) = es.eigenvectors().col(n - 1 - l);
  }
  if (!(lambda(0) > 0.0))
    throw std::invalid_argument("compute_basis: all snapshots are numerically zero");

  // reproducible eigenvector signs: largest-magnitude entry positive
  for (int l = 0; l < n; ++l) {
    int arg = 0;
    for (int i = 1; i < n; ++i)
      if (std::abs(v(i, l)) > std::abs(v(arg, l))) arg = i;
    if (v(arg, l) < 0.0) v.col(l) = -v.col(l);
  }

  int usable = 0;
  while (usable < n && lambda(usable) > 1e-12 * lambda(0)) usable++;

  const double total_energy = lambda.sum();
  int size;
  if (selector.count > 0) {
    size = std::min(selector.count, usable);
  } else {
    size = usable;
    double cum = 0.0;
    for (int l = 0; l < usable; ++l) {
      cum += lambda(l);
      if (cum / total_energy > selector.energy) {
        size = l + 1;
        break;
      }
    }
  }

  PodBasis basis;
  basis.eigenvalues = lambda;
  basis.weights = set.weights;
  basis.total_volume = set.total_volume;
  basis.functions.resize(set.stress.rows(), size);
  for (int l = 0; l < size; ++l)
    basis.functions.col(l) = set.stress * v.col(l) / std::sqrt(lambda(l));
  basis.energy_captured = lambda.head(size).sum() / total_energy;

  // The eigen route leaves cross terms of order eps * lambda_1 / lambda_l on
  // the trailing functions; two Gram-Schmidt passes in the weighted metric
  // restore orthonormality to round-off without changing the span.
  Eigen::MatrixXd bw = weighted_snapshots(basis.functions, basis.weights);
  for (int l = 0; l < size; ++l) {
    for (int pass = 0; pass < 2; ++pass)
      for (int j = 0; j < l; ++j) bw.col(l) -= bw.col(j).dot(bw.col(l)) * bw.col(j);
    const double nrm = bw.col(l).norm();
    if (!(nrm > 0.0)) throw std::runtime_error("compute_basis: basis function collapsed");
    bw.col(l) /= nrm;
  }
  for (int q = 0; q < basis.weights.size(); ++q)
    basis.functions.middleRows(4 * q, 4) = bw.middleRows(4 * q, 4) / std::sqrt(basis.weights(q));
  return basis;
}

Eigen::VectorXd project_coefficients(const Eigen::VectorXd& stress, const PodBasis& basis) {
  if (stress.size() != basis.functions.rows())
    throw std::invalid_argument("project_coefficients: quadrature layout mismatch");
  Eigen::VectorXd weighted = stress;
  for (int q = 0; q < basis.weights.size(); ++q)
    weighted.segment(4 * q, 4) *= basis.weights(q);
  return basis.functions.transpose() * weighted;
}

Eigen::VectorXd project_coefficients(const QuadratureStressField& field, const PodBasis& basis) {
  if (field.n_qp() != basis.n_qp())
    throw std::invalid_argument("project_coefficients: quadrature layout mismatch");
  return project_coefficients(field.stress, basis);
}

Eigen::VectorXd reconstruct_stress(const PodBasis& basis, const Eigen::VectorXd& alpha) {
  if (alpha.size() != basis.size())
    throw std::invalid_argument("reconstruct_stress: coefficient count mismatch");
  return basis.functions * alpha;
}

}  // namespace rbhomog
