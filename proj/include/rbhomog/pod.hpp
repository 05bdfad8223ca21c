#pragma once

#include <Eigen/Dense>

#include "rbhomog/field.hpp"
#include "rbhomog/snapshot.hpp"

namespace rbhomog {

/// Either a fixed basis size or an energy threshold; when both are set the
/// count wins.
struct BasisSelector {
  int count = 0;         // > 0 selects exactly this many functions
  double energy = 0.0;   // in (0,1): smallest L whose energy share exceeds it
};

/// L2-orthonormal stress-field basis from the method of snapshots.
struct PodBasis {
  Eigen::MatrixXd functions;    // (4 * n_qp) x L
  Eigen::VectorXd eigenvalues;  // all correlation eigenvalues, non-increasing
  Eigen::VectorXd weights;      // shared quadrature weights
  double total_volume = 0.0;
  double energy_captured = 0.0;

  int size() const { return static_cast<int>(functions.cols()); }
  int n_qp() const { return static_cast<int>(weights.size()); }
  QuadratureStressField function(int l) const { return {functions.col(l), weights}; }
};

/// C_ij = sum_q w_q P_q^(i) : P_q^(j); symmetric positive semidefinite.
Eigen::MatrixXd correlation_matrix(const SnapshotSet& set);

/// Top eigenpairs of the correlation matrix mapped back to stress space,
/// B_l = lambda_l^{-1/2} S v_l. Eigenvalues below 1e-12 of the largest are
/// excluded; eigenvector signs are fixed for reproducibility.
PodBasis compute_basis(const SnapshotSet& set, const BasisSelector& selector);

/// alpha_l = (P, B_l)_L2 for every basis function.
Eigen::VectorXd project_coefficients(const QuadratureStressField& field, const PodBasis& basis);
Eigen::VectorXd project_coefficients(const Eigen::VectorXd& stress, const PodBasis& basis);

/// Rank-L reconstruction sum_l alpha_l B_l as a raw stress vector.
Eigen::VectorXd reconstruct_stress(const PodBasis& basis, const Eigen::VectorXd& alpha);

}  // namespace rbhomog
