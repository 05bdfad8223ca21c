#include <doctest.h>

#include <random>

#include "rbhomog/pod.hpp"

using namespace rbhomog;

namespace {

// Synthetic snapshot set: random stresses on a random positive quadrature
// layout; parameters only have to be distinct.
SnapshotSet synthetic_set(int n_qp, int n, unsigned seed, int rank = -1) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> wdist(0.2, 1.7);
  std::normal_distribution<double> g(0.0, 1.0);

  SnapshotSet set;
  set.weights.resize(n_qp);
  for (int q = 0; q < n_qp; ++q) set.weights(q) = wdist(rng);
  set.total_volume = set.weights.sum();

  if (rank < 0) rank = n;
  Eigen::MatrixXd modes(4 * n_qp, rank);
  for (int c = 0; c < rank; ++c)
    for (int r = 0; r < 4 * n_qp; ++r) modes(r, c) = g(rng);
  Eigen::MatrixXd coeff(rank, n);
  for (int c = 0; c < n; ++c)
    for (int r = 0; r < rank; ++r) coeff(r, c) = g(rng) * std::pow(0.5, r);
  set.stress = modes * coeff;

  set.params.resize(n);
  for (int i = 0; i < n; ++i) set.params[i].stretch = {1.0 + 0.01 * (i + 1), 1.0, 0.0};
  set.validate();
  return set;
}

double brute_inner(const SnapshotSet& set, int i, int j) {
  double acc = 0.0;
  for (int q = 0; q < set.n_qp(); ++q) {
    double dot = 0.0;
    for (int c = 0; c < 4; ++c) dot += set.stress(4 * q + c, i) * set.stress(4 * q + c, j);
    acc += set.weights(q) * dot;
  }
  return acc;
}

}  // namespace

TEST_CASE("correlation matrix matches the brute-force double loop") {
  const SnapshotSet set = synthetic_set(17, 3, 5);
  const Eigen::MatrixXd c = correlation_matrix(set);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(c(i, j) == doctest::Approx(brute_inner(set, i, j)).epsilon(1e-12));
  CHECK((c - c.transpose()).norm() == 0.0);
}

TEST_CASE("single snapshot correlation is its squared norm") {
  const SnapshotSet set = synthetic_set(9, 1, 11);
  const Eigen::MatrixXd c = correlation_matrix(set);
  CHECK(c.rows() == 1);
  CHECK(c(0, 0) == doctest::Approx(set.field(0).inner(set.field(0))).epsilon(1e-13));
}

TEST_CASE("two identical snapshots give a rank-1 correlation") {
  SnapshotSet set = synthetic_set(9, 2, 3);
  set.stress.col(1) = set.stress.col(0);
  const Eigen::MatrixXd c = correlation_matrix(set);
  const double a = c(0, 0);
  CHECK(c(0, 1) == doctest::Approx(a).epsilon(1e-12));
  CHECK(c(1, 0) == doctest::Approx(a).epsilon(1e-12));
  CHECK(c(1, 1) == doctest::Approx(a).epsilon(1e-12));

  // duplicated pair: second eigenvalue collapses below the cutoff
  const PodBasis basis = compute_basis(set, {.count = 2});
  CHECK(basis.size() == 1);
  CHECK(basis.eigenvalues(1) < 1e-12 * basis.eigenvalues(0));
}

TEST_CASE("single nonzero snapshot normalizes to a unit basis function") {
  const SnapshotSet set = synthetic_set(13, 1, 17);
  const PodBasis basis = compute_basis(set, {.count = 1});
  REQUIRE(basis.size() == 1);
  const double norm = set.field(0).l2_norm();
  CHECK((basis.functions.col(0) - set.stress.col(0) / norm).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("computed bases are orthonormal and ordered") {
  const SnapshotSet set = synthetic_set(40, 12, 23);
  const PodBasis basis = compute_basis(set, {.count = 12});
  for (int i = 0; i < basis.size(); ++i) {
    for (int j = 0; j < basis.size(); ++j) {
      const double ip = basis.function(i).inner(basis.function(j));
      CHECK(std::abs(ip - (i == j ? 1.0 : 0.0)) < 1e-10);
    }
  }
  for (int l = 1; l < basis.eigenvalues.size(); ++l)
    CHECK(basis.eigenvalues(l) <= basis.eigenvalues(l - 1) + 1e-14);
}

TEST_CASE("eigenvalue sum equals total snapshot energy") {
  const SnapshotSet set = synthetic_set(25, 8, 29);
  const PodBasis basis = compute_basis(set, {.count = 8});
  double total = 0.0;
  for (int i = 0; i < set.n(); ++i) total += brute_inner(set, i, i);
  CHECK(basis.eigenvalues.sum() == doctest::Approx(total).epsilon(1e-10));
}

TEST_CASE("energy selector picks the smallest sufficient basis") {
  const SnapshotSet set = synthetic_set(30, 10, 31, /*rank=*/10);
  const PodBasis full = compute_basis(set, {.count = 10});
  const double total = full.eigenvalues.sum();
  // choose a threshold between the 3- and 4-term energies
  const double e3 = full.eigenvalues.head(3).sum() / total;
  const double e4 = full.eigenvalues.head(4).sum() / total;
  const PodBasis basis = compute_basis(set, {.energy = 0.5 * (e3 + e4)});
  CHECK(basis.size() == 4);
  CHECK(basis.energy_captured == doctest::Approx(e4).epsilon(1e-12));

  // count takes precedence when both are given
  const PodBasis counted = compute_basis(set, {.count = 2, .energy = 0.999999});
  CHECK(counted.size() == 2);
}

TEST_CASE("projection of a basis function is a unit vector") {
  const SnapshotSet set = synthetic_set(20, 6, 37);
  const PodBasis basis = compute_basis(set, {.count = 6});
  for (int k = 0; k < basis.size(); ++k) {
    const Eigen::VectorXd alpha = project_coefficients(basis.function(k), basis);
    for (int l = 0; l < basis.size(); ++l)
      CHECK(alpha(l) == doctest::Approx(l == k ? 1.0 : 0.0).epsilon(1e-10));
  }
  const QuadratureStressField zero{Eigen::VectorXd::Zero(4 * basis.n_qp()), basis.weights};
  CHECK(project_coefficients(zero, basis).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Parseval: reconstruction error matches the coefficient tail") {
  const SnapshotSet set = synthetic_set(35, 9, 41);
  const PodBasis basis = compute_basis(set, {.count = 5});
  for (int i = 0; i < set.n(); ++i) {
    const QuadratureStressField p = set.field(i);
    const Eigen::VectorXd alpha = project_coefficients(p, basis);
    const Eigen::VectorXd recon = reconstruct_stress(basis, alpha);
    const QuadratureStressField err{p.stress - recon, set.weights};
    const double err_sq = err.inner(err);
    const double parseval = p.inner(p) - alpha.squaredNorm();
    CHECK(err_sq == doctest::Approx(parseval).epsilon(1e-9));
  }
}

TEST_CASE("projection error is non-increasing in the basis size") {
  const SnapshotSet set = synthetic_set(30, 10, 43);
  const PodBasis basis = compute_basis(set, {.count = 10});
  for (int i = 0; i < set.n(); ++i) {
    const QuadratureStressField p = set.field(i);
    const Eigen::VectorXd alpha = project_coefficients(p, basis);
    double prev = std::numeric_limits<double>::infinity();
    for (int l = 1; l <= basis.size(); ++l) {
      const double err_sq = p.inner(p) - alpha.head(l).squaredNorm();
      CHECK(err_sq <= prev + 1e-12);
      prev = err_sq;
    }
  }
}

TEST_CASE("degenerate all-zero snapshot sets are rejected") {
  SnapshotSet set = synthetic_set(10, 3, 47);
  set.stress.setZero();
  CHECK_THROWS_AS(compute_basis(set, {.count = 2}), std::invalid_argument);
  CHECK_THROWS_AS(compute_basis(synthetic_set(10, 3, 7), {.count = 5}), std::invalid_argument);
  CHECK_THROWS_AS(compute_basis(synthetic_set(10, 3, 7), {}), std::invalid_argument);
}

TEST_CASE("layout mismatches are rejected") {
  const SnapshotSet set = synthetic_set(12, 4, 53);
  const PodBasis basis = compute_basis(set, {.count = 3});
  const QuadratureStressField wrong{Eigen::VectorXd::Zero(4 * 11),
                                    Eigen::VectorXd::Ones(11)};
  CHECK_THROWS_AS(project_coefficients(wrong, basis), std::invalid_argument);
}
