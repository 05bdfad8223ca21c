#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "rbhomog/gpr.hpp"
#include "rbhomog/pod.hpp"
#include "rbhomog/snapshot.hpp"

namespace rbhomog {

/// Ordering and training box of the regression inputs:
/// [U11, U22, U12, material scalars...].
struct ParamLayout {
  Eigen::VectorXd lo, hi;

  int dim() const { return static_cast<int>(lo.size()); }
  int material_dim() const { return dim() - 3; }
  Eigen::VectorXd flatten(const Tensor2& u_bar, const Eigen::VectorXd& mu) const;
  /// true when x leaves the box by more than 10% of its span in any dimension
  bool extrapolates(const Eigen::VectorXd& x) const;
};

struct TrainOptions {
  int n_pod = 0;  // snapshots used for the basis (prefix); 0 = all
  int n_reg = 0;  // snapshots used for the regression (prefix); 0 = all
  BasisSelector selector;
  GprFitOptions gpr;
  int workers = 0;
};

/// Single-field error split for one test snapshot; total is bounded by
/// projection + regression (triangle inequality).
struct ErrorEntry {
  double total = 0.0;
  double projection = 0.0;
  double regression = 0.0;
};

struct ErrorReport {
  double total = 0.0;       // means over the test set
  double projection = 0.0;
  double regression = 0.0;
  std::vector<ErrorEntry> per_snapshot;
};

/// Learned constitutive model: POD stress basis plus one GPR per coefficient.
/// Immutable after training; every evaluation is a lock-free read.
class SurrogateModel {
 public:
  static SurrogateModel train(const SnapshotSet& set, const TrainOptions& opts);

  int basis_size() const { return basis_.size(); }
  const PodBasis& basis() const { return basis_; }
  const GprModel& regressor(int l) const { return regressors_[l]; }
  const ParamLayout& layout() const { return layout_; }
  std::uint64_t mesh_hash() const { return mesh_hash_; }
  std::uint32_t bc_kind() const { return bc_kind_; }
  /// volume average of each basis function
  const std::vector<Tensor2>& basis_averages() const { return basis_averages_; }

  /// Regressed coefficients alpha_hat at (U, mu); sets *extrapolated when the
  /// query leaves the training box by more than 10%.
  Eigen::VectorXd coefficients(const Tensor2& u_bar, const Eigen::VectorXd& mu,
                               bool* extrapolated = nullptr) const;

  /// Full microscopic stress field sum_l alpha_hat_l B_l at a symmetric
  /// positive definite stretch.
  QuadratureStressField stress_field(const Tensor2& u_bar, const Eigen::VectorXd& mu,
                                     bool* extrapolated = nullptr) const;

  /// Effective stress via the precomputed basis averages. d_dmu, when given,
  /// receives the derivatives with respect to the sampled material scalars.
  Tensor2 effective_stress(const Tensor2& u_bar, const Eigen::VectorXd& mu,
                           bool* extrapolated = nullptr,
                           std::vector<Tensor2>* d_dmu = nullptr) const;

  /// d P_bar / d F_bar at R = I, expanded from the symmetric-stretch gradient
  /// by the symmetry rule d/dF12 = d/dF21 = 1/2 d/dU12.
  Tensor4 effective_stiffness(const Tensor2& u_bar, const Eigen::VectorXd& mu,
                              bool* extrapolated = nullptr) const;

  /// Constitutive response at a general deformation gradient: polar split,
  /// P(F) = R P(U), and the exact tangent including the rotation path and the
  /// chain rule through dU/dF.
  std::pair<Tensor2, Tensor4> constitutive_eval(const Tensor2& f_bar, const Eigen::VectorXd& mu,
                                                bool* extrapolated = nullptr) const;

  /// Microscopic stress field at a general deformation gradient (field of the
  /// stretch loading rotated forward by R).
  QuadratureStressField stress_field_at_deformation(const Tensor2& f_bar,
                                                    const Eigen::VectorXd& mu) const;

  ErrorEntry error_decomposition(const QuadratureStressField& test_field,
                                 const Tensor2& u_bar, const Eigen::VectorXd& mu) const;
  ErrorReport error_report(const SnapshotSet& test_set) const;

  void save(const std::filesystem::path& path) const;
  static SurrogateModel load(const std::filesystem::path& path);

 private:
  SurrogateModel() = default;

  PodBasis basis_;
  std::vector<GprModel> regressors_;
  ParamLayout layout_;
  std::vector<Tensor2> basis_averages_;
  std::uint64_t mesh_hash_ = 0;
  std::uint32_t bc_kind_ = 0;
};

}  // namespace rbhomog
