#pragma once

#include <Eigen/Sparse>
#include <memory>
#include <vector>

#include "rbhomog/field.hpp"
#include "rbhomog/mesh.hpp"
#include "rbhomog/tensor.hpp"

namespace rbhomog {

enum class BcType { Linear, Periodic };

struct NewtonOptions {
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  int max_iter = 25;
  int max_halvings = 8;  // load-bisection depth on divergence
};

struct MicroSolution {
  Eigen::VectorXd fluctuation;  // 2*n_nodes, w = u - (Fbar - I) X
  QuadratureStressField stress_field;
  bool converged = false;
  int newton_iterations = 0;
  int substeps = 0;
  std::vector<double> residual_history;  // final substep
};

/// High-fidelity RVE solver: quasi-static Neo-Hookean balance under a
/// prescribed macroscopic deformation gradient, with linear-displacement or
/// periodic fluctuation boundary conditions. One instance per worker thread;
/// instances share nothing.
class RveSolver {
 public:
  RveSolver(const Mesh& mesh, BcType bc, NewtonOptions opts = {});
  ~RveSolver();
  RveSolver(const RveSolver&) = delete;
  RveSolver& operator=(const RveSolver&) = delete;

  /// Solves at deformation gradient f_bar (any invertible tensor; snapshot
  /// loading passes symmetric stretches, stiffness perturbations may not be
  /// symmetric). An initial fluctuation warm-starts the Newton iteration.
  MicroSolution solve(const Tensor2& f_bar, const std::vector<MaterialParams>& mu_per_phase,
                      const Eigen::VectorXd* initial_fluctuation = nullptr);

  const Mesh& mesh() const { return mesh_; }
  const QuadratureLayout& layout() const { return layout_; }
  BcType bc() const { return bc_; }

 private:
  struct Impl;
  const Mesh& mesh_;
  BcType bc_;
  NewtonOptions opts_;
  QuadratureLayout layout_;
  std::unique_ptr<Impl> impl_;
};

/// One-off convenience wrapper around RveSolver.
MicroSolution solve_rve(const Mesh& mesh, BcType bc, const Tensor2& u_bar,
                        const std::vector<MaterialParams>& mu_per_phase, NewtonOptions opts = {});

/// Deformation gradients F = I + grad(u) at every quadrature point for the
/// displacement field implied by (f_bar, fluctuation), layout as stress.
Eigen::VectorXd deformation_gradient_field(const Mesh& mesh, const Eigen::VectorXd& fluctuation,
                                           const Tensor2& f_bar);

/// Volume average of the deformation gradient of a converged solution.
Tensor2 average_deformation(const Mesh& mesh, const MicroSolution& solution, const Tensor2& f_bar);

/// Effective tangent by central differences of the effective stress over the
/// components of f_bar; each entry comes from a converged RVE solve warm
/// started from the base solution. h <= 0 selects 1e-6 * max(1, |f_bar|_F).
Tensor4 perturbation_stiffness(const Mesh& mesh, BcType bc, const Tensor2& f_bar,
                               const std::vector<MaterialParams>& mu_per_phase, double h = 0.0,
                               NewtonOptions opts = {});

}  // namespace rbhomog
