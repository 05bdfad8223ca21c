#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "rbhomog/mesh.hpp"
#include "rbhomog/micro_fem.hpp"
#include "rbhomog/surrogate.hpp"
#include "rbhomog/tensor.hpp"

namespace rbhomog {

/// Constitutive contract of the macro solver: deformation gradient in,
/// stress and tangent out. Hyperelastic, hence stateless across calls; the
/// point id keys optional warm-start caches and the worker id selects
/// per-thread resources. Implementations must tolerate concurrent calls with
/// distinct point ids.
class ConstitutiveProvider {
 public:
  virtual ~ConstitutiveProvider() = default;
  virtual std::pair<Tensor2, Tensor4> evaluate(const Tensor2& f_bar, int point_id, int worker) = 0;
  virtual long calls() const = 0;
};

/// Closed-form Neo-Hookean response.
class AnalyticProvider : public ConstitutiveProvider {
 public:
  explicit AnalyticProvider(MaterialParams mu) : mu_(mu) {}
  std::pair<Tensor2, Tensor4> evaluate(const Tensor2& f_bar, int, int) override;
  long calls() const override { return calls_.load(); }

 private:
  MaterialParams mu_;
  std::atomic<long> calls_{0};
};

/// FE^2 reference: one RVE solve for the stress plus a central-difference
/// perturbation sweep for the tangent, warm started per macro point.
class NestedRveProvider : public ConstitutiveProvider {
 public:
  NestedRveProvider(const Mesh& rve_mesh, BcType bc, std::vector<MaterialParams> mu_per_phase,
                    int max_workers, NewtonOptions rve_opts = {}, double perturbation_h = 0.0,
                    bool warm_start = true);
  std::pair<Tensor2, Tensor4> evaluate(const Tensor2& f_bar, int point_id, int worker) override;
  long calls() const override { return calls_.load(); }

 private:
  const Mesh& rve_mesh_;
  BcType bc_;
  std::vector<MaterialParams> mu_;
  NewtonOptions opts_;
  double h_;
  bool warm_start_;
  std::vector<std::unique_ptr<RveSolver>> solvers_;  // one per worker
  std::mutex cache_mutex_;
  std::vector<Eigen::VectorXd> fluctuation_cache_;   // per macro point id
  std::atomic<long> calls_{0};
};

/// Learned constitutive model (polar split + basis/regressor evaluation).
class SurrogateProvider : public ConstitutiveProvider {
 public:
  SurrogateProvider(const SurrogateModel& model, Eigen::VectorXd mu)
      : model_(model), mu_(std::move(mu)) {}
  std::pair<Tensor2, Tensor4> evaluate(const Tensor2& f_bar, int, int) override;
  long calls() const override { return calls_.load(); }
  long extrapolations() const { return extrapolations_.load(); }

 private:
  const SurrogateModel& model_;
  Eigen::VectorXd mu_;
  std::atomic<long> calls_{0};
  std::atomic<long> extrapolations_{0};
};

/// Macroscale boundary value problem on a quad4 mesh: per-component Dirichlet
/// values and dead-load edge tractions, both at full load, applied in equal
/// increments.
struct MacroProblem {
  Mesh mesh;
  struct DirichletBc {
    int node;
    int component;  // 0 = x, 1 = y
    double value;
  };
  std::vector<DirichletBc> dirichlet;
  struct TractionBc {
    int n0, n1;
    Eigen::Vector2d traction;  // force per reference length
  };
  std::vector<TractionBc> neumann;
  int load_steps = 1;
};

struct MacroStep {
  Eigen::VectorXd displacement;  // 2 * n_nodes
  Eigen::VectorXd f_field;       // 4 per quadrature point
  Eigen::VectorXd p_field;       // 4 per quadrature point
  int newton_iterations = 0;
  double wall_ms = 0.0;
  std::vector<double> residual_history;
};

struct MacroSolution {
  std::vector<MacroStep> steps;
  long constitutive_calls = 0;
  int n_qp = 0;
  double total_wall_ms = 0.0;
};

struct MacroOptions {
  // 1e-8 on the macro residual: constitutive providers evaluate their
  // response to ~1e-9 relative at best, so demanding more only stalls Newton
  // at the provider noise floor.
  NewtonOptions newton{.rel_tol = 1e-8};
  int workers = 0;  // provider-call parallelism
};

MacroSolution solve_macro(const MacroProblem& problem, ConstitutiveProvider& provider,
                          const MacroOptions& opts = {});

/// Standard tapered Cook membrane, left edge clamped, right edge loaded
/// vertically; n controls the 2n x n element layout.
MacroProblem cooks_membrane(int n_elem_per_side, double traction, int steps);

/// Per-component relative stress errors between two solutions of the same
/// problem, normalized by the mean absolute reference component.
struct ComparisonReport {
  struct ComponentError {
    double max = 0.0;
    double mean = 0.0;
  };
  std::array<ComponentError, 4> stress;  // P11, P12, P21, P22
  double displacement_max = 0.0;         // relative to the max reference magnitude
  std::vector<double> micro_max_error;   // per requested micro point
};

/// Optional microscopic field comparison context: re-solves the RVE at the
/// reference deformation of selected macro points and compares against the
/// surrogate stress field (P_yx, normalized by the mean absolute reference).
struct MicroCompareContext {
  const Mesh* rve_mesh = nullptr;
  BcType bc = BcType::Linear;
  std::vector<MaterialParams> mu_per_phase;
  const SurrogateModel* model = nullptr;
  Eigen::VectorXd mu;
  std::vector<int> point_ids;
};

ComparisonReport compare_solutions(const MacroProblem& problem, const MacroSolution& reference,
                                   const MacroSolution& test,
                                   const MicroCompareContext* micro = nullptr);

}  // namespace rbhomog
