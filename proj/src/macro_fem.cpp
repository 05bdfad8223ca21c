#include "rbhomog/macro_fem.hpp"

#include <Eigen/Sparse>
#include <chrono>
#include <cmath>
#include <sstream>

#include "rbhomog/errors.hpp"
#include "rbhomog/mesh_presets.hpp"
#include "rbhomog/parallel.hpp"

namespace rbhomog {

std::pair<Tensor2, Tensor4> AnalyticProvider::evaluate(const Tensor2& f_bar, int, int) {
  calls_.fetch_add(1);
  return {pk1_stress(f_bar, mu_), material_tangent(f_bar, mu_)};
}

NestedRveProvider::NestedRveProvider(const Mesh& rve_mesh, BcType bc,
                                     std::vector<MaterialParams> mu_per_phase, int max_workers,
                                     NewtonOptions rve_opts, double perturbation_h, bool warm_start)
    : rve_mesh_(rve_mesh),
      bc_(bc),
      mu_(std::move(mu_per_phase)),
      opts_(rve_opts),
      h_(perturbation_h),
      warm_start_(warm_start) {
  if (max_workers <= 0) max_workers = default_workers();
  // perturbed solves need tighter residuals than the finite difference step
  opts_.rel_tol = std::min(opts_.rel_tol, 1e-11);
  opts_.abs_tol = std::min(opts_.abs_tol, 1e-13);
  for (int w = 0; w < max_workers; ++w)
    solvers_.emplace_back(std::make_unique<RveSolver>(rve_mesh_, bc_, opts_));
}

std::pair<Tensor2, Tensor4> NestedRveProvider::evaluate(const Tensor2& f_bar, int point_id,
                                                        int worker) {
  calls_.fetch_add(1);
  if (worker < 0 || worker >= static_cast<int>(solvers_.size()))
    throw std::invalid_argument("NestedRveProvider: worker id out of range");
  RveSolver& solver = *solvers_[worker];

  Eigen::VectorXd initial;
  if (warm_start_) {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    if (point_id >= 0 && point_id < static_cast<int>(fluctuation_cache_.size()) &&
        fluctuation_cache_[point_id].size() > 0)
      initial = fluctuation_cache_[point_id];
  }

  MicroSolution base;
  try {
    base = solver.solve(f_bar, mu_, initial.size() > 0 ? &initial : nullptr);
  } catch (const SolverError& e) {
    std::ostringstream msg;
    msg << "nested RVE solve failed at macro point " << point_id << ": " << e.what();
    throw SolverError(msg.str());
  }
  if (warm_start_ && point_id >= 0) {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    if (point_id >= static_cast<int>(fluctuation_cache_.size()))
      fluctuation_cache_.resize(point_id + 1);
    fluctuation_cache_[point_id] = base.fluctuation;
  }

  const Tensor2 p_bar = average_stress(base.stress_field);

  const double h = h_ > 0.0 ? h_ : 1e-6 * std::max(1.0, f_bar.norm());
  Tensor4 a_bar;
  for (int k = 0; k < 2; ++k)
    for (int l = 0; l < 2; ++l) {
      Tensor2 fp = f_bar, fm = f_bar;
      fp(k, l) += h;
      fm(k, l) -= h;
      Tensor2 pp, pm;
      try {
        pp = average_stress(solver.solve(fp, mu_, &base.fluctuation).stress_field);
        pm = average_stress(solver.solve(fm, mu_, &base.fluctuation).stress_field);
      } catch (const SolverError& e) {
        throw SolverError("perturbation stiffness component (" + std::to_string(k + 1) + "," +
                          std::to_string(l + 1) + ") at macro point " + std::to_string(point_id) +
                          ": " + e.what());
      }
      const Tensor2 col = (pp - pm) / (2.0 * h);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) a_bar(i, j, k, l) = col(i, j);
    }
  return {p_bar, a_bar};
}

std::pair<Tensor2, Tensor4> SurrogateProvider::evaluate(const Tensor2& f_bar, int, int) {
  calls_.fetch_add(1);
  bool extrapolated = false;
  auto out = model_.constitutive_eval(f_bar, mu_, &extrapolated);
  if (extrapolated) extrapolations_.fetch_add(1);
  return out;
}

namespace {

struct MacroAssembler {
  const MacroProblem& problem;
  std::vector<Eigen::MatrixXd> dndx;  // per (element, qp)
  Eigen::VectorXd wq;                 // per qp
  std::vector<int> dof_map;           // reduced index or -1
  std::vector<char> fixed;            // per dof
  std::vector<double> bc_value;       // full-load Dirichlet value per dof
  Eigen::VectorXd f_ext;              // full-load external force, full dof vector
  int n_red = 0;

  explicit MacroAssembler(const MacroProblem& p) : problem(p) {
    const Mesh& mesh = p.mesh;
    if (mesh.element_type != ElementType::Quad4)
      throw std::invalid_argument("solve_macro: macro mesh must be quad4");
    mesh.validate();

    const QuadratureLayout layout = quadrature_layout(mesh);
    wq = layout.weights;
    dndx.reserve(static_cast<std::size_t>(mesh.n_elements()) * 4);
    for (int e = 0; e < mesh.n_elements(); ++e) {
      const auto conn = mesh.element(e);
      for (const GaussPoint& gp : gauss_2x2()) {
        const ShapeEval s = shape_eval(mesh.element_type, gp.xi, gp.eta);
        Eigen::Matrix2d j = Eigen::Matrix2d::Zero();
        for (int n = 0; n < 4; ++n) {
          const Eigen::Vector2d& x = mesh.nodes[conn[n]];
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) j(a, b) += x(a) * s.dn_dxi(n, b);
        }
        const Eigen::Matrix2d jinv = j.inverse();
        Eigen::MatrixXd g(4, 2);
        for (int n = 0; n < 4; ++n)
          for (int a = 0; a < 2; ++a)
            g(n, a) = s.dn_dxi(n, 0) * jinv(0, a) + s.dn_dxi(n, 1) * jinv(1, a);
        dndx.push_back(std::move(g));
      }
    }

    const int nd = 2 * mesh.n_nodes();
    fixed.assign(nd, 0);
    bc_value.assign(nd, 0.0);
    for (const auto& bc : p.dirichlet) {
      if (bc.node < 0 || bc.node >= mesh.n_nodes() || bc.component < 0 || bc.component > 1)
        throw std::invalid_argument("solve_macro: bad Dirichlet entry");
      fixed[2 * bc.node + bc.component] = 1;
      bc_value[2 * bc.node + bc.component] = bc.value;
    }
    if (p.dirichlet.empty())
      throw std::invalid_argument("solve_macro: no Dirichlet constraints (rigid modes)");
    dof_map.assign(nd, -1);
    for (int d = 0; d < nd; ++d)
      if (!fixed[d]) dof_map[d] = n_red++;

    // dead-load tractions on reference edges, trapezoidal per segment
    f_ext = Eigen::VectorXd::Zero(nd);
    for (const auto& tr : p.neumann) {
      const double len = (mesh.nodes[tr.n1] - mesh.nodes[tr.n0]).norm();
      for (int c = 0; c < 2; ++c) {
        f_ext(2 * tr.n0 + c) += 0.5 * len * tr.traction(c);
        f_ext(2 * tr.n1 + c) += 0.5 * len * tr.traction(c);
      }
    }
  }

  int n_qp() const { return static_cast<int>(wq.size()); }

  // deformation gradients at every qp for the current displacement
  Eigen::VectorXd deformation_field(const Eigen::VectorXd& u) const {
    const Mesh& mesh = problem.mesh;
    Eigen::VectorXd f_field(4 * n_qp());
    for (int e = 0; e < mesh.n_elements(); ++e) {
      const auto conn = mesh.element(e);
      for (int q = 0; q < 4; ++q) {
        const Eigen::MatrixXd& g = dndx[4 * e + q];
        Tensor2 f = Tensor2::Identity();
        for (int n = 0; n < 4; ++n)
          for (int i = 0; i < 2; ++i)
            for (int b = 0; b < 2; ++b) f(i, b) += u(2 * conn[n] + i) * g(n, b);
        const int qg = 4 * e + q;
        f_field(4 * qg) = f(0, 0);
        f_field(4 * qg + 1) = f(0, 1);
        f_field(4 * qg + 2) = f(1, 0);
        f_field(4 * qg + 3) = f(1, 1);
      }
    }
    return f_field;
  }
};

}  // namespace

MacroSolution solve_macro(const MacroProblem& problem, ConstitutiveProvider& provider,
                          const MacroOptions& opts) {
  using clock = std::chrono::steady_clock;
  const MacroAssembler asmb(problem);
  const Mesh& mesh = problem.mesh;
  const int nd = 2 * mesh.n_nodes();
  const int n_qp = asmb.n_qp();
  if (problem.load_steps < 1) throw std::invalid_argument("solve_macro: load_steps must be >= 1");

  MacroSolution sol;
  sol.n_qp = n_qp;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(nd);

  Eigen::SparseMatrix<double> k_red(asmb.n_red, asmb.n_red);
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  bool analyzed = false;
  std::vector<Eigen::Triplet<double>> trips;

  std::vector<Tensor2> p_at(n_qp);
  std::vector<Tensor4> a_at(n_qp);

  for (int step = 1; step <= problem.load_steps; ++step) {
    const auto t_start = clock::now();
    const double t = double(step) / problem.load_steps;
    for (int d = 0; d < nd; ++d)
      if (asmb.fixed[d]) u(d) = t * asmb.bc_value[d];
    const Eigen::VectorXd f_ext_t = t * asmb.f_ext;

    MacroStep out;
    bool converged = false;
    double r_ref = 0.0;
    Eigen::VectorXd f_field;
    for (int it = 0; it <= opts.newton.max_iter; ++it) {
      f_field = asmb.deformation_field(u);

      // constitutive sweep, parallel over quadrature points
      parallel_for(n_qp, opts.workers, [&](int q, int worker) {
        Tensor2 f;
        f << f_field(4 * q), f_field(4 * q + 1), f_field(4 * q + 2), f_field(4 * q + 3);
        if (!(f.determinant() > 0.0))
          throw SolverError("solve_macro: macro deformation inverted at point " +
                            std::to_string(q) + " in step " + std::to_string(step));
        std::tie(p_at[q], a_at[q]) = provider.evaluate(f, q, worker);
        if (!a_at[q].all_finite() || !p_at[q].allFinite())
          throw SolverError("solve_macro: provider returned a non-finite response at point " +
                            std::to_string(q));
      });

      // residual and tangent
      Eigen::VectorXd r = Eigen::VectorXd::Zero(asmb.n_red);
      trips.clear();
      for (int e = 0; e < mesh.n_elements(); ++e) {
        const auto conn = mesh.element(e);
        for (int q = 0; q < 4; ++q) {
          const int qg = 4 * e + q;
          const Eigen::MatrixXd& g = asmb.dndx[qg];
          const double w = asmb.wq(qg);
          for (int n = 0; n < 4; ++n) {
            for (int i = 0; i < 2; ++i) {
              const int row = asmb.dof_map[2 * conn[n] + i];
              if (row < 0) continue;
              r(row) += w * (p_at[qg](i, 0) * g(n, 0) + p_at[qg](i, 1) * g(n, 1));
              for (int m = 0; m < 4; ++m)
                for (int jj = 0; jj < 2; ++jj) {
                  const int col = asmb.dof_map[2 * conn[m] + jj];
                  if (col < 0) continue;
                  double v = 0.0;
                  for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) v += g(n, a) * a_at[qg](i, a, jj, b) * g(m, b);
                  trips.emplace_back(row, col, w * v);
                }
            }
          }
        }
      }
      for (int d = 0; d < nd; ++d)
        if (!asmb.fixed[d]) r(asmb.dof_map[d]) -= f_ext_t(d);

      const double r_norm = r.norm();
      out.residual_history.push_back(r_norm);
      out.newton_iterations = it;
      if (it == 0) r_ref = std::max(r_norm, 1e-30);
      if (r_norm <= std::max(opts.newton.rel_tol * r_ref,
                             opts.newton.abs_tol * (1.0 + f_ext_t.norm()))) {
        converged = true;
        break;
      }
      // A provider evaluates its response only to finite precision; once the
      // residual has dropped six orders and flatlines, it has reached that
      // floor and the step counts as converged.
      const auto& hist = out.residual_history;
      if (it >= 2 && r_norm <= 1e-6 * r_ref) {
        const double r1 = hist[it - 1];
        if (r_norm > 0.7 * r1 && r_norm < 1.3 * r1) {
          converged = true;
          break;
        }
      }
      if (!std::isfinite(r_norm) || it == opts.newton.max_iter) break;

      k_red.setFromTriplets(trips.begin(), trips.end());
      if (!analyzed) {
        lu.analyzePattern(k_red);
        analyzed = true;
      }
      lu.factorize(k_red);
      if (lu.info() != Eigen::Success)
        throw SolverError("solve_macro: singular tangent in step " + std::to_string(step));
      const Eigen::VectorXd du = lu.solve(r);
      for (int d = 0; d < nd; ++d)
        if (!asmb.fixed[d]) u(d) -= du(asmb.dof_map[d]);
    }

    if (!converged) {
      std::ostringstream msg;
      msg << "solve_macro: Newton diverged in load step " << step << " of " << problem.load_steps
          << "; residuals";
      for (double r : out.residual_history) msg << " " << r;
      throw SolverError(msg.str());
    }

    out.displacement = u;
    out.f_field = f_field;
    out.p_field.resize(4 * n_qp);
    for (int q = 0; q < n_qp; ++q) {
      out.p_field(4 * q) = p_at[q](0, 0);
      out.p_field(4 * q + 1) = p_at[q](0, 1);
      out.p_field(4 * q + 2) = p_at[q](1, 0);
      out.p_field(4 * q + 3) = p_at[q](1, 1);
    }
    out.wall_ms =
        std::chrono::duration<double, std::milli>(clock::now() - t_start).count();
    sol.total_wall_ms += out.wall_ms;
    sol.steps.push_back(std::move(out));
  }

  sol.constitutive_calls = provider.calls();
  return sol;
}

MacroProblem cooks_membrane(int n_elem_per_side, double traction, int steps) {
  if (n_elem_per_side < 1) throw std::invalid_argument("cooks_membrane: n must be >= 1");
  MacroProblem p;
  p.mesh = build_mesh({.preset = MeshSpec::Preset::Cook, .resolution = n_elem_per_side});
  p.load_steps = steps;
  for (int n : p.mesh.node_sets.at("left")) {
    p.dirichlet.push_back({n, 0, 0.0});
    p.dirichlet.push_back({n, 1, 0.0});
  }
  for (const auto& e : p.mesh.edge_sets.at("right"))
    p.neumann.push_back({e[0], e[1], Eigen::Vector2d(0.0, traction)});
  return p;
}

ComparisonReport compare_solutions(const MacroProblem& problem, const MacroSolution& reference,
                                   const MacroSolution& test, const MicroCompareContext* micro) {
  if (reference.steps.size() != test.steps.size() || reference.n_qp != test.n_qp)
    throw std::invalid_argument("compare_solutions: solutions have different shapes");
  if (reference.steps.empty()) throw std::invalid_argument("compare_solutions: empty solutions");

  const MacroStep& ref = reference.steps.back();
  const MacroStep& tst = test.steps.back();
  const int n_qp = reference.n_qp;

  ComparisonReport report;
  for (int c = 0; c < 4; ++c) {
    double mean_abs = 0.0;
    for (int q = 0; q < n_qp; ++q) mean_abs += std::abs(ref.p_field(4 * q + c));
    mean_abs = std::max(mean_abs / n_qp, 1e-300);
    double max_err = 0.0, mean_err = 0.0;
    for (int q = 0; q < n_qp; ++q) {
      const double err = std::abs(ref.p_field(4 * q + c) - tst.p_field(4 * q + c)) / mean_abs;
      max_err = std::max(max_err, err);
      mean_err += err;
    }
    report.stress[c] = {max_err, mean_err / n_qp};
  }

  const double u_scale = std::max(ref.displacement.cwiseAbs().maxCoeff(), 1e-300);
  report.displacement_max =
      (ref.displacement - tst.displacement).cwiseAbs().maxCoeff() / u_scale;

  if (micro && micro->model && micro->rve_mesh) {
    RveSolver solver(*micro->rve_mesh, micro->bc, NewtonOptions{});
    for (int point : micro->point_ids) {
      if (point < 0 || point >= n_qp)
        throw std::invalid_argument("compare_solutions: micro point id out of range");
      Tensor2 f;
      f << ref.f_field(4 * point), ref.f_field(4 * point + 1), ref.f_field(4 * point + 2),
          ref.f_field(4 * point + 3);
      const QuadratureStressField hf = solver.solve(f, micro->mu_per_phase).stress_field;
      const QuadratureStressField rom = micro->model->stress_field_at_deformation(f, micro->mu);

      // P_yx comparison normalized by the mean absolute reference value
      double mean_abs = 0.0;
      for (int q = 0; q < hf.n_qp(); ++q) mean_abs += std::abs(hf.stress(4 * q + 2));
      mean_abs = std::max(mean_abs / hf.n_qp(), 1e-300);
      double max_err = 0.0;
      for (int q = 0; q < hf.n_qp(); ++q)
        max_err =
            std::max(max_err, std::abs(hf.stress(4 * q + 2) - rom.stress(4 * q + 2)) / mean_abs);
      report.micro_max_error.push_back(max_err);
    }
  }
  return report;
}

}  // namespace rbhomog
