#include "rbhomog/micro_fem.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "rbhomog/errors.hpp"

namespace rbhomog {

namespace {

// dN/dX and w_q for every (element, quadrature point) in the reference
// configuration.
std::vector<Eigen::MatrixXd> reference_gradients(const Mesh& mesh) {
  std::vector<Eigen::MatrixXd> dndx;
  dndx.reserve(static_cast<std::size_t>(mesh.n_elements()) * 4);
  for (int e = 0; e < mesh.n_elements(); ++e) {
    const auto conn = mesh.element(e);
    for (const GaussPoint& gp : gauss_2x2()) {
      const ShapeEval s = shape_eval(mesh.element_type, gp.xi, gp.eta);
      Eigen::Matrix2d j = Eigen::Matrix2d::Zero();
      for (int n = 0; n < static_cast<int>(conn.size()); ++n) {
        const Eigen::Vector2d& x = mesh.nodes[conn[n]];
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) j(a, b) += x(a) * s.dn_dxi(n, b);
      }
      const Eigen::Matrix2d jinv = j.inverse();
      Eigen::MatrixXd g(conn.size(), 2);
      for (int n = 0; n < static_cast<int>(conn.size()); ++n)
        for (int a = 0; a < 2; ++a)
          g(n, a) = s.dn_dxi(n, 0) * jinv(0, a) + s.dn_dxi(n, 1) * jinv(1, a);
      dndx.push_back(std::move(g));
    }
  }
  return dndx;
}

const MaterialParams& phase_material(const std::vector<MaterialParams>& mu_per_phase, int phase) {
  if (phase < 0 || phase >= static_cast<int>(mu_per_phase.size()))
    throw std::invalid_argument("RveSolver: no material for phase " + std::to_string(phase));
  return mu_per_phase[phase];
}

}  // namespace

struct RveSolver::Impl {
  enum class Kind : unsigned char { Free, Fixed, Slave };

  std::vector<Kind> kind;
  std::vector<int> red;      // reduced index for free dofs, else -1
  std::vector<int> master;   // master dof for slave dofs, else -1
  std::vector<double> bc;    // prescribed value (fixed) or offset (slave)
  int n_red = 0;

  std::vector<Eigen::MatrixXd> dndx;
  Eigen::VectorXd affine;  // (f_bar(t) - I) X per dof
  Eigen::SparseMatrix<double> k;
  // The hyperelastic tangent has major symmetry, so the assembled matrix is
  // symmetric; LDLT is the fast path, with LU as fallback for the indefinite
  // iterates that can appear far from equilibrium.
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  bool ldlt_analyzed = false;
  bool lu_analyzed = false;
  std::vector<Eigen::Triplet<double>> trips;

  Eigen::VectorXd factor_and_solve(const Eigen::VectorXd& rhs) {
    if (!ldlt_analyzed) {
      ldlt.analyzePattern(k);
      ldlt_analyzed = true;
    }
    ldlt.factorize(k);
    if (ldlt.info() == Eigen::Success) {
      const Eigen::VectorXd x = ldlt.solve(rhs);
      if ((k * x - rhs).norm() <= 1e-8 * std::max(1.0, rhs.norm())) return x;
    }
    if (!lu_analyzed) {
      lu.analyzePattern(k);
      lu_analyzed = true;
    }
    lu.factorize(k);
    if (lu.info() != Eigen::Success) throw ElementInversion("tangent factorization failed");
    return lu.solve(rhs);
  }

  // Row/column index in the reduced system a dof contributes to, or -1.
  int map_dof(int d) const {
    if (kind[d] == Kind::Free) return red[d];
    if (kind[d] == Kind::Slave) {
      const int m = master[d];
      return kind[m] == Kind::Free ? red[m] : -1;
    }
    return -1;
  }

  void set_load(const Mesh& mesh, BcType bct, const Tensor2& f_bar) {
    const Tensor2 a = f_bar - Tensor2::Identity();
    const int nd = 2 * mesh.n_nodes();
    affine.resize(nd);
    for (int n = 0; n < mesh.n_nodes(); ++n) {
      const Eigen::Vector2d v = a * mesh.nodes[n];
      affine(2 * n) = v(0);
      affine(2 * n + 1) = v(1);
    }
    if (bct == BcType::Linear) {
      for (int d = 0; d < nd; ++d)
        if (kind[d] == Kind::Fixed) bc[d] = affine(d);
    } else {
      const auto& pp = *mesh.periodic;
      for (auto [s, m] : pp.pairs) {
        const Eigen::Vector2d off = a * (mesh.nodes[s] - mesh.nodes[m]);
        bc[2 * s] = off(0);
        bc[2 * s + 1] = off(1);
      }
      bc[2 * pp.anchor] = affine(2 * pp.anchor);
      bc[2 * pp.anchor + 1] = affine(2 * pp.anchor + 1);
    }
  }

  Eigen::VectorXd expand(const Eigen::VectorXd& u_red, int n_nodes) const {
    Eigen::VectorXd u(2 * n_nodes);
    for (int d = 0; d < 2 * n_nodes; ++d) {
      if (kind[d] == Kind::Free)
        u(d) = u_red(red[d]);
      else if (kind[d] == Kind::Fixed)
        u(d) = bc[d];
    }
    for (int d = 0; d < 2 * n_nodes; ++d)
      if (kind[d] == Kind::Slave) u(d) = u(master[d]) + bc[d];
    return u;
  }
};

RveSolver::RveSolver(const Mesh& mesh, BcType bc, NewtonOptions opts)
    : mesh_(mesh), bc_(bc), opts_(opts), layout_(quadrature_layout(mesh)), impl_(new Impl) {
  if (!(opts_.rel_tol > 0.0)) throw std::invalid_argument("RveSolver: tolerance must be positive");
  mesh.validate();
  if (bc == BcType::Periodic && !mesh.periodic)
    throw std::invalid_argument("RveSolver: periodic BCs need a mesh with periodic pairing");

  const int nd = 2 * mesh.n_nodes();
  impl_->kind.assign(nd, Impl::Kind::Free);
  impl_->red.assign(nd, -1);
  impl_->master.assign(nd, -1);
  impl_->bc.assign(nd, 0.0);

  if (bc == BcType::Linear) {
    for (int n : mesh.boundary_nodes) {
      impl_->kind[2 * n] = Impl::Kind::Fixed;
      impl_->kind[2 * n + 1] = Impl::Kind::Fixed;
    }
  } else {
    const auto& pp = *mesh.periodic;
    for (auto [s, m] : pp.pairs) {
      impl_->kind[2 * s] = Impl::Kind::Slave;
      impl_->kind[2 * s + 1] = Impl::Kind::Slave;
      impl_->master[2 * s] = 2 * m;
      impl_->master[2 * s + 1] = 2 * m + 1;
    }
    impl_->kind[2 * pp.anchor] = Impl::Kind::Fixed;
    impl_->kind[2 * pp.anchor + 1] = Impl::Kind::Fixed;
  }

  int r = 0;
  for (int d = 0; d < nd; ++d)
    if (impl_->kind[d] == Impl::Kind::Free) impl_->red[d] = r++;
  impl_->n_red = r;

  impl_->dndx = reference_gradients(mesh);
  impl_->k.resize(r, r);
}

RveSolver::~RveSolver() = default;

namespace {

struct AssembleResult {
  Eigen::VectorXd residual;
  double norm = 0.0;
};

}  // namespace

MicroSolution RveSolver::solve(const Tensor2& f_bar, const std::vector<MaterialParams>& mu_per_phase,
                               const Eigen::VectorXd* initial_fluctuation) {
  if (!(f_bar.determinant() > 0.0))
    throw std::invalid_argument("RveSolver: prescribed deformation gradient must have det > 0");

  Impl& im = *impl_;
  const int n_nodes = mesh_.n_nodes();
  const int npe = mesh_.nodes_per_elem();

  Eigen::VectorXd w_cur = Eigen::VectorXd::Zero(2 * n_nodes);
  if (initial_fluctuation) {
    if (initial_fluctuation->size() != 2 * n_nodes)
      throw std::invalid_argument("RveSolver: initial fluctuation has wrong size");
    w_cur = *initial_fluctuation;
  }

  // Assembles the reduced residual (and tangent) at total displacement u.
  auto assemble = [&](const Eigen::VectorXd& u, bool with_k) {
    AssembleResult out;
    out.residual = Eigen::VectorXd::Zero(im.n_red);
    if (with_k) {
      im.trips.clear();
      im.trips.reserve(static_cast<std::size_t>(mesh_.n_elements()) * npe * npe * 4);
    }
    Eigen::MatrixXd ue(npe, 2);
    for (int e = 0; e < mesh_.n_elements(); ++e) {
      const auto conn = mesh_.element(e);
      const MaterialParams& mu = phase_material(mu_per_phase, mesh_.phase[e]);
      for (int n = 0; n < npe; ++n) {
        ue(n, 0) = u(2 * conn[n]);
        ue(n, 1) = u(2 * conn[n] + 1);
      }
      for (int q = 0; q < 4; ++q) {
        const Eigen::MatrixXd& g = im.dndx[4 * e + q];
        const double wq = layout_.weights(4 * e + q);
        Tensor2 f = Tensor2::Identity();
        for (int n = 0; n < npe; ++n)
          for (int i = 0; i < 2; ++i)
            for (int a = 0; a < 2; ++a) f(i, a) += ue(n, i) * g(n, a);
        if (!(f.determinant() > 0.0))
          throw ElementInversion("element " + std::to_string(e) + " inverted during iteration");
        const Tensor2 p = pk1_stress(f, mu);
        for (int n = 0; n < npe; ++n) {
          for (int i = 0; i < 2; ++i) {
            const int row = im.map_dof(2 * conn[n] + i);
            if (row < 0) continue;
            out.residual(row) += wq * (p(i, 0) * g(n, 0) + p(i, 1) * g(n, 1));
          }
        }
        if (with_k) {
          const Tensor4 a4 = material_tangent(f, mu);
          for (int n = 0; n < npe; ++n) {
            for (int i = 0; i < 2; ++i) {
              const int row = im.map_dof(2 * conn[n] + i);
              if (row < 0) continue;
              for (int m = 0; m < npe; ++m) {
                for (int j = 0; j < 2; ++j) {
                  const int col = im.map_dof(2 * conn[m] + j);
                  if (col < 0) continue;
                  double v = 0.0;
                  for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) v += g(n, a) * a4(i, a, j, b) * g(m, b);
                  im.trips.emplace_back(row, col, wq * v);
                }
              }
            }
          }
        }
      }
    }
    out.norm = out.residual.norm();
    return out;
  };

  MicroSolution sol;
  double t_done = 0.0, dt = 1.0;
  int halvings = 0;
  double last_residual = std::numeric_limits<double>::quiet_NaN();

  while (t_done < 1.0 - 1e-14) {
    const double t_try = std::min(1.0, t_done + dt);
    const Tensor2 f_t = Tensor2::Identity() + t_try * (f_bar - Tensor2::Identity());
    im.set_load(mesh_, bc_, f_t);

    Eigen::VectorXd u_red(im.n_red);
    for (int d = 0; d < 2 * n_nodes; ++d)
      if (im.kind[d] == Impl::Kind::Free) u_red(im.red[d]) = im.affine(d) + w_cur(d);

    bool converged = false;
    std::vector<double> history;
    double r_ref = 0.0;
    Eigen::VectorXd u_full;
    try {
      for (int it = 0; it <= opts_.max_iter; ++it) {
        u_full = im.expand(u_red, n_nodes);
        AssembleResult res = assemble(u_full, /*with_k=*/true);
        history.push_back(res.norm);
        last_residual = res.norm;
        if (it == 0) r_ref = res.norm;
        if (res.norm <= std::max(opts_.rel_tol * r_ref, opts_.abs_tol)) {
          converged = true;
          break;
        }
        if (!std::isfinite(res.norm) || res.norm > 1e8 * std::max(1.0, r_ref)) break;
        if (it == opts_.max_iter) break;

        im.k.setFromTriplets(im.trips.begin(), im.trips.end());
        u_red -= im.factor_and_solve(res.residual);
        sol.newton_iterations++;
      }
    } catch (const ElementInversion&) {
      converged = false;
    }

    if (converged) {
      sol.substeps++;
      w_cur = u_full - im.affine;
      t_done = t_try;
      sol.residual_history = std::move(history);
      if (t_done < 1.0) dt = std::min(dt * 2.0, 1.0 - t_done);
    } else {
      dt *= 0.5;
      halvings++;
      if (halvings > opts_.max_halvings) {
        std::ostringstream msg;
        msg << "RveSolver: Newton diverged at load fraction " << t_try << " after " << halvings - 1
            << " halvings; last residual " << last_residual;
        throw SolverError(msg.str());
      }
    }
  }

  // Converged state: collect the quadrature stress field.
  const Tensor2 a = f_bar - Tensor2::Identity();
  Eigen::VectorXd u_full(2 * n_nodes);
  for (int n = 0; n < n_nodes; ++n) {
    const Eigen::Vector2d v = a * mesh_.nodes[n];
    u_full(2 * n) = v(0) + w_cur(2 * n);
    u_full(2 * n + 1) = v(1) + w_cur(2 * n + 1);
  }
  Eigen::VectorXd stress(4 * layout_.weights.size());
  Eigen::MatrixXd ue(npe, 2);
  for (int e = 0; e < mesh_.n_elements(); ++e) {
    const auto conn = mesh_.element(e);
    const MaterialParams& mu = phase_material(mu_per_phase, mesh_.phase[e]);
    for (int n = 0; n < npe; ++n) {
      ue(n, 0) = u_full(2 * conn[n]);
      ue(n, 1) = u_full(2 * conn[n] + 1);
    }
    for (int q = 0; q < 4; ++q) {
      const Eigen::MatrixXd& g = im.dndx[4 * e + q];
      Tensor2 f = Tensor2::Identity();
      for (int n = 0; n < npe; ++n)
        for (int i = 0; i < 2; ++i)
          for (int b = 0; b < 2; ++b) f(i, b) += ue(n, i) * g(n, b);
      const Tensor2 p = pk1_stress(f, mu);
      const int qg = 4 * e + q;
      stress(4 * qg) = p(0, 0);
      stress(4 * qg + 1) = p(0, 1);
      stress(4 * qg + 2) = p(1, 0);
      stress(4 * qg + 3) = p(1, 1);
    }
  }

  sol.fluctuation = std::move(w_cur);
  sol.stress_field = QuadratureStressField(std::move(stress), layout_.weights);
  sol.converged = true;
  return sol;
}

MicroSolution solve_rve(const Mesh& mesh, BcType bc, const Tensor2& u_bar,
                        const std::vector<MaterialParams>& mu_per_phase, NewtonOptions opts) {
  RveSolver solver(mesh, bc, opts);
  return solver.solve(u_bar, mu_per_phase);
}

Eigen::VectorXd deformation_gradient_field(const Mesh& mesh, const Eigen::VectorXd& fluctuation,
                                           const Tensor2& f_bar) {
  if (fluctuation.size() != 2 * mesh.n_nodes())
    throw std::invalid_argument("deformation_gradient_field: fluctuation size mismatch");
  const auto dndx = reference_gradients(mesh);
  const int npe = mesh.nodes_per_elem();
  const Tensor2 a = f_bar - Tensor2::Identity();

  Eigen::VectorXd out(static_cast<Eigen::Index>(mesh.n_elements()) * 16);
  Eigen::MatrixXd ue(npe, 2);
  for (int e = 0; e < mesh.n_elements(); ++e) {
    const auto conn = mesh.element(e);
    for (int n = 0; n < npe; ++n) {
      const Eigen::Vector2d v = a * mesh.nodes[conn[n]];
      ue(n, 0) = v(0) + fluctuation(2 * conn[n]);
      ue(n, 1) = v(1) + fluctuation(2 * conn[n] + 1);
    }
    for (int q = 0; q < 4; ++q) {
      const Eigen::MatrixXd& g = dndx[4 * e + q];
      Tensor2 f = Tensor2::Identity();
      for (int n = 0; n < npe; ++n)
        for (int i = 0; i < 2; ++i)
          for (int b = 0; b < 2; ++b) f(i, b) += ue(n, i) * g(n, b);
      const int qg = 4 * e + q;
      out(4 * qg) = f(0, 0);
      out(4 * qg + 1) = f(0, 1);
      out(4 * qg + 2) = f(1, 0);
      out(4 * qg + 3) = f(1, 1);
    }
  }
  return out;
}

Tensor2 average_deformation(const Mesh& mesh, const MicroSolution& solution, const Tensor2& f_bar) {
  const Eigen::VectorXd f = deformation_gradient_field(mesh, solution.fluctuation, f_bar);
  const Eigen::VectorXd& w = solution.stress_field.weights;
  Tensor2 avg = Tensor2::Zero();
  for (int q = 0; q < w.size(); ++q) {
    avg(0, 0) += w(q) * f(4 * q);
    avg(0, 1) += w(q) * f(4 * q + 1);
    avg(1, 0) += w(q) * f(4 * q + 2);
    avg(1, 1) += w(q) * f(4 * q + 3);
  }
  return avg / solution.stress_field.total_volume;
}

Tensor4 perturbation_stiffness(const Mesh& mesh, BcType bc, const Tensor2& f_bar,
                               const std::vector<MaterialParams>& mu_per_phase, double h,
                               NewtonOptions opts) {
  if (h <= 0.0) h = 1e-6 * std::max(1.0, f_bar.norm());
  // Perturbed solves run tighter than the base tolerance: finite differences
  // amplify solver noise by 1/h.
  NewtonOptions tight = opts;
  tight.rel_tol = std::min(opts.rel_tol, 1e-11);
  tight.abs_tol = std::min(opts.abs_tol, 1e-13);

  RveSolver solver(mesh, bc, tight);
  const MicroSolution base = solver.solve(f_bar, mu_per_phase);

  Tensor4 a_bar;
  for (int k = 0; k < 2; ++k)
    for (int l = 0; l < 2; ++l) {
      Tensor2 fp = f_bar, fm = f_bar;
      fp(k, l) += h;
      fm(k, l) -= h;
      Tensor2 pp, pm;
      try {
        pp = average_stress(solver.solve(fp, mu_per_phase, &base.fluctuation).stress_field);
        pm = average_stress(solver.solve(fm, mu_per_phase, &base.fluctuation).stress_field);
      } catch (const SolverError& err) {
        throw SolverError("perturbation_stiffness: component (" + std::to_string(k + 1) + "," +
                          std::to_string(l + 1) + ") failed: " + err.what());
      }
      const Tensor2 col = (pp - pm) / (2.0 * h);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) a_bar(i, j, k, l) = col(i, j);
    }
  return a_bar;
}

}  // namespace rbhomog
