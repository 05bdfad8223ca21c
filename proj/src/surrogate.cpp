#include "rbhomog/surrogate.hpp"

#include <cmath>

#include "rbhomog/errors.hpp"
#include "rbhomog/io.hpp"
#include "rbhomog/parallel.hpp"

namespace rbhomog {

Eigen::VectorXd ParamLayout::flatten(const Tensor2& u_bar, const Eigen::VectorXd& mu) const {
  if ((u_bar - u_bar.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, u_bar.norm()))
    throw std::invalid_argument("SurrogateModel: stretch tensor must be symmetric");
  if (mu.size() != material_dim())
    throw std::invalid_argument("SurrogateModel: expected " + std::to_string(material_dim()) +
                                " material scalars, got " + std::to_string(mu.size()));
  Eigen::VectorXd x(dim());
  x(0) = u_bar(0, 0);
  x(1) = u_bar(1, 1);
  x(2) = 0.5 * (u_bar(0, 1) + u_bar(1, 0));
  x.tail(mu.size()) = mu;
  return x;
}

bool ParamLayout::extrapolates(const Eigen::VectorXd& x) const {
  for (int k = 0; k < dim(); ++k) {
    const double span = std::max(hi(k) - lo(k), 1e-300);
    if (x(k) < lo(k) - 0.1 * span || x(k) > hi(k) + 0.1 * span) return true;
  }
  return false;
}

namespace {

SnapshotSet prefix_subset(const SnapshotSet& set, int count) {
  SnapshotSet out;
  out.stress = set.stress.leftCols(count);
  out.weights = set.weights;
  out.total_volume = set.total_volume;
  out.params.assign(set.params.begin(), set.params.begin() + count);
  out.mesh_hash = set.mesh_hash;
  out.bc_kind = set.bc_kind;
  out.provenance = set.provenance;
  return out;
}

std::vector<Tensor2> average_basis_functions(const PodBasis& basis) {
  std::vector<Tensor2> avg(basis.size());
  for (int l = 0; l < basis.size(); ++l) avg[l] = average_stress(basis.function(l));
  return avg;
}

}  // namespace

SurrogateModel SurrogateModel::train(const SnapshotSet& set, const TrainOptions& opts) {
  set.validate();
  const int n = set.n();
  const int n_pod = opts.n_pod > 0 ? opts.n_pod : n;
  const int n_reg = opts.n_reg > 0 ? opts.n_reg : n;
  if (n_pod > n || n_reg > n)
    throw std::invalid_argument("SurrogateModel::train: prefix sizes exceed the snapshot count");
  if (n_reg < 2) throw std::invalid_argument("SurrogateModel::train: regression needs >= 2 snapshots");

  SurrogateModel m;
  m.basis_ = compute_basis(n_pod == n ? set : prefix_subset(set, n_pod), opts.selector);
  m.mesh_hash_ = set.mesh_hash;
  m.bc_kind_ = set.bc_kind;

  const int d = set.params[0].dim();
  Eigen::MatrixXd x(n_reg, d);
  for (int i = 0; i < n_reg; ++i) x.row(i) = set.params[i].flat().transpose();
  m.layout_.lo = x.colwise().minCoeff();
  m.layout_.hi = x.colwise().maxCoeff();

  // target matrix: alpha_l for the first n_reg snapshots
  Eigen::MatrixXd alpha(n_reg, m.basis_.size());
  for (int i = 0; i < n_reg; ++i)
    alpha.row(i) = project_coefficients(Eigen::VectorXd(set.stress.col(i)), m.basis_).transpose();

  // one independent fit per basis coefficient
  std::vector<std::unique_ptr<GprModel>> fitted(m.basis_.size());
  parallel_for(m.basis_.size(), opts.workers, [&](int l, int) {
    fitted[l] = std::make_unique<GprModel>(GprModel::fit(x, alpha.col(l), opts.gpr));
  });
  m.regressors_.reserve(m.basis_.size());
  for (int l = 0; l < m.basis_.size(); ++l) m.regressors_.push_back(std::move(*fitted[l]));

  m.basis_averages_ = average_basis_functions(m.basis_);
  return m;
}

Eigen::VectorXd SurrogateModel::coefficients(const Tensor2& u_bar, const Eigen::VectorXd& mu,
                                             bool* extrapolated) const {
  if (!(u_bar.determinant() > 0.0) || !(u_bar(0, 0) > 0.0))
    throw std::invalid_argument("SurrogateModel: stretch tensor must be positive definite");
  const Eigen::VectorXd xq = layout_.flatten(u_bar, mu);
  if (extrapolated) *extrapolated = layout_.extrapolates(xq);
  Eigen::VectorXd a(basis_size());
  for (int l = 0; l < basis_size(); ++l) a(l) = regressors_[l].predict_mean(xq);
  return a;
}

QuadratureStressField SurrogateModel::stress_field(const Tensor2& u_bar,
                                                   const Eigen::VectorXd& mu,
                                                   bool* extrapolated) const {
  const Eigen::VectorXd a = coefficients(u_bar, mu, extrapolated);
  return {reconstruct_stress(basis_, a), basis_.weights};
}

Tensor2 SurrogateModel::effective_stress(const Tensor2& u_bar, const Eigen::VectorXd& mu,
                                         bool* extrapolated, std::vector<Tensor2>* d_dmu) const {
  const Eigen::VectorXd xq = layout_.flatten(u_bar, mu);
  if (!(u_bar.determinant() > 0.0) || !(u_bar(0, 0) > 0.0))
    throw std::invalid_argument("SurrogateModel: stretch tensor must be positive definite");
  if (extrapolated) *extrapolated = layout_.extrapolates(xq);

  Tensor2 p = Tensor2::Zero();
  for (int l = 0; l < basis_size(); ++l)
    p += regressors_[l].predict_mean(xq) * basis_averages_[l];

  if (d_dmu) {
    d_dmu->assign(layout_.material_dim(), Tensor2::Zero());
    for (int l = 0; l < basis_size(); ++l) {
      const Eigen::VectorXd g = regressors_[l].predict_gradient(xq);
      for (int j = 0; j < layout_.material_dim(); ++j)
        (*d_dmu)[j] += g(3 + j) * basis_averages_[l];
    }
  }
  return p;
}

namespace {

// Symmetric-stretch gradient of one coefficient as a 2x2 matrix: the single
// U12 parameter covers both off-diagonal slots.
Tensor2 symmetric_gradient(const Eigen::VectorXd& g) {
  Tensor2 m;
  m << g(0), 0.5 * g(2), 0.5 * g(2), g(1);
  return m;
}

}  // namespace

Tensor4 SurrogateModel::effective_stiffness(const Tensor2& u_bar, const Eigen::VectorXd& mu,
                                            bool* extrapolated) const {
  const Eigen::VectorXd xq = layout_.flatten(u_bar, mu);
  if (extrapolated) *extrapolated = layout_.extrapolates(xq);
  Tensor4 a;
  for (int l = 0; l < basis_size(); ++l) {
    const Tensor2 g = symmetric_gradient(regressors_[l].predict_gradient(xq));
    const Tensor2& b = basis_averages_[l];
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k)
          for (int q = 0; q < 2; ++q) a(i, j, k, q) += b(i, j) * g(k, q);
  }
  return a;
}

std::pair<Tensor2, Tensor4> SurrogateModel::constitutive_eval(const Tensor2& f_bar,
                                                              const Eigen::VectorXd& mu,
                                                              bool* extrapolated) const {
  if (!(f_bar.determinant() > 0.0))
    throw std::invalid_argument("SurrogateModel: deformation gradient must have det > 0");
  const auto [r, u] = polar_stretch(f_bar);
  const Eigen::VectorXd xq = layout_.flatten(u, mu);
  if (extrapolated) *extrapolated = layout_.extrapolates(xq);

  // stress and coefficient gradients in the stretch frame
  Tensor2 p_u = Tensor2::Zero();
  std::vector<Tensor2> grads(basis_size());
  for (int l = 0; l < basis_size(); ++l) {
    p_u += regressors_[l].predict_mean(xq) * basis_averages_[l];
    grads[l] = symmetric_gradient(regressors_[l].predict_gradient(xq));
  }

  // exact tangent at F = U (R = I): chain rule through the polar factors
  const Tensor4 du_df = polar_stretch_derivative(u);
  const Tensor4 dr_df = polar_rotation_derivative(u);

  Tensor4 a_u;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int q = 0; q < 2; ++q) {
          double v = 0.0;
          for (int pi = 0; pi < 2; ++pi) v += dr_df(i, pi, k, q) * p_u(pi, j);
          a_u(i, j, k, q) = v;
        }
  for (int l = 0; l < basis_size(); ++l) {
    const Tensor2& b = basis_averages_[l];
    // d alpha_l / d F_kq = sum_pq G(p,s) dU(p,s)/dF(k,q)
    Tensor2 da = Tensor2::Zero();
    for (int k = 0; k < 2; ++k)
      for (int q = 0; q < 2; ++q) {
        double v = 0.0;
        for (int pi = 0; pi < 2; ++pi)
          for (int s = 0; s < 2; ++s) v += grads[l](pi, s) * du_df(pi, s, k, q);
        da(k, q) = v;
      }
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k)
          for (int q = 0; q < 2; ++q) a_u(i, j, k, q) += b(i, j) * da(k, q);
  }

  // transform to the rotated configuration (material objectivity):
  // P(F) = R P(U),  A_ijkl(F) = R_im A_mjnl(U) R_kn
  const Tensor2 p_out = r * p_u;
  Tensor4 a_out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int q = 0; q < 2; ++q) {
          double v = 0.0;
          for (int mm = 0; mm < 2; ++mm)
            for (int nn = 0; nn < 2; ++nn) v += r(i, mm) * a_u(mm, j, nn, q) * r(k, nn);
          a_out(i, j, k, q) = v;
        }
  return {p_out, a_out};
}

QuadratureStressField SurrogateModel::stress_field_at_deformation(const Tensor2& f_bar,
                                                                  const Eigen::VectorXd& mu) const {
  const auto [r, u] = polar_stretch(f_bar);
  QuadratureStressField field = stress_field(u, mu);
  for (int q = 0; q < field.n_qp(); ++q) field.set(q, Tensor2(r * field.at(q)));
  return field;
}

ErrorEntry SurrogateModel::error_decomposition(const QuadratureStressField& test_field,
                                               const Tensor2& u_bar,
                                               const Eigen::VectorXd& mu) const {
  if (test_field.n_qp() != basis_.n_qp())
    throw std::invalid_argument("error_decomposition: quadrature layout mismatch");

  const Eigen::VectorXd alpha_true = project_coefficients(test_field, basis_);
  const Eigen::VectorXd alpha_hat = coefficients(u_bar, mu);

  ErrorEntry e;
  const double norm_sq = test_field.inner(test_field);
  e.projection = std::sqrt(std::max(0.0, norm_sq - alpha_true.squaredNorm()));
  e.regression = (alpha_true - alpha_hat).norm();

  const QuadratureStressField err{test_field.stress - reconstruct_stress(basis_, alpha_hat),
                                  basis_.weights};
  e.total = err.l2_norm();
  return e;
}

ErrorReport SurrogateModel::error_report(const SnapshotSet& test_set) const {
  if (test_set.n_qp() != basis_.n_qp())
    throw std::invalid_argument("error_report: quadrature layout mismatch");
  ErrorReport report;
  report.per_snapshot.resize(test_set.n());
  for (int i = 0; i < test_set.n(); ++i) {
    const auto& p = test_set.params[i];
    report.per_snapshot[i] =
        error_decomposition(test_set.field(i), p.stretch_tensor(), p.material);
    report.total += report.per_snapshot[i].total;
    report.projection += report.per_snapshot[i].projection;
    report.regression += report.per_snapshot[i].regression;
  }
  report.total /= test_set.n();
  report.projection /= test_set.n();
  report.regression /= test_set.n();
  return report;
}

namespace {
constexpr char kModelMagic[8] = {'R', 'B', 'S', 'U', 'R', 'M', '0', '1'};
constexpr char kModelEnd[8] = {'R', 'B', 'S', 'U', 'R', 'N', 'D', '\0'};

void write_vector(BinaryWriter& w, const Eigen::VectorXd& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  w.f64_array(v.data(), v.size());
}

Eigen::VectorXd read_vector(BinaryReader& r) {
  const std::uint32_t n = r.u32();
  if (n > 500'000'000u) throw FormatError("model archive: implausible vector length");
  Eigen::VectorXd v(n);
  r.f64_array(v.data(), n);
  return v;
}

void write_matrix(BinaryWriter& w, const Eigen::MatrixXd& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  w.f64_array(m.data(), static_cast<std::size_t>(m.size()));
}

Eigen::MatrixXd read_matrix(BinaryReader& r) {
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  if (std::uint64_t(rows) * cols > 2'000'000'000ull)
    throw FormatError("model archive: implausible matrix shape");
  Eigen::MatrixXd m(rows, cols);
  r.f64_array(m.data(), static_cast<std::size_t>(m.size()));
  return m;
}

}  // namespace

void SurrogateModel::save(const std::filesystem::path& path) const {
  BinaryWriter w(path);
  w.magic(kModelMagic);
  w.u32(1);  // version
  w.u32(bc_kind_);
  w.u64(mesh_hash_);
  w.u32(static_cast<std::uint32_t>(basis_size()));
  w.f64(basis_.total_volume);
  w.f64(basis_.energy_captured);
  write_vector(w, basis_.eigenvalues);
  write_vector(w, basis_.weights);
  write_matrix(w, basis_.functions);
  write_vector(w, layout_.lo);
  write_vector(w, layout_.hi);
  for (const auto& b : basis_averages_) {
    w.f64(b(0, 0));
    w.f64(b(0, 1));
    w.f64(b(1, 0));
    w.f64(b(1, 1));
  }
  for (const auto& reg : regressors_) {
    const GprModel::State& st = reg.state();
    write_vector(w, st.in_lo);
    write_vector(w, st.in_span);
    w.f64(st.target_scale);
    w.f64(st.sigma_f_n);
    write_vector(w, st.lengthscales_n);
    w.f64(st.jitter);
    write_matrix(w, st.x_n);
    write_vector(w, st.y_n);
  }
  w.magic(kModelEnd);
  w.close();
}

SurrogateModel SurrogateModel::load(const std::filesystem::path& path) {
  BinaryReader r(path);
  r.magic(kModelMagic);
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw FormatError(path.string() + ": unsupported model archive version " +
                      std::to_string(version));
  SurrogateModel m;
  m.bc_kind_ = r.u32();
  m.mesh_hash_ = r.u64();
  const std::uint32_t basis_count = r.u32();
  if (basis_count == 0 || basis_count > 100'000)
    throw FormatError(path.string() + ": implausible basis size");
  m.basis_.total_volume = r.f64();
  m.basis_.energy_captured = r.f64();
  m.basis_.eigenvalues = read_vector(r);
  m.basis_.weights = read_vector(r);
  m.basis_.functions = read_matrix(r);
  if (m.basis_.functions.cols() != static_cast<int>(basis_count) ||
      m.basis_.functions.rows() != 4 * m.basis_.weights.size())
    throw FormatError(path.string() + ": inconsistent basis shapes");
  m.layout_.lo = read_vector(r);
  m.layout_.hi = read_vector(r);
  m.basis_averages_.resize(basis_count);
  for (auto& b : m.basis_averages_) {
    b(0, 0) = r.f64();
    b(0, 1) = r.f64();
    b(1, 0) = r.f64();
    b(1, 1) = r.f64();
  }
  m.regressors_.reserve(basis_count);
  for (std::uint32_t l = 0; l < basis_count; ++l) {
    GprModel::State st;
    st.in_lo = read_vector(r);
    st.in_span = read_vector(r);
    st.target_scale = r.f64();
    st.sigma_f_n = r.f64();
    st.lengthscales_n = read_vector(r);
    st.jitter = r.f64();
    st.x_n = read_matrix(r);
    st.y_n = read_vector(r);
    m.regressors_.push_back(GprModel::from_state(std::move(st)));
  }
  r.magic(kModelEnd);
  return m;
}

}  // namespace rbhomog
