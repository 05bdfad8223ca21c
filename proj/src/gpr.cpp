#include "rbhomog/gpr.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "rbhomog/sampling.hpp"

namespace rbhomog {

double kernel_eval(const Kernel& k, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size() || x.size() != k.lengthscales.size())
    throw std::invalid_argument("kernel_eval: dimension mismatch");
  double q = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    const double d = (x(i) - y(i)) / k.lengthscales(i);
    q += d * d;
  }
  return k.sigma_f * k.sigma_f * std::exp(-0.5 * q);
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Normalized-space likelihood machinery shared by the optimizer and the
// final model build. psi = [ln sigma_f, ln l_1 .. ln l_d].
struct LikelihoodEval {
  double lml = kNegInf;
  Eigen::VectorXd grad;
  bool ok = false;
};

struct Problem {
  const Eigen::MatrixXd& x;          // n x d, normalized
  const Eigen::VectorXd& y;          // n, normalized
  std::vector<Eigen::MatrixXd> d2;   // per-dim squared distances
  double jitter;

  Problem(const Eigen::MatrixXd& x_, const Eigen::VectorXd& y_, double jitter_)
      : x(x_), y(y_), jitter(jitter_) {
    const int n = static_cast<int>(x.rows());
    const int d = static_cast<int>(x.cols());
    d2.reserve(d);
    for (int k = 0; k < d; ++k) {
      Eigen::MatrixXd m(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double dx = x(i, k) - x(j, k);
          m(i, j) = dx * dx;
        }
      d2.push_back(std::move(m));
    }
  }

  Eigen::MatrixXd correlation(const Eigen::VectorXd& psi) const {
    const int n = static_cast<int>(x.rows());
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t k = 0; k < d2.size(); ++k) {
      const double inv_l2 = std::exp(-2.0 * psi(k + 1));
      q += inv_l2 * d2[k];
    }
    return (-0.5 * q).array().exp();
  }

  LikelihoodEval eval(const Eigen::VectorXd& psi, bool with_grad) const {
    LikelihoodEval out;
    const int n = static_cast<int>(x.rows());
    const double sigma2 = std::exp(2.0 * psi(0));

    const Eigen::MatrixXd rho = correlation(psi);
    Eigen::MatrixXd k_mat = sigma2 * rho;
    k_mat.diagonal().array() += sigma2 * jitter;

    Eigen::LLT<Eigen::MatrixXd> llt(k_mat);
    if (llt.info() != Eigen::Success) return out;

    const Eigen::VectorXd alpha = llt.solve(y);
    double logdet = 0.0;
    for (int i = 0; i < n; ++i) logdet += std::log(llt.matrixL()(i, i));
    out.lml = -0.5 * y.dot(alpha) - logdet - 0.5 * n * std::log(2.0 * M_PI);
    if (!std::isfinite(out.lml)) return out;
    out.ok = true;
    if (!with_grad) return out;

    // d lml / d psi_j = 1/2 tr((alpha alpha^T - K^-1) dK/dpsi_j)
    const Eigen::MatrixXd k_inv =
        llt.solve(Eigen::MatrixXd::Identity(n, n));
    const Eigen::MatrixXd a = alpha * alpha.transpose() - k_inv;

    out.grad.resize(psi.size());
    out.grad(0) = (a.cwiseProduct(k_mat)).sum();  // dK/dpsi_0 = 2K
    for (std::size_t k = 0; k < d2.size(); ++k) {
      const double inv_l2 = std::exp(-2.0 * psi(k + 1));
      const Eigen::MatrixXd dk = (sigma2 * inv_l2) * rho.cwiseProduct(d2[k]);
      out.grad(k + 1) = 0.5 * (a.cwiseProduct(dk)).sum();
    }
    return out;
  }
};

// Projected BFGS ascent with backtracking; monotone from the start point.
struct LocalResult {
  Eigen::VectorXd psi;
  double lml = kNegInf;
  bool ok = false;
};

LocalResult maximize_from(const Problem& prob, Eigen::VectorXd psi, const GprFitOptions& opts) {
  const int m = static_cast<int>(psi.size());
  auto clamp = [&](Eigen::VectorXd v) {
    v(0) = std::clamp(v(0), opts.sigma_log_lo, opts.sigma_log_hi);
    for (int i = 1; i < m; ++i) v(i) = std::clamp(v(i), opts.log_lo, opts.log_hi);
    return v;
  };
  psi = clamp(psi);

  LocalResult res;
  LikelihoodEval cur = prob.eval(psi, true);
  if (!cur.ok) return res;
  res = {psi, cur.lml, true};

  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(m, m);
  for (int it = 0; it < opts.max_iter; ++it) {
    if (cur.grad.lpNorm<Eigen::Infinity>() < 1e-6 * std::max(1.0, std::abs(cur.lml))) break;

    Eigen::VectorXd dir = h * cur.grad;
    if (dir.dot(cur.grad) <= 0.0) {  // lost positive definiteness; restart
      h.setIdentity();
      dir = cur.grad;
    }

    double step = 1.0;
    bool advanced = false;
    Eigen::VectorXd psi_new;
    LikelihoodEval next;
    for (int bt = 0; bt < 30; ++bt) {
      psi_new = clamp(psi + step * dir);
      next = prob.eval(psi_new, true);
      if (next.ok && next.lml > cur.lml + 1e-4 * cur.grad.dot(psi_new - psi)) {
        advanced = true;
        break;
      }
      step *= 0.5;
    }
    if (!advanced) break;

    const Eigen::VectorXd s = psi_new - psi;
    const Eigen::VectorXd yv = next.grad - cur.grad;  // gradient of the ascent objective
    const double sy = s.dot(yv);
    if (sy < -1e-12) {
      // BFGS update for maximization: treat as minimization of -lml
      const Eigen::VectorXd ym = -yv;
      const double rho_bfgs = 1.0 / s.dot(ym);
      if (std::isfinite(rho_bfgs) && rho_bfgs > 0.0) {
        const Eigen::MatrixXd i_mat = Eigen::MatrixXd::Identity(m, m);
        h = (i_mat - rho_bfgs * s * ym.transpose()) * h *
                (i_mat - rho_bfgs * ym * s.transpose()) +
            rho_bfgs * s * s.transpose();
      } else {
        h.setIdentity();
      }
    } else {
      h.setIdentity();
    }

    psi = psi_new;
    cur = next;
    if (cur.lml > res.lml) {
      res.psi = psi;
      res.lml = cur.lml;
    }
  }
  return res;
}

void check_inputs(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int min_points) {
  if (x.rows() != y.size()) throw std::invalid_argument("GprModel: input/target count mismatch");
  if (x.rows() < min_points)
    throw std::invalid_argument("GprModel: needs at least " + std::to_string(min_points) +
                                " training points");
  if (x.cols() < 1) throw std::invalid_argument("GprModel: needs at least 1 input dimension");
  if (!x.allFinite() || !y.allFinite())
    throw std::invalid_argument("GprModel: non-finite training data");
}

}  // namespace

GprModel GprModel::fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       const GprFitOptions& opts) {
  check_inputs(x, y, 2);
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());

  State st;
  st.in_lo = x.colwise().minCoeff();
  const Eigen::VectorXd hi = x.colwise().maxCoeff();
  st.in_span = hi - st.in_lo;
  for (int k = 0; k < d; ++k)
    if (st.in_span(k) < 1e-12)
      throw std::invalid_argument("GprModel: training inputs are degenerate in dimension " +
                                  std::to_string(k) + " (constant column)");

  st.x_n.resize(n, d);
  for (int i = 0; i < n; ++i)
    st.x_n.row(i) = (x.row(i).transpose() - st.in_lo).cwiseQuotient(st.in_span);

  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if ((st.x_n.row(i) - st.x_n.row(j)).cwiseAbs().maxCoeff() < 1e-12)
        throw std::invalid_argument("GprModel: duplicate training inputs at rows " +
                                    std::to_string(i) + " and " + std::to_string(j) +
                                    " (kernel matrix would be singular)");

  const double rms = std::sqrt(y.squaredNorm() / n);
  st.target_scale = rms > 0.0 ? rms : 1.0;
  st.y_n = y / st.target_scale;
  st.jitter = opts.jitter;

  const Problem prob(st.x_n, st.y_n, opts.jitter);

  // Deterministic starts spread over the log box.
  SobolSequence starts(d + 1);
  LocalResult best;
  for (int s = 0; s < opts.starts; ++s) {
    Eigen::VectorXd unit = starts.next();
    Eigen::VectorXd psi0(d + 1);
    // Keep starts in the middle band of the box; the extremes are reachable
    // by the optimizer but are poor starting points.
    psi0(0) = opts.sigma_log_lo + (0.15 + 0.7 * unit(0)) * (opts.sigma_log_hi - opts.sigma_log_lo);
    for (int k = 1; k <= d; ++k)
      psi0(k) = opts.log_lo + (0.15 + 0.7 * unit(k)) * (opts.log_hi - opts.log_lo);
    const LocalResult r = maximize_from(prob, psi0, opts);
    if (r.ok && r.lml > best.lml) best = r;
  }
  if (!best.ok)
    throw std::runtime_error(
        "GprModel: likelihood optimization failed at every start (kernel matrix could not be "
        "factorized)");

  st.sigma_f_n = std::exp(best.psi(0));
  st.lengthscales_n = best.psi.tail(d).array().exp();

  GprModel model;
  model.state_ = std::move(st);
  model.finalize();
  return model;
}

GprModel GprModel::from_data(const Kernel& kernel, const Eigen::MatrixXd& x,
                             const Eigen::VectorXd& y, double jitter) {
  check_inputs(x, y, 1);
  if (kernel.lengthscales.size() != x.cols())
    throw std::invalid_argument("GprModel: kernel dimension mismatch");
  State st;
  st.in_lo = Eigen::VectorXd::Zero(x.cols());
  st.in_span = Eigen::VectorXd::Ones(x.cols());
  st.target_scale = 1.0;
  st.sigma_f_n = kernel.sigma_f;
  st.lengthscales_n = kernel.lengthscales;
  st.jitter = jitter;
  st.x_n = x;
  st.y_n = y;
  GprModel model;
  model.state_ = std::move(st);
  model.finalize();
  return model;
}

GprModel GprModel::from_state(State s) {
  GprModel model;
  model.state_ = std::move(s);
  model.finalize();
  return model;
}

void GprModel::finalize() {
  const int n = n_train();
  const double sigma2 = state_.sigma_f_n * state_.sigma_f_n;

  Eigen::VectorXd psi(dim() + 1);
  psi(0) = std::log(state_.sigma_f_n);
  for (int k = 0; k < dim(); ++k) psi(k + 1) = std::log(state_.lengthscales_n(k));
  const Problem prob(state_.x_n, state_.y_n, state_.jitter);

  // Escalate the nugget by decades until the factorization succeeds.
  double jitter = state_.jitter;
  for (;;) {
    Eigen::MatrixXd k_mat = sigma2 * prob.correlation(psi);
    k_mat.diagonal().array() += sigma2 * jitter;
    llt_.compute(k_mat);
    if (llt_.info() == Eigen::Success) break;
    jitter *= 10.0;
    if (jitter > 1e-6)
      throw std::runtime_error("GprModel: kernel matrix is not positive definite even at the "
                               "maximum nugget (duplicate or near-duplicate inputs?)");
  }
  state_.jitter = jitter;

  weights_ = llt_.solve(state_.y_n);
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += std::log(llt_.matrixL()(i, i));
  lml_ = -0.5 * state_.y_n.dot(weights_) - logdet - 0.5 * n * std::log(2.0 * M_PI);
}

Kernel GprModel::kernel() const {
  Kernel k;
  k.sigma_f = state_.sigma_f_n * state_.target_scale;
  k.lengthscales = state_.lengthscales_n.cwiseProduct(state_.in_span);
  return k;
}

namespace {

Eigen::VectorXd normalize_query(const GprModel::State& st, const Eigen::VectorXd& x) {
  if (x.size() != st.in_lo.size())
    throw std::invalid_argument("GprModel: query dimension mismatch");
  return (x - st.in_lo).cwiseQuotient(st.in_span);
}

Eigen::VectorXd kernel_vector(const GprModel::State& st, const Eigen::VectorXd& x_n) {
  const int n = static_cast<int>(st.x_n.rows());
  const double sigma2 = st.sigma_f_n * st.sigma_f_n;
  Eigen::VectorXd k(n);
  for (int i = 0; i < n; ++i) {
    double q = 0.0;
    for (int c = 0; c < st.x_n.cols(); ++c) {
      const double d = (st.x_n(i, c) - x_n(c)) / st.lengthscales_n(c);
      q += d * d;
    }
    k(i) = sigma2 * std::exp(-0.5 * q);
  }
  return k;
}

// Neumaier-compensated dot product. The kernel weights of an ill-conditioned
// fit are huge and cancel almost completely; a plain sum would leave rounding
// noise of order eps * sum|terms|, which finite differences of the posterior
// then amplify by 1/h.
double compensated_dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double sum = 0.0, comp = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double term = a(i) * b(i);
    const double t = sum + term;
    if (std::abs(sum) >= std::abs(term))
      comp += (sum - t) + term;
    else
      comp += (term - t) + sum;
    sum = t;
  }
  return sum + comp;
}

}  // namespace

double GprModel::predict_mean(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd x_n = normalize_query(state_, x);
  return state_.target_scale * compensated_dot(kernel_vector(state_, x_n), weights_);
}

double GprModel::predict_variance(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd x_n = normalize_query(state_, x);
  const Eigen::VectorXd k = kernel_vector(state_, x_n);
  const double sigma2 = state_.sigma_f_n * state_.sigma_f_n;
  const double v = sigma2 - k.dot(llt_.solve(k));
  return std::max(0.0, v) * state_.target_scale * state_.target_scale;
}

Eigen::VectorXd GprModel::predict_gradient(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd x_n = normalize_query(state_, x);
  const Eigen::VectorXd k = kernel_vector(state_, x_n);
  Eigen::VectorXd grad(dim());
  Eigen::VectorXd terms(n_train());
  for (int c = 0; c < dim(); ++c) {
    const double inv_l2 = 1.0 / (state_.lengthscales_n(c) * state_.lengthscales_n(c));
    for (int i = 0; i < n_train(); ++i)
      terms(i) = weights_(i) * k(i) * (state_.x_n(i, c) - x_n(c)) * inv_l2;
    grad(c) = compensated_dot(terms, Eigen::VectorXd::Ones(n_train())) * state_.target_scale /
              state_.in_span(c);
  }
  return grad;
}

}  // namespace rbhomog
