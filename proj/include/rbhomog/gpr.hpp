#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace rbhomog {

/// ARD squared-exponential kernel: sigma_f^2 exp(-1/2 sum_k dx_k^2 / l_k^2).
struct Kernel {
  double sigma_f = 1.0;
  Eigen::VectorXd lengthscales;
};

double kernel_eval(const Kernel& k, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

struct GprFitOptions {
  int starts = 8;      // deterministic multi-start count
  int max_iter = 80;   // BFGS iterations per start
  // log-space search box; lengthscales are capped at 2 box widths because the
  // SE kernel matrix turns numerically rank deficient beyond that (an SE
  // kernel this wide is already near-constant over the box, so nothing is
  // lost in model expressiveness)
  double log_lo = -4.605170185988091;        // ln(1e-2), lengthscales
  double log_hi = 0.6931471805599453;        // ln(2), lengthscales
  double sigma_log_lo = -4.605170185988091;  // ln(1e-2), signal amplitude
  double sigma_log_hi = 4.605170185988091;   // ln(1e2)
  double jitter = 1e-10;                     // relative nugget, escalated x10 on failure
};

/// Noise-free Gaussian process regressor with zero prior mean. Inputs are
/// normalized per dimension to [0,1] over the training box and targets are
/// scaled by their RMS; the exposed kernel is in original units. Immutable
/// after construction and safe for concurrent prediction.
class GprModel {
 public:
  /// Hyperparameters by maximum likelihood over a bounded log-parameter box
  /// (multi-start BFGS with analytic gradients).
  static GprModel fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                      const GprFitOptions& opts = {});

  /// Explicit hyperparameters, no normalization (kernel acts on raw inputs).
  static GprModel from_data(const Kernel& kernel, const Eigen::MatrixXd& x,
                            const Eigen::VectorXd& y, double jitter = 1e-10);

  double predict_mean(const Eigen::VectorXd& x) const;
  double predict_variance(const Eigen::VectorXd& x) const;
  Eigen::VectorXd predict_gradient(const Eigen::VectorXd& x) const;

  int dim() const { return static_cast<int>(state_.x_n.cols()); }
  int n_train() const { return static_cast<int>(state_.x_n.rows()); }

  /// Fitted kernel in original input/target units.
  Kernel kernel() const;
  double jitter() const { return state_.jitter; }
  /// Log marginal likelihood of the normalized problem at the fitted kernel.
  double log_marginal_likelihood() const { return lml_; }

  /// Everything needed to reproduce the model bit for bit (archive payload);
  /// the factorization is recomputed deterministically on restore.
  struct State {
    Eigen::VectorXd in_lo, in_span;   // input normalizer x_n = (x - lo) / span
    double target_scale = 1.0;
    double sigma_f_n = 1.0;           // normalized-space amplitude
    Eigen::VectorXd lengthscales_n;   // normalized-space lengthscales
    double jitter = 1e-10;
    Eigen::MatrixXd x_n;              // normalized training inputs
    Eigen::VectorXd y_n;              // normalized training targets
  };
  const State& state() const { return state_; }
  static GprModel from_state(State s);

 private:
  GprModel() = default;
  void finalize();  // factorization, weights, stored likelihood

  State state_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd weights_;  // (K + jitter)^-1 y_n
  double lml_ = 0.0;
};

}  // namespace rbhomog
