#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <utility>

namespace rbhomog {

/// In-plane block of a plane-strain tensor (deformation measures, PK1 stress).
using Tensor2 = Eigen::Matrix2d;

/// Fourth-order tensor over the in-plane indices, A(i,j,k,l) with i..l in {0,1}.
class Tensor4 {
 public:
  Tensor4() { data_.fill(0.0); }

  double& operator()(int i, int j, int k, int l) { return data_[idx(i, j, k, l)]; }
  double operator()(int i, int j, int k, int l) const { return data_[idx(i, j, k, l)]; }

  Tensor4& operator+=(const Tensor4& o) {
    for (int n = 0; n < 16; ++n) data_[n] += o.data_[n];
    return *this;
  }
  Tensor4& operator-=(const Tensor4& o) {
    for (int n = 0; n < 16; ++n) data_[n] -= o.data_[n];
    return *this;
  }
  Tensor4& operator*=(double s) {
    for (int n = 0; n < 16; ++n) data_[n] *= s;
    return *this;
  }
  friend Tensor4 operator+(Tensor4 a, const Tensor4& b) { return a += b; }
  friend Tensor4 operator-(Tensor4 a, const Tensor4& b) { return a -= b; }
  friend Tensor4 operator*(Tensor4 a, double s) { return a *= s; }
  friend Tensor4 operator*(double s, Tensor4 a) { return a *= s; }

  /// Double contraction A : G over the last two indices.
  Tensor2 contract(const Tensor2& g) const {
    Tensor2 r = Tensor2::Zero();
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k)
          for (int l = 0; l < 2; ++l) r(i, j) += (*this)(i, j, k, l) * g(k, l);
    return r;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  static int idx(int i, int j, int k, int l) { return ((i * 2 + j) * 2 + k) * 2 + l; }
  std::array<double, 16> data_;
};

/// Neo-Hookean constants mu = [C1, D1]; both must be positive.
struct MaterialParams {
  double c1 = 1.0;
  double d1 = 1.0;

  MaterialParams() = default;
  MaterialParams(double c1_, double d1_);
};

/// W = C1(Tr(C) - 3 - 2 ln J) + D1(J - 1)^2, with the 2x2 f embedded in 3D
/// at F33 = 1 so that Tr(C) = tr(f^T f) + 1 and J = det(f).
double strain_energy(const Tensor2& f, const MaterialParams& mu);

/// P = dW/dF = 2 C1 (F - F^-T) + 2 D1 J (J - 1) F^-T (in-plane block).
Tensor2 pk1_stress(const Tensor2& f, const MaterialParams& mu);

/// A = dP/dF in closed form.
Tensor4 material_tangent(const Tensor2& f, const MaterialParams& mu);

/// Polar decomposition f = R U with R a proper rotation and U symmetric
/// positive definite, via the closed-form 2x2 square root of f^T f.
std::pair<Tensor2, Tensor2> polar_stretch(const Tensor2& f);

/// Derivative dU_pq/dF_kl of the polar stretch, exact for 2x2.
Tensor4 polar_stretch_derivative(const Tensor2& f);

/// Derivative dR_ij/dF_kl of the polar rotation, exact for 2x2.
Tensor4 polar_rotation_derivative(const Tensor2& f);

/// (E, nu) from the Neo-Hookean constants:
/// E = 2 C1 (3 D1 + 2 C1) / (C1 + D1), nu = D1 / (2 (C1 + D1)).
std::pair<double, double> elastic_constants(const MaterialParams& mu);

}  // namespace rbhomog
