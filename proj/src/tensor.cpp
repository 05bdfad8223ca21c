#include "rbhomog/tensor.hpp"

#include <cmath>

#include "rbhomog/errors.hpp"

namespace rbhomog {

namespace {

double checked_det(const Tensor2& f, const char* op) {
  const double j = f.determinant();
  if (!(j > 0.0)) {
    throw ElementInversion(std::string(op) + ": non-positive determinant det(F) = " +
                           std::to_string(j));
  }
  return j;
}

}  // namespace

MaterialParams::MaterialParams(double c1_, double d1_) : c1(c1_), d1(d1_) {
  if (!(c1 > 0.0) || !(d1 > 0.0)) {
    throw std::invalid_argument("MaterialParams: C1 and D1 must be positive");
  }
}

double strain_energy(const Tensor2& f, const MaterialParams& mu) {
  const double j = checked_det(f, "strain_energy");
  const double tr_c = f.squaredNorm() + 1.0;  // Tr(F^T F) + F33^2 with F33 = 1
  return mu.c1 * (tr_c - 3.0 - 2.0 * std::log(j)) + mu.d1 * (j - 1.0) * (j - 1.0);
}

Tensor2 pk1_stress(const Tensor2& f, const MaterialParams& mu) {
  const double j = checked_det(f, "pk1_stress");
  const Tensor2 f_inv_t = f.inverse().transpose();
  return 2.0 * mu.c1 * (f - f_inv_t) + 2.0 * mu.d1 * j * (j - 1.0) * f_inv_t;
}

Tensor4 material_tangent(const Tensor2& f, const MaterialParams& mu) {
  const double j = checked_det(f, "material_tangent");
  const Tensor2 f_inv = f.inverse();
  const Tensor2 f_inv_t = f_inv.transpose();

  // A_ijkl = 2 C1 d_ik d_jl
  //        + [2 C1 - 2 D1 J (J-1)] Finv_jk Finv_li
  //        + 2 D1 J (2J-1) FinvT_ij FinvT_kl
  const double c_inv = 2.0 * mu.c1 - 2.0 * mu.d1 * j * (j - 1.0);
  const double c_vol = 2.0 * mu.d1 * j * (2.0 * j - 1.0);

  Tensor4 a;
  for (int i = 0; i < 2; ++i)
    for (int jj = 0; jj < 2; ++jj)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l) {
          double v = c_inv * f_inv(jj, k) * f_inv(l, i) + c_vol * f_inv_t(i, jj) * f_inv_t(k, l);
          if (i == k && jj == l) v += 2.0 * mu.c1;
          a(i, jj, k, l) = v;
        }
  return a;
}

namespace {

// U = (C + J I) / s with C = F^T F and s = sqrt(Tr C + 2 J); this is the
// closed-form square root of the 2x2 SPD matrix C.
struct PolarParts {
  double j;
  double s;
  Tensor2 c;
  Tensor2 u;
  Tensor2 u_inv;
  Tensor2 r;
};

PolarParts polar_parts(const Tensor2& f) {
  PolarParts p;
  p.j = checked_det(f, "polar_stretch");
  p.c = f.transpose() * f;
  p.s = std::sqrt(p.c.trace() + 2.0 * p.j);
  p.u = (p.c + p.j * Tensor2::Identity()) / p.s;
  p.u_inv = p.u.inverse();
  p.r = f * p.u_inv;
  return p;
}

}  // namespace

std::pair<Tensor2, Tensor2> polar_stretch(const Tensor2& f) {
  const PolarParts p = polar_parts(f);
  return {p.r, p.u};
}

Tensor4 polar_stretch_derivative(const Tensor2& f) {
  const PolarParts p = polar_parts(f);

  // cof(F): dJ/dF
  Tensor2 cof;
  cof << f(1, 1), -f(1, 0), -f(0, 1), f(0, 0);

  Tensor4 du;
  for (int pi = 0; pi < 2; ++pi)
    for (int q = 0; q < 2; ++q)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l) {
          // dC_pq/dF_kl = d_ql F_kp + d_pl F_kq
          double dc = 0.0;
          if (q == l) dc += f(k, pi);
          if (pi == l) dc += f(k, q);
          const double dj = cof(k, l);
          const double ds = (f(k, l) + cof(k, l)) / p.s;
          double v = (dc + dj * (pi == q ? 1.0 : 0.0)) / p.s - p.u(pi, q) * ds / p.s;
          du(pi, q, k, l) = v;
        }
  return du;
}

Tensor4 polar_rotation_derivative(const Tensor2& f) {
  const PolarParts p = polar_parts(f);
  const Tensor4 du = polar_stretch_derivative(f);

  // R = F U^-1, dU^-1 = -U^-1 dU U^-1
  Tensor4 dr;
  for (int i = 0; i < 2; ++i)
    for (int jj = 0; jj < 2; ++jj)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l) {
          double v = (i == k) ? p.u_inv(l, jj) : 0.0;
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
              for (int c = 0; c < 2; ++c)
                v -= f(i, a) * p.u_inv(a, b) * du(b, c, k, l) * p.u_inv(c, jj);
          dr(i, jj, k, l) = v;
        }
  return dr;
}

std::pair<double, double> elastic_constants(const MaterialParams& mu) {
  const double denom = mu.c1 + mu.d1;
  if (!(denom > 0.0)) throw std::invalid_argument("elastic_constants: C1 + D1 must be positive");
  const double e = 2.0 * mu.c1 * (3.0 * mu.d1 + 2.0 * mu.c1) / denom;
  const double nu = mu.d1 / (2.0 * denom);
  return {e, nu};
}

}  // namespace rbhomog
