#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "rbhomog/tensor.hpp"

namespace rbhomog {

/// One training/test location in parameter space: the symmetric in-plane
/// stretch (U11, U22, U12) plus any sampled material scalars.
struct ParameterPoint {
  Eigen::Vector3d stretch = Eigen::Vector3d(1.0, 1.0, 0.0);
  Eigen::VectorXd material;

  Tensor2 stretch_tensor() const {
    Tensor2 u;
    u << stretch(0), stretch(2), stretch(2), stretch(1);
    return u;
  }
  int dim() const { return 3 + static_cast<int>(material.size()); }
  Eigen::VectorXd flat() const {
    Eigen::VectorXd v(dim());
    v.head<3>() = stretch;
    v.tail(material.size()) = material;
    return v;
  }
  static ParameterPoint from_flat(const Eigen::VectorXd& v);
};

/// Per-dimension sampling box; the first three dimensions are the stretch
/// components, the rest are material scalars.
using Bounds = std::vector<std::pair<double, double>>;

/// Unscrambled Sobol sequence (Joe-Kuo direction numbers, Gray-code order)
/// with the all-zeros point skipped. Supports up to 21 dimensions.
class SobolSequence {
 public:
  explicit SobolSequence(int dim);
  Eigen::VectorXd next();

 private:
  int dim_;
  std::uint64_t count_ = 0;
  std::vector<std::uint32_t> state_;
  std::vector<std::array<std::uint32_t, 32>> direction_;
};

/// n Sobol points mapped affinely into bounds. With include_corners the first
/// 2^d points enumerate the box corners (bit k of the index picks the upper
/// bound of dimension k).
std::vector<ParameterPoint> sobol_sample(int n, const Bounds& bounds, bool include_corners = false);

/// n x d matrix of seeded uniform draws in [0,1); reproducible across runs
/// and platforms (no distribution-object implementation dependence).
Eigen::MatrixXd uniform_unit(int n, int d, std::uint64_t seed);

/// Seeded uniform draws inside bounds; reproducible across runs and platforms.
std::vector<ParameterPoint> uniform_sample(int n, const Bounds& bounds, std::uint64_t seed);

}  // namespace rbhomog
