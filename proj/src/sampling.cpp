#include "rbhomog/sampling.hpp"

#include <random>
#include <stdexcept>

namespace rbhomog {

ParameterPoint ParameterPoint::from_flat(const Eigen::VectorXd& v) {
  if (v.size() < 3) throw std::invalid_argument("ParameterPoint: needs at least 3 entries");
  ParameterPoint p;
  p.stretch = v.head<3>();
  p.material = v.tail(v.size() - 3);
  return p;
}

namespace {

// Primitive polynomials and initial direction numbers (Joe-Kuo table) for
// dimensions 2..21; dimension 1 is the van der Corput sequence.
struct JoeKuoRow {
  std::uint32_t poly;
  std::uint32_t m[7];
};

constexpr JoeKuoRow kJoeKuo[20] = {
    {3, {1}},
    {7, {1, 3}},
    {11, {1, 3, 1}},
    {13, {1, 1, 1}},
    {19, {1, 1, 3, 3}},
    {25, {1, 3, 5, 13}},
    {37, {1, 1, 5, 5, 17}},
    {41, {1, 1, 5, 5, 5}},
    {47, {1, 1, 7, 11, 19}},
    {55, {1, 1, 5, 1, 1}},
    {59, {1, 1, 1, 3, 11}},
    {61, {1, 3, 5, 5, 31}},
    {67, {1, 3, 3, 9, 7, 49}},
    {91, {1, 1, 1, 15, 21, 21}},
    {97, {1, 3, 1, 13, 27, 49}},
    {103, {1, 1, 1, 15, 7, 5}},
    {109, {1, 3, 1, 15, 13, 25}},
    {115, {1, 1, 5, 5, 19, 61}},
    {131, {1, 3, 7, 11, 23, 15, 103}},
    {137, {1, 3, 7, 13, 13, 15, 69}},
};

int poly_degree(std::uint32_t p) {
  int d = -1;
  while (p) {
    p >>= 1;
    d++;
  }
  return d;
}

}  // namespace

SobolSequence::SobolSequence(int dim) : dim_(dim) {
  if (dim < 1) throw std::invalid_argument("SobolSequence: dimension must be >= 1");
  if (dim > 21)
    throw std::invalid_argument("SobolSequence: dimension " + std::to_string(dim) +
                                " exceeds the direction number table (21)");
  state_.assign(dim, 0);
  direction_.resize(dim);

  for (int j = 0; j < dim; ++j) {
    std::uint32_t m[33];
    int s;
    if (j == 0) {
      s = 1;
      m[1] = 1;
    } else {
      const JoeKuoRow& row = kJoeKuo[j - 1];
      s = poly_degree(row.poly);
      for (int k = 1; k <= s; ++k) m[k] = row.m[k - 1];
      const std::uint32_t a = (row.poly >> 1) & ((1u << (s - 1)) - 1u);  // interior bits a_1..a_{s-1}
      for (int k = s + 1; k <= 32; ++k) {
        std::uint32_t v = m[k - s] ^ (m[k - s] << s);
        for (int i = 1; i < s; ++i)
          if ((a >> (s - 1 - i)) & 1u) v ^= m[k - i] << i;
        m[k] = v;
      }
    }
    if (j == 0)
      for (int k = 2; k <= 32; ++k) m[k] = 1;
    for (int k = 1; k <= 32; ++k) direction_[j][k - 1] = m[k] << (32 - k);
  }
}

Eigen::VectorXd SobolSequence::next() {
  // Gray-code update: flip the direction of the lowest zero bit of count.
  std::uint64_t c = count_;
  int bit = 0;
  while (c & 1u) {
    c >>= 1;
    bit++;
  }
  if (bit >= 32) throw std::runtime_error("SobolSequence: sequence exhausted");
  for (int j = 0; j < dim_; ++j) state_[j] ^= direction_[j][bit];
  count_++;

  Eigen::VectorXd x(dim_);
  for (int j = 0; j < dim_; ++j) x(j) = state_[j] * 0x1p-32;
  return x;
}

namespace {

void check_bounds(const Bounds& bounds) {
  if (bounds.size() < 3)
    throw std::invalid_argument("sampling: bounds must cover the 3 stretch dimensions");
  for (auto [lo, hi] : bounds)
    if (!(lo < hi) && !(lo == hi))
      throw std::invalid_argument("sampling: invalid bounds (lo > hi)");
}

ParameterPoint map_point(const Eigen::VectorXd& unit, const Bounds& bounds) {
  Eigen::VectorXd v(bounds.size());
  for (std::size_t k = 0; k < bounds.size(); ++k)
    v(k) = bounds[k].first + unit(k) * (bounds[k].second - bounds[k].first);
  ParameterPoint p = ParameterPoint::from_flat(v);
  const Tensor2 u = p.stretch_tensor();
  if (!(u(0, 0) > 0.0) || !(u.determinant() > 0.0))
    throw std::invalid_argument("sampling: bounds admit non-SPD stretch tensors");
  return p;
}

}  // namespace

std::vector<ParameterPoint> sobol_sample(int n, const Bounds& bounds, bool include_corners) {
  check_bounds(bounds);
  if (n < 1) throw std::invalid_argument("sobol_sample: n must be >= 1");
  const int d = static_cast<int>(bounds.size());
  std::vector<ParameterPoint> points;
  points.reserve(n);

  if (include_corners) {
    if (d > 21) throw std::invalid_argument("sobol_sample: corner enumeration limited to 21 dims");
    const std::int64_t n_corners = std::int64_t(1) << d;
    if (n < n_corners)
      throw std::invalid_argument("sobol_sample: n must be at least 2^d when corners are included");
    for (std::int64_t c = 0; c < n_corners; ++c) {
      Eigen::VectorXd unit(d);
      for (int k = 0; k < d; ++k) unit(k) = (c >> k) & 1 ? 1.0 : 0.0;
      points.push_back(map_point(unit, bounds));
    }
  }

  SobolSequence seq(d);
  while (static_cast<int>(points.size()) < n) points.push_back(map_point(seq.next(), bounds));
  return points;
}

Eigen::MatrixXd uniform_unit(int n, int d, std::uint64_t seed) {
  if (n < 1 || d < 1) throw std::invalid_argument("uniform_unit: n and d must be >= 1");
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd u(n, d);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) u(i, k) = double(rng() >> 11) * 0x1p-53;
  return u;
}

std::vector<ParameterPoint> uniform_sample(int n, const Bounds& bounds, std::uint64_t seed) {
  check_bounds(bounds);
  if (n < 1) throw std::invalid_argument("uniform_sample: n must be >= 1");
  const int d = static_cast<int>(bounds.size());
  const Eigen::MatrixXd unit = uniform_unit(n, d, seed);
  std::vector<ParameterPoint> points;
  points.reserve(n);
  for (int i = 0; i < n; ++i) points.push_back(map_point(unit.row(i).transpose(), bounds));
  return points;
}

}  // namespace rbhomog
