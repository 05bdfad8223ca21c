#include "rbhomog/mesh.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace rbhomog {

ShapeEval shape_eval(ElementType t, double xi, double eta) {
  ShapeEval s;
  if (t == ElementType::Quad4) {
    s.n.resize(4);
    s.dn_dxi.resize(4, 2);
    const double xm = 1.0 - xi, xp = 1.0 + xi, em = 1.0 - eta, ep = 1.0 + eta;
    s.n << 0.25 * xm * em, 0.25 * xp * em, 0.25 * xp * ep, 0.25 * xm * ep;
    s.dn_dxi << -0.25 * em, -0.25 * xm,  //
        0.25 * em, -0.25 * xp,           //
        0.25 * ep, 0.25 * xp,            //
        -0.25 * ep, 0.25 * xm;
    return s;
  }

  // Serendipity quad8: corners 0..3 CCW from (-1,-1), midsides 4..7
  // (bottom, right, top, left).
  s.n.resize(8);
  s.dn_dxi.resize(8, 2);
  const double xm = 1.0 - xi, xp = 1.0 + xi, em = 1.0 - eta, ep = 1.0 + eta;
  const double x2 = 1.0 - xi * xi, e2 = 1.0 - eta * eta;

  s.n(0) = -0.25 * xm * em * (1.0 + xi + eta);
  s.n(1) = -0.25 * xp * em * (1.0 - xi + eta);
  s.n(2) = -0.25 * xp * ep * (1.0 - xi - eta);
  s.n(3) = -0.25 * xm * ep * (1.0 + xi - eta);
  s.n(4) = 0.5 * x2 * em;
  s.n(5) = 0.5 * xp * e2;
  s.n(6) = 0.5 * x2 * ep;
  s.n(7) = 0.5 * xm * e2;

  s.dn_dxi(0, 0) = 0.25 * em * (2.0 * xi + eta);
  s.dn_dxi(0, 1) = 0.25 * xm * (xi + 2.0 * eta);
  s.dn_dxi(1, 0) = 0.25 * em * (2.0 * xi - eta);
  s.dn_dxi(1, 1) = 0.25 * xp * (2.0 * eta - xi);
  s.dn_dxi(2, 0) = 0.25 * ep * (2.0 * xi + eta);
  s.dn_dxi(2, 1) = 0.25 * xp * (xi + 2.0 * eta);
  s.dn_dxi(3, 0) = 0.25 * ep * (2.0 * xi - eta);
  s.dn_dxi(3, 1) = 0.25 * xm * (2.0 * eta - xi);
  s.dn_dxi(4, 0) = -xi * em;
  s.dn_dxi(4, 1) = -0.5 * x2;
  s.dn_dxi(5, 0) = 0.5 * e2;
  s.dn_dxi(5, 1) = -eta * xp;
  s.dn_dxi(6, 0) = -xi * ep;
  s.dn_dxi(6, 1) = 0.5 * x2;
  s.dn_dxi(7, 0) = -0.5 * e2;
  s.dn_dxi(7, 1) = -eta * xm;
  return s;
}

const std::array<GaussPoint, 4>& gauss_2x2() {
  static const double g = 1.0 / std::sqrt(3.0);
  static const std::array<GaussPoint, 4> rule = {
      GaussPoint{-g, -g, 1.0}, GaussPoint{g, -g, 1.0}, GaussPoint{-g, g, 1.0}, GaussPoint{g, g, 1.0}};
  return rule;
}

namespace {

Eigen::Matrix2d element_jacobian(const Mesh& mesh, std::span<const int> conn, const ShapeEval& s) {
  Eigen::Matrix2d j = Eigen::Matrix2d::Zero();
  for (int n = 0; n < static_cast<int>(conn.size()); ++n) {
    const Eigen::Vector2d& x = mesh.nodes[conn[n]];
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) j(a, b) += x(a) * s.dn_dxi(n, b);
  }
  return j;
}

}  // namespace

void Mesh::validate() const {
  const int npe = nodes_per_elem();
  if (static_cast<int>(connectivity.size()) % npe != 0)
    throw std::invalid_argument("Mesh: connectivity size is not a multiple of nodes per element");
  if (static_cast<int>(phase.size()) != n_elements())
    throw std::invalid_argument("Mesh: phase array size does not match element count");
  for (int c : connectivity)
    if (c < 0 || c >= n_nodes()) throw std::invalid_argument("Mesh: connectivity index out of range");
  for (int b : boundary_nodes)
    if (b < 0 || b >= n_nodes()) throw std::invalid_argument("Mesh: boundary node out of range");

  for (int e = 0; e < n_elements(); ++e) {
    const auto conn = element(e);
    for (const GaussPoint& gp : gauss_2x2()) {
      const ShapeEval s = shape_eval(element_type, gp.xi, gp.eta);
      const double det = element_jacobian(*this, conn, s).determinant();
      if (!(det > 0.0))
        throw std::invalid_argument("Mesh: non-positive reference Jacobian in element " +
                                    std::to_string(e));
    }
  }

  if (periodic) {
    std::set<int> slaves, masters;
    for (auto [s, m] : periodic->pairs) {
      if (s < 0 || s >= n_nodes() || m < 0 || m >= n_nodes())
        throw std::invalid_argument("Mesh: periodic pair node out of range");
      if (!slaves.insert(s).second)
        throw std::invalid_argument("Mesh: node is slave in more than one periodic pair");
      masters.insert(m);
    }
    for (int m : masters)
      if (slaves.count(m))
        throw std::invalid_argument("Mesh: periodic master is also a slave");
    if (periodic->anchor < 0 || periodic->anchor >= n_nodes())
      throw std::invalid_argument("Mesh: periodic anchor out of range");
    if (slaves.count(periodic->anchor))
      throw std::invalid_argument("Mesh: periodic anchor must not be a slave");
  }
}

QuadratureLayout quadrature_layout(const Mesh& mesh) {
  QuadratureLayout layout;
  layout.weights.resize(static_cast<Eigen::Index>(mesh.n_elements()) * 4);
  Eigen::Index q = 0;
  for (int e = 0; e < mesh.n_elements(); ++e) {
    const auto conn = mesh.element(e);
    for (const GaussPoint& gp : gauss_2x2()) {
      const ShapeEval s = shape_eval(mesh.element_type, gp.xi, gp.eta);
      layout.weights(q++) = gp.weight * element_jacobian(mesh, conn, s).determinant();
    }
  }
  layout.total_volume = layout.weights.sum();
  return layout;
}

std::vector<Eigen::Vector2d> quadrature_points(const Mesh& mesh) {
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(static_cast<std::size_t>(mesh.n_elements()) * 4);
  for (int e = 0; e < mesh.n_elements(); ++e) {
    const auto conn = mesh.element(e);
    for (const GaussPoint& gp : gauss_2x2()) {
      const ShapeEval s = shape_eval(mesh.element_type, gp.xi, gp.eta);
      Eigen::Vector2d x = Eigen::Vector2d::Zero();
      for (int n = 0; n < static_cast<int>(conn.size()); ++n) x += s.n(n) * mesh.nodes[conn[n]];
      pts.push_back(x);
    }
  }
  return pts;
}

void Fnv1a::update(const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state_ ^= p[i];
    state_ *= 1099511628211ull;
  }
}

std::uint64_t Mesh::hash() const {
  Fnv1a h;
  h.update(std::int64_t(element_type == ElementType::Quad4 ? 4 : 8));
  h.update(std::int64_t(n_nodes()));
  for (const auto& x : nodes) {
    h.update(x(0));
    h.update(x(1));
  }
  h.update(std::int64_t(connectivity.size()));
  for (int c : connectivity) h.update(std::int64_t(c));
  for (int p : phase) h.update(std::int64_t(p));
  return h.digest();
}

}  // namespace rbhomog
