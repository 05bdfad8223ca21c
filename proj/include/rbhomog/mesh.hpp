#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rbhomog {

enum class ElementType { Quad4, Quad8 };

inline int nodes_per_element(ElementType t) { return t == ElementType::Quad4 ? 4 : 8; }

/// Master/slave node pairing for periodic fluctuation fields. The anchor node
/// pins the fluctuation mean; every slave follows its master.
struct PeriodicPairs {
  std::vector<std::pair<int, int>> pairs;  // (slave, master)
  int anchor = -1;
};

/// 2D quadrilateral mesh (bilinear or serendipity-quadratic), one phase id per
/// element. boundary_nodes are the outer-boundary nodes where kinematic
/// loading applies; interior hole boundaries stay traction free.
struct Mesh {
  ElementType element_type = ElementType::Quad4;
  std::vector<Eigen::Vector2d> nodes;
  std::vector<int> connectivity;  // n_elements * nodes_per_element entries
  std::vector<int> phase;
  std::vector<int> boundary_nodes;
  std::optional<PeriodicPairs> periodic;
  std::map<std::string, std::vector<int>> node_sets;
  std::map<std::string, std::vector<std::array<int, 2>>> edge_sets;

  int nodes_per_elem() const { return nodes_per_element(element_type); }
  int n_nodes() const { return static_cast<int>(nodes.size()); }
  int n_elements() const {
    return connectivity.empty() ? 0 : static_cast<int>(connectivity.size()) / nodes_per_elem();
  }
  std::span<const int> element(int e) const {
    return {connectivity.data() + static_cast<std::size_t>(e) * nodes_per_elem(),
            static_cast<std::size_t>(nodes_per_elem())};
  }

  /// Throws std::invalid_argument on broken connectivity, non-positive
  /// reference Jacobians, or an invalid periodic pairing.
  void validate() const;

  /// Content hash over geometry, connectivity, and phases.
  std::uint64_t hash() const;
};

/// Shape functions and their reference-coordinate gradients at one point.
struct ShapeEval {
  Eigen::VectorXd n;         // nodes_per_element
  Eigen::MatrixXd dn_dxi;    // nodes_per_element x 2
};

ShapeEval shape_eval(ElementType t, double xi, double eta);

struct GaussPoint {
  double xi, eta, weight;
};

/// 2x2 Gauss rule on [-1,1]^2 (both element types integrate with 4 points).
const std::array<GaussPoint, 4>& gauss_2x2();

/// Integration weights w_q = gauss weight * reference Jacobian for all
/// quadrature points of the mesh, element-major, and their sum.
struct QuadratureLayout {
  Eigen::VectorXd weights;
  double total_volume = 0.0;
};

QuadratureLayout quadrature_layout(const Mesh& mesh);

/// Reference positions of all quadrature points, element-major.
std::vector<Eigen::Vector2d> quadrature_points(const Mesh& mesh);

/// FNV-1a streaming hash for mesh/config/content fingerprints.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size);
  void update(double v) { update(&v, sizeof(v)); }
  void update(std::int64_t v) { update(&v, sizeof(v)); }
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 1469598103934665603ull;
};

}  // namespace rbhomog
