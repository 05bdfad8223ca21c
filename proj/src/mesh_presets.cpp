#include "rbhomog/mesh_presets.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <stdexcept>
#include <vector>

namespace rbhomog {

namespace {

constexpr double kCoordTol = 1e-9;

struct Circle {
  Eigen::Vector2d center;
  double radius;
};

// Staggered interior pore layout; radii are relative and scaled jointly to
// meet the target area fraction.
std::vector<Circle> pore_layout() {
  return {
      {{0.28, 0.30}, 1.00},
      {{0.76, 0.24}, 0.80},
      {{0.24, 0.76}, 0.90},
      {{0.72, 0.72}, 1.05},
  };
}

bool on_unit_boundary(const Eigen::Vector2d& x) {
  return x(0) < kCoordTol || x(0) > 1.0 - kCoordTol || x(1) < kCoordTol || x(1) > 1.0 - kCoordTol;
}

struct Grid {
  int n;
  std::vector<Eigen::Vector2d> nodes;  // (n+1)^2 corner nodes
  int node(int i, int j) const { return j * (n + 1) + i; }
};

Grid make_grid(int n) {
  Grid g;
  g.n = n;
  g.nodes.reserve((n + 1) * (n + 1));
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i)
      g.nodes.emplace_back(double(i) / n, double(j) / n);
  return g;
}

Eigen::Vector2d cell_center(const Grid& g, int i, int j) {
  return {(i + 0.5) / g.n, (j + 0.5) / g.n};
}

// Moves nodes near a circle onto it (distance under snap_frac * h), skipping
// outer-boundary nodes. Rolls back snaps that break an element.
void snap_to_circles(std::vector<Eigen::Vector2d>& nodes, const std::vector<int>& connectivity,
                     int npe, const std::vector<Circle>& circles, double h, double snap_frac) {
  const std::vector<Eigen::Vector2d> original = nodes;
  for (auto& x : nodes) {
    if (on_unit_boundary(x)) continue;
    for (const Circle& c : circles) {
      const Eigen::Vector2d d = x - c.center;
      const double dist = d.norm();
      if (dist < kCoordTol) continue;
      if (std::abs(dist - c.radius) < snap_frac * h) {
        x = c.center + (c.radius / dist) * d;
        break;
      }
    }
  }

  // Rollback pass: restore nodes of any element whose Jacobian went bad.
  auto element_ok = [&](int e) {
    for (const GaussPoint& gp : gauss_2x2()) {
      const ShapeEval s = shape_eval(npe == 4 ? ElementType::Quad4 : ElementType::Quad8, gp.xi, gp.eta);
      Eigen::Matrix2d j = Eigen::Matrix2d::Zero();
      for (int n = 0; n < npe; ++n) {
        const Eigen::Vector2d& x = nodes[connectivity[e * npe + n]];
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) j(a, b) += x(a) * s.dn_dxi(n, b);
      }
      if (!(j.determinant() > 0.0)) return false;
    }
    return true;
  };
  const int n_elem = static_cast<int>(connectivity.size()) / npe;
  for (int round = 0; round < 3; ++round) {
    bool changed = false;
    for (int e = 0; e < n_elem; ++e) {
      if (!element_ok(e)) {
        for (int n = 0; n < npe; ++n) {
          const int id = connectivity[e * npe + n];
          nodes[id] = original[id];
        }
        changed = true;
      }
    }
    if (!changed) break;
  }
}

// Keeps the listed elements of the full grid and compacts node ids.
Mesh compact_quad4(const Grid& g, const std::vector<std::pair<int, int>>& kept_cells,
                   const std::vector<int>& phases) {
  Mesh mesh;
  mesh.element_type = ElementType::Quad4;
  std::vector<int> remap(g.nodes.size(), -1);
  for (std::size_t k = 0; k < kept_cells.size(); ++k) {
    auto [i, j] = kept_cells[k];
    const int ids[4] = {g.node(i, j), g.node(i + 1, j), g.node(i + 1, j + 1), g.node(i, j + 1)};
    for (int id : ids) {
      if (remap[id] < 0) {
        remap[id] = mesh.n_nodes();
        mesh.nodes.push_back(g.nodes[id]);
      }
      mesh.connectivity.push_back(remap[id]);
    }
    mesh.phase.push_back(phases[k]);
  }
  for (int id = 0; id < static_cast<int>(g.nodes.size()); ++id)
    if (remap[id] >= 0 && on_unit_boundary(g.nodes[id])) mesh.boundary_nodes.push_back(remap[id]);
  return mesh;
}

void require_connected(const Mesh& mesh) {
  const int ne = mesh.n_elements();
  if (ne == 0) throw std::invalid_argument("mesh preset: no elements remain");
  // element adjacency via shared nodes
  std::vector<std::vector<int>> elems_of_node(mesh.n_nodes());
  const int npe = mesh.nodes_per_elem();
  for (int e = 0; e < ne; ++e)
    for (int n = 0; n < npe; ++n) elems_of_node[mesh.connectivity[e * npe + n]].push_back(e);
  std::vector<char> seen(ne, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int count = 1;
  while (!q.empty()) {
    const int e = q.front();
    q.pop();
    for (int n = 0; n < npe; ++n)
      for (int o : elems_of_node[mesh.connectivity[e * npe + n]])
        if (!seen[o]) {
          seen[o] = 1;
          count++;
          q.push(o);
        }
  }
  if (count != ne) throw std::invalid_argument("mesh preset: generated mesh is disconnected");
}

PeriodicPairs build_periodic_pairs(const Mesh& mesh) {
  PeriodicPairs pp;
  std::vector<int> left, right, bottom, top;
  int corner00 = -1;
  std::vector<int> other_corners;
  for (int n = 0; n < mesh.n_nodes(); ++n) {
    const auto& x = mesh.nodes[n];
    const bool l = x(0) < kCoordTol, r = x(0) > 1.0 - kCoordTol;
    const bool b = x(1) < kCoordTol, t = x(1) > 1.0 - kCoordTol;
    if ((l || r) && (b || t)) {
      if (l && b)
        corner00 = n;
      else
        other_corners.push_back(n);
      continue;
    }
    if (l) left.push_back(n);
    if (r) right.push_back(n);
    if (b) bottom.push_back(n);
    if (t) top.push_back(n);
  }
  if (corner00 < 0 || other_corners.size() != 3 || left.size() != right.size() ||
      bottom.size() != top.size())
    throw std::invalid_argument("mesh preset: boundary is not periodicity-matched");

  auto match = [&](std::vector<int>& slaves, std::vector<int>& masters, int axis) {
    auto key = [&](int n) { return mesh.nodes[n](axis); };
    std::sort(slaves.begin(), slaves.end(), [&](int a, int b) { return key(a) < key(b); });
    std::sort(masters.begin(), masters.end(), [&](int a, int b) { return key(a) < key(b); });
    for (std::size_t k = 0; k < slaves.size(); ++k) {
      if (std::abs(key(slaves[k]) - key(masters[k])) > 1e-8)
        throw std::invalid_argument("mesh preset: opposite boundary nodes do not line up");
      pp.pairs.emplace_back(slaves[k], masters[k]);
    }
  };
  match(right, left, 1);
  match(top, bottom, 0);
  for (int c : other_corners) pp.pairs.emplace_back(c, corner00);
  pp.anchor = corner00;
  return pp;
}

double element_area(const Mesh& mesh, int e) {
  const auto conn = mesh.element(e);
  double a = 0.0;
  for (const GaussPoint& gp : gauss_2x2()) {
    const ShapeEval s = shape_eval(mesh.element_type, gp.xi, gp.eta);
    Eigen::Matrix2d j = Eigen::Matrix2d::Zero();
    for (int n = 0; n < static_cast<int>(conn.size()); ++n) {
      const Eigen::Vector2d& x = mesh.nodes[conn[n]];
      for (int p = 0; p < 2; ++p)
        for (int b = 0; b < 2; ++b) j(p, b) += x(p) * s.dn_dxi(n, b);
    }
    a += gp.weight * j.determinant();
  }
  return a;
}

Mesh build_porous(int n, double target, bool periodic) {
  const std::vector<Circle> base = pore_layout();
  const double base_area = [&] {
    double s = 0.0;
    for (const auto& c : base) s += c.radius * c.radius;
    return M_PI * s;
  }();
  const double r_unit = std::sqrt(target / base_area);  // scale=1 hits target exactly for ideal circles

  auto build = [&](double scale) {
    std::vector<Circle> circles;
    for (const auto& c : base) circles.push_back({c.center, c.radius * r_unit * scale});
    for (std::size_t a = 0; a < circles.size(); ++a) {
      for (std::size_t b = a + 1; b < circles.size(); ++b)
        if ((circles[a].center - circles[b].center).norm() <
            circles[a].radius + circles[b].radius)
          throw std::invalid_argument("porous preset: overlapping pores");
      const auto& c = circles[a];
      if (c.center(0) - c.radius < 0.02 || c.center(0) + c.radius > 0.98 ||
          c.center(1) - c.radius < 0.02 || c.center(1) + c.radius > 0.98)
        throw std::invalid_argument("porous preset: pore crosses the cell boundary");
    }

    const Grid g = make_grid(n);
    std::vector<std::pair<int, int>> kept;
    std::vector<int> phases;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const Eigen::Vector2d c = cell_center(g, i, j);
        bool inside = false;
        for (const Circle& circ : circles)
          if ((c - circ.center).norm() < circ.radius) inside = true;
        if (!inside) {
          kept.emplace_back(i, j);
          phases.push_back(0);
        }
      }
    Mesh mesh = compact_quad4(g, kept, phases);
    snap_to_circles(mesh.nodes, mesh.connectivity, 4, circles, 1.0 / n, 0.45);
    return mesh;
  };

  // Calibrate the radius scale so the measured pore fraction hits the target.
  double lo = 0.85, hi = 1.15;
  Mesh best;
  double best_err = 1e30;
  for (int it = 0; it < 30; ++it) {
    const double s = 0.5 * (lo + hi);
    Mesh mesh = build(s);
    double area = 0.0;
    for (int e = 0; e < mesh.n_elements(); ++e) area += element_area(mesh, e);
    const double frac = 1.0 - area;
    if (std::abs(frac - target) < best_err) {
      best_err = std::abs(frac - target);
      best = std::move(mesh);
    }
    if (best_err < 2e-4) break;
    if (frac < target)
      lo = s;
    else
      hi = s;
  }
  if (best_err > 0.005)
    throw std::invalid_argument("porous preset: could not reach target pore fraction");

  require_connected(best);
  if (periodic) best.periodic = build_periodic_pairs(best);
  best.validate();
  return best;
}

// Promotes a quad4 mesh to serendipity quad8; midside nodes on edges whose
// corners both sit on an interface circle are bent onto the circle.
Mesh promote_to_quad8(const Mesh& q4, const std::vector<Circle>& circles) {
  Mesh mesh;
  mesh.element_type = ElementType::Quad8;
  mesh.nodes = q4.nodes;
  mesh.phase = q4.phase;

  auto on_circle = [&](const Eigen::Vector2d& x) -> const Circle* {
    for (const Circle& c : circles)
      if (std::abs((x - c.center).norm() - c.radius) < 1e-9) return &c;
    return nullptr;
  };

  std::map<std::pair<int, int>, int> edge_mid;
  auto midside = [&](int a, int b) {
    const auto key = std::minmax(a, b);
    auto it = edge_mid.find(key);
    if (it != edge_mid.end()) return it->second;
    Eigen::Vector2d x = 0.5 * (q4.nodes[a] + q4.nodes[b]);
    const Circle* ca = on_circle(q4.nodes[a]);
    if (ca && ca == on_circle(q4.nodes[b])) {
      const Eigen::Vector2d d = x - ca->center;
      if (d.norm() > kCoordTol) x = ca->center + (ca->radius / d.norm()) * d;
    }
    const int id = mesh.n_nodes();
    mesh.nodes.push_back(x);
    edge_mid.emplace(key, id);
    return id;
  };

  for (int e = 0; e < q4.n_elements(); ++e) {
    const auto c = q4.element(e);
    const int mids[4] = {midside(c[0], c[1]), midside(c[1], c[2]), midside(c[2], c[3]),
                         midside(c[3], c[0])};
    for (int k = 0; k < 4; ++k) mesh.connectivity.push_back(c[k]);
    for (int k = 0; k < 4; ++k) mesh.connectivity.push_back(mids[k]);
  }
  for (int id = 0; id < mesh.n_nodes(); ++id)
    if (on_unit_boundary(mesh.nodes[id])) mesh.boundary_nodes.push_back(id);
  return mesh;
}

// Butterfly O-grid around a centered circular fiber: a square core block,
// radial transition bands out to the circle, and radial bands from the circle
// to the cell boundary. All rays run from the cell center, so every quad is
// convex; interface vertices sit exactly on the circle.
Mesh build_fiber_quad4(int m, double radius) {
  if (radius > 0.45) throw std::invalid_argument("fiber preset: fiber touches the cell boundary");
  const Eigen::Vector2d center(0.5, 0.5);
  const double a = 0.5 * radius;  // core square half-width
  const int nr1 = std::max(1, m / 2);
  const int nr2 = std::max(2, (6 * m) / 5);
  const int nk = 4 * m;

  // Perimeter walks (CCW from the bottom-left corner) of the outer square and
  // the core square share the same angular parameterization.
  auto outer_point = [&](int k) -> Eigen::Vector2d {
    const int s = (k / m) % 4;
    const double t = double(k % m) / m;
    switch (s) {
      case 0: return {t, 0.0};
      case 1: return {1.0, t};
      case 2: return {1.0 - t, 1.0};
      default: return {0.0, 1.0 - t};
    }
  };
  auto core_point = [&](int k) -> Eigen::Vector2d {
    const int s = (k / m) % 4;
    const double t = double(k % m) / m;
    switch (s) {
      case 0: return center + Eigen::Vector2d(-a + 2 * a * t, -a);
      case 1: return center + Eigen::Vector2d(a, -a + 2 * a * t);
      case 2: return center + Eigen::Vector2d(a - 2 * a * t, a);
      default: return center + Eigen::Vector2d(-a, a - 2 * a * t);
    }
  };

  Mesh mesh;
  mesh.element_type = ElementType::Quad4;
  for (int j = 0; j <= m; ++j)
    for (int i = 0; i <= m; ++i)
      mesh.nodes.push_back(center + Eigen::Vector2d(-a + 2 * a * i / m, -a + 2 * a * j / m));
  auto core_id = [&](int i, int j) { return j * (m + 1) + i; };
  auto core_perim = [&](int k) {
    const int s = (k / m) % 4, t = k % m;
    switch (s) {
      case 0: return core_id(t, 0);
      case 1: return core_id(m, t);
      case 2: return core_id(m - t, m);
      default: return core_id(0, m - t);
    }
  };

  const int base1 = mesh.n_nodes();
  for (int j = 1; j <= nr1; ++j)
    for (int k = 0; k < nk; ++k) {
      const Eigen::Vector2d q = core_point(k);
      const Eigen::Vector2d c = center + radius * (outer_point(k) - center).normalized();
      mesh.nodes.push_back(q + (double(j) / nr1) * (c - q));
    }
  const int base2 = mesh.n_nodes();
  for (int j = 1; j <= nr2; ++j)
    for (int k = 0; k < nk; ++k) {
      const Eigen::Vector2d b = outer_point(k);
      const Eigen::Vector2d c = center + radius * (b - center).normalized();
      mesh.nodes.push_back(c + (double(j) / nr2) * (b - c));
    }

  // Radial chain: level 0 is the core perimeter, levels 1..nr1 reach the
  // circle, levels nr1+1..nr1+nr2 reach the cell boundary.
  auto chain = [&](int k, int level) {
    k = ((k % nk) + nk) % nk;
    if (level == 0) return core_perim(k);
    if (level <= nr1) return base1 + (level - 1) * nk + k;
    return base2 + (level - nr1 - 1) * nk + k;
  };

  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) {
      mesh.connectivity.insert(mesh.connectivity.end(), {core_id(i, j), core_id(i + 1, j),
                                                         core_id(i + 1, j + 1), core_id(i, j + 1)});
      mesh.phase.push_back(1);
    }
  const int n_levels = nr1 + nr2;
  for (int level = 0; level < n_levels; ++level)
    for (int k = 0; k < nk; ++k) {
      mesh.connectivity.insert(mesh.connectivity.end(), {chain(k, level), chain(k, level + 1),
                                                         chain(k + 1, level + 1), chain(k + 1, level)});
      mesh.phase.push_back(level < nr1 ? 1 : 0);
    }

  for (int id = 0; id < mesh.n_nodes(); ++id)
    if (on_unit_boundary(mesh.nodes[id])) mesh.boundary_nodes.push_back(id);
  return mesh;
}

Mesh build_fiber(int m, double target, bool periodic) {
  auto build = [&](double radius) { return promote_to_quad8(build_fiber_quad4(m, radius), {}); };

  const double r0 = std::sqrt(target / M_PI);
  double lo = 0.9 * r0, hi = 1.1 * r0;
  Mesh best;
  double best_err = 1e30;
  for (int it = 0; it < 30; ++it) {
    const double r = 0.5 * (lo + hi);
    Mesh mesh = build(r);
    double fiber_area = 0.0, total = 0.0;
    for (int e = 0; e < mesh.n_elements(); ++e) {
      const double a = element_area(mesh, e);
      total += a;
      if (mesh.phase[e] == 1) fiber_area += a;
    }
    const double frac = fiber_area / total;
    if (std::abs(frac - target) < best_err) {
      best_err = std::abs(frac - target);
      best = std::move(mesh);
    }
    if (best_err < 2e-4) break;
    if (frac < target)
      lo = r;
    else
      hi = r;
  }
  if (best_err > 0.005)
    throw std::invalid_argument("fiber preset: could not reach target fiber fraction");

  require_connected(best);
  if (periodic) best.periodic = build_periodic_pairs(best);
  best.validate();
  return best;
}

Mesh build_unit_square(int n, ElementType type, bool periodic) {
  const Grid g = make_grid(n);
  std::vector<std::pair<int, int>> kept;
  std::vector<int> phases;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      kept.emplace_back(i, j);
      phases.push_back(0);
    }
  Mesh mesh = compact_quad4(g, kept, phases);
  if (type == ElementType::Quad8) mesh = promote_to_quad8(mesh, {});
  if (periodic) mesh.periodic = build_periodic_pairs(mesh);
  mesh.validate();
  return mesh;
}

Mesh build_cook(int n) {
  const int nx = 2 * n, ny = n;
  Mesh mesh;
  mesh.element_type = ElementType::Quad4;
  auto node = [&](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) {
      const double xi = double(i) / nx, eta = double(j) / ny;
      mesh.nodes.emplace_back(48.0 * xi, 44.0 * xi + eta * (44.0 - 28.0 * xi));
    }
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      mesh.connectivity.insert(mesh.connectivity.end(),
                               {node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)});
      mesh.phase.push_back(0);
    }
  for (int j = 0; j <= ny; ++j) {
    mesh.node_sets["left"].push_back(node(0, j));
    if (j < ny) mesh.edge_sets["right"].push_back({node(nx, j), node(nx, j + 1)});
  }
  for (int i = 0; i <= nx; ++i) {
    mesh.boundary_nodes.push_back(node(i, 0));
    mesh.boundary_nodes.push_back(node(i, ny));
  }
  for (int j = 1; j < ny; ++j) {
    mesh.boundary_nodes.push_back(node(0, j));
    mesh.boundary_nodes.push_back(node(nx, j));
  }
  mesh.validate();
  return mesh;
}

}  // namespace

Mesh build_mesh(const MeshSpec& spec) {
  using Preset = MeshSpec::Preset;
  switch (spec.preset) {
    case Preset::UnitSquare: {
      const int n = spec.resolution > 0 ? spec.resolution : 8;
      return build_unit_square(n, spec.element_type.value_or(ElementType::Quad4), spec.periodic);
    }
    case Preset::Porous: {
      const int n = spec.resolution > 0 ? spec.resolution : (spec.paper_scale ? 84 : 42);
      const double target = spec.target_fraction > 0.0 ? spec.target_fraction : 0.14;
      if (spec.element_type && *spec.element_type != ElementType::Quad4)
        throw std::invalid_argument("porous preset uses quad4 elements");
      return build_porous(n, target, spec.periodic);
    }
    case Preset::Fiber: {
      const int n = spec.resolution > 0 ? spec.resolution : (spec.paper_scale ? 24 : 12);
      const double target = spec.target_fraction > 0.0 ? spec.target_fraction : 0.1256;
      if (spec.element_type && *spec.element_type != ElementType::Quad8)
        throw std::invalid_argument("fiber preset uses quad8 elements");
      return build_fiber(n, target, spec.periodic);
    }
    case Preset::Cook: {
      const int n = spec.resolution > 0 ? spec.resolution : 10;
      return build_cook(n);
    }
  }
  throw std::invalid_argument("build_mesh: unknown preset");
}

double measured_fraction(const Mesh& mesh) {
  double total = 0.0, inclusion = 0.0;
  for (int e = 0; e < mesh.n_elements(); ++e) {
    const double a = element_area(mesh, e);
    total += a;
    if (mesh.phase[e] != 0) inclusion += a;
  }
  bool has_inclusion = false;
  for (int p : mesh.phase)
    if (p != 0) has_inclusion = true;
  if (has_inclusion) return inclusion / total;
  return 1.0 - total;  // pore fraction of a unit cell
}

}  // namespace rbhomog
