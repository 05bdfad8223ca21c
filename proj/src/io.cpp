#include "rbhomog/io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <iomanip>

#include "rbhomog/errors.hpp"

namespace rbhomog {

using nlohmann::json;

void save_mesh_json(const Mesh& mesh, const std::filesystem::path& path) {
  json j;
  j["format"] = "rbhomog-mesh";
  j["version"] = 1;
  j["element_type"] = mesh.element_type == ElementType::Quad4 ? "quad4" : "quad8";
  auto& nodes = j["nodes"] = json::array();
  for (const auto& x : mesh.nodes) nodes.push_back({x(0), x(1)});
  const int npe = mesh.nodes_per_elem();
  auto& elems = j["elements"] = json::array();
  for (int e = 0; e < mesh.n_elements(); ++e) {
    json conn = json::array();
    for (int n = 0; n < npe; ++n) conn.push_back(mesh.connectivity[e * npe + n]);
    elems.push_back(std::move(conn));
  }
  j["phase"] = mesh.phase;
  j["boundary_nodes"] = mesh.boundary_nodes;
  if (mesh.periodic) {
    json pairs = json::array();
    for (auto [s, m] : mesh.periodic->pairs) pairs.push_back({s, m});
    j["periodic"] = {{"pairs", std::move(pairs)}, {"anchor", mesh.periodic->anchor}};
  } else {
    j["periodic"] = nullptr;
  }
  for (const auto& [name, set] : mesh.node_sets) j["node_sets"][name] = set;
  for (const auto& [name, set] : mesh.edge_sets) {
    json edges = json::array();
    for (const auto& e : set) edges.push_back({e[0], e[1]});
    j["edge_sets"][name] = std::move(edges);
  }

  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << std::setprecision(17) << j.dump(1) << "\n";
}

Mesh load_mesh_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open mesh file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("mesh file " + path.string() + ": " + e.what());
  }
  try {
    if (j.at("format") != "rbhomog-mesh") throw FormatError("not an rbhomog mesh file");
    if (j.at("version") != 1)
      throw FormatError("unsupported mesh schema version " + j["version"].dump());
    Mesh mesh;
    const std::string t = j.at("element_type");
    if (t == "quad4")
      mesh.element_type = ElementType::Quad4;
    else if (t == "quad8")
      mesh.element_type = ElementType::Quad8;
    else
      throw FormatError("unknown element type " + t);
    for (const auto& x : j.at("nodes")) mesh.nodes.emplace_back(double(x.at(0)), double(x.at(1)));
    const int npe = mesh.nodes_per_elem();
    for (const auto& conn : j.at("elements")) {
      if (static_cast<int>(conn.size()) != npe)
        throw FormatError("element connectivity length does not match element type");
      for (const auto& c : conn) mesh.connectivity.push_back(int(c));
    }
    mesh.phase = j.at("phase").get<std::vector<int>>();
    mesh.boundary_nodes = j.at("boundary_nodes").get<std::vector<int>>();
    if (!j.at("periodic").is_null()) {
      PeriodicPairs pp;
      for (const auto& p : j["periodic"].at("pairs")) pp.pairs.emplace_back(int(p.at(0)), int(p.at(1)));
      pp.anchor = j["periodic"].at("anchor");
      mesh.periodic = std::move(pp);
    }
    if (j.contains("node_sets"))
      for (auto& [name, set] : j["node_sets"].items())
        mesh.node_sets[name] = set.get<std::vector<int>>();
    if (j.contains("edge_sets"))
      for (auto& [name, set] : j["edge_sets"].items())
        for (const auto& e : set)
          mesh.edge_sets[name].push_back({int(e.at(0)), int(e.at(1))});
    mesh.validate();
    return mesh;
  } catch (const json::exception& e) {
    throw FormatError("mesh file " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError("mesh file " + path.string() + ": " + e.what());
  }
}

namespace {

// 3x3 reference-coordinate grid per element; subcell (a,b) carries the value
// of quadrature point b*2+a.
void write_subgrid(std::ostream& out, const Mesh& mesh) {
  const int ne = mesh.n_elements();
  out << "DATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << 9 * ne << " double\n";
  for (int e = 0; e < ne; ++e) {
    const auto conn = mesh.element(e);
    for (int jb = 0; jb <= 2; ++jb)
      for (int ia = 0; ia <= 2; ++ia) {
        const ShapeEval s = shape_eval(mesh.element_type, -1.0 + ia, -1.0 + jb);
        Eigen::Vector2d x = Eigen::Vector2d::Zero();
        for (int n = 0; n < static_cast<int>(conn.size()); ++n) x += s.n(n) * mesh.nodes[conn[n]];
        out << x(0) << " " << x(1) << " 0\n";
      }
  }
  out << "CELLS " << 4 * ne << " " << 4 * ne * 5 << "\n";
  for (int e = 0; e < ne; ++e) {
    const int base = 9 * e;
    for (int b = 0; b < 2; ++b)
      for (int a = 0; a < 2; ++a) {
        const int p0 = base + b * 3 + a;
        out << "4 " << p0 << " " << p0 + 1 << " " << p0 + 4 << " " << p0 + 3 << "\n";
      }
  }
  out << "CELL_TYPES " << 4 * ne << "\n";
  for (int c = 0; c < 4 * ne; ++c) out << "9\n";
}

}  // namespace

void export_quadrature_vtk(const Mesh& mesh,
                           const std::map<std::string, Eigen::VectorXd>& qp_fields,
                           const std::filesystem::path& path) {
  const Eigen::Index n_qp = static_cast<Eigen::Index>(mesh.n_elements()) * 4;
  for (const auto& [name, f] : qp_fields)
    if (f.size() != n_qp)
      throw std::invalid_argument("export_quadrature_vtk: field " + name + " has wrong size");

  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << std::setprecision(12);
  out << "# vtk DataFile Version 3.0\nquadrature point fields\nASCII\n";
  write_subgrid(out, mesh);
  out << "CELL_DATA " << n_qp << "\n";
  for (const auto& [name, f] : qp_fields) {
    out << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
    for (Eigen::Index q = 0; q < n_qp; ++q) out << f(q) << "\n";
  }
}

std::map<std::string, Eigen::VectorXd> stress_component_fields(const QuadratureStressField& field) {
  const int n = field.n_qp();
  std::map<std::string, Eigen::VectorXd> out;
  const char* names[4] = {"P11", "P12", "P21", "P22"};
  for (int c = 0; c < 4; ++c) {
    Eigen::VectorXd v(n);
    for (int q = 0; q < n; ++q) v(q) = field.stress(4 * q + c);
    out[names[c]] = std::move(v);
  }
  Eigen::VectorXd vm(n);
  for (int q = 0; q < n; ++q) {
    const Tensor2 p = field.at(q);
    const double s11 = p(0, 0), s22 = p(1, 1), s12 = 0.5 * (p(0, 1) + p(1, 0));
    vm(q) = std::sqrt(std::max(0.0, s11 * s11 + s22 * s22 - s11 * s22 + 3.0 * s12 * s12));
  }
  out["von_mises"] = std::move(vm);
  return out;
}

void export_displacement_vtk(const Mesh& mesh, const Eigen::VectorXd& displacement,
                             const std::filesystem::path& path) {
  if (displacement.size() != 2 * mesh.n_nodes())
    throw std::invalid_argument("export_displacement_vtk: displacement size mismatch");
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << std::setprecision(12);
  out << "# vtk DataFile Version 3.0\nmacro solution\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << mesh.n_nodes() << " double\n";
  for (const auto& x : mesh.nodes) out << x(0) << " " << x(1) << " 0\n";
  const int npe = mesh.nodes_per_elem();
  out << "CELLS " << mesh.n_elements() << " " << mesh.n_elements() * (npe + 1) << "\n";
  for (int e = 0; e < mesh.n_elements(); ++e) {
    out << npe;
    for (int n = 0; n < npe; ++n) out << " " << mesh.connectivity[e * npe + n];
    out << "\n";
  }
  out << "CELL_TYPES " << mesh.n_elements() << "\n";
  for (int e = 0; e < mesh.n_elements(); ++e) out << (npe == 4 ? "9" : "23") << "\n";
  out << "POINT_DATA " << mesh.n_nodes() << "\n";
  out << "VECTORS displacement double\n";
  for (int n = 0; n < mesh.n_nodes(); ++n)
    out << displacement(2 * n) << " " << displacement(2 * n + 1) << " 0\n";
}

void export_quadrature_csv(const Mesh& mesh, const QuadratureStressField& field,
                           const std::filesystem::path& path) {
  const auto pts = quadrature_points(mesh);
  if (static_cast<int>(pts.size()) != field.n_qp())
    throw std::invalid_argument("export_quadrature_csv: field does not match mesh");
  std::vector<std::vector<double>> rows;
  rows.reserve(pts.size());
  for (int q = 0; q < field.n_qp(); ++q)
    rows.push_back({double(q), pts[q](0), pts[q](1), field.weights(q), field.stress(4 * q),
                    field.stress(4 * q + 1), field.stress(4 * q + 2), field.stress(4 * q + 3)});
  write_csv(path, {"qp", "x", "y", "w", "P11", "P12", "P21", "P22"}, rows);
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << std::setprecision(17);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw std::invalid_argument("write_csv: row length does not match header");
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << "\n";
  }
}

BinaryWriter::BinaryWriter(const std::filesystem::path& path)
    : out_(path, std::ios::binary), path_(path) {
  if (!out_) throw FormatError("cannot open " + path.string() + " for writing");
}

void BinaryWriter::magic(const char tag[8]) { out_.write(tag, 8); }
void BinaryWriter::u32(std::uint32_t v) { out_.write(reinterpret_cast<const char*>(&v), 4); }
void BinaryWriter::u64(std::uint64_t v) { out_.write(reinterpret_cast<const char*>(&v), 8); }
void BinaryWriter::f64(double v) { out_.write(reinterpret_cast<const char*>(&v), 8); }
void BinaryWriter::f64_array(const double* data, std::size_t count) {
  out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
}
void BinaryWriter::close() {
  out_.close();
  if (!out_) throw FormatError("write failed for " + path_.string());
}

BinaryReader::BinaryReader(const std::filesystem::path& path)
    : in_(path, std::ios::binary), path_(path) {
  if (!in_) throw FormatError("cannot open " + path.string());
}

void BinaryReader::read_raw(void* dst, std::size_t size) {
  in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(size));
  if (static_cast<std::size_t>(in_.gcount()) != size)
    throw FormatError(path_.string() + ": truncated at byte offset " + std::to_string(offset_));
  offset_ += size;
}

void BinaryReader::magic(const char tag[8]) {
  char buf[8];
  read_raw(buf, 8);
  if (std::memcmp(buf, tag, 8) != 0)
    throw FormatError(path_.string() + ": bad magic at byte offset " + std::to_string(offset_ - 8));
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  read_raw(&v, 4);
  return v;
}
std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  read_raw(&v, 8);
  return v;
}
double BinaryReader::f64() {
  double v;
  read_raw(&v, 8);
  return v;
}
void BinaryReader::f64_array(double* data, std::size_t count) { read_raw(data, count * 8); }

}  // namespace rbhomog
