#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rbhomog/errors.hpp"
#include "rbhomog/io.hpp"
#include "rbhomog/mesh_presets.hpp"
#include "rbhomog/micro_fem.hpp"

using namespace rbhomog;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("rbhomog_io_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("mesh json round trip preserves the mesh") {
  TempDir tmp;
  for (const MeshSpec spec : {MeshSpec{.preset = MeshSpec::Preset::Fiber, .resolution = 6, .periodic = true},
                              MeshSpec{.preset = MeshSpec::Preset::Cook, .resolution = 3},
                              MeshSpec{.preset = MeshSpec::Preset::Porous, .resolution = 24}}) {
    const Mesh mesh = build_mesh(spec);
    const fs::path file = tmp.path / "mesh.json";
    save_mesh_json(mesh, file);
    const Mesh loaded = load_mesh_json(file);
    CHECK(loaded.hash() == mesh.hash());
    CHECK(loaded.boundary_nodes == mesh.boundary_nodes);
    CHECK(loaded.node_sets == mesh.node_sets);
    CHECK(loaded.edge_sets == mesh.edge_sets);
    CHECK(loaded.periodic.has_value() == mesh.periodic.has_value());
    if (mesh.periodic) {
      CHECK(loaded.periodic->pairs == mesh.periodic->pairs);
      CHECK(loaded.periodic->anchor == mesh.periodic->anchor);
    }
  }
}

TEST_CASE("mesh json rejects malformed input") {
  TempDir tmp;
  const fs::path file = tmp.path / "bad.json";
  {
    std::ofstream out(file);
    out << "{\"format\": \"something-else\"}";
  }
  CHECK_THROWS_AS(load_mesh_json(file), FormatError);
  {
    std::ofstream out(file);
    out << "not json at all {";
  }
  CHECK_THROWS_AS(load_mesh_json(file), FormatError);
  CHECK_THROWS_AS(load_mesh_json(tmp.path / "missing.json"), FormatError);
}

TEST_CASE("quadrature vtk export writes a well-formed subgrid") {
  TempDir tmp;
  const Mesh mesh = build_mesh({.preset = MeshSpec::Preset::UnitSquare, .resolution = 3});
  Tensor2 u;
  u << 1.05, 0.02, 0.02, 0.96;
  const MicroSolution sol = solve_rve(mesh, BcType::Linear, u, {MaterialParams(1.0, 1.0)});

  const fs::path file = tmp.path / "field.vtk";
  export_quadrature_vtk(mesh, stress_component_fields(sol.stress_field), file);

  std::ifstream in(file);
  REQUIRE(in.good());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("POINTS 81 double") != std::string::npos);      // 9 per element
  CHECK(text.find("CELL_TYPES 36") != std::string::npos);         // 4 subcells per element
  CHECK(text.find("SCALARS P11 double 1") != std::string::npos);
  CHECK(text.find("SCALARS von_mises double 1") != std::string::npos);
}

TEST_CASE("displacement vtk export") {
  TempDir tmp;
  const Mesh mesh = build_mesh({.preset = MeshSpec::Preset::Cook, .resolution = 2});
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(2 * mesh.n_nodes(), 0.25);
  const fs::path file = tmp.path / "disp.vtk";
  export_displacement_vtk(mesh, u, file);
  std::ifstream in(file);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("VECTORS displacement double") != std::string::npos);
  CHECK_THROWS_AS(export_displacement_vtk(mesh, Eigen::VectorXd::Zero(3), file),
                  std::invalid_argument);
}

TEST_CASE("csv writer produces a header and rows") {
  TempDir tmp;
  const fs::path file = tmp.path / "table.csv";
  write_csv(file, {"a", "b"}, {{1.0, 2.0}, {3.5, -4.25}});
  std::ifstream in(file);
  std::string line;
  std::getline(in, line);
  CHECK(line == "a,b");
  std::getline(in, line);
  CHECK(line == "1,2");
  CHECK_THROWS_AS(write_csv(file, {"a"}, {{1.0, 2.0}}), std::invalid_argument);
}

TEST_CASE("quadrature csv has one row per point") {
  TempDir tmp;
  const Mesh mesh = build_mesh({.preset = MeshSpec::Preset::UnitSquare, .resolution = 2});
  const MicroSolution sol =
      solve_rve(mesh, BcType::Linear, Tensor2::Identity(), {MaterialParams(1.0, 1.0)});
  const fs::path file = tmp.path / "field.csv";
  export_quadrature_csv(mesh, sol.stress_field, file);
  std::ifstream in(file);
  int lines = 0;
  std::string line;
  while (std::getline(in, line)) lines++;
  CHECK(lines == 1 + 16);  // header + 4 elements x 4 points
}
