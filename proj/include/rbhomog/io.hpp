#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "rbhomog/field.hpp"
#include "rbhomog/mesh.hpp"

namespace rbhomog {

/// Mesh JSON codec (schema documented in the README).
void save_mesh_json(const Mesh& mesh, const std::filesystem::path& path);
Mesh load_mesh_json(const std::filesystem::path& path);

/// Legacy ASCII VTK with per-quadrature-point scalar fields written as cell
/// data on a 2x2 subgrid of every element.
void export_quadrature_vtk(const Mesh& mesh,
                           const std::map<std::string, Eigen::VectorXd>& qp_fields,
                           const std::filesystem::path& path);

/// Component fields (P11, P12, P21, P22 and a von Mises style magnitude) of a
/// stress field, ready for export_quadrature_vtk.
std::map<std::string, Eigen::VectorXd> stress_component_fields(const QuadratureStressField& field);

/// Legacy ASCII VTK of the mesh with nodal displacement point data.
void export_displacement_vtk(const Mesh& mesh, const Eigen::VectorXd& displacement,
                             const std::filesystem::path& path);

/// Quadrature field CSV: one row per point (id, x, y, w, values...).
void export_quadrature_csv(const Mesh& mesh, const QuadratureStressField& field,
                           const std::filesystem::path& path);

/// Plain CSV with a header row.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

/// Little-endian binary writer for the versioned artifact formats.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path);
  void magic(const char tag[8]);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64_array(const double* data, std::size_t count);
  void close();

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

/// Binary reader; every failure reports the byte offset it happened at.
class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path);
  void magic(const char tag[8]);
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f64_array(double* data, std::size_t count);
  std::uint64_t offset() const { return offset_; }

 private:
  void read_raw(void* dst, std::size_t size);
  std::ifstream in_;
  std::filesystem::path path_;
  std::uint64_t offset_ = 0;
};

}  // namespace rbhomog
