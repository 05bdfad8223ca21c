#pragma once

#include <filesystem>
#include <vector>

#include "rbhomog/field.hpp"
#include "rbhomog/mesh.hpp"
#include "rbhomog/micro_fem.hpp"
#include "rbhomog/sampling.hpp"

namespace rbhomog {

/// Phase -> material resolution for a sampled parameter point: base values per
/// phase, with material[i] overriding phase sampled_phase[i] as C1 = D1.
struct MaterialConfig {
  std::vector<MaterialParams> base;
  std::vector<int> sampled_phase;

  std::vector<MaterialParams> resolve(const ParameterPoint& p) const;
};

/// Stress-field snapshots on one shared quadrature layout, column i belonging
/// to params[i].
struct SnapshotSet {
  Eigen::MatrixXd stress;   // (4 * n_qp) x N
  Eigen::VectorXd weights;  // n_qp
  double total_volume = 0.0;
  std::vector<ParameterPoint> params;
  std::uint64_t mesh_hash = 0;
  std::uint32_t bc_kind = 0;  // 0 linear, 1 periodic
  std::uint64_t provenance = 0;

  int n() const { return static_cast<int>(params.size()); }
  int n_qp() const { return static_cast<int>(weights.size()); }
  int material_dim() const { return params.empty() ? 0 : static_cast<int>(params[0].material.size()); }
  QuadratureStressField field(int i) const { return {stress.col(i), weights}; }

  /// N >= 1, consistent sizes, pairwise-distinct parameters.
  void validate() const;
};

struct GenerateOptions {
  NewtonOptions newton;
  int workers = 0;              // 0 = hardware concurrency
  bool skip_on_failure = false; // drop diverged points instead of aborting
};

/// One converged RVE solve per parameter point, collected in order. With
/// skip_on_failure, diverged points are reported on it and excluded.
SnapshotSet generate_snapshots(const std::vector<ParameterPoint>& points, const Mesh& mesh,
                               BcType bc, const MaterialConfig& materials,
                               const GenerateOptions& opts = {});

/// Versioned little-endian binary codec; round trips are bit exact.
void save_snapshots(const SnapshotSet& set, const std::filesystem::path& path);
SnapshotSet load_snapshots(const std::filesystem::path& path);

}  // namespace rbhomog
