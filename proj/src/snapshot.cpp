#include "rbhomog/snapshot.hpp"

#include <iostream>
#include <sstream>

#include "rbhomog/errors.hpp"
#include "rbhomog/io.hpp"
#include "rbhomog/parallel.hpp"

namespace rbhomog {

std::vector<MaterialParams> MaterialConfig::resolve(const ParameterPoint& p) const {
  if (static_cast<int>(sampled_phase.size()) != p.material.size())
    throw std::invalid_argument("MaterialConfig: point has " + std::to_string(p.material.size()) +
                                " material scalars, config samples " +
                                std::to_string(sampled_phase.size()));
  std::vector<MaterialParams> out = base;
  for (std::size_t i = 0; i < sampled_phase.size(); ++i) {
    const int phase = sampled_phase[i];
    if (phase < 0 || phase >= static_cast<int>(out.size()))
      throw std::invalid_argument("MaterialConfig: sampled phase out of range");
    out[phase] = MaterialParams(p.material(i), p.material(i));
  }
  return out;
}

void SnapshotSet::validate() const {
  if (n() < 1) throw std::invalid_argument("SnapshotSet: needs at least one snapshot");
  if (stress.rows() != 4 * n_qp() || stress.cols() != n())
    throw std::invalid_argument("SnapshotSet: stress matrix shape mismatch");
  if ((weights.array() <= 0.0).any())
    throw std::invalid_argument("SnapshotSet: weights must be positive");
  const int d = params[0].dim();
  for (int i = 0; i < n(); ++i)
    if (params[i].dim() != d)
      throw std::invalid_argument("SnapshotSet: inconsistent parameter dimensions");
  for (int i = 0; i < n(); ++i)
    for (int j = i + 1; j < n(); ++j)
      if ((params[i].flat() - params[j].flat()).cwiseAbs().maxCoeff() < 1e-14)
        throw std::invalid_argument("SnapshotSet: duplicate parameter points " + std::to_string(i) +
                                    " and " + std::to_string(j));
}

SnapshotSet generate_snapshots(const std::vector<ParameterPoint>& points, const Mesh& mesh,
                               BcType bc, const MaterialConfig& materials,
                               const GenerateOptions& opts) {
  if (points.empty()) throw std::invalid_argument("generate_snapshots: no parameter points");
  const QuadratureLayout layout = quadrature_layout(mesh);
  const int n = static_cast<int>(points.size());

  Eigen::MatrixXd stress(4 * layout.weights.size(), n);
  std::vector<char> failed(n, 0);
  std::vector<std::string> failure(n);

  // Each worker owns an independent solver; results land by column index.
  const int workers = std::max(1, std::min(opts.workers <= 0 ? default_workers() : opts.workers, n));
  std::vector<std::unique_ptr<RveSolver>> solvers;
  for (int w = 0; w < workers; ++w)
    solvers.emplace_back(std::make_unique<RveSolver>(mesh, bc, opts.newton));

  parallel_for(n, workers, [&](int i, int worker) {
    try {
      const MicroSolution sol = solvers[worker]->solve(points[i].stretch_tensor(),
                                                       materials.resolve(points[i]));
      stress.col(i) = sol.stress_field.stress;
    } catch (const SolverError& e) {
      if (!opts.skip_on_failure) {
        std::ostringstream msg;
        msg << "snapshot " << i << " at parameters [" << points[i].flat().transpose()
            << "] failed: " << e.what();
        throw SolverError(msg.str());
      }
      failed[i] = 1;
      failure[i] = e.what();
    }
  });

  SnapshotSet set;
  set.weights = layout.weights;
  set.total_volume = layout.total_volume;
  set.mesh_hash = mesh.hash();
  set.bc_kind = bc == BcType::Linear ? 0 : 1;

  int kept = 0;
  for (int i = 0; i < n; ++i)
    if (!failed[i]) kept++;
  if (kept == 0) throw SolverError("generate_snapshots: every point failed");
  if (kept < n) {
    for (int i = 0; i < n; ++i)
      if (failed[i])
        std::cerr << "generate_snapshots: skipping point " << i << " ["
                  << points[i].flat().transpose() << "]: " << failure[i] << "\n";
  }
  set.stress.resize(stress.rows(), kept);
  set.params.reserve(kept);
  int col = 0;
  for (int i = 0; i < n; ++i) {
    if (failed[i]) continue;
    set.stress.col(col++) = stress.col(i);
    set.params.push_back(points[i]);
  }

  Fnv1a prov;
  prov.update(opts.newton.rel_tol);
  prov.update(opts.newton.abs_tol);
  prov.update(std::int64_t(opts.newton.max_iter));
  prov.update(std::int64_t(opts.newton.max_halvings));
  set.provenance = prov.digest();

  set.validate();
  return set;
}

namespace {
constexpr char kSnapMagic[8] = {'R', 'B', 'S', 'N', 'A', 'P', '0', '1'};
constexpr char kSnapEnd[8] = {'R', 'B', 'S', 'N', 'A', 'P', 'N', 'D'};
}  // namespace

void save_snapshots(const SnapshotSet& set, const std::filesystem::path& path) {
  set.validate();
  BinaryWriter w(path);
  w.magic(kSnapMagic);
  w.u32(1);  // version
  w.u32(set.bc_kind);
  w.u64(set.mesh_hash);
  w.u64(set.provenance);
  w.u32(static_cast<std::uint32_t>(set.n()));
  w.u32(static_cast<std::uint32_t>(set.n_qp()));
  w.u32(static_cast<std::uint32_t>(set.material_dim()));
  w.u32(0);  // reserved
  w.f64(set.total_volume);
  for (const auto& p : set.params) {
    const Eigen::VectorXd flat = p.flat();
    w.f64_array(flat.data(), flat.size());
  }
  w.f64_array(set.weights.data(), set.weights.size());
  w.f64_array(set.stress.data(), static_cast<std::size_t>(set.stress.size()));
  w.magic(kSnapEnd);
  w.close();
}

SnapshotSet load_snapshots(const std::filesystem::path& path) {
  BinaryReader r(path);
  r.magic(kSnapMagic);
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw FormatError(path.string() + ": unsupported snapshot format version " +
                      std::to_string(version));
  SnapshotSet set;
  set.bc_kind = r.u32();
  set.mesh_hash = r.u64();
  set.provenance = r.u64();
  const std::uint32_t n = r.u32();
  const std::uint32_t n_qp = r.u32();
  const std::uint32_t d_mat = r.u32();
  r.u32();  // reserved
  set.total_volume = r.f64();
  if (n == 0 || n > 10'000'000 || n_qp == 0 || n_qp > 100'000'000 || d_mat > 18)
    throw FormatError(path.string() + ": implausible snapshot header at byte offset " +
                      std::to_string(r.offset()));
  set.params.resize(n);
  Eigen::VectorXd flat(3 + d_mat);
  for (std::uint32_t i = 0; i < n; ++i) {
    r.f64_array(flat.data(), flat.size());
    set.params[i] = ParameterPoint::from_flat(flat);
  }
  set.weights.resize(n_qp);
  r.f64_array(set.weights.data(), n_qp);
  set.stress.resize(4 * n_qp, n);
  r.f64_array(set.stress.data(), static_cast<std::size_t>(set.stress.size()));
  r.magic(kSnapEnd);
  set.validate();
  return set;
}

}  // namespace rbhomog
