#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "rbhomog/errors.hpp"

#include "rbhomog/mesh_presets.hpp"
#include "rbhomog/surrogate.hpp"

using namespace rbhomog;
namespace fs = std::filesystem;

namespace {

Tensor2 rotation(double theta) {
  Tensor2 r;
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return r;
}

struct Setup {
  Mesh mesh;
  SnapshotSet train;
  SurrogateModel model;
};

// Homogeneous unit-square RVE, 3 stretch parameters around the identity; the
// analytic Neo-Hookean response is the reference.
Setup homogeneous_setup(int n_train = 30, double delta = 0.06, int basis_count = 8) {
  Mesh mesh = build_mesh({.preset = MeshSpec::Preset::UnitSquare, .resolution = 4});
  Bounds bounds = {{1.0 - delta, 1.0 + delta}, {1.0 - delta, 1.0 + delta}, {-delta, delta}};
  // the first Sobol point is the box center, i.e. exactly the identity stretch
  const auto points = sobol_sample(n_train, bounds);
  MaterialConfig mc;
  mc.base = {MaterialParams(1.0, 1.0)};
  SnapshotSet train = generate_snapshots(points, mesh, BcType::Linear, mc);
  TrainOptions opts;
  opts.selector.count = std::min(basis_count, train.n());
  SurrogateModel model = SurrogateModel::train(train, opts);
  return {std::move(mesh), std::move(train), std::move(model)};
}

// Small two-phase RVE with a sampled inclusion stiffness (4 parameters).
Setup two_phase_setup(int n_train = 40) {
  Mesh mesh = build_mesh({.preset = MeshSpec::Preset::UnitSquare, .resolution = 4});
  for (int e = 0; e < mesh.n_elements(); ++e) {
    const int i = e % 4, j = e / 4;
    if (i >= 1 && i <= 2 && j >= 1 && j <= 2) mesh.phase[e] = 1;
  }
  Bounds bounds = {{0.95, 1.05}, {0.95, 1.05}, {-0.05, 0.05}, {50.0, 150.0}};
  const auto points = sobol_sample(n_train, bounds, /*include_corners=*/true);
  MaterialConfig mc;
  mc.base = {MaterialParams(1.0, 1.0), MaterialParams(100.0, 100.0)};
  mc.sampled_phase = {1};
  SnapshotSet train = generate_snapshots(points, mesh, BcType::Linear, mc);
  TrainOptions opts;
  opts.selector.count = 10;
  SurrogateModel model = SurrogateModel::train(train, opts);
  return {std::move(mesh), std::move(train), std::move(model)};
}

const Eigen::VectorXd kNoMaterial = Eigen::VectorXd(0);

}  // namespace

TEST_CASE("training points are reproduced through the truncated basis") {
  const Setup s = homogeneous_setup();
  double max_norm = 0.0;
  for (int i = 0; i < s.train.n(); ++i)
    max_norm = std::max(max_norm, s.train.field(i).l2_norm());

  for (int i = 0; i < s.train.n(); i += 7) {
    const auto& p = s.train.params[i];
    const QuadratureStressField predicted = s.model.stress_field(p.stretch_tensor(), p.material);
    // reference: rank-L projection of the snapshot
    const Eigen::VectorXd alpha = project_coefficients(s.train.field(i), s.model.basis());
    const Eigen::VectorXd projected = reconstruct_stress(s.model.basis(), alpha);
    const QuadratureStressField diff{predicted.stress - projected, s.train.weights};
    CHECK(diff.l2_norm() <= 1e-6 * max_norm);
  }
}

TEST_CASE("identity stretch predicts a nearly zero field") {
  const Setup s = homogeneous_setup();
  double max_norm = 0.0;
  for (int i = 0; i < s.train.n(); ++i)
    max_norm = std::max(max_norm, s.train.field(i).l2_norm());
  const QuadratureStressField at_identity = s.model.stress_field(Tensor2::Identity(), kNoMaterial);
  CHECK(at_identity.l2_norm() < 1e-6 * max_norm);
  CHECK(s.model.effective_stress(Tensor2::Identity(), kNoMaterial).norm() < 1e-6 * max_norm);
}

TEST_CASE("effective stress equals the averaged predicted field") {
  const Setup s = homogeneous_setup();
  const auto& p = s.train.params[4];
  const Tensor2 via_field = average_stress(s.model.stress_field(p.stretch_tensor(), p.material));
  const Tensor2 direct = s.model.effective_stress(p.stretch_tensor(), p.material);
  CHECK((via_field - direct).norm() <= 1e-12 * std::max(1.0, direct.norm()));
}

TEST_CASE("surrogate accuracy against fresh high-fidelity solves") {
  const Setup s = homogeneous_setup();
  const auto test_points = uniform_sample(20, {{0.95, 1.05}, {0.95, 1.05}, {-0.05, 0.05}}, 7);
  MaterialConfig mc;
  mc.base = {MaterialParams(1.0, 1.0)};
  const SnapshotSet test = generate_snapshots(test_points, s.mesh, BcType::Linear, mc);

  for (int i = 0; i < test.n(); ++i) {
    const auto& p = test.params[i];
    const QuadratureStressField predicted = s.model.stress_field(p.stretch_tensor(), p.material);
    const QuadratureStressField truth = test.field(i);
    const QuadratureStressField diff{predicted.stress - truth.stress, test.weights};
    CHECK(diff.l2_norm() <= 0.02 * truth.l2_norm());
  }
}

TEST_CASE("effective stiffness matches finite differences of effective stress") {
  const Setup s = homogeneous_setup();
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> d(-0.05, 0.05);
  for (int t = 0; t < 50; ++t) {
    Tensor2 u;
    const double off = d(rng);
    u << 1.0 + d(rng), off, off, 1.0 + d(rng);
    const Tensor4 a = s.model.effective_stiffness(u, kNoMaterial);

    Tensor4 a_fd;
    const double h = 1e-6;
    // symmetric perturbations of the three stretch components
    for (int comp = 0; comp < 3; ++comp) {
      Tensor2 up = u, um = u;
      if (comp == 0) {
        up(0, 0) += h;
        um(0, 0) -= h;
      } else if (comp == 1) {
        up(1, 1) += h;
        um(1, 1) -= h;
      } else {
        up(0, 1) += h;
        up(1, 0) += h;
        um(0, 1) -= h;
        um(1, 0) -= h;
      }
      const Tensor2 dp = (s.model.effective_stress(up, kNoMaterial) -
                          s.model.effective_stress(um, kNoMaterial)) /
                         (2.0 * h);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          if (comp == 0)
            a_fd(i, j, 0, 0) = dp(i, j);
          else if (comp == 1)
            a_fd(i, j, 1, 1) = dp(i, j);
          else {
            a_fd(i, j, 0, 1) = dp(i, j) * 0.5;
            a_fd(i, j, 1, 0) = dp(i, j) * 0.5;
          }
        }
    }
    // the FD of a symmetric U12 step equals the sum of the two off-diagonal
    // tangent slots; compare in that contracted form
    double err = 0.0, scale = 0.0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        scale = std::max({scale, std::abs(a(i, j, 0, 0)), std::abs(a(i, j, 1, 1))});
        err = std::max(err, std::abs(a(i, j, 0, 0) - a_fd(i, j, 0, 0)));
        err = std::max(err, std::abs(a(i, j, 1, 1) - a_fd(i, j, 1, 1)));
        err = std::max(err, std::abs(a(i, j, 0, 1) + a(i, j, 1, 0) -
                                     (a_fd(i, j, 0, 1) + a_fd(i, j, 1, 0))));
      }
    CHECK(err <= 1e-5 * std::max(1.0, scale));
  }
}

TEST_CASE("homogeneous surrogate approximates the analytic tangent at the identity") {
  const Setup s = homogeneous_setup();
  const Tensor4 a = s.model.effective_stiffness(Tensor2::Identity(), kNoMaterial);
  const Tensor4 a_ref = material_tangent(Tensor2::Identity(), MaterialParams(1.0, 1.0));
  // dominant components within 2%
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l) {
          const double ref = a_ref(i, j, k, l);
          if (std::abs(ref) > 1.0)
            CHECK(std::abs(a(i, j, k, l) - ref) <= 0.02 * std::abs(ref));
        }
}

TEST_CASE("constitutive evaluation is objective by construction") {
  const Setup s = homogeneous_setup();
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> d(-0.05, 0.05);
  std::uniform_real_distribution<double> ang(-2.5, 2.5);
  for (int t = 0; t < 50; ++t) {
    Tensor2 u;
    const double off = d(rng);
    u << 1.0 + d(rng), off, off, 1.0 + d(rng);
    const Tensor2 r = rotation(ang(rng));
    const Tensor2 p_u = s.model.effective_stress(u, kNoMaterial);
    const auto [p_ru, a_ru] = s.model.constitutive_eval(r * u, kNoMaterial);
    CHECK((p_ru - r * p_u).norm() <= 1e-11 * std::max(1.0, p_u.norm()));
  }
}

TEST_CASE("constitutive evaluation at a pure stretch matches the stretch-frame ops") {
  const Setup s = homogeneous_setup();
  Tensor2 u;
  u << 1.04, 0.02, 0.02, 0.97;
  const auto [p, a] = s.model.constitutive_eval(u, kNoMaterial);
  CHECK((p - s.model.effective_stress(u, kNoMaterial)).norm() < 1e-11);

  // tangents agree on symmetric probe directions
  const Tensor4 a_sym = s.model.effective_stiffness(u, kNoMaterial);
  for (int c = 0; c < 3; ++c) {
    Tensor2 probe = Tensor2::Zero();
    if (c == 0)
      probe(0, 0) = 1.0;
    else if (c == 1)
      probe(1, 1) = 1.0;
    else
      probe(0, 1) = probe(1, 0) = 1.0;
    CHECK((a.contract(probe) - a_sym.contract(probe)).norm() <=
          1e-9 * std::max(1.0, a_sym.contract(probe).norm()));
  }
}

TEST_CASE("constitutive tangent matches finite differences over general deformations") {
  const Setup s = homogeneous_setup();
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> d(-0.04, 0.04);
  std::uniform_real_distribution<double> ang(-0.6, 0.6);
  for (int t = 0; t < 10; ++t) {
    Tensor2 u;
    const double off = d(rng);
    u << 1.0 + d(rng), off, off, 1.0 + d(rng);
    const Tensor2 f = rotation(ang(rng)) * u;
    const auto [p, a] = s.model.constitutive_eval(f, kNoMaterial);

    const double h = 1e-6;
    double err = 0.0, scale = 0.0;
    for (int k = 0; k < 2; ++k)
      for (int l = 0; l < 2; ++l) {
        Tensor2 fp = f, fm = f;
        fp(k, l) += h;
        fm(k, l) -= h;
        const Tensor2 dp =
            (s.model.constitutive_eval(fp, kNoMaterial).first -
             s.model.constitutive_eval(fm, kNoMaterial).first) /
            (2.0 * h);
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) {
            err = std::max(err, std::abs(a(i, j, k, l) - dp(i, j)));
            scale = std::max(scale, std::abs(dp(i, j)));
          }
      }
    CHECK(err <= 1e-4 * std::max(1.0, scale));
  }
}

TEST_CASE("error decomposition identities") {
  const Setup s = homogeneous_setup();

  // at a training point the regression error nearly vanishes
  const auto& p0 = s.train.params[3];
  const ErrorEntry at_train =
      s.model.error_decomposition(s.train.field(3), p0.stretch_tensor(), p0.material);
  const double scale = s.train.field(3).l2_norm();
  CHECK(at_train.regression <= 1e-6 * std::max(1.0, scale));
  CHECK(at_train.total <= at_train.projection + at_train.regression + 1e-12);

  // fresh points: triangle inequality and the Euclidean-norm identity
  const auto test_points = uniform_sample(10, {{0.96, 1.04}, {0.96, 1.04}, {-0.04, 0.04}}, 19);
  MaterialConfig mc;
  mc.base = {MaterialParams(1.0, 1.0)};
  const SnapshotSet test = generate_snapshots(test_points, s.mesh, BcType::Linear, mc);
  for (int i = 0; i < test.n(); ++i) {
    const auto& p = test.params[i];
    const ErrorEntry e = s.model.error_decomposition(test.field(i), p.stretch_tensor(), p.material);
    CHECK(e.total <= e.projection + e.regression + 1e-12);

    // regression error equals the L2 norm of the coefficient-error expansion
    const Eigen::VectorXd alpha_true = project_coefficients(test.field(i), s.model.basis());
    const Eigen::VectorXd alpha_hat = s.model.coefficients(p.stretch_tensor(), p.material);
    const QuadratureStressField expansion{
        reconstruct_stress(s.model.basis(), Eigen::VectorXd(alpha_true - alpha_hat)),
        s.train.weights};
    CHECK(std::abs(e.regression - expansion.l2_norm()) < 1e-10 * std::max(1.0, e.regression));
  }
}

TEST_CASE("material-parameter sensitivities match finite differences") {
  const Setup s = two_phase_setup();
  Eigen::VectorXd mu(1);
  mu << 104.0;
  Tensor2 u;
  u << 1.03, 0.01, 0.01, 0.98;

  std::vector<Tensor2> d_dmu;
  s.model.effective_stress(u, mu, nullptr, &d_dmu);
  REQUIRE(d_dmu.size() == 1);

  const double h = 1e-4 * 100.0;
  Eigen::VectorXd mup = mu, mum = mu;
  mup(0) += h;
  mum(0) -= h;
  const Tensor2 fd =
      (s.model.effective_stress(u, mup) - s.model.effective_stress(u, mum)) / (2.0 * h);
  CHECK((d_dmu[0] - fd).norm() <= 1e-5 * std::max(1e-8, fd.norm()));
}

TEST_CASE("extrapolation raises a warning flag, not an error") {
  const Setup s = homogeneous_setup();
  bool flag = false;
  Tensor2 inside;
  inside << 1.01, 0.0, 0.0, 0.99;
  s.model.effective_stress(inside, kNoMaterial, &flag);
  CHECK_FALSE(flag);

  Tensor2 outside;
  outside << 1.2, 0.0, 0.0, 0.8;  // far beyond the +-0.06 box
  s.model.effective_stress(outside, kNoMaterial, &flag);
  CHECK(flag);
  s.model.constitutive_eval(outside, kNoMaterial, &flag);
  CHECK(flag);
}

TEST_CASE("model archive round trip reproduces predictions") {
  const Setup s = two_phase_setup();
  const fs::path path =
      fs::temp_directory_path() / ("rbhomog_model_" + std::to_string(::getpid()) + ".rbm");
  s.model.save(path);
  const SurrogateModel loaded = SurrogateModel::load(path);
  CHECK(loaded.mesh_hash() == s.model.mesh_hash());
  CHECK(loaded.basis_size() == s.model.basis_size());

  std::mt19937 rng(23);
  std::uniform_real_distribution<double> d(-0.04, 0.04);
  std::uniform_real_distribution<double> mat(55.0, 145.0);
  for (int t = 0; t < 20; ++t) {
    Tensor2 u;
    const double off = d(rng);
    u << 1.0 + d(rng), off, off, 1.0 + d(rng);
    Eigen::VectorXd mu(1);
    mu << mat(rng);
    const Tensor2 a = s.model.effective_stress(u, mu);
    const Tensor2 b = loaded.effective_stress(u, mu);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, a.norm()));
    const QuadratureStressField fa = s.model.stress_field(u, mu);
    const QuadratureStressField fb = loaded.stress_field(u, mu);
    CHECK((fa.stress - fb.stress).cwiseAbs().maxCoeff() <= 1e-14);
  }
  fs::remove(path);

  // truncated archive fails loudly
  {
    std::ifstream in(path);
    CHECK_FALSE(in.good());
  }
  const fs::path trunc = path.string() + ".trunc";
  s.model.save(trunc);
  {
    std::error_code ec;
    const auto size = fs::file_size(trunc, ec);
    fs::resize_file(trunc, size / 3, ec);
  }
  CHECK_THROWS_AS(SurrogateModel::load(trunc), FormatError);
  fs::remove(trunc);
}

TEST_CASE("duplicate parameters in the regression set fail the fit") {
  Setup s = homogeneous_setup(12);
  SnapshotSet bad = s.train;
  bad.params[1] = bad.params[0];
  TrainOptions opts;
  opts.selector.count = 4;
  CHECK_THROWS(SurrogateModel::train(bad, opts));
}
