#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <filesystem>

#include "oracles.hpp"
#include "sssdr/sssdr.hpp"

using namespace sssdr;

namespace {

// Two faces sharing the edge (0,0,0)-(1,0,0) with normals 60 degrees apart.
TriangleMesh hinge_mesh() {
  const double c = std::cos(deg2rad(60.0)), s = std::sin(deg2rad(60.0));
  return make_triangle_mesh({{0, 0, 0}, {1, 0, 0}, {0.5, 1, 0}, {0.5, -c, -s}}, {{0, 1, 2}, {1, 0, 3}});
}

// Gaussian bump on a flat floor, watched by two orthogonal survey lines.
struct BumpProblem {
  Heightfield truth;
  ReconstructProblem prob;
};

BumpProblem bump_problem() {
  const auto grid = GridSpec::centered(20.0, 1.0);
  Heightfield truth(grid, -15.0);
  for (std::size_t j = 0; j < grid.ny; ++j) {
    for (std::size_t i = 0; i < grid.nx; ++i) {
      const Vec2 p = truth.node_xy(i, j);
      truth.z(i, j) += 2.0 * std::exp(-dot(p, p) / (2.0 * 2.0 * 2.0));
    }
  }
  SurveySpec s;
  s.legs = {{{-8, -8}, {8, -8}}, {{8, -8}, {8, 8}}};
  s.sensor_z = -5.0;
  s.ping_spacing = 1.0;
  BumpProblem out{truth, {}};
  auto& p = out.prob;
  p.poses = make_survey_lines(s);
  p.intr = intrinsics_from_fov(deg2rad(1.0), deg2rad(50.0), 50.0, 256);
  p.reference = render_waterfall(heightfield_to_mesh(truth), p.poses, p.intr, p.bp, p.params);
  p.spec.image_scale = 1.0 / p.reference.max();
  return out;
}

Heightfield flat_like(const Heightfield& hf, double depth) { return Heightfield(hf.grid(), -depth); }

}  // namespace

TEST(NormalConsistency, Examples) {
  EXPECT_EQ(normal_consistency(heightfield_to_mesh(Heightfield(GridSpec{5, 5, 1.0, {}}, -20.0))), 0.0);
  EXPECT_NEAR(normal_consistency(hinge_mesh()), 0.5, 1e-12);
  EXPECT_EQ(normal_consistency(make_triangle_mesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}})), 0.0);
}

TEST(NormalConsistency, DomeSmootherAtFinerResolution) {
  const double coarse = normal_consistency(heightfield_to_mesh(make_dome_scene(5, 20, GridSpec::centered(16, 1.0))));
  const double fine = normal_consistency(heightfield_to_mesh(make_dome_scene(5, 20, GridSpec::centered(16, 0.5))));
  EXPECT_GT(coarse, 0.0);
  EXPECT_LT(fine, coarse);
}

TEST(NormalConsistency, InvariantUnderTranslationAndUniformScale) {
  oracle::Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto mesh = heightfield_to_mesh(oracle::random_heightfield(rng, 6, 1.0, 10.0, 0.8));
    const double base = normal_consistency(mesh);
    auto moved = mesh;
    const Vec3 t{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)};
    const double k = rng.uniform(0.1, 10.0);
    for (auto& v : moved.vertices) v = k * v + t;
    EXPECT_NEAR(normal_consistency(moved), base, 1e-12);
  }
}

TEST(NormalConsistency, GradientMatchesCentralDifference) {
  oracle::Rng rng(4);
  auto mesh = heightfield_to_mesh(oracle::random_heightfield(rng, 5, 1.0, 10.0, 0.5));
  const auto edges = interior_edges(mesh);
  const auto g = normal_consistency_gradient(mesh, edges);
  const double h = 1e-6;
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    for (int axis = 0; axis < 3; ++axis) {
      auto coord = [&](Vec3& p) -> double& { return axis == 0 ? p.x : (axis == 1 ? p.y : p.z); };
      const double x0 = coord(mesh.vertices[v]);
      coord(mesh.vertices[v]) = x0 + h;
      const double fp = normal_consistency(mesh, edges);
      coord(mesh.vertices[v]) = x0 - h;
      const double fm = normal_consistency(mesh, edges);
      coord(mesh.vertices[v]) = x0;
      EXPECT_NEAR(g[v][axis], (fp - fm) / (2 * h), 1e-7);
    }
  }
}

TEST(TotalLoss, Examples) {
  Waterfall ref(3, 4);
  for (std::size_t k = 0; k < ref.data.size(); ++k) ref.data[k] = 0.1 * static_cast<double>(k);
  const auto flat = heightfield_to_mesh(Heightfield(GridSpec{3, 3, 1.0, {}}, -5.0));
  LossSpec spec;
  EXPECT_EQ(total_loss(ref, ref, flat, spec), 0.0);

  Waterfall plus = ref;
  for (auto& v : plus.data) v += 1.0;
  spec.lambda_nc = 0.0;
  EXPECT_NEAR(total_loss(plus, ref, flat, spec), 1.0, 1e-12);

  spec.lambda_nc = 2.0;
  EXPECT_NEAR(total_loss(ref, ref, hinge_mesh(), spec), 2.0 * 0.5, 1e-12);

  EXPECT_THROW(total_loss(Waterfall(2, 4), ref, flat, spec), ConfigError);
  spec.lambda_nc = -1.0;
  EXPECT_THROW(total_loss(ref, ref, flat, spec), ConfigError);
}

TEST(TotalLoss, PropertyNonNegative) {
  oracle::Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Waterfall a(2, 6), b(2, 6);
    for (auto& v : a.data) v = rng.uniform(0, 3);
    for (auto& v : b.data) v = rng.uniform(0, 3);
    LossSpec spec;
    spec.lambda_nc = rng.uniform(0, 1);
    spec.image_scale = rng.uniform(0.1, 2);
    const auto mesh = heightfield_to_mesh(oracle::random_heightfield(rng, 4, 1.0, 5.0, 0.5));
    EXPECT_GE(total_loss(a, b, mesh, spec), 0.0);
  }
}

TEST(Adam, FirstStepMovesEveryFreeNodeByTheRate) {
  auto s = OptimState::start(Heightfield(GridSpec{3, 3, 1.0, {}}, -10.0));
  const std::vector<double> grad{1, -2, 3, -4, 5, -6, 7, -8, 0};
  std::vector<char> frozen(9, 0);
  frozen[0] = 1;
  OptimConfig cfg;
  cfg.lr = 0.05;
  adam_step(s, grad, frozen, cfg);
  EXPECT_EQ(s.step, 1u);
  EXPECT_EQ(s.heightfield.values()[0], -10.0);
  for (std::size_t k = 1; k < 8; ++k)
    EXPECT_NEAR(s.heightfield.values()[k], -10.0 - 0.05 * (grad[k] > 0 ? 1 : -1), 1e-9);
  EXPECT_EQ(s.heightfield.values()[8], -10.0);
}

TEST(OptimConfig, Validation) {
  OptimConfig c;
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.beta1 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.adam_eps = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Reconstruct, ReferenceFromInitIsAFixedPoint) {
  auto bp = bump_problem();
  const auto init = flat_like(bp.truth, 15.0);
  bp.prob.reference = render_waterfall(heightfield_to_mesh(init), bp.prob.poses, bp.prob.intr, bp.prob.bp,
                                       bp.prob.params);
  OptimConfig cfg;
  cfg.epochs = 1;
  const auto out = reconstruct(bp.prob, OptimState::start(init), cfg);
  EXPECT_EQ(out.history.front().total, 0.0);
  for (std::size_t k = 0; k < init.size(); ++k)
    EXPECT_LT(std::abs(out.heightfield.values()[k] - init.values()[k]), 1e-6);
}

TEST(Reconstruct, ZeroEpochsReturnsInitWithOneRecord) {
  const auto bp = bump_problem();
  OptimConfig cfg;
  cfg.epochs = 0;
  const auto init = flat_like(bp.truth, 15.0);
  const auto out = reconstruct(bp.prob, OptimState::start(init), cfg);
  EXPECT_EQ(out.heightfield, init);
  ASSERT_EQ(out.history.size(), 1u);
  EXPECT_GT(out.history[0].image, 0.0);
}

TEST(Reconstruct, SingleBumpTwoLinesConverges) {
  const auto bp = bump_problem();
  OptimConfig cfg;
  cfg.epochs = 40;
  cfg.lr = 0.1;
  std::size_t calls = 0;
  const auto out = reconstruct(bp.prob, OptimState::start(flat_like(bp.truth, 15.0)), cfg,
                               [&](const OptimState& s) { EXPECT_EQ(s.epoch, ++calls); });
  EXPECT_EQ(calls, 40u);
  ASSERT_EQ(out.history.size(), 41u);
  EXPECT_LT(out.history.back().image, 0.1 * out.history.front().image)
      << out.history.front().image << " -> " << out.history.back().image;
  for (std::size_t k = 0; k < out.heightfield.size(); ++k) {
    if (out.heightfield.on_boundary(k)) {
      EXPECT_EQ(out.heightfield.values()[k], -15.0);
    }
  }
}

TEST(Reconstruct, DeterministicAndThreadIndependent) {
  const auto bp = bump_problem();
  OptimConfig cfg;
  cfg.epochs = 3;
  cfg.lr = 0.1;
  const auto init = OptimState::start(flat_like(bp.truth, 15.0));
  const auto a = reconstruct(bp.prob, init, cfg);
  EXPECT_EQ(a, reconstruct(bp.prob, init, cfg));
  cfg.threads = 4;
  EXPECT_EQ(a, reconstruct(bp.prob, init, cfg));
}

TEST(Reconstruct, ResumeMatchesUninterruptedRun) {
  const auto bp = bump_problem();
  OptimConfig cfg;
  cfg.lr = 0.1;
  cfg.epochs = 4;
  const auto init = OptimState::start(flat_like(bp.truth, 15.0));
  const auto straight = reconstruct(bp.prob, init, cfg);

  cfg.epochs = 2;
  const auto half = reconstruct(bp.prob, init, cfg);
  const auto path = testing::TempDir() + "sssdr_resume.state";
  save_state(half, path);
  cfg.epochs = 4;
  const auto resumed = reconstruct(bp.prob, load_state(path), cfg);
  EXPECT_EQ(resumed, straight);
}

TEST(Reconstruct, MiniBatchKeepsHistoryContract) {
  const auto bp = bump_problem();
  OptimConfig cfg;
  cfg.lr = 0.05;
  cfg.epochs = 2;
  cfg.batch_heads = 16;
  const auto out = reconstruct(bp.prob, OptimState::start(flat_like(bp.truth, 15.0)), cfg);
  ASSERT_EQ(out.history.size(), 3u);
  EXPECT_EQ(out.step, 2u * ((bp.prob.poses.size() + 15) / 16));
  for (const auto& r : out.history) EXPECT_TRUE(std::isfinite(r.total));
  EXPECT_LT(out.history.back().image, out.history.front().image);
}

TEST(Reconstruct, NonFiniteLossAbortsWithDump) {
  auto bp = bump_problem();
  OptimConfig cfg;
  cfg.epochs = 5;
  cfg.dump_path = testing::TempDir() + "sssdr_nan.state";
  std::filesystem::remove(cfg.dump_path);
  const auto init = flat_like(bp.truth, 15.0);
  // Poison the reference after the second epoch so the next evaluation is NaN.
  auto poison = [&](const OptimState& s) {
    if (s.epoch == 2) bp.prob.reference.data[0] = std::numeric_limits<double>::quiet_NaN();
  };
  EXPECT_THROW(reconstruct(bp.prob, OptimState::start(init), cfg, poison), NumericalError);
  ASSERT_TRUE(std::filesystem::exists(cfg.dump_path));
  const auto dumped = load_state(cfg.dump_path);
  EXPECT_EQ(dumped.epoch, 2u);
  EXPECT_EQ(dumped.history.size(), 3u);
  for (double z : dumped.heightfield.values()) EXPECT_TRUE(std::isfinite(z));
  for (const auto& r : dumped.history) EXPECT_TRUE(std::isfinite(r.total));
}

TEST(Reconstruct, RejectsMismatchedInputs) {
  auto bp = bump_problem();
  OptimConfig cfg;
  const auto init = OptimState::start(flat_like(bp.truth, 15.0));
  auto wrong = bp.prob;
  wrong.reference = Waterfall(3, 256);
  EXPECT_THROW(reconstruct(wrong, init, cfg), ConfigError);
  wrong = bp.prob;
  wrong.poses.clear();
  EXPECT_THROW(reconstruct(wrong, init, cfg), ConfigError);
  auto bad_state = init;
  bad_state.history.assign(3, {});
  EXPECT_THROW(reconstruct(bp.prob, bad_state, cfg), ConfigError);
}

TEST(EvalBathymetry, Examples) {
  const auto truth = make_dome_scene(5, 20, GridSpec::centered(20, 0.5));
  const auto same = eval_bathymetry(truth, truth);
  EXPECT_EQ(same.mae, 0.0);
  EXPECT_EQ(same.rms, 0.0);
  EXPECT_EQ(same.max_abs, 0.0);
  EXPECT_EQ(same.apex_error, 0.0);
  EXPECT_DOUBLE_EQ(same.truth_apex_depth, 15.0);

  Heightfield deeper = truth;
  for (auto& z : deeper.values()) z -= 0.5;
  const auto m = eval_bathymetry(deeper, truth);
  EXPECT_NEAR(m.mae, 0.5, 1e-12);
  EXPECT_NEAR(m.rms, 0.5, 1e-12);
  EXPECT_NEAR(m.apex_depth, 15.5, 1e-12);
  EXPECT_NEAR(m.apex_error, 0.5, 1e-12);

  EXPECT_THROW(eval_bathymetry(truth, make_dome_scene(5, 20, GridSpec::centered(20, 1.0))), ConfigError);
}
