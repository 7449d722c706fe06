#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "sssdr/sssdr.hpp"

using namespace sssdr;

namespace {

SonarIntrinsics default_intr() { return intrinsics_from_fov(deg2rad(1.0), deg2rad(50.0), 50.0, 256); }

SonarPose port_pose(Vec3 at = {0, 0, 0}) {
  SonarPose p;
  p.position = at;
  p.side = Side::port;
  return p;
}

// Triangle given in the camera frame of `pose`, mapped to world coordinates.
TriangleMesh camera_triangles(const SonarPose& pose, const std::vector<std::array<Vec3, 3>>& tris, double albedo = 1.0) {
  const Mat3 to_world = pose.world_to_camera().transposed();
  std::vector<Vec3> v;
  std::vector<Face> f;
  for (const auto& t : tris) {
    const auto base = static_cast<std::uint32_t>(v.size());
    for (const auto& p : t) v.push_back(pose.position + to_world * p);
    f.push_back({base, base + 1, base + 2});
  }
  return make_triangle_mesh(v, f, albedo);
}

// Large triangle in the plane z_cam = depth, facing the sensor.
std::array<Vec3, 3> facing_plane(double depth) {
  return {Vec3{-100, -100, depth}, Vec3{0, 200, depth}, Vec3{100, -100, depth}};
}

FragmentBuffer synthetic_buffer(std::size_t pixels, std::size_t k) {
  FragmentBuffer fb;
  fb.image = ImageLayout{pixels, 1};
  fb.k = k;
  fb.slots.assign(pixels * k, FragmentSlot{});
  return fb;
}

}  // namespace

TEST(Rasterize, FacingPlaneGivesOneSlotAtSlantRange) {
  const auto intr = default_intr();
  const auto pose = port_pose({3, -2, -4});
  const auto mesh = camera_triangles(pose, {facing_plane(10.0)});
  RenderParams params;
  const auto fb = rasterize(mesh, pose, intr, params);
  const Vec3 axis = pose.boresight_world();
  for (std::size_t px = 0; px < fb.image.pixels(); ++px) {
    const auto& s0 = fb.at(px, 0);
    ASSERT_EQ(s0.face, 0);
    EXPECT_EQ(fb.at(px, 1).face, kEmptySlot);
    EXPECT_GT(s0.d_xy, 0.0);
    const Vec3 dir = oracle::pixel_ray_world(pose, intr, fb.image, static_cast<double>(px / fb.image.width),
                                             static_cast<double>(px % fb.image.width));
    EXPECT_NEAR(s0.z_depth, 10.0 / dot(dir, axis), 1e-9);
  }
}

TEST(Rasterize, EmptyMeshGivesEmptySlots) {
  const auto fb = rasterize(TriangleMesh{}, port_pose(), default_intr(), RenderParams{});
  EXPECT_EQ(fb.image.height, 214u);
  for (const auto& s : fb.slots) EXPECT_EQ(s.face, kEmptySlot);
}

TEST(Rasterize, ParallelPlanesAreRangeOrdered) {
  const auto pose = port_pose();
  const auto mesh = camera_triangles(pose, {facing_plane(12.0), facing_plane(10.0)});
  const auto fb = rasterize(mesh, pose, default_intr(), RenderParams{});
  for (std::size_t px = 0; px < fb.image.pixels(); ++px) {
    ASSERT_EQ(fb.at(px, 0).face, 1);
    ASSERT_EQ(fb.at(px, 1).face, 0);
    EXPECT_LT(fb.at(px, 0).z_depth, fb.at(px, 1).z_depth);
  }
}

TEST(Rasterize, PropertySortedPackedAndInRange) {
  oracle::Rng rng(21);
  const auto intr = default_intr();
  for (int trial = 0; trial < 6; ++trial) {
    const auto hf = oracle::random_heightfield(rng, 12, 1.0, 18.0, 1.5, {0.0, 15.0});
    const auto mesh = heightfield_to_mesh(hf);
    RenderParams params;
    params.faces_per_pixel = 1 + rng.index(6);
    const auto fb = rasterize(mesh, port_pose({rng.uniform(-2, 2), 0, -8}), intr, params);
    const double guard = intr.max_slant_range + params.kernel_cutoff * std::sqrt(params.effective_gamma(intr));
    std::size_t filled = 0;
    for (std::size_t px = 0; px < fb.image.pixels(); ++px) {
      bool empty_seen = false;
      for (std::size_t k = 0; k < fb.k; ++k) {
        const auto& s = fb.at(px, k);
        if (s.face == kEmptySlot) {
          empty_seen = true;
          continue;
        }
        ++filled;
        EXPECT_FALSE(empty_seen);
        EXPECT_GT(s.z_depth, 0.0);
        EXPECT_LE(s.z_depth, guard);
        if (k > 0) {
          EXPECT_LE(fb.at(px, k - 1).z_depth, s.z_depth);
        }
      }
    }
    EXPECT_GT(filled, 0u);
  }
}

TEST(Shade, HeadOnTiltedAndBackFacing) {
  const auto intr = default_intr();
  const auto pose = port_pose();
  RenderParams params;
  params.beam_pattern = false;

  // Facing plane: c equals the cosine between each ray and the plane normal.
  {
    const auto mesh = camera_triangles(pose, {facing_plane(10.0)});
    const auto fb = rasterize(mesh, pose, intr, params);
    const auto c = shade_lambertian(fb, mesh, pose, intr, {}, params);
    double best = 0.0;
    for (std::size_t px = 0; px < fb.image.pixels(); ++px) {
      const Vec3 dir = oracle::pixel_ray_world(pose, intr, fb.image, static_cast<double>(px / fb.image.width),
                                               static_cast<double>(px % fb.image.width));
      EXPECT_NEAR(c[px * fb.k], dot(dir, pose.boresight_world()), 1e-12);
      best = std::max(best, c[px * fb.k]);
    }
    EXPECT_NEAR(best, 1.0, 1e-4);
  }
  // Plane tilted so the normal is 60 degrees off the boresight, albedo 0.8.
  {
    const double s = std::sin(deg2rad(60.0)), co = std::cos(deg2rad(60.0));
    // Orthonormal in-plane axes for normal (0, -s, -co) in camera coordinates.
    const Vec3 e1{1, 0, 0}, e2{0, co, -s}, o{0, 0, 10};
    auto at = [&](double a, double b) { return o + a * e1 + b * e2; };
    const auto mesh = camera_triangles(pose, {{at(-60, -10), at(0, 10), at(60, -10)}}, 0.8);
    ASSERT_LT(dot(normalized(pose.world_to_camera() * mesh.face_normal(0)), Vec3{0, 0, 1}), 0.0);
    const auto fb = rasterize(mesh, pose, intr, params);
    const auto c = shade_lambertian(fb, mesh, pose, intr, {}, params);
    const std::size_t centre = (fb.image.height / 2) * fb.image.width + fb.image.width / 2;
    ASSERT_EQ(fb.at(centre, 0).face, 0);
    EXPECT_NEAR(c[centre * fb.k], 0.4, 0.01);
  }
  // Back-facing plane is clamped to zero.
  {
    const auto p = facing_plane(10.0);
    const auto mesh = camera_triangles(pose, {{p[0], p[2], p[1]}});
    const auto fb = rasterize(mesh, pose, intr, params);
    const auto c = shade_lambertian(fb, mesh, pose, intr, {}, params);
    for (double v : c) EXPECT_EQ(v, 0.0);
  }
}

TEST(Shade, BeamPatternScalesColumnsOnly) {
  const auto intr = default_intr();
  const auto pose = port_pose();
  const auto mesh = camera_triangles(pose, {facing_plane(10.0)});
  RenderParams on, off;
  off.beam_pattern = false;
  const BeamPattern bp;
  const auto fb = rasterize(mesh, pose, intr, on);
  const auto c_on = shade_lambertian(fb, mesh, pose, intr, bp, on);
  const auto c_off = shade_lambertian(fb, mesh, pose, intr, bp, off);
  for (std::size_t j = 0; j < fb.image.width; ++j) {
    const double ratio = c_on[j * fb.k] / c_off[j * fb.k];
    for (std::size_t i = 1; i < fb.image.height; ++i) {
      const std::size_t px = i * fb.image.width + j;
      EXPECT_NEAR(c_on[px * fb.k] / c_off[px * fb.k], ratio, 1e-12);
    }
    const double tu = (-1.0 + (2.0 * static_cast<double>(j) + 1.0) / static_cast<double>(fb.image.width)) / intr.fx;
    EXPECT_NEAR(ratio, beam_pattern(bp.phi0 + std::atan(tu), bp), 1e-12);
  }
}

TEST(GaussianKernel, Examples) {
  EXPECT_EQ(gaussian_kernel(7.0, 7.0, 0.3), 1.0);
  EXPECT_NEAR(gaussian_kernel(7.0 + std::sqrt(0.3), 7.0, 0.3), 0.3679, 1e-4);
  EXPECT_NEAR(gaussian_kernel(7.0 - 3 * std::sqrt(0.3), 7.0, 0.3), 1.2341e-4, 1e-8);
}

TEST(BlendPing, UniformPatchAtOneBinCentre) {
  const auto intr = default_intr();
  RenderParams params;
  const std::size_t i0 = 60, pixels = 37;
  auto fb = synthetic_buffer(pixels, 2);
  for (std::size_t px = 0; px < pixels; ++px) fb.at(px, 0) = FragmentSlot{0, bin_center(i0, intr), 1.0, {}, 0};
  const std::vector<double> c(fb.slots.size(), 1.0);
  const auto ping = blend_ping(fb, c, intr, params);
  ASSERT_EQ(ping.intensities.size(), intr.n_bins);
  EXPECT_NEAR(ping.intensities[i0], static_cast<double>(pixels), 1e-9);
  const double reach = 3.0 * std::sqrt(params.effective_gamma(intr));
  for (std::size_t i = 0; i < intr.n_bins; ++i) {
    if (std::abs(bin_center(i, intr) - bin_center(i0, intr)) > reach) {
      EXPECT_LT(ping.intensities[i], 1.3e-4 * static_cast<double>(pixels));
    }
  }
}

TEST(BlendPing, EmptyBufferIsZero) {
  const auto intr = default_intr();
  const auto fb = synthetic_buffer(8, 3);
  const auto ping = blend_ping(fb, std::vector<double>(fb.slots.size(), 1.0), intr, RenderParams{});
  for (double v : ping.intensities) EXPECT_EQ(v, 0.0);
}

TEST(BlendPing, LayoverSumsOrTakesMax) {
  const auto intr = default_intr();
  auto fb = synthetic_buffer(2, 1);
  const double r = 23.456;
  fb.at(0, 0) = FragmentSlot{0, r, 1.0, {}, 0};
  fb.at(1, 0) = FragmentSlot{1, r, 1.0, {}, 0};
  const std::vector<double> c{0.3, 0.7};
  RenderParams all, one;
  one.top_m = 1;
  const auto a = blend_ping(fb, c, intr, all).intensities;
  const auto m = blend_ping(fb, c, intr, one).intensities;
  const double g = all.effective_gamma(intr);
  for (std::size_t i = 0; i < intr.n_bins; ++i) {
    const double k = std::abs(r - bin_center(i, intr)) <= 6.0 * std::sqrt(g) ? gaussian_kernel(r, bin_center(i, intr), g) : 0.0;
    EXPECT_NEAR(a[i], 1.0 * k, 1e-12);
    EXPECT_NEAR(m[i], 0.7 * k, 1e-12);
  }
}

TEST(BlendPing, NarrowKernelKeepsEnergyPerContribution) {
  const auto intr = default_intr();
  auto fb = synthetic_buffer(5, 2);
  oracle::Rng rng(4);
  double expect = 0.0;
  std::vector<double> c(fb.slots.size(), 0.0);
  for (std::size_t px = 0; px < 5; ++px) {
    for (std::size_t k = 0; k < 2; ++k) {
      fb.at(px, k) = FragmentSlot{static_cast<std::int32_t>(px * 2 + k), bin_center(10 + 40 * px + 7 * k, intr), 50.0, {}, 0};
      c[px * 2 + k] = rng.uniform(0.1, 1.0);
    }
  }
  RenderParams params;
  params.gamma = 1e-6;
  const auto w = coverage_weights(fb, params.sigma, params.depth_tau);
  for (std::size_t s = 0; s < c.size(); ++s) expect += w[s] * c[s];
  const auto ping = blend_ping(fb, c, intr, params).intensities;
  EXPECT_NEAR(std::accumulate(ping.begin(), ping.end(), 0.0), expect, 1e-12);
}

TEST(CoverageWeights, NearerSurfaceClaimsThePixel) {
  auto fb = synthetic_buffer(1, 3);
  fb.at(0, 0) = FragmentSlot{0, 10.0, 1.0, {}, 0};
  fb.at(0, 1) = FragmentSlot{1, 15.0, 1.0, {}, 0};
  fb.at(0, 2) = FragmentSlot{2, 15.2, -1.0, {}, 0};
  const auto w = coverage_weights(fb, 1e-4, 0.1);
  EXPECT_NEAR(w[0], 1.0, 1e-12);
  EXPECT_LT(w[1], 1e-20);
  EXPECT_EQ(w[2], 0.0);
  // Equal ranges share the coverage symmetrically.
  fb.at(0, 1).z_depth = 10.0;
  const auto v = coverage_weights(fb, 1e-4, 0.1);
  EXPECT_NEAR(v[0], 0.5, 1e-12);
  EXPECT_NEAR(v[1], 0.5, 1e-12);
}

TEST(RenderPing, FlatSeafloorNadirAndMonotoneFalloff) {
  const auto intr = default_intr();
  // One large face kept entirely in front of the sensor.
  const auto mesh = make_triangle_mesh({{-300, 0, -20}, {300, 0, -20}, {0, 400, -20}}, {{0, 1, 2}});
  RenderParams params;
  params.image_width = 32;  // dense rows so the range sampling is smooth
  const auto ping = render_ping(mesh, port_pose({0, 0, -10}), intr, BeamPattern{}, params).intensities;
  const double peak = *std::max_element(ping.begin(), ping.end());
  ASSERT_GT(peak, 0.0);
  std::size_t argmax = 0;
  for (std::size_t i = 0; i < ping.size(); ++i) {
    if (ping[i] == peak) argmax = i;
    if (bin_center(i, intr) < 10.0) {
      EXPECT_LT(ping[i], 0.01 * peak);
    }
  }
  for (std::size_t i = argmax + 1; i < ping.size(); ++i) EXPECT_LE(ping[i], ping[i - 1] * (1.0 + 1e-9)) << i;
}

TEST(RenderPing, PropertyFiniteNonNegativeAndTopMBounded) {
  oracle::Rng rng(8);
  const auto intr = default_intr();
  for (int trial = 0; trial < 4; ++trial) {
    const auto mesh = heightfield_to_mesh(oracle::random_heightfield(rng, 16, 1.0, 18.0, 2.0, {0, 15}));
    const auto pose = port_pose({rng.uniform(-3, 3), 0, -8});
    RenderParams all, top, every;
    top.top_m = 1 + rng.index(5);
    const auto fbh = ImageLayout::for_intrinsics(intr, all.image_width);
    every.top_m = all.faces_per_pixel * fbh.pixels();
    const auto a = render_ping(mesh, pose, intr, {}, all).intensities;
    const auto t = render_ping(mesh, pose, intr, {}, top).intensities;
    const auto e = render_ping(mesh, pose, intr, {}, every).intensities;
    ASSERT_EQ(a.size(), intr.n_bins);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_TRUE(std::isfinite(a[i]));
      EXPECT_GE(a[i], 0.0);
      EXPECT_LE(t[i], a[i] * (1.0 + 1e-12));
      EXPECT_NEAR(e[i], a[i], 1e-12 * std::max(1.0, a[i]));
    }
  }
}

TEST(RenderPing, EquivariantUnderJointTranslation) {
  oracle::Rng rng(12);
  const auto intr = default_intr();
  const auto mesh = heightfield_to_mesh(oracle::random_heightfield(rng, 14, 1.0, 18.0, 1.5, {0, 14}));
  auto moved = mesh;
  const Vec3 shift{3.7, -2.1, 1.3};
  for (auto& v : moved.vertices) v += shift;
  auto pose = port_pose({0.2, 0, -8});
  pose.heading = 0.1;
  auto pose2 = pose;
  pose2.position += shift;
  const auto a = render_ping(mesh, pose, intr, {}, RenderParams{}).intensities;
  const auto b = render_ping(moved, pose2, intr, {}, RenderParams{}).intensities;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(RenderWaterfall, ShapeDeterminismAndThreads) {
  const auto intr = default_intr();
  const auto mesh = heightfield_to_mesh(make_dome_scene(5.0, 20.0, GridSpec::centered(20.0, 1.0, {0, 12})));
  SurveySpec s;
  s.legs = {{{-3, 0}, {3, 0}}};
  s.ping_spacing = 1.0;
  const auto poses = make_survey_lines(s);
  const auto a = render_waterfall(mesh, poses, intr, {}, RenderParams{}, 1);
  EXPECT_EQ(a.rows, 7u);
  EXPECT_EQ(a.cols(), 512u);
  EXPECT_EQ(a, render_waterfall(mesh, poses, intr, {}, RenderParams{}, 1));
  EXPECT_EQ(a, render_waterfall(mesh, poses, intr, {}, RenderParams{}, 3));
  // Port pings run right to left from the centre column.
  const auto port = render_ping(mesh, poses[0], intr, {}, RenderParams{});
  for (std::size_t i = 0; i < intr.n_bins; ++i) EXPECT_EQ(a.at(0, 255 - i), port.intensities[i]);
  EXPECT_THROW(render_waterfall(mesh, {}, intr, {}, RenderParams{}), ConfigError);
}

TEST(RenderWaterfall, FlatSeafloorRowsIdentical) {
  const auto intr = default_intr();
  const double cell = 2.0;
  const auto mesh = heightfield_to_mesh(make_flat_scene(GridSpec::centered(120.0, cell), 20.0));
  SurveySpec s;
  s.legs = {{{-6, 0}, {6, 0}}};
  s.ping_spacing = cell;
  const auto wf = render_waterfall(mesh, make_survey_lines(s), intr, {}, RenderParams{});
  ASSERT_GT(wf.max(), 0.0);
  for (std::size_t r = 1; r < wf.rows; ++r) {
    for (std::size_t c = 0; c < wf.cols(); ++c) EXPECT_NEAR(wf.at(r, c), wf.at(0, c), 1e-9);
  }
}

TEST(RenderParams, ValidationRejectsBadValues) {
  RenderParams p;
  p.sigma = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.faces_per_pixel = 0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.gamma = -1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.image_width = 0;
  EXPECT_THROW(p.validate(), ConfigError);
}
