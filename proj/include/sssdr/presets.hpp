#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sssdr/autodiff.hpp"
#include "sssdr/error.hpp"
#include "sssdr/reconstruct.hpp"
#include "sssdr/renderer.hpp"
#include "sssdr/scene.hpp"
#include "sssdr/sonar_model.hpp"

namespace sssdr {

/// Flat description of one experiment run. Every field has a config-file key
/// of the same name with underscores replaced by dashes.
struct RunConfig {
  std::string preset = "dome";
  std::uint64_t seed = 1;
  std::size_t threads = 0;
  std::string out = "run";

  // Scene.
  std::string scene = "dome";  // dome | rocky | flat
  double grid_extent = 40.0;
  double cell_size = 0.5;
  double grid_center_x = 0.0;
  double grid_center_y = 0.0;
  double seafloor_depth = 20.0;
  double dome_radius = 5.0;
  double rock_roughness = 1.0;
  std::size_t rock_count = 40;
  double albedo = 1.0;

  // Survey: a clockwise box of up to four legs around the grid centre.
  double sensor_z = -10.0;
  double survey_half_side = 15.0;
  double ping_spacing = 0.5;
  std::size_t survey_lines = 4;
  double tilt_deg = 30.0;

  // Sonar.
  double hfov_deg = 1.0;
  double vfov_deg = 50.0;
  double max_range = 50.0;
  std::size_t bins = 256;
  double k_phi = 159.46;
  double phi0_deg = 0.5;
  bool beam_pattern = true;

  // Renderer.
  std::size_t faces_per_pixel = 8;
  std::size_t top_m = 0;
  double sigma = 1e-4;
  double gamma = 0.0;
  std::size_t image_width = 4;
  bool spreading_loss = false;
  double depth_tau = 0.1;
  double blur_sigmas = 30.0;
  double kernel_cutoff = 6.0;

  // Loss and optimiser.
  double lambda_nc = 1e-2;
  std::size_t epochs = 100;
  double lr = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t batch_heads = 0;
  bool freeze_boundary = true;
  std::size_t checkpoint_every = 10;

  // Initial surface for reconstruction.
  std::string init = "flat";  // flat | sparse
  double init_depth = 20.0;
  double init_smooth = 2.0;       // metres
  std::size_t sparse_stride = 10;  // one altimeter sample every this many pings

  // Gradient check.
  std::size_t gc_pings = 4;
  double gc_eps = 1e-4;
  double gc_tol = 1e-4;
  double gc_noise = 0.3;  // peak-to-peak reference relief, metres

  // Input files (optional; generated from the settings above when empty).
  std::string scene_file;
  std::string poses_file;
  std::string reference_file;
  std::string truth_file;
  std::string estimate_file;
  std::string resume_file;

  void validate() const;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"dome", "rocky", "flat", "gradcheck"};
  return names;
}

/// Defaults for a named preset. Unknown names are a config error.
inline RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "dome") return c;
  if (name == "flat") {
    c.scene = "flat";
    return c;
  }
  if (name == "rocky") {
    c.scene = "rocky";
    c.seafloor_depth = 17.0;
    c.sensor_z = -5.0;
    c.lr = 0.1;
    c.init = "sparse";
    c.init_depth = 17.0;
    return c;
  }
  if (name == "gradcheck") {
    c.scene = "flat";
    c.grid_extent = 4.5;  // 10 x 10 nodes
    c.grid_center_y = 12.0;
    c.seafloor_depth = 10.0;
    c.sensor_z = 0.0;
    c.sigma = 1e-3;
    c.blur_sigmas = 10.0;
    c.seed = 7;
    c.epochs = 0;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

inline void RunConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(scene == "dome" || scene == "rocky" || scene == "flat", "scene must be dome, rocky or flat");
  require(init == "flat" || init == "sparse", "init must be flat or sparse");
  require(grid_extent > 0.0 && cell_size > 0.0, "grid extent and cell size must be positive");
  require(seafloor_depth > 0.0, "seafloor depth must be positive");
  require(hfov_deg > 0.0 && hfov_deg < vfov_deg && vfov_deg < 180.0,
          "field of view must satisfy 0 < horizontal < vertical < 180 degrees");
  require(max_range > 0.0, "max range must be positive");
  require(bins >= 2, "bin count must be at least 2");
  require(k_phi > 0.0, "k-phi must be positive");
  require(tilt_deg > 0.0 && tilt_deg < 90.0, "tilt must lie in (0, 90) degrees");
  require(ping_spacing > 0.0 && survey_half_side > 0.0, "survey spacing and size must be positive");
  require(survey_lines >= 1 && survey_lines <= 4, "survey lines must be between 1 and 4");
  require(sensor_z > -seafloor_depth || scene_file.size() > 0, "sensor must be above the seafloor");
  require(faces_per_pixel >= 1 && image_width >= 1, "faces per pixel and image width must be at least 1");
  require(sigma > 0.0 && gamma >= 0.0 && depth_tau > 0.0, "sigma and depth-tau must be positive, gamma non-negative");
  require(blur_sigmas > 0.0 && kernel_cutoff > 0.0, "cutoffs must be positive");
  require(lambda_nc >= 0.0, "lambda-nc must be non-negative");
  require(lr > 0.0 && beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "invalid optimiser settings");
  require(albedo >= 0.0 && albedo <= 1.0, "albedo must lie in [0, 1]");
  require(gc_pings >= 1 && gc_eps > 0.0 && gc_tol >= 0.0, "invalid gradient-check settings");
  require(init_smooth >= 0.0 && sparse_stride >= 1, "invalid sparse-init settings");
  if (scene == "dome") require(seafloor_depth > dome_radius && dome_radius > 0.0, "dome must fit above the seafloor");
}

// ----------------------------------------------------------- builders

inline SonarIntrinsics make_intrinsics(const RunConfig& c) {
  return intrinsics_from_fov(deg2rad(c.hfov_deg), deg2rad(c.vfov_deg), c.max_range, c.bins);
}

inline BeamPattern make_beam_pattern(const RunConfig& c) { return {c.k_phi, deg2rad(c.phi0_deg)}; }

inline RenderParams make_render_params(const RunConfig& c) {
  RenderParams p;
  p.faces_per_pixel = c.faces_per_pixel;
  p.top_m = c.top_m;
  p.sigma = c.sigma;
  p.gamma = c.gamma;
  p.image_width = c.image_width;
  p.beam_pattern = c.beam_pattern;
  p.spreading_loss = c.spreading_loss;
  p.depth_tau = c.depth_tau;
  p.blur_sigmas = c.blur_sigmas;
  p.kernel_cutoff = c.kernel_cutoff;
  p.validate();
  return p;
}

inline GridSpec make_grid(const RunConfig& c) {
  return GridSpec::centered(c.grid_extent, c.cell_size, {c.grid_center_x, c.grid_center_y});
}

inline Heightfield make_truth_scene(const RunConfig& c) {
  const GridSpec grid = make_grid(c);
  if (c.scene == "dome") return make_dome_scene(c.dome_radius, c.seafloor_depth, grid);
  if (c.scene == "flat") return make_flat_scene(grid, c.seafloor_depth);
  RockyParams p;
  p.cell_size = c.cell_size;
  p.base_depth = c.seafloor_depth;
  p.roughness = c.rock_roughness;
  p.rock_count = c.rock_count;
  Heightfield hf = make_rocky_scene(c.seed, c.grid_extent, p);
  // Rocky grids are generated about the origin; shift to the configured centre.
  GridSpec g = hf.grid();
  g.origin = grid.origin;
  return Heightfield(g, std::vector<double>(hf.values().begin(), hf.values().end()));
}

inline std::vector<SonarPose> make_survey(const RunConfig& c) {
  SurveySpec s = box_survey({c.grid_center_x, c.grid_center_y}, c.survey_half_side, c.sensor_z, c.ping_spacing,
                            deg2rad(c.tilt_deg));
  s.legs.resize(c.survey_lines);
  return make_survey_lines(s);
}

/// Altimeter-style samples: the truth depth under every `stride`-th ping.
inline SparseDepthSet sample_track_depths(const Heightfield& truth, const std::vector<SonarPose>& poses,
                                          std::size_t stride) {
  SparseDepthSet out;
  const auto groups = group_pings(poses);
  for (std::size_t g = 0; g < groups.size(); g += stride) {
    const Vec3 p = poses[groups[g].first].position;
    out.push_back({p.x, p.y, -truth.sample({p.x, p.y})});
  }
  return out;
}

inline Heightfield make_initial_surface(const RunConfig& c, const Heightfield& truth,
                                        const std::vector<SonarPose>& poses) {
  if (c.init == "flat") return make_flat_scene(truth.grid(), c.init_depth);
  return init_from_sparse_depth(sample_track_depths(truth, poses, c.sparse_stride), truth.grid(), c.init_smooth);
}

/// Small check problem: a flat patch seen by `gc_pings` port heads, compared
/// against a reference rendered from a randomly perturbed copy.
inline GradcheckProblem make_gradcheck_problem(const RunConfig& c) {
  GradcheckProblem p;
  p.heightfield = make_flat_scene(make_grid(c), c.seafloor_depth);
  p.albedo = c.albedo;
  p.intr = make_intrinsics(c);
  p.bp = make_beam_pattern(c);
  p.params = make_render_params(c);
  const double step = 0.6;
  for (std::size_t k = 0; k < c.gc_pings; ++k) {
    SonarPose s;
    s.ping_id = static_cast<std::uint32_t>(k);
    s.position = {c.grid_center_x + (static_cast<double>(k) - 0.5 * static_cast<double>(c.gc_pings - 1)) * step, 0.0,
                  c.sensor_z};
    s.heading = 0.05 * static_cast<double>(k);
    s.side = Side::port;
    s.tilt = deg2rad(c.tilt_deg);
    p.poses.push_back(s);
  }
  Heightfield relief = p.heightfield;
  std::mt19937_64 rng(c.seed);
  for (auto& z : relief.values()) z += c.gc_noise * (static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5);
  p.reference = render_waterfall(heightfield_to_mesh(relief, c.albedo), p.poses, p.intr, p.bp, p.params);
  p.spec.lambda_nc = c.lambda_nc;
  const double m = p.reference.max();
  p.spec.image_scale = m > 0.0 ? 1.0 / m : 1.0;
  return p;
}

inline OptimConfig make_optim_config(const RunConfig& c) {
  OptimConfig o;
  o.epochs = c.epochs;
  o.lr = c.lr;
  o.beta1 = c.beta1;
  o.beta2 = c.beta2;
  o.batch_heads = c.batch_heads;
  o.freeze_boundary = c.freeze_boundary;
  o.threads = c.threads;
  return o;
}

/// Reconstruction problem against a given reference; the image term is
/// normalised by the reference maximum.
inline ReconstructProblem make_reconstruct_problem(const RunConfig& c, Waterfall reference,
                                                   std::vector<SonarPose> poses) {
  ReconstructProblem p;
  p.intr = make_intrinsics(c);
  p.bp = make_beam_pattern(c);
  p.params = make_render_params(c);
  p.spec.lambda_nc = c.lambda_nc;
  const double m = reference.max();
  p.spec.image_scale = m > 0.0 ? 1.0 / m : 1.0;
  p.reference = std::move(reference);
  p.poses = std::move(poses);
  p.albedo = c.albedo;
  return p;
}

}  // namespace sssdr
