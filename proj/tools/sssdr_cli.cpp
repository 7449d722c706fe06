#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "sssdr/image_io.hpp"
#include "sssdr/sssdr.hpp"

namespace fs = std::filesystem;
using namespace sssdr;

namespace {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kNumerical = 3, kTolerance = 4 };

// The preset decides the defaults of every other option, so it is read
// before the real parse, from the command line or the config file.
std::string find_preset(int argc, char** argv) {
  std::string preset = "dome", config;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--preset" && i + 1 < argc) preset = argv[++i];
    else if (a.rfind("--preset=", 0) == 0) preset = a.substr(9);
    else if (a == "--config" && i + 1 < argc) config = argv[++i];
    else if (a.rfind("--config=", 0) == 0) config = a.substr(9);
  }
  bool on_cli = false;
  for (int i = 1; i < argc; ++i) on_cli = on_cli || std::string(argv[i]).rfind("--preset", 0) == 0;
  if (!on_cli && !config.empty()) {
    std::ifstream in(config);
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\"'"), e = s.find_last_not_of(" \t\r\"'");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      if (trim(line.substr(0, eq)) == "preset") preset = trim(line.substr(eq + 1));
    }
  }
  return preset;
}

void bind_options(CLI::App& app, RunConfig& c, std::string& corrupt) {
  app.option_defaults()->always_capture_default();
  const auto presets = preset_names();
  app.add_option("--preset", c.preset, "Experiment preset")->check(CLI::IsMember(presets))->group("General");
  app.add_option("--seed", c.seed, "Random seed")->group("General");
  app.add_option("--threads", c.threads, "Worker threads (0 = all cores)")->group("General");
  app.add_option("--out", c.out, "Output directory")->group("General");

  const char* g = "Scene";
  app.add_option("--scene", c.scene, "dome, rocky or flat")->group(g);
  app.add_option("--grid-extent", c.grid_extent, "Grid side length (m)")->group(g);
  app.add_option("--cell-size", c.cell_size, "Grid resolution (m)")->group(g);
  app.add_option("--grid-center-x", c.grid_center_x)->group(g);
  app.add_option("--grid-center-y", c.grid_center_y)->group(g);
  app.add_option("--seafloor-depth", c.seafloor_depth, "Seafloor or base depth (m, positive down)")->group(g);
  app.add_option("--dome-radius", c.dome_radius)->group(g);
  app.add_option("--rock-roughness", c.rock_roughness)->group(g);
  app.add_option("--rock-count", c.rock_count)->group(g);
  app.add_option("--albedo", c.albedo)->group(g);

  g = "Survey";
  app.add_option("--sensor-z", c.sensor_z, "Sensor height (m, negative below surface)")->group(g);
  app.add_option("--survey-half-side", c.survey_half_side)->group(g);
  app.add_option("--ping-spacing", c.ping_spacing)->group(g);
  app.add_option("--survey-lines", c.survey_lines, "Number of box legs (1-4)")->group(g);
  app.add_option("--tilt-deg", c.tilt_deg)->group(g);

  g = "Sonar";
  app.add_option("--hfov-deg", c.hfov_deg, "Horizontal beam width")->group(g);
  app.add_option("--vfov-deg", c.vfov_deg, "Vertical beam width")->group(g);
  app.add_option("--max-range", c.max_range)->group(g);
  app.add_option("--bins", c.bins)->group(g);
  app.add_option("--k-phi", c.k_phi)->group(g);
  app.add_option("--phi0-deg", c.phi0_deg)->group(g);
  app.add_option("--beam-pattern", c.beam_pattern)->group(g);

  g = "Renderer";
  app.add_option("--faces-per-pixel", c.faces_per_pixel)->group(g);
  app.add_option("--top-m", c.top_m, "Returns kept per bin (0 = all)")->group(g);
  app.add_option("--sigma", c.sigma, "xy blending temperature (NDC)")->group(g);
  app.add_option("--gamma", c.gamma, "Range kernel scale (m^2, 0 = (2 dr)^2)")->group(g);
  app.add_option("--image-width", c.image_width)->group(g);
  app.add_option("--spreading-loss", c.spreading_loss)->group(g);
  app.add_option("--depth-tau", c.depth_tau)->group(g);
  app.add_option("--blur-sigmas", c.blur_sigmas)->group(g);
  app.add_option("--kernel-cutoff", c.kernel_cutoff)->group(g);

  g = "Optimisation";
  app.add_option("--lambda-nc", c.lambda_nc)->group(g);
  app.add_option("--epochs", c.epochs)->group(g);
  app.add_option("--lr", c.lr)->group(g);
  app.add_option("--beta1", c.beta1)->group(g);
  app.add_option("--beta2", c.beta2)->group(g);
  app.add_option("--batch-heads", c.batch_heads, "Heads per update (0 = full batch)")->group(g);
  app.add_option("--freeze-boundary", c.freeze_boundary)->group(g);
  app.add_option("--checkpoint-every", c.checkpoint_every, "Epochs between checkpoints (0 = none)")->group(g);
  app.add_option("--init", c.init, "flat or sparse")->group(g);
  app.add_option("--init-depth", c.init_depth)->group(g);
  app.add_option("--init-smooth", c.init_smooth)->group(g);
  app.add_option("--sparse-stride", c.sparse_stride)->group(g);

  g = "Gradient check";
  app.add_option("--gc-pings", c.gc_pings)->group(g);
  app.add_option("--gc-eps", c.gc_eps)->group(g);
  app.add_option("--gc-tol", c.gc_tol)->group(g);
  app.add_option("--gc-noise", c.gc_noise)->group(g);
  app.add_option("--corrupt-adjoint", corrupt)->group("")->configurable(false);

  g = "Files";
  app.add_option("--scene-file", c.scene_file, "Heightfield (.hf)")->group(g);
  app.add_option("--poses-file", c.poses_file, "Pose CSV")->group(g);
  app.add_option("--reference-file", c.reference_file, "Reference waterfall (.wf)")->group(g);
  app.add_option("--truth-file", c.truth_file, "Truth heightfield for metrics")->group(g);
  app.add_option("--estimate-file", c.estimate_file, "Heightfield to evaluate")->group(g);
  app.add_option("--resume-file", c.resume_file, "Optimiser state to resume from")->group(g);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory '" + dir.string() + "'");
}

void require_file(const std::string& path, const char* what) {
  if (!path.empty() && !fs::exists(path)) throw ConfigError(std::string(what) + " '" + path + "' does not exist");
}

Heightfield load_scene(const RunConfig& c) {
  return c.scene_file.empty() ? make_truth_scene(c) : read_heightfield(c.scene_file);
}

std::vector<SonarPose> load_poses(const RunConfig& c) {
  return c.poses_file.empty() ? make_survey(c) : read_poses_csv(c.poses_file, deg2rad(c.tilt_deg));
}

// Consecutive ping groups with a common heading form one survey line.
std::vector<std::vector<SonarPose>> split_lines(const std::vector<SonarPose>& poses) {
  std::vector<std::vector<SonarPose>> lines;
  double heading = 0.0;
  for (const auto& [b, e] : group_pings(poses)) {
    if (lines.empty() || std::abs(poses[b].heading - heading) > 1e-9) {
      lines.emplace_back();
      heading = poses[b].heading;
    }
    lines.back().insert(lines.back().end(), poses.begin() + static_cast<std::ptrdiff_t>(b),
                        poses.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return lines;
}

void write_metrics(const BathymetryMetrics& m, const fs::path& path) {
  std::ofstream out(path);
  out.precision(10);
  out << "mae " << m.mae << "\nrms " << m.rms << "\nmax_abs " << m.max_abs << "\ntruth_apex_depth "
      << m.truth_apex_depth << "\napex_depth " << m.apex_depth << "\napex_error " << m.apex_error << '\n';
}

void print_metrics(const BathymetryMetrics& m) {
  std::printf("MAE %.4f m  RMS %.4f m  max %.4f m  apex %.3f m (truth %.3f m, error %.3f m)\n", m.mae, m.rms,
              m.max_abs, m.apex_depth, m.truth_apex_depth, m.apex_error);
}

int cmd_make_scene(const RunConfig& c, const fs::path& out) {
  const Heightfield hf = make_truth_scene(c);
  const auto poses = make_survey(c);
  write_heightfield(hf, (out / "scene.hf").string());
  write_heightfield_csv(hf, (out / "scene.csv").string());
  write_obj(heightfield_to_mesh(hf, c.albedo), (out / "scene.obj").string());
  write_poses_csv(poses, (out / "poses.csv").string());
  double shallowest = -hf.values()[0];
  for (double z : hf.values()) shallowest = std::min(shallowest, -z);
  std::printf("scene %s: %zu x %zu nodes, shallowest depth %.3f m, %zu poses\n", c.scene.c_str(), hf.nx(), hf.ny(),
              shallowest, poses.size());
  return kOk;
}

int cmd_render(const RunConfig& c, const fs::path& out) {
  const Heightfield hf = load_scene(c);
  const auto poses = load_poses(c);
  const TriangleMesh mesh = heightfield_to_mesh(hf, c.albedo);
  const auto intr = make_intrinsics(c);
  const auto bp = make_beam_pattern(c);
  const auto params = make_render_params(c);
  const Waterfall all = render_waterfall(mesh, poses, intr, bp, params, c.threads);
  write_waterfall(all, (out / "waterfall.wf").string(), intr.bin_width());
  const double norm = write_waterfall_png(all, (out / "waterfall.png").string());
  const auto lines = split_lines(poses);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const Waterfall wf = render_waterfall(mesh, lines[k], intr, bp, params, c.threads);
    const std::string stem = "line" + std::to_string(k + 1);
    write_waterfall(wf, (out / (stem + ".wf")).string(), intr.bin_width());
    write_waterfall_png(wf, (out / (stem + ".png")).string(), norm);
  }
  std::printf("rendered %zu pings x %zu columns over %zu lines, max intensity %.6g\n", all.rows, all.cols(),
              lines.size(), all.max());
  return kOk;
}

int cmd_gradcheck(const RunConfig& c, const fs::path& out, const std::string& corrupt) {
  const GradcheckProblem prob = make_gradcheck_problem(c);
  AdjointFaults faults;
  if (corrupt == "range") faults.range = 2.0;
  else if (corrupt == "shade") faults.shade = 2.0;
  else if (corrupt == "distance") faults.distance = 2.0;
  else if (!corrupt.empty()) throw ConfigError("unknown adjoint rule '" + corrupt + "'");
  const auto t0 = std::chrono::steady_clock::now();
  const GradReport rep = gradcheck(prob, c.gc_eps, {}, c.threads, faults);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.write_csv((out / "gradcheck.csv").string());
  for (const auto& e : rep.entries) {
    if (!std::isfinite(e.analytic) || !std::isfinite(e.numeric)) throw NumericalError("non-finite gradient");
  }
  const bool ok = rep.passed(c.gc_tol);
  std::printf("gradcheck: %zu parameters, %zu flagged as branch flips, max rel. error %.3e at %zu (tol %.1e) in %.1fs: %s\n",
              rep.entries.size(), rep.flipped, rep.max_rel_err, rep.max_error_index, c.gc_tol, secs,
              ok ? "PASS" : "FAIL");
  return ok ? kOk : kTolerance;
}

int cmd_reconstruct(const RunConfig& c, const fs::path& out) {
  require_file(c.truth_file, "truth file");
  const bool have_truth = c.reference_file.empty() || !c.truth_file.empty() || !c.scene_file.empty();
  Heightfield truth;
  if (!c.truth_file.empty()) truth = read_heightfield(c.truth_file);
  else if (have_truth) truth = load_scene(c);
  const auto poses = load_poses(c);
  const auto intr = make_intrinsics(c);
  const auto bp = make_beam_pattern(c);
  const auto params = make_render_params(c);

  Waterfall reference = c.reference_file.empty()
                            ? render_waterfall(heightfield_to_mesh(truth, c.albedo), poses, intr, bp, params, c.threads)
                            : read_waterfall(c.reference_file);
  const ReconstructProblem prob = make_reconstruct_problem(c, reference, poses);

  OptimState state;
  if (!c.resume_file.empty()) {
    state = load_state(c.resume_file);
  } else if (c.init == "sparse") {
    if (!have_truth) throw ConfigError("sparse initialisation needs a truth or scene file");
    state = OptimState::start(make_initial_surface(c, truth, poses));
  } else {
    const GridSpec grid = have_truth ? truth.grid() : make_grid(c);
    state = OptimState::start(make_flat_scene(grid, c.init_depth));
  }

  const fs::path ckpt = out / "checkpoints";
  ensure_dir(ckpt);
  OptimConfig oc = make_optim_config(c);
  oc.dump_path = (out / "nan_abort.state").string();

  auto write_history = [&](const OptimState& s) {
    std::ofstream csv(out / "loss.csv");
    csv.precision(17);
    csv << "epoch,image,regularizer,total\n";
    for (std::size_t e = 0; e < s.history.size(); ++e)
      csv << e << ',' << s.history[e].image << ',' << s.history[e].regularizer << ',' << s.history[e].total << '\n';
  };
  const auto t0 = std::chrono::steady_clock::now();
  auto on_epoch = [&](const OptimState& s) {
    write_history(s);
    if (c.checkpoint_every > 0 && s.epoch % c.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu", s.epoch);
      write_heightfield(s.heightfield, (ckpt / (std::string(name) + ".hf")).string());
      save_state(s, (ckpt / (std::string(name) + ".state")).string());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("epoch %4zu  image %.6e  nc %.6e  total %.6e  (%.1fs)\n", s.epoch, s.history.back().image,
                s.history.back().regularizer, s.history.back().total, secs);
    std::fflush(stdout);
  };

  state = reconstruct(prob, std::move(state), oc, on_epoch);
  write_history(state);
  save_state(state, (out / "final.state").string());
  write_heightfield(state.heightfield, (out / "final.hf").string());
  write_heightfield_csv(state.heightfield, (out / "final.csv").string());
  write_obj(heightfield_to_mesh(state.heightfield, c.albedo), (out / "final.obj").string());

  const Waterfall rendered =
      render_waterfall(heightfield_to_mesh(state.heightfield, c.albedo), poses, intr, bp, params, c.threads);
  write_waterfall(reference, (out / "reference.wf").string(), intr.bin_width());
  write_waterfall(rendered, (out / "rendered.wf").string(), intr.bin_width());
  const double norm = write_waterfall_png(reference, (out / "reference.png").string());
  write_waterfall_png(rendered, (out / "rendered.png").string(), norm);

  const auto& h = state.history;
  std::printf("image loss %.6e -> %.6e (%.2f%% of initial)\n", h.front().image, h.back().image,
              h.front().image > 0.0 ? 100.0 * h.back().image / h.front().image : 0.0);
  if (have_truth) {
    const auto m = eval_bathymetry(state.heightfield, truth);
    write_metrics(m, out / "metrics.txt");
    print_metrics(m);
  }
  return kOk;
}

int cmd_eval(const RunConfig& c, const fs::path& out) {
  if (c.estimate_file.empty()) throw ConfigError("eval needs --estimate-file");
  require_file(c.estimate_file, "estimate file");
  require_file(c.truth_file, "truth file");
  const Heightfield est = read_heightfield(c.estimate_file);
  const Heightfield truth = c.truth_file.empty() ? make_truth_scene(c) : read_heightfield(c.truth_file);
  const auto m = eval_bathymetry(est, truth);
  write_metrics(m, out / "metrics.txt");
  print_metrics(m);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable sidescan sonar rendering and bathymetry reconstruction"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Key-value config file");

  RunConfig c;
  std::string corrupt;
  try {
    c = preset_config(find_preset(argc, argv));
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  }
  bind_options(app, c, corrupt);

  std::string command;
  for (const char* name : {"make-scene", "render", "gradcheck", "reconstruct", "eval"}) {
    app.add_subcommand(name)->callback([&command, name] { command = name; });
  }
  app.get_subcommand("make-scene")->description("Write the truth heightfield, mesh and survey poses");
  app.get_subcommand("render")->description("Render waterfalls for a scene and survey");
  app.get_subcommand("gradcheck")->description("Compare analytic and finite-difference gradients");
  app.get_subcommand("reconstruct")->description("Recover a heightfield from reference waterfalls");
  app.get_subcommand("eval")->description("Depth-error metrics of an estimate against the truth");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    c.validate();
    require_file(c.scene_file, "scene file");
    require_file(c.poses_file, "poses file");
    require_file(c.reference_file, "reference file");
    require_file(c.resume_file, "resume file");
    const fs::path out = c.out;
    ensure_dir(out);
    {
      std::ofstream snap(out / "config.ini");
      snap << "# " << command << '\n' << app.config_to_str(true, false);
    }
    if (command == "make-scene") return cmd_make_scene(c, out);
    if (command == "render") return cmd_render(c, out);
    if (command == "gradcheck") return cmd_gradcheck(c, out, corrupt);
    if (command == "reconstruct") return cmd_reconstruct(c, out);
    return cmd_eval(c, out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
}
