#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "sssdr/autodiff.hpp"
#include "sssdr/error.hpp"
#include "sssdr/io.hpp"
#include "sssdr/loss.hpp"
#include "sssdr/renderer.hpp"
#include "sssdr/scene.hpp"

namespace sssdr {

struct OptimConfig {
  std::size_t epochs = 100;
  double lr = 1e-2;  // metres per Adam step, roughly
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_heads = 0;  // heads per update; 0 = one full-batch update per epoch
  bool freeze_boundary = true;
  std::size_t threads = 1;
  std::string dump_path;  // state written here before a NaN abort, if set

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
  }
};

struct LossRecord {
  double image = 0.0;
  double regularizer = 0.0;  // unweighted normal consistency
  double total = 0.0;
  bool operator==(const LossRecord&) const = default;
};

/// Optimiser state; history holds one record per completed epoch plus the
/// initial evaluation.
struct OptimState {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  Heightfield heightfield;
  std::vector<double> m;
  std::vector<double> v;
  std::vector<LossRecord> history;

  static OptimState start(Heightfield init) {
    OptimState s;
    s.m.assign(init.size(), 0.0);
    s.v.assign(init.size(), 0.0);
    s.heightfield = std::move(init);
    return s;
  }
  bool operator==(const OptimState&) const = default;
};

/// Everything the optimiser treats as fixed data.
struct ReconstructProblem {
  Waterfall reference;
  std::vector<SonarPose> poses;
  SonarIntrinsics intr;
  BeamPattern bp;
  RenderParams params;
  LossSpec spec;
  double albedo = 1.0;
};

/// Applies one Adam update to the unfrozen entries of z.
inline void adam_step(OptimState& s, std::span<const double> grad, const std::vector<char>& frozen,
                      const OptimConfig& cfg) {
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  auto z = s.heightfield.values();
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (frozen[k]) continue;
    s.m[k] = cfg.beta1 * s.m[k] + (1.0 - cfg.beta1) * grad[k];
    s.v[k] = cfg.beta2 * s.v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
    z[k] -= cfg.lr * (s.m[k] / c1) / (std::sqrt(s.v[k] / c2) + cfg.adam_eps);
  }
}

// ------------------------------------------------------------ state files

inline constexpr std::array<char, 4> kStateMagic{'S', 'S', 'O', 'S'};

/// Full-precision optimiser state, enough to resume bit-exactly.
inline void save_state(const OptimState& s, const std::string& path) {
  auto out = detail::open_out(path, std::ios::binary);
  out.write(kStateMagic.data(), 4);
  const auto& g = s.heightfield.grid();
  detail::put<std::uint64_t>(out, s.epoch);
  detail::put<std::uint64_t>(out, s.step);
  detail::put<std::uint64_t>(out, g.nx);
  detail::put<std::uint64_t>(out, g.ny);
  detail::put<double>(out, g.cell_size);
  detail::put<double>(out, g.origin.x);
  detail::put<double>(out, g.origin.y);
  for (double z : s.heightfield.values()) detail::put<double>(out, z);
  for (double x : s.m) detail::put<double>(out, x);
  for (double x : s.v) detail::put<double>(out, x);
  detail::put<std::uint64_t>(out, s.history.size());
  for (const auto& h : s.history) {
    detail::put<double>(out, h.image);
    detail::put<double>(out, h.regularizer);
    detail::put<double>(out, h.total);
  }
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline OptimState load_state(const std::string& path) {
  auto in = detail::open_in(path, std::ios::binary);
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kStateMagic) throw ParseError(path + ": not an optimiser state file");
  OptimState s;
  s.epoch = detail::get<std::uint64_t>(in, path);
  s.step = detail::get<std::uint64_t>(in, path);
  GridSpec g;
  g.nx = detail::get<std::uint64_t>(in, path);
  g.ny = detail::get<std::uint64_t>(in, path);
  g.cell_size = detail::get<double>(in, path);
  g.origin.x = detail::get<double>(in, path);
  g.origin.y = detail::get<double>(in, path);
  if (g.nx < 2 || g.ny < 2 || g.nx > (1u << 16) || g.ny > (1u << 16)) throw ParseError(path + ": bad grid");
  const std::size_t n = g.nx * g.ny;
  std::vector<double> z(n);
  for (auto& x : z) x = detail::get<double>(in, path);
  s.heightfield = Heightfield(g, std::move(z));
  s.m.resize(n);
  s.v.resize(n);
  for (auto& x : s.m) x = detail::get<double>(in, path);
  for (auto& x : s.v) x = detail::get<double>(in, path);
  const auto h = detail::get<std::uint64_t>(in, path);
  if (h != s.epoch + 1 && !(h == 0 && s.epoch == 0)) throw ParseError(path + ": loss history length does not match epoch count");
  s.history.resize(h);
  for (auto& r : s.history) {
    r.image = detail::get<double>(in, path);
    r.regularizer = detail::get<double>(in, path);
    r.total = detail::get<double>(in, path);
  }
  return s;
}

// ------------------------------------------------------------- optimiser

namespace detail {

inline double full_pixel_count(const Waterfall& reference) { return static_cast<double>(reference.data.size()); }

// Squared scaled reference values of waterfall halves no pose renders; they
// enter the mean as residuals against zero.
inline double uncovered_residual(const ReconstructProblem& prob, std::span<const std::size_t> rows) {
  std::vector<char> seen(prob.reference.rows * 2, 0);
  for (std::size_t p = 0; p < prob.poses.size(); ++p) seen[2 * rows[p] + (prob.poses[p].side == Side::port ? 0 : 1)] = 1;
  double acc = 0.0;
  for (std::size_t r = 0; r < prob.reference.rows; ++r) {
    for (Side side : {Side::port, Side::starboard}) {
      if (seen[2 * r + (side == Side::port ? 0 : 1)]) continue;
      for (double v : prob.reference.side_row(r, side)) acc += (prob.spec.image_scale * v) * (prob.spec.image_scale * v);
    }
  }
  return acc;
}

// Loss at the current heightfield, optionally with its z-gradient. Both
// paths sum per-head residuals in pose order, so the value is identical.
inline LossRecord evaluate(const ReconstructProblem& prob, const TriangleMesh& mesh,
                           std::span<const std::pair<std::uint32_t, std::uint32_t>> edges,
                           std::span<const std::size_t> rows, double uncovered, std::vector<double>* grad,
                           std::size_t threads) {
  const double n = full_pixel_count(prob.reference);
  const double scale = prob.spec.image_scale;
  double sq = 0.0;
  if (grad) {
    std::vector<std::size_t> all(prob.poses.size());
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
    grad->assign(mesh.vertices.size(), 0.0);
    sq = image_loss_gradient(mesh, prob.poses, all, rows, prob.reference, prob.intr, prob.bp, prob.params, scale, n,
                             *grad, threads);
    if (prob.spec.lambda_nc > 0.0) {
      const auto g = normal_consistency_gradient(mesh, edges);
      for (std::size_t k = 0; k < g.size(); ++k) (*grad)[k] += prob.spec.lambda_nc * g[k].z;
    }
  } else {
    std::vector<double> per(prob.poses.size(), 0.0);
    parallel_for(prob.poses.size(), threads, [&](std::size_t p) {
      const Ping ping = render_ping(mesh, prob.poses[p], prob.intr, prob.bp, prob.params);
      const auto ref = prob.reference.side_row(rows[p], prob.poses[p].side);
      double acc = 0.0;
      for (std::size_t i = 0; i < ref.size(); ++i) {
        const double d = scale * (ping.intensities[i] - ref[i]);
        acc += d * d;
      }
      per[p] = acc;
    });
    for (double v : per) sq += v;
  }
  LossRecord r;
  r.image = (sq + uncovered) / n;
  r.regularizer = normal_consistency(mesh, edges);
  r.total = r.image + prob.spec.lambda_nc * r.regularizer;
  return r;
}

}  // namespace detail

using EpochCallback = std::function<void(const OptimState&)>;

/// Optimises the heightfield in `state` until `cfg.epochs` epochs have been
/// completed. A fresh state (empty history) is evaluated first; a resumed
/// state continues from its epoch counter. The callback runs after each
/// epoch. A non-finite loss or gradient aborts with NumericalError after
/// dumping the last finite state to cfg.dump_path.
inline OptimState reconstruct(const ReconstructProblem& prob, OptimState state, const OptimConfig& cfg,
                              const EpochCallback& on_epoch = {}) {
  cfg.validate();
  prob.params.validate();
  prob.spec.validate();
  if (prob.poses.empty()) throw ConfigError("reconstruction needs at least one pose");
  const auto rows = pose_rows(prob.poses);
  const std::size_t n_rows = group_pings(prob.poses).size();
  if (prob.reference.rows != n_rows || prob.reference.bins != prob.intr.n_bins)
    throw ConfigError("reference waterfall shape does not match the poses and intrinsics");
  if (state.m.size() != state.heightfield.size() || state.v.size() != state.heightfield.size())
    throw ConfigError("optimiser state does not match the heightfield");
  if (!state.history.empty() && state.history.size() != state.epoch + 1)
    throw ConfigError("loss history length does not match epoch count");

  TriangleMesh mesh = heightfield_to_mesh(state.heightfield, prob.albedo);
  const auto edges = interior_edges(mesh);
  std::vector<char> frozen(state.heightfield.size(), 0);
  if (cfg.freeze_boundary)
    for (std::size_t k = 0; k < frozen.size(); ++k) frozen[k] = state.heightfield.on_boundary(k) ? 1 : 0;

  OptimState last_good = state;
  auto check = [&](const LossRecord& r, std::span<const double> grad) {
    bool ok = std::isfinite(r.total);
    for (double g : grad) ok = ok && std::isfinite(g);
    if (ok) return;
    if (!cfg.dump_path.empty()) save_state(last_good, cfg.dump_path);
    throw NumericalError("non-finite loss or gradient at epoch " + std::to_string(state.epoch));
  };

  const double uncovered = detail::uncovered_residual(prob, rows);
  const bool full_batch = cfg.batch_heads == 0 || cfg.batch_heads >= prob.poses.size();
  std::vector<double> grad;
  bool have_grad = false;
  if (state.history.empty()) {
    const auto r = detail::evaluate(prob, mesh, edges, rows, uncovered, full_batch ? &grad : nullptr, cfg.threads);
    check(r, grad);
    state.history.push_back(r);
    last_good = state;
    have_grad = full_batch;
  }

  const double n_pixels = detail::full_pixel_count(prob.reference);
  while (state.epoch < cfg.epochs) {
    if (full_batch) {
      if (!have_grad) {
        const auto r = detail::evaluate(prob, mesh, edges, rows, uncovered, &grad, cfg.threads);
        check(r, grad);
      }
      adam_step(state, grad, frozen, cfg);
      update_mesh_z(mesh, state.heightfield);
    } else {
      for (std::size_t b = 0; b < prob.poses.size(); b += cfg.batch_heads) {
        const std::size_t e = std::min(prob.poses.size(), b + cfg.batch_heads);
        std::vector<std::size_t> batch(e - b);
        for (std::size_t k = 0; k < batch.size(); ++k) batch[k] = b + k;
        grad.assign(mesh.vertices.size(), 0.0);
        // Batch mean uses the batch's share of the pixels.
        const double share = n_pixels * static_cast<double>(batch.size()) / static_cast<double>(prob.poses.size());
        LossRecord r;
        r.image = image_loss_gradient(mesh, prob.poses, batch, rows, prob.reference, prob.intr, prob.bp, prob.params,
                                      prob.spec.image_scale, share, grad, cfg.threads);
        if (prob.spec.lambda_nc > 0.0) {
          const auto g = normal_consistency_gradient(mesh, edges);
          for (std::size_t k = 0; k < g.size(); ++k) grad[k] += prob.spec.lambda_nc * g[k].z;
        }
        r.total = r.image;
        check(r, grad);
        adam_step(state, grad, frozen, cfg);
        update_mesh_z(mesh, state.heightfield);
      }
    }
    ++state.epoch;
    const bool more = full_batch && state.epoch < cfg.epochs;
    const auto r = detail::evaluate(prob, mesh, edges, rows, uncovered, more ? &grad : nullptr, cfg.threads);
    check(r, grad);
    have_grad = more;
    state.history.push_back(r);
    last_good = state;
    if (on_epoch) on_epoch(state);
  }
  return state;
}

// ------------------------------------------------------------- evaluation

struct BathymetryMetrics {
  double mae = 0.0;
  double rms = 0.0;
  double max_abs = 0.0;
  double truth_apex_depth = 0.0;  // shallowest truth depth
  double apex_depth = 0.0;        // shallowest estimate depth near the truth apex
  double apex_error = 0.0;        // |apex_depth - truth_apex_depth|
};

/// Depth-error statistics. The apex probe searches the estimate within
/// `apex_radius` metres of the truth's shallowest node.
inline BathymetryMetrics eval_bathymetry(const Heightfield& estimate, const Heightfield& truth,
                                         double apex_radius = 5.0) {
  if (!(estimate.grid() == truth.grid())) throw ConfigError("estimate and truth grids differ");
  BathymetryMetrics m;
  const auto e = estimate.values(), t = truth.values();
  std::size_t apex = 0;
  double sq = 0.0;
  for (std::size_t k = 0; k < e.size(); ++k) {
    const double d = std::abs(e[k] - t[k]);
    m.mae += d;
    sq += d * d;
    m.max_abs = std::max(m.max_abs, d);
    if (t[k] > t[apex]) apex = k;
  }
  const double n = static_cast<double>(e.size());
  m.mae /= n;
  m.rms = std::sqrt(sq / n);
  m.truth_apex_depth = -t[apex];
  const Vec2 c = truth.node_xy(apex % truth.nx(), apex / truth.nx());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < estimate.ny(); ++j) {
    for (std::size_t i = 0; i < estimate.nx(); ++i) {
      if (norm(estimate.node_xy(i, j) - c) <= apex_radius) best = std::max(best, estimate.z(i, j));
    }
  }
  m.apex_depth = -best;
  m.apex_error = std::abs(m.apex_depth - m.truth_apex_depth);
  return m;
}

}  // namespace sssdr
