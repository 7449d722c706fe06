#pragma once

// Reverse-mode differentiation of render-and-compare with respect to vertex
// heights.
//
// The forward pass records, per filled fragment slot, the local partials of
// the three differentiable quantities a slot carries (slant range, shaded
// intensity, signed xy-distance) with respect to the z of its face's three
// vertices. The backward pass pulls the per-bin loss adjoint through the range
// kernel, the coverage/visibility weights and the recorded partials.
// Discrete choices (which faces occupy the K slots, top-M membership, kernel
// windows, the Lambertian clamp) are held at their forward values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sssdr/error.hpp"
#include "sssdr/loss.hpp"
#include "sssdr/parallel.hpp"
#include "sssdr/renderer.hpp"

namespace sssdr {

struct SlotJacobian {
  std::array<std::uint32_t, 3> vertex{};
  std::array<double, 3> range{};     // d z_depth / d vertex z
  std::array<double, 3> shade{};     // d c / d vertex z
  std::array<double, 3> distance{};  // d d_xy / d vertex z
};

/// Scales individual adjoint rules. Only the gradient-check self tests use
/// anything other than the identity.
struct AdjointFaults {
  double range = 1.0;
  double shade = 1.0;
  double distance = 1.0;
};

/// Forward record of one rendered head/ping.
struct RenderTape {
  SonarIntrinsics intr;
  RenderParams params;
  FragmentBuffer frags;
  std::vector<double> shade;     // c per slot
  std::vector<double> coverage;  // sigmoid(d/sigma) per slot
  std::vector<double> weight;    // visibility weight per slot
  std::vector<SlotJacobian> jacobian;
  BinSelection selection;  // top-M only
  Ping ping;
};

struct VertexGrad {
  std::uint32_t vertex;
  double value;
};

namespace detail {

inline SlotJacobian slot_jacobian(const TriangleMesh& mesh, const std::vector<Vec3>& pc, Vec3 z_up_cam,
                                  const FragmentSlot& s, double shade, Vec2 q, Vec3 dir, const SonarIntrinsics& intr,
                                  const RenderParams& params) {
  SlotJacobian jac;
  const auto face = static_cast<std::size_t>(s.face);
  const auto& tri = mesh.faces[face];
  const std::array<Vec3, 3> v{pc[tri[0]], pc[tri[1]], pc[tri[2]]};
  for (int a = 0; a < 3; ++a) jac.vertex[a] = tri[a];

  const Vec3 e1 = v[1] - v[0], e2 = v[2] - v[0];
  const Vec3 n = cross(e1, e2);
  const double nlen = norm(n);
  const double n_dir = dot(n, dir);

  // Moving vertex a by dz shifts the plane under the hit by bary_a * dz.
  const double plane_rate = dot(n, z_up_cam) / n_dir;
  for (int a = 0; a < 3; ++a) jac.range[a] = s.bary[a] * plane_rate;

  // c = albedo * gain * cos(psi) [/ r^2]; cos(psi) = -n.dir / |n|.
  const Vec3 un = (1.0 / nlen) * n;
  const double cos_psi = -dot(un, dir);
  if (cos_psi > 0.0 && shade != 0.0) {
    const double per_cos = shade / cos_psi;  // albedo * gain [/ r^2]
    const Vec3 g = (-1.0 / nlen) * (dir - dot(un, dir) * un);
    const Vec3 gb = cross(e2, g), gc = cross(g, e1);
    const std::array<Vec3, 3> gv{-(gb + gc), gb, gc};
    for (int a = 0; a < 3; ++a) {
      jac.shade[a] = per_cos * dot(gv[a], z_up_cam);
      if (params.spreading_loss) jac.shade[a] -= 2.0 * shade / s.z_depth * jac.range[a];
    }
  }

  // Signed distance: envelope derivative along the nearest boundary feature.
  std::array<Vec2, 3> proj;
  for (int a = 0; a < 3; ++a) proj[a] = {intr.fy * v[a].x / v[a].z, intr.fy * v[a].y / v[a].z};
  const auto dist = signed_distance(q, proj);
  const double sign = dist.d >= 0.0 ? 1.0 : -1.0;
  std::array<Vec2, 3> dd_dproj{};
  dd_dproj[dist.edge] = (-sign * (1.0 - dist.lambda)) * dist.unit;
  dd_dproj[(dist.edge + 1) % 3] = (-sign * dist.lambda) * dist.unit;
  for (int a = 0; a < 3; ++a) {
    const double z = v[a].z;
    const Vec2 dproj{intr.fy * (z_up_cam.x * z - v[a].x * z_up_cam.z) / (z * z),
                     intr.fy * (z_up_cam.y * z - v[a].y * z_up_cam.z) / (z * z)};
    jac.distance[a] = dot(dd_dproj[a], dproj);
  }
  return jac;
}

}  // namespace detail

/// Renders one head and records everything the backward pass needs. The
/// recorded ping is bit-identical to render_ping.
inline RenderTape record_ping(const TriangleMesh& mesh, const SonarPose& pose, const SonarIntrinsics& intr,
                              const BeamPattern& bp, const RenderParams& params) {
  RenderTape tape;
  tape.intr = intr;
  tape.params = params;
  tape.frags = rasterize(mesh, pose, intr, params);
  tape.shade = shade_lambertian(tape.frags, mesh, pose, intr, bp, params);
  tape.weight = coverage_weights(tape.frags, params.sigma, params.depth_tau, &tape.coverage);
  tape.ping.intensities = detail::blend(tape.frags, tape.shade, tape.weight, intr, params,
                                        params.top_m > 0 ? &tape.selection : nullptr);
  tape.ping.ping_id = pose.ping_id;
  tape.ping.side = pose.side;

  tape.jacobian.resize(tape.frags.slots.size());
  if (mesh.empty()) return tape;
  const auto pc = detail::to_camera(mesh, pose);
  const Mat3 r = pose.world_to_camera();
  const Vec3 z_up_cam = r * Vec3{0.0, 0.0, 1.0};
  const std::size_t W = tape.frags.image.width;
  for (std::size_t px = 0; px < tape.frags.image.pixels(); ++px) {
    const Vec2 q = pixel_ndc(px / W, px % W, tape.frags.image, intr);
    const Vec3 dir = ndc_ray(q, intr);
    for (std::size_t k = 0; k < tape.frags.k; ++k) {
      const std::size_t idx = px * tape.frags.k + k;
      const auto& s = tape.frags.slots[idx];
      if (s.face == kEmptySlot) break;
      tape.jacobian[idx] = detail::slot_jacobian(mesh, pc, z_up_cam, s, tape.shade[idx], q, dir, intr, params);
    }
  }
  return tape;
}

/// Pulls dL/dI (one value per range bin) back to vertex z. Gradients are
/// appended in pixel-major, slot-depth order.
inline void backward(const RenderTape& tape, std::span<const double> bin_adjoint, std::vector<VertexGrad>& out,
                     const AdjointFaults& faults = {}) {
  const auto& fb = tape.frags;
  const auto& intr = tape.intr;
  if (bin_adjoint.size() != intr.n_bins) throw ConfigError("bin adjoint length does not match ping");
  const double gamma = tape.params.effective_gamma(intr);
  const double half = tape.params.kernel_cutoff * std::sqrt(gamma);
  const std::size_t K = fb.k;

  // Per-slot adjoints of (w * c) and of range.
  std::vector<double> a_wc(fb.slots.size(), 0.0), a_range(fb.slots.size(), 0.0);
  auto visit = [&](std::size_t idx, std::size_t bin) {
    const double r = fb.slots[idx].z_depth;
    const double rs = bin_center(bin, intr);
    const double kg = gaussian_kernel(r, rs, gamma);
    const double g = bin_adjoint[bin];
    a_wc[idx] += g * kg;
    a_range[idx] += g * kg * tape.weight[idx] * tape.shade[idx] * (-2.0 * (r - rs) / gamma);
  };
  if (tape.params.top_m == 0) {
    for (std::size_t idx = 0; idx < fb.slots.size(); ++idx) {
      if (fb.slots[idx].face == kEmptySlot || tape.weight[idx] * tape.shade[idx] == 0.0) continue;
      const auto [b0, b1] = kernel_window(fb.slots[idx].z_depth, half, intr);
      for (std::size_t i = b0; i < b1; ++i) visit(idx, i);
    }
  } else {
    for (std::size_t i = 0; i < tape.selection.size(); ++i)
      for (auto idx : tape.selection[i]) visit(idx, i);
  }

  const double sigma = tape.params.sigma;
  const double tau = tape.params.depth_tau;
  std::vector<double> a_w(K), a_s(K), u(K), a_u_range(K), suffix(K + 1);
  for (std::size_t px = 0; px < fb.image.pixels(); ++px) {
    const std::size_t base = px * K;
    std::size_t filled = 0;
    while (filled < K && fb.slots[base + filled].face != kEmptySlot) ++filled;
    if (filled == 0) continue;

    // w_k = alpha * u_k / S with u_k = s_k exp(-(r_k - r_0)/tau), S = sum u,
    // alpha = 1 - prod(1 - s).
    const double r0 = fb.slots[base].z_depth;
    double total = 0.0;
    for (std::size_t k = 0; k < filled; ++k) {
      u[k] = tape.coverage[base + k] * std::exp(-(fb.slots[base + k].z_depth - r0) / tau);
      total += u[k];
      a_w[k] = a_wc[base + k] * tape.shade[base + k];
    }
    std::fill(a_s.begin(), a_s.begin() + static_cast<std::ptrdiff_t>(filled), 0.0);
    std::fill(a_u_range.begin(), a_u_range.begin() + static_cast<std::ptrdiff_t>(filled), 0.0);
    if (total > 0.0) {
      double mean = 0.0;  // dL/dalpha
      for (std::size_t k = 0; k < filled; ++k) mean += a_w[k] * u[k] / total;
      double alpha = 1.0;
      for (std::size_t k = 0; k < filled; ++k) alpha *= 1.0 - tape.coverage[base + k];
      alpha = 1.0 - alpha;
      // prod_{l != j} (1 - s_l) from prefix and suffix products.
      suffix[filled] = 1.0;
      for (std::size_t k = filled; k-- > 0;) suffix[k] = suffix[k + 1] * (1.0 - tape.coverage[base + k]);
      double prefix = 1.0;
      for (std::size_t j = 0; j < filled; ++j) {
        const double a_u = alpha / total * (a_w[j] - mean);
        const double e = std::exp(-(fb.slots[base + j].z_depth - r0) / tau);
        a_s[j] = a_u * e + mean * prefix * suffix[j + 1];
        a_u_range[j] = -a_u * u[j] / tau;
        prefix *= 1.0 - tape.coverage[base + j];
      }
    }

    for (std::size_t k = 0; k < filled; ++k) {
      const std::size_t idx = base + k;
      const double s = tape.coverage[idx];
      const double a_dist = a_s[k] * s * (1.0 - s) / sigma;
      const double a_shade = a_wc[idx] * tape.weight[idx];
      const double a_r = a_range[idx] + a_u_range[k];
      if (a_dist == 0.0 && a_shade == 0.0 && a_r == 0.0) continue;
      const auto& jac = tape.jacobian[idx];
      for (int v = 0; v < 3; ++v) {
        const double g = faults.range * a_r * jac.range[v] + faults.shade * a_shade * jac.shade[v] +
                         faults.distance * a_dist * jac.distance[v];
        if (g != 0.0) out.push_back({jac.vertex[v], g});
      }
    }
  }
}

inline void accumulate(std::span<const VertexGrad> sparse, std::span<double> dense, double scale = 1.0) {
  for (const auto& g : sparse) dense[g.vertex] += scale * g.value;
}

/// dL/dI for one head under the (scaled) mean-squared image loss.
inline std::vector<double> ping_adjoint(const Ping& ping, std::span<const double> reference, double scale,
                                        double pixel_count) {
  std::vector<double> adj(ping.intensities.size());
  const double k = 2.0 * scale * scale / pixel_count;
  for (std::size_t i = 0; i < adj.size(); ++i) adj[i] = k * (ping.intensities[i] - reference[i]);
  return adj;
}

/// Streaming image-loss gradient over a subset of heads: each head is
/// rendered, differentiated and discarded; per-head gradients are reduced in
/// pose order. Returns the (un-normalised) sum of squared scaled residuals of
/// the rendered heads and adds  d(sum / pixel_count)/dz  into `grad`.
inline double image_loss_gradient(const TriangleMesh& mesh, const std::vector<SonarPose>& poses,
                                  std::span<const std::size_t> pose_indices, std::span<const std::size_t> pose_rows,
                                  const Waterfall& reference, const SonarIntrinsics& intr, const BeamPattern& bp,
                                  const RenderParams& params, double scale, double pixel_count,
                                  std::span<double> grad, std::size_t threads = 1, const AdjointFaults& faults = {}) {
  std::vector<std::vector<VertexGrad>> parts(pose_indices.size());
  std::vector<double> sq(pose_indices.size(), 0.0);
  parallel_for(pose_indices.size(), threads, [&](std::size_t t) {
    const auto& pose = poses[pose_indices[t]];
    const RenderTape tape = record_ping(mesh, pose, intr, bp, params);
    const auto ref = reference.side_row(pose_rows[pose_indices[t]], pose.side);
    double acc = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const double d = scale * (tape.ping.intensities[i] - ref[i]);
      acc += d * d;
    }
    sq[t] = acc;
    backward(tape, ping_adjoint(tape.ping, ref, scale, pixel_count), parts[t], faults);
  });
  double total = 0.0;
  for (std::size_t t = 0; t < parts.size(); ++t) {
    total += sq[t];
    accumulate(parts[t], grad);
  }
  return total;
}

/// Waterfall row index of every pose (rows ordered by first ping-id appearance).
inline std::vector<std::size_t> pose_rows(const std::vector<SonarPose>& poses) {
  std::vector<std::size_t> rows(poses.size());
  const auto groups = group_pings(poses);
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (std::size_t p = groups[g].first; p < groups[g].second; ++p) rows[p] = g;
  return rows;
}

/// Forward record of the full loss: every head's render tape plus the loss
/// configuration. backward() may be called once per record().
class LossTape {
 public:
  void record(const TriangleMesh& mesh, const std::vector<SonarPose>& poses, const SonarIntrinsics& intr,
              const BeamPattern& bp, const RenderParams& params, const Waterfall& reference, const LossSpec& spec,
              std::size_t threads = 1) {
    spec.validate();
    mesh_ = &mesh;
    spec_ = spec;
    reference_ = &reference;
    rows_ = pose_rows(poses);
    tapes_.assign(poses.size(), {});
    parallel_for(poses.size(), threads, [&](std::size_t p) { tapes_[p] = record_ping(mesh, poses[p], intr, bp, params); });
    rendered_ = Waterfall(group_pings(poses).size(), intr.n_bins);
    if (rendered_.rows != reference.rows || rendered_.bins != reference.bins)
      throw ConfigError("reference waterfall does not match the pose list");
    for (std::size_t p = 0; p < poses.size(); ++p) rendered_.place(rows_[p], tapes_[p].ping);
    edges_ = interior_edges(mesh);
    loss_ = total_loss(rendered_, reference, mesh, spec);
    pending_ = true;
  }

  double loss() const { return loss_; }
  const Waterfall& rendered() const { return rendered_; }

  /// Gradient of loss_seed * L with respect to every vertex z.
  std::vector<double> backward(double loss_seed = 1.0, const AdjointFaults& faults = {}) {
    if (!pending_) throw std::logic_error("backward called without a recorded forward pass");
    pending_ = false;
    std::vector<double> grad(mesh_->vertices.size(), 0.0);
    const auto pixels = static_cast<double>(rendered_.data.size());
    std::vector<VertexGrad> part;
    for (std::size_t p = 0; p < tapes_.size(); ++p) {
      const auto ref = reference_->side_row(rows_[p], tapes_[p].ping.side);
      part.clear();
      sssdr::backward(tapes_[p], ping_adjoint(tapes_[p].ping, ref, spec_.image_scale, pixels), part, faults);
      accumulate(part, grad, loss_seed);
    }
    if (spec_.lambda_nc > 0.0) {
      const auto nc = normal_consistency_gradient(*mesh_, edges_);
      for (std::size_t v = 0; v < grad.size(); ++v) grad[v] += loss_seed * spec_.lambda_nc * nc[v].z;
    }
    return grad;
  }

  /// Discrete state of the forward pass; differs between two evaluations
  /// exactly when some frozen selection changed.
  std::vector<std::int64_t> selection_signature() const {
    std::vector<std::int64_t> sig;
    std::vector<std::int64_t> pixel;
    for (const auto& t : tapes_) {
      const std::size_t K = t.frags.k;
      for (std::size_t px = 0; px < t.frags.image.pixels(); ++px) {
        // Slot weights are symmetric in slot order, so only the set matters.
        pixel.clear();
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t idx = px * K + k;
          const auto& s = t.frags.slots[idx];
          if (s.face == kEmptySlot) break;
          pixel.push_back((static_cast<std::int64_t>(s.face) << 8) | (static_cast<std::int64_t>(s.feature) << 2) |
                          (t.shade[idx] > 0.0 ? 2 : 0) | (s.d_xy >= 0.0 ? 1 : 0));
        }
        std::sort(pixel.begin(), pixel.end());
        sig.push_back(-1);
        sig.insert(sig.end(), pixel.begin(), pixel.end());
      }
      for (const auto& bin : t.selection) {
        sig.push_back(-2);
        pixel.clear();
        for (auto idx : bin)
          pixel.push_back((static_cast<std::int64_t>(idx / K) << 32) | t.frags.slots[idx].face);
        std::sort(pixel.begin(), pixel.end());
        sig.insert(sig.end(), pixel.begin(), pixel.end());
      }
    }
    return sig;
  }

 private:
  const TriangleMesh* mesh_ = nullptr;
  const Waterfall* reference_ = nullptr;
  LossSpec spec_;
  std::vector<std::size_t> rows_;
  std::vector<RenderTape> tapes_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges_;
  Waterfall rendered_;
  double loss_ = 0.0;
  bool pending_ = false;
};

struct GradEntry {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double abs_err = 0.0;
  double rel_err = 0.0;
  bool branch_flip = false;
};

struct GradReport {
  std::vector<GradEntry> entries;
  std::size_t max_error_index = 0;  // parameter index with the largest rel. error among non-flipped
  double max_rel_err = 0.0;
  std::size_t flipped = 0;

  bool passed(double tol) const { return max_rel_err < tol; }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write gradient report '" + path + "'");
    out.precision(17);
    out << "param_index,analytic,numeric,abs_err,rel_err,branch_flip\n";
    for (const auto& e : entries)
      out << e.index << ',' << e.analytic << ',' << e.numeric << ',' << e.abs_err << ',' << e.rel_err << ','
          << (e.branch_flip ? 1 : 0) << '\n';
  }
};

/// |a - n| / max(|a|, |n|, floor), with 0/0 reported as 0. `floor` is the
/// round-off level of the difference quotient; gradients below it are noise.
inline double relative_error(double analytic, double numeric, double floor = 0.0) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return denom == 0.0 ? 0.0 : std::abs(analytic - numeric) / denom;
}

struct GradcheckProblem {
  Heightfield heightfield;
  double albedo = 1.0;
  std::vector<SonarPose> poses;
  SonarIntrinsics intr;
  BeamPattern bp;
  RenderParams params;
  Waterfall reference;
  LossSpec spec;
};

/// Central differences against the analytic gradient of the total loss for
/// the selected heightfield nodes (all nodes when `subset` is empty).
/// Parameters whose +-eps perturbation changes any frozen selection are
/// flagged and excluded from the error summary.
inline GradReport gradcheck(const GradcheckProblem& prob, double eps, std::span<const std::size_t> subset = {},
                            std::size_t threads = 1, const AdjointFaults& faults = {}) {
  if (!(eps > 0.0)) throw ConfigError("finite-difference step must be positive");
  std::vector<std::size_t> params(subset.begin(), subset.end());
  if (params.empty()) {
    params.resize(prob.heightfield.size());
    for (std::size_t k = 0; k < params.size(); ++k) params[k] = k;
  }

  TriangleMesh mesh = heightfield_to_mesh(prob.heightfield, prob.albedo);
  LossTape tape;
  tape.record(mesh, prob.poses, prob.intr, prob.bp, prob.params, prob.reference, prob.spec, threads);
  const auto base_sig = tape.selection_signature();
  const auto analytic = tape.backward(1.0, faults);
  const double floor = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(tape.loss())) / eps;

  GradReport report;
  for (std::size_t p : params) {
    if (p >= prob.heightfield.size()) throw ConfigError("gradcheck parameter index out of range");
    const double z0 = mesh.vertices[p].z;
    auto eval = [&](double z, bool& flip) {
      mesh.vertices[p].z = z;
      LossTape t;
      t.record(mesh, prob.poses, prob.intr, prob.bp, prob.params, prob.reference, prob.spec, threads);
      flip = flip || t.selection_signature() != base_sig;
      return t.loss();
    };
    bool flip = false;
    const double fp = eval(z0 + eps, flip);
    const double fm = eval(z0 - eps, flip);
    mesh.vertices[p].z = z0;

    GradEntry e;
    e.index = p;
    e.analytic = analytic[p];
    e.numeric = (fp - fm) / (2.0 * eps);
    e.abs_err = std::abs(e.analytic - e.numeric);
    e.rel_err = relative_error(e.analytic, e.numeric, floor);
    e.branch_flip = flip;
    if (flip) {
      ++report.flipped;
    } else if (e.rel_err > report.max_rel_err) {
      report.max_rel_err = e.rel_err;
      report.max_error_index = p;
    }
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace sssdr
