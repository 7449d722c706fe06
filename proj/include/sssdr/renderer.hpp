#pragma once

// Forward sidescan rendering: soft rasterisation into K range-sorted
// fragments per pixel, Lambertian shading from a point source at the sensor,
// sigmoid xy-coverage with front-to-back transmittance, and Gaussian range
// blending into slant-range bins.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "sssdr/error.hpp"
#include "sssdr/geometry.hpp"
#include "sssdr/parallel.hpp"
#include "sssdr/scene.hpp"
#include "sssdr/sonar_model.hpp"

namespace sssdr {

struct RenderParams {
  std::size_t faces_per_pixel = 8;  // K
  std::size_t top_m = 0;            // 0 means sum every return (no layover mitigation)
  double sigma = 1e-4;              // xy-blending temperature, NDC units
  double gamma = 0.0;               // range-kernel scale in m^2; 0 selects (2 * bin width)^2
  std::size_t image_width = 4;      // W
  bool beam_pattern = true;
  bool spreading_loss = false;  // multiply shading by 1/r^2
  double depth_tau = 0.1;       // range temperature (m) of the visibility softmax
  double blur_sigmas = 30.0;    // faces farther than this many sigma outside a pixel are not candidates
  double kernel_cutoff = 6.0;   // bins farther than this many sqrt(gamma) from a return get exactly 0

  void validate() const {
    if (faces_per_pixel < 1) throw ConfigError("faces per pixel must be at least 1");
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (gamma < 0.0 || !std::isfinite(gamma)) throw ConfigError("gamma must be positive");
    if (image_width < 1) throw ConfigError("image width must be at least 1");
    if (!(blur_sigmas > 0.0) || !(kernel_cutoff > 0.0)) throw ConfigError("cutoffs must be positive");
    if (!(depth_tau > 0.0)) throw ConfigError("depth temperature must be positive");
  }
  double effective_gamma(const SonarIntrinsics& intr) const {
    const double w = 2.0 * intr.bin_width();
    return gamma > 0.0 ? gamma : w * w;
  }
  double blur_radius() const { return blur_sigmas * sigma; }
};

inline double gaussian_kernel(double r, double rs, double gamma) {
  const double d = r - rs;
  return std::exp(-d * d / gamma);
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline constexpr std::int32_t kEmptySlot = -1;

struct FragmentSlot {
  std::int32_t face = kEmptySlot;
  double z_depth = 0.0;  // Euclidean range from the sensor to the ray/face-plane hit
  double d_xy = 0.0;     // signed NDC distance to the projected face, positive inside
  std::array<double, 3> bary{};
  std::uint8_t feature = 0;  // nearest boundary feature (3 * edge + {0: vertex a, 1: edge interior, 2: vertex b})
};

/// K range-sorted fragments for every pixel, row-major.
struct FragmentBuffer {
  ImageLayout image;
  std::size_t k = 0;
  std::vector<FragmentSlot> slots;

  FragmentSlot& at(std::size_t pixel, std::size_t slot) { return slots[pixel * k + slot]; }
  const FragmentSlot& at(std::size_t pixel, std::size_t slot) const { return slots[pixel * k + slot]; }
};

struct Ping {
  std::uint32_t ping_id = 0;
  Side side = Side::starboard;
  std::vector<double> intensities;
};

namespace detail {

struct DistanceToTriangle {
  double d = 0.0;  // signed, positive inside
  int edge = 0;    // nearest edge, from vertex `edge` to `edge + 1`
  double lambda = 0.0;
  Vec2 unit{};  // from the nearest boundary point to the query point

  std::uint8_t feature() const {
    const int region = lambda <= 0.0 ? 0 : (lambda >= 1.0 ? 2 : 1);
    return static_cast<std::uint8_t>(3 * edge + region);
  }
};

inline DistanceToTriangle signed_distance(Vec2 q, const std::array<Vec2, 3>& p) {
  DistanceToTriangle out;
  double best = std::numeric_limits<double>::infinity();
  int pos = 0, neg = 0;
  for (int e = 0; e < 3; ++e) {
    const Vec2 a = p[e], b = p[(e + 1) % 3];
    const Vec2 ab = b - a;
    const double side = cross(ab, q - a);
    pos += side > 0.0;
    neg += side < 0.0;
    const double len2 = dot(ab, ab);
    const double lambda = len2 > 0.0 ? std::clamp(dot(q - a, ab) / len2, 0.0, 1.0) : 0.0;
    const Vec2 diff = q - (a + lambda * ab);
    const double dist = norm(diff);
    if (dist < best) {
      best = dist;
      out.edge = e;
      out.lambda = lambda;
      out.unit = dist > 0.0 ? (1.0 / dist) * diff : Vec2{};
    }
  }
  const bool degenerate = cross(p[1] - p[0], p[2] - p[0]) == 0.0;
  const bool inside = !degenerate && (pos == 0 || neg == 0);
  out.d = inside ? best : -best;
  return out;
}

/// Camera-frame vertex positions for one pose.
inline std::vector<Vec3> to_camera(const TriangleMesh& mesh, const SonarPose& pose) {
  const Mat3 r = pose.world_to_camera();
  std::vector<Vec3> pc(mesh.vertices.size());
  for (std::size_t v = 0; v < pc.size(); ++v) pc[v] = r * (mesh.vertices[v] - pose.position);
  return pc;
}

inline constexpr double kNearPlane = 1e-3;

}  // namespace detail

/// Returns the K nearest (by slant range) candidate faces per pixel. A face is
/// a candidate for a pixel when the pixel lies inside its projection or within
/// the blur radius of it, and the ray meets the face plane in front of the
/// sensor within the rendered range. Faces with a vertex at or behind the
/// near plane are skipped, so very large faces should be tessellated.
inline FragmentBuffer rasterize(const TriangleMesh& mesh, const SonarPose& pose, const SonarIntrinsics& intr,
                                const RenderParams& params) {
  params.validate();
  FragmentBuffer fb;
  fb.image = ImageLayout::for_intrinsics(intr, params.image_width);
  fb.k = params.faces_per_pixel;
  fb.slots.assign(fb.image.pixels() * fb.k, FragmentSlot{});
  if (mesh.empty()) return fb;

  const auto pc = detail::to_camera(mesh, pose);
  const double blur = params.blur_radius();
  const double max_range =
      intr.max_slant_range + params.kernel_cutoff * std::sqrt(params.effective_gamma(intr));
  const std::size_t W = fb.image.width, H = fb.image.height, K = fb.k;
  const double col_scale = intr.fx / intr.fy;

  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& tri = mesh.faces[f];
    const Vec3 a = pc[tri[0]], b = pc[tri[1]], c = pc[tri[2]];
    if (a.z <= detail::kNearPlane || b.z <= detail::kNearPlane || c.z <= detail::kNearPlane) continue;
    const std::array<Vec2, 3> s{Vec2{intr.fy * a.x / a.z, intr.fy * a.y / a.z},
                                Vec2{intr.fy * b.x / b.z, intr.fy * b.y / b.z},
                                Vec2{intr.fy * c.x / c.z, intr.fy * c.y / c.z}};
    const double umin = std::min({s[0].x, s[1].x, s[2].x}) - blur;
    const double umax = std::max({s[0].x, s[1].x, s[2].x}) + blur;
    const double vmin = std::min({s[0].y, s[1].y, s[2].y}) - blur;
    const double vmax = std::max({s[0].y, s[1].y, s[2].y}) + blur;
    // Pixel centre of column j: u = (-1 + (2j+1)/W) / col_scale.
    const double jlo = std::ceil((umin * col_scale + 1.0) * 0.5 * static_cast<double>(W) - 0.5);
    const double jhi = std::floor((umax * col_scale + 1.0) * 0.5 * static_cast<double>(W) - 0.5);
    const double ilo = std::ceil((vmin + 1.0) * 0.5 * static_cast<double>(H) - 0.5);
    const double ihi = std::floor((vmax + 1.0) * 0.5 * static_cast<double>(H) - 0.5);
    if (jhi < 0.0 || ihi < 0.0 || jlo > static_cast<double>(W - 1) || ilo > static_cast<double>(H - 1)) continue;
    if (jlo > jhi || ilo > ihi) continue;
    const auto j0 = static_cast<std::size_t>(std::max(jlo, 0.0));
    const auto j1 = static_cast<std::size_t>(std::min(jhi, static_cast<double>(W - 1)));
    const auto i0 = static_cast<std::size_t>(std::max(ilo, 0.0));
    const auto i1 = static_cast<std::size_t>(std::min(ihi, static_cast<double>(H - 1)));

    const Vec3 n = cross(b - a, c - a);
    const double n2 = dot(n, n);
    const double plane = dot(n, a);
    for (std::size_t i = i0; i <= i1; ++i) {
      for (std::size_t j = j0; j <= j1; ++j) {
        const Vec2 q = pixel_ndc(i, j, fb.image, intr);
        const auto dist = detail::signed_distance(q, s);
        if (dist.d < -blur) continue;
        const Vec3 dir = ndc_ray(q, intr);
        const double denom = dot(n, dir);
        if (std::abs(denom) <= 1e-12 * std::sqrt(n2)) continue;
        const double t = plane / denom;
        if (!(t > 0.0) || t > max_range) continue;
        const Vec3 hit = t * dir;
        FragmentSlot cand{static_cast<std::int32_t>(f), t, dist.d,
                          {dot(cross(b - hit, c - hit), n) / n2, dot(cross(c - hit, a - hit), n) / n2, 0.0}};
        cand.bary[2] = 1.0 - cand.bary[0] - cand.bary[1];
        cand.feature = dist.feature();

        // Insertion into the sorted K list; ties broken by face id.
        FragmentSlot* px = &fb.slots[(i * W + j) * K];
        auto before = [](const FragmentSlot& x, const FragmentSlot& y) {
          return y.face == kEmptySlot || x.z_depth < y.z_depth || (x.z_depth == y.z_depth && x.face < y.face);
        };
        if (!before(cand, px[K - 1])) continue;
        std::size_t pos = K - 1;
        while (pos > 0 && before(cand, px[pos - 1])) {
          px[pos] = px[pos - 1];
          --pos;
        }
        px[pos] = cand;
      }
    }
  }
  return fb;
}

/// Per-slot Lambertian intensity c = albedo * max(0, cos psi) * beam pattern.
inline std::vector<double> shade_lambertian(const FragmentBuffer& frags, const TriangleMesh& mesh,
                                            const SonarPose& pose, const SonarIntrinsics& intr,
                                            const BeamPattern& bp, const RenderParams& params) {
  std::vector<double> c(frags.slots.size(), 0.0);
  if (mesh.empty()) return c;
  const Mat3 r = pose.world_to_camera();
  const std::size_t W = frags.image.width;
  std::vector<double> column_gain(W, 1.0);
  if (params.beam_pattern) {
    for (std::size_t j = 0; j < W; ++j)
      column_gain[j] = beam_pattern(pattern_angle(pixel_ndc(0, j, frags.image, intr), intr, bp), bp);
  }
  for (std::size_t px = 0; px < frags.image.pixels(); ++px) {
    const Vec3 dir = ndc_ray(pixel_ndc(px / W, px % W, frags.image, intr), intr);
    for (std::size_t k = 0; k < frags.k; ++k) {
      const auto& s = frags.at(px, k);
      if (s.face == kEmptySlot) break;
      const Vec3 n = normalized(r * mesh.face_normal(static_cast<std::size_t>(s.face)));
      const double cos_psi = -dot(n, dir);
      double v = mesh.albedo[static_cast<std::size_t>(s.face)] * std::max(0.0, cos_psi) * column_gain[px % W];
      if (params.spreading_loss) v /= s.z_depth * s.z_depth;
      c[px * frags.k + k] = v;
    }
  }
  return c;
}

/// Visibility weight per slot. Each slot's xy-coverage s = sigmoid(d/sigma);
/// the pixel's total coverage 1 - prod(1 - s) is shared among its slots by a
/// softmax over range with temperature tau, so nearer surfaces claim the
/// pixel and the occluded seabed behind an interior hit gets ~0 (shadows).
/// The weights are symmetric in slot order, hence continuous when ranges tie.
inline std::vector<double> coverage_weights(const FragmentBuffer& frags, double sigma, double tau,
                                            std::vector<double>* coverage = nullptr) {
  std::vector<double> w(frags.slots.size(), 0.0);
  if (coverage) coverage->assign(frags.slots.size(), 0.0);
  std::vector<double> u(frags.k);
  for (std::size_t px = 0; px < frags.image.pixels(); ++px) {
    const std::size_t base = px * frags.k;
    if (frags.slots[base].face == kEmptySlot) continue;
    const double nearest = frags.slots[base].z_depth;
    double transmit = 1.0, total = 0.0;
    std::size_t k = 0;
    for (; k < frags.k && frags.slots[base + k].face != kEmptySlot; ++k) {
      const auto& s = frags.slots[base + k];
      const double cov = sigmoid(s.d_xy / sigma);
      if (coverage) (*coverage)[base + k] = cov;
      u[k] = cov * std::exp(-(s.z_depth - nearest) / tau);
      total += u[k];
      transmit *= 1.0 - cov;
    }
    if (total == 0.0) continue;
    const double alpha = 1.0 - transmit;
    for (std::size_t j = 0; j < k; ++j) w[base + j] = alpha * u[j] / total;
  }
  return w;
}

/// Half-open range of bins whose centre lies within `half_width` of r.
inline std::pair<std::size_t, std::size_t> kernel_window(double r, double half_width, const SonarIntrinsics& intr) {
  const double dr = intr.bin_width();
  const double lo = std::ceil((r - half_width) / dr - 0.5);
  const double hi = std::floor((r + half_width) / dr - 0.5);
  const auto b = static_cast<double>(intr.n_bins);
  if (hi < 0.0 || lo > b - 1.0 || lo > hi) return {0, 0};
  return {static_cast<std::size_t>(std::max(lo, 0.0)), static_cast<std::size_t>(std::min(hi, b - 1.0)) + 1};
}

/// Per-bin list of selected slot indices, filled only for top-M blending.
using BinSelection = std::vector<std::vector<std::uint32_t>>;

namespace detail {

inline std::vector<double> blend(const FragmentBuffer& frags, std::span<const double> c, std::span<const double> w,
                                 const SonarIntrinsics& intr, const RenderParams& params, BinSelection* selection) {
  const double gamma = params.effective_gamma(intr);
  const double half = params.kernel_cutoff * std::sqrt(gamma);
  const std::size_t B = intr.n_bins;
  std::vector<double> out(B, 0.0);

  if (params.top_m == 0) {
    for (std::size_t idx = 0; idx < frags.slots.size(); ++idx) {
      const auto& s = frags.slots[idx];
      const double wc = w[idx] * c[idx];
      if (s.face == kEmptySlot || wc == 0.0) continue;
      const auto [b0, b1] = kernel_window(s.z_depth, half, intr);
      for (std::size_t i = b0; i < b1; ++i) out[i] += gaussian_kernel(s.z_depth, bin_center(i, intr), gamma) * wc;
    }
    return out;
  }

  struct Contribution {
    double value;
    std::uint32_t slot;
  };
  std::vector<std::vector<Contribution>> per_bin(B);
  for (std::size_t idx = 0; idx < frags.slots.size(); ++idx) {
    const auto& s = frags.slots[idx];
    const double wc = w[idx] * c[idx];
    if (s.face == kEmptySlot || wc == 0.0) continue;
    const auto [b0, b1] = kernel_window(s.z_depth, half, intr);
    for (std::size_t i = b0; i < b1; ++i)
      per_bin[i].push_back({gaussian_kernel(s.z_depth, bin_center(i, intr), gamma) * wc,
                            static_cast<std::uint32_t>(idx)});
  }
  if (selection) selection->assign(B, {});
  for (std::size_t i = 0; i < B; ++i) {
    auto& list = per_bin[i];
    if (list.size() > params.top_m) {
      std::nth_element(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(params.top_m - 1), list.end(),
                       [](const Contribution& x, const Contribution& y) {
                         return x.value > y.value || (x.value == y.value && x.slot < y.slot);
                       });
      list.resize(params.top_m);
    }
    // Sum in slot order so the result does not depend on the selection algorithm.
    std::sort(list.begin(), list.end(), [](const Contribution& x, const Contribution& y) { return x.slot < y.slot; });
    for (const auto& e : list) {
      out[i] += e.value;
      if (selection) (*selection)[i].push_back(e.slot);
    }
  }
  return out;
}

}  // namespace detail

/// Gaussian range blending of shaded fragments into one ping. With top_m = 0
/// every weighted return is summed; otherwise only the M largest per bin.
inline Ping blend_ping(const FragmentBuffer& frags, std::span<const double> c, const SonarIntrinsics& intr,
                       const RenderParams& params) {
  if (c.size() != frags.slots.size()) throw ConfigError("shading does not match fragment buffer");
  const auto w = coverage_weights(frags, params.sigma, params.depth_tau);
  Ping ping;
  ping.intensities = detail::blend(frags, c, w, intr, params, nullptr);
  return ping;
}

inline Ping render_ping(const TriangleMesh& mesh, const SonarPose& pose, const SonarIntrinsics& intr,
                        const BeamPattern& bp, const RenderParams& params) {
  const auto frags = rasterize(mesh, pose, intr, params);
  const auto c = shade_lambertian(frags, mesh, pose, intr, bp, params);
  Ping ping = blend_ping(frags, c, intr, params);
  ping.ping_id = pose.ping_id;
  ping.side = pose.side;
  return ping;
}

/// Pings stacked row-wise; each row is the port ping reversed followed by the
/// starboard ping, so range grows outwards from the centre column.
struct Waterfall {
  std::size_t rows = 0;
  std::size_t bins = 0;  // per side
  std::vector<double> data;

  Waterfall() = default;
  Waterfall(std::size_t r, std::size_t b) : rows(r), bins(b), data(r * 2 * b, 0.0) {}

  std::size_t cols() const { return 2 * bins; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double max() const { return data.empty() ? 0.0 : *std::max_element(data.begin(), data.end()); }

  /// Column holding range bin i of the given side.
  std::size_t column(Side side, std::size_t bin) const { return side == Side::port ? bins - 1 - bin : bins + bin; }
  void place(std::size_t row, const Ping& ping) {
    for (std::size_t i = 0; i < bins; ++i) at(row, column(ping.side, i)) = ping.intensities[i];
  }
  std::vector<double> side_row(std::size_t row, Side side) const {
    std::vector<double> out(bins);
    for (std::size_t i = 0; i < bins; ++i) out[i] = at(row, column(side, i));
    return out;
  }
  bool operator==(const Waterfall&) const = default;
};

/// One waterfall row per ping id, in order of first appearance. Heads are
/// rendered in parallel; each row is written by exactly one task.
inline Waterfall render_waterfall(const TriangleMesh& mesh, const std::vector<SonarPose>& poses,
                                  const SonarIntrinsics& intr, const BeamPattern& bp, const RenderParams& params,
                                  std::size_t threads = 1) {
  if (poses.empty()) throw ConfigError("waterfall needs at least one pose");
  const auto groups = group_pings(poses);
  Waterfall wf(groups.size(), intr.n_bins);
  std::vector<std::size_t> row_of(poses.size());
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (std::size_t p = groups[g].first; p < groups[g].second; ++p) row_of[p] = g;
  std::vector<Ping> pings(poses.size());
  parallel_for(poses.size(), threads, [&](std::size_t p) { pings[p] = render_ping(mesh, poses[p], intr, bp, params); });
  for (std::size_t p = 0; p < poses.size(); ++p) wf.place(row_of[p], pings[p]);
  return wf;
}

}  // namespace sssdr
