#pragma once

// Sidescan sonar as an acoustic perspective camera: one camera per head
// (port/starboard), boresight tilted down by the mount angle, a narrow
// horizontal FoV along track and a wide vertical FoV across track.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sssdr/error.hpp"
#include "sssdr/geometry.hpp"

namespace sssdr {

enum class Side : std::uint8_t { port, starboard };

inline const char* to_string(Side s) { return s == Side::port ? "port" : "starboard"; }
inline Side side_from_string(const std::string& s) {
  if (s == "port") return Side::port;
  if (s == "starboard") return Side::starboard;
  throw ConfigError("unknown sonar side '" + s + "'");
}

struct SonarIntrinsics {
  double horizontal_fov = deg2rad(1.0);  // phi, along track
  double vertical_fov = deg2rad(50.0);   // alpha, across track
  double fx = 0.0;
  double fy = 0.0;
  double max_slant_range = 50.0;
  std::size_t n_bins = 256;

  double bin_width() const { return max_slant_range / static_cast<double>(n_bins); }
};

/// fx = 1/tan(phi/2), fy = 1/tan(alpha/2).
inline SonarIntrinsics intrinsics_from_fov(double horizontal_fov, double vertical_fov, double max_slant_range,
                                           std::size_t n_bins) {
  constexpr double pi = std::numbers::pi;
  if (!(horizontal_fov > 0.0 && horizontal_fov <= vertical_fov && vertical_fov < pi))
    throw ConfigError("field of view must satisfy 0 < horizontal <= vertical < pi");
  if (!(max_slant_range > 0.0)) throw ConfigError("maximum slant range must be positive");
  if (n_bins < 2) throw ConfigError("a ping needs at least 2 range bins");
  SonarIntrinsics in;
  in.horizontal_fov = horizontal_fov;
  in.vertical_fov = vertical_fov;
  in.fx = 1.0 / std::tan(horizontal_fov / 2.0);
  in.fy = 1.0 / std::tan(vertical_fov / 2.0);
  in.max_slant_range = max_slant_range;
  in.n_bins = n_bins;
  return in;
}

/// Centre of range bin i, (i + 1/2) * bin width.
inline double bin_center(std::size_t i, const SonarIntrinsics& intr) {
  if (i >= intr.n_bins) throw ConfigError("range bin index out of range");
  return (static_cast<double>(i) + 0.5) * intr.bin_width();
}

/// Grazing angle of a seabed point at slant range rs below/above the sensor.
inline double grazing_angle(double sensor_z, double point_z, double slant_range) {
  const double dz = std::abs(point_z - sensor_z);
  if (!(dz > 0.0)) throw ConfigError("grazing angle needs a non-zero vertical offset");
  if (slant_range < dz) throw ConfigError("slant range shorter than vertical offset");
  return std::asin(dz / slant_range);
}

/// Horizontal beam pattern of a uniform line array in sinc^4 form.
/// Angles are measured across the horizontal aperture, so the beam axis sits
/// at phi0 and the aperture edges at phi0 -/+ half the FoV.
struct BeamPattern {
  double k_phi = 159.46;
  double phi0 = deg2rad(0.5);
};

inline double beam_pattern(double phi, const BeamPattern& bp) {
  const double x = bp.k_phi * std::sin(phi - bp.phi0);
  if (std::abs(x) < 1e-4) {
    // sin(x)/x = 1 - x^2/6 + O(x^4)
    const double s = 1.0 - x * x / 6.0;
    return s * s * s * s;
  }
  const double s = std::sin(x) / x;
  return s * s * s * s;
}

/// One sonar head for one ping.
struct SonarPose {
  std::uint32_t ping_id = 0;
  Vec3 position{};
  double heading = 0.0;  // yaw about +z, radians from +x
  double pitch = 0.0;
  double roll = 0.0;
  Side side = Side::starboard;
  double tilt = deg2rad(30.0);  // boresight depression below horizontal

  /// Vehicle attitude, composed yaw -> pitch -> roll: Rz(heading) Ry(pitch) Rx(roll).
  /// Body frame is forward-left-up.
  Mat3 body_to_world() const { return rot_z(heading) * rot_y(pitch) * rot_x(roll); }

  /// Camera frame: x along track, z along the tilted boresight, y = z cross x.
  /// Rows of the result are the camera axes expressed in world coordinates.
  Mat3 world_to_camera() const {
    const double lateral = side == Side::port ? 1.0 : -1.0;
    const Vec3 boresight{0.0, lateral * std::cos(tilt), -std::sin(tilt)};
    const Vec3 along{1.0, 0.0, 0.0};
    const Mat3 r = body_to_world();
    const Vec3 zc = r * boresight;
    const Vec3 xc = r * along;
    return {{xc, cross(zc, xc), zc}};
  }

  Vec3 boresight_world() const { return world_to_camera().rows[2]; }
};

/// Pixel grid of the acoustic camera. Columns span the horizontal FoV, rows
/// the vertical FoV; H = ceil(fx/fy * W) keeps pixels near-square in angle.
struct ImageLayout {
  std::size_t width = 4;
  std::size_t height = 0;

  static ImageLayout for_intrinsics(const SonarIntrinsics& intr, std::size_t width) {
    if (width < 1) throw ConfigError("image width must be at least 1");
    // Guard against fx/fy*W landing a hair above an integer.
    const double h = intr.fx / intr.fy * static_cast<double>(width);
    return {width, static_cast<std::size_t>(std::ceil(h - 1e-9))};
  }
  std::size_t pixels() const { return width * height; }
};

/// Normalised device coordinates are isotropic: the vertical FoV spans
/// [-1, 1] and the horizontal FoV spans [-fy/fx, fy/fx]. A camera-frame point
/// (x, y, z) projects to fy * (x/z, y/z).
inline Vec2 pixel_ndc(std::size_t row, std::size_t col, const ImageLayout& img, const SonarIntrinsics& intr) {
  const double u = (-1.0 + (2.0 * static_cast<double>(col) + 1.0) / static_cast<double>(img.width)) * intr.fy / intr.fx;
  const double v = -1.0 + (2.0 * static_cast<double>(row) + 1.0) / static_cast<double>(img.height);
  return {u, v};
}

/// Unit ray direction in the camera frame through an NDC point.
inline Vec3 ndc_ray(Vec2 ndc, const SonarIntrinsics& intr) {
  return normalized(Vec3{ndc.x / intr.fy, ndc.y / intr.fy, 1.0});
}

/// Horizontal off-axis angle of an NDC point, in beam-pattern coordinates
/// (axis at phi0, aperture edges at phi0 -/+ fov/2).
inline double pattern_angle(Vec2 ndc, const SonarIntrinsics& intr, const BeamPattern& bp) {
  return bp.phi0 + std::atan(ndc.x / intr.fy);
}

struct SurveyLeg {
  Vec2 start{};
  Vec2 end{};
};

struct SurveySpec {
  std::vector<SurveyLeg> legs;
  double sensor_z = -10.0;
  double ping_spacing = 0.5;
  double tilt = deg2rad(30.0);
};

/// Straight legs at constant depth; every ping position emits a port pose
/// followed by a starboard pose with the same ping id.
inline std::vector<SonarPose> make_survey_lines(const SurveySpec& spec) {
  if (!(spec.ping_spacing > 0.0)) throw ConfigError("ping spacing must be positive");
  std::vector<SonarPose> poses;
  std::uint32_t ping = 0;
  for (const auto& leg : spec.legs) {
    const Vec2 d = leg.end - leg.start;
    const double len = norm(d);
    if (!(len > 0.0)) throw ConfigError("survey leg has zero length");
    const auto n = static_cast<std::size_t>(std::floor(len / spec.ping_spacing + 1e-9)) + 1;
    const double heading = std::atan2(d.y, d.x);
    for (std::size_t k = 0; k < n; ++k) {
      const double s = static_cast<double>(k) * spec.ping_spacing / len;
      const Vec2 p = leg.start + s * d;
      for (Side side : {Side::port, Side::starboard}) {
        SonarPose pose;
        pose.ping_id = ping;
        pose.position = {p.x, p.y, spec.sensor_z};
        pose.heading = heading;
        pose.side = side;
        pose.tilt = spec.tilt;
        poses.push_back(pose);
      }
      ++ping;
    }
  }
  return poses;
}

/// Clockwise box of four legs around `center`, each leg `2*half_side` long.
inline SurveySpec box_survey(Vec2 center, double half_side, double sensor_z, double ping_spacing, double tilt) {
  const double h = half_side;
  SurveySpec s;
  s.legs = {{{center.x - h, center.y - h}, {center.x + h, center.y - h}},
            {{center.x + h, center.y - h}, {center.x + h, center.y + h}},
            {{center.x + h, center.y + h}, {center.x - h, center.y + h}},
            {{center.x - h, center.y + h}, {center.x - h, center.y - h}}};
  s.sensor_z = sensor_z;
  s.ping_spacing = ping_spacing;
  s.tilt = tilt;
  return s;
}

/// Where the boresight meets a horizontal seafloor at height floor_z.
inline Vec3 boresight_footprint(const SonarPose& pose, double floor_z) {
  const Vec3 b = pose.boresight_world();
  if (!(b.z < 0.0)) throw ConfigError("boresight does not point downwards");
  const double t = (floor_z - pose.position.z) / b.z;
  return pose.position + t * b;
}

/// Splits a pose list into consecutive runs sharing a ping id.
inline std::vector<std::pair<std::size_t, std::size_t>> group_pings(const std::vector<SonarPose>& poses) {
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t k = 0; k < poses.size();) {
    std::size_t e = k + 1;
    while (e < poses.size() && poses[e].ping_id == poses[k].ping_id) ++e;
    groups.emplace_back(k, e);
    k = e;
  }
  return groups;
}

}  // namespace sssdr
