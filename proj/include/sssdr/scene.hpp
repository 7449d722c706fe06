#pragma once

// Bathymetry surface types and the scene generators used by the experiments.
//
// World frame is right-handed and z-up. Depths are positive-down numbers at
// the API boundary (generators, sparse samples, reports) and are stored as
// negative z everywhere else.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sssdr/delaunay.hpp"
#include "sssdr/error.hpp"
#include "sssdr/geometry.hpp"

namespace sssdr {

/// Regular grid layout shared by heightfields and derived rasters.
struct GridSpec {
  std::size_t nx = 2;
  std::size_t ny = 2;
  double cell_size = 0.5;
  Vec2 origin{};  // world xy of node (0, 0)

  double width() const { return static_cast<double>(nx - 1) * cell_size; }
  double height() const { return static_cast<double>(ny - 1) * cell_size; }
  Vec2 center() const { return {origin.x + 0.5 * width(), origin.y + 0.5 * height()}; }
  bool operator==(const GridSpec&) const = default;

  /// Square grid of the given extent centred on `c`.
  static GridSpec centered(double extent, double cell, Vec2 c = {}) {
    if (!(extent > 0.0) || !(cell > 0.0)) throw ConfigError("grid extent and cell size must be positive");
    const auto n = static_cast<std::size_t>(std::llround(extent / cell)) + 1;
    GridSpec g{n, n, cell, {}};
    g.origin = {c.x - 0.5 * g.width(), c.y - 0.5 * g.height()};
    return g;
  }
};

/// Depth grid. Node (i, j) sits at origin + (i, j) * cell_size and stores z
/// (negative below the surface). Storage is row-major in j.
class Heightfield {
 public:
  Heightfield() = default;
  Heightfield(GridSpec grid, double z_fill) : grid_(grid), z_(grid.nx * grid.ny, z_fill) { validate(); }
  Heightfield(GridSpec grid, std::vector<double> z) : grid_(grid), z_(std::move(z)) { validate(); }

  const GridSpec& grid() const { return grid_; }
  std::size_t nx() const { return grid_.nx; }
  std::size_t ny() const { return grid_.ny; }
  double cell_size() const { return grid_.cell_size; }
  Vec2 origin() const { return grid_.origin; }
  std::size_t size() const { return z_.size(); }

  std::size_t index(std::size_t i, std::size_t j) const { return j * grid_.nx + i; }
  double z(std::size_t i, std::size_t j) const { return z_[index(i, j)]; }
  double& z(std::size_t i, std::size_t j) { return z_[index(i, j)]; }
  double depth(std::size_t i, std::size_t j) const { return -z(i, j); }
  Vec2 node_xy(std::size_t i, std::size_t j) const {
    return {grid_.origin.x + static_cast<double>(i) * grid_.cell_size,
            grid_.origin.y + static_cast<double>(j) * grid_.cell_size};
  }

  std::span<const double> values() const { return z_; }
  std::span<double> values() { return z_; }

  bool on_boundary(std::size_t k) const {
    const std::size_t i = k % grid_.nx, j = k / grid_.nx;
    return i == 0 || j == 0 || i + 1 == grid_.nx || j + 1 == grid_.ny;
  }

  /// Bilinear interpolation of z at a world xy point, clamped to the grid.
  double sample(Vec2 p) const {
    const double fx = std::clamp((p.x - grid_.origin.x) / grid_.cell_size, 0.0, static_cast<double>(grid_.nx - 1));
    const double fy = std::clamp((p.y - grid_.origin.y) / grid_.cell_size, 0.0, static_cast<double>(grid_.ny - 1));
    const auto i = std::min(static_cast<std::size_t>(fx), grid_.nx - 2);
    const auto j = std::min(static_cast<std::size_t>(fy), grid_.ny - 2);
    const double u = fx - static_cast<double>(i), v = fy - static_cast<double>(j);
    return (1 - u) * (1 - v) * z(i, j) + u * (1 - v) * z(i + 1, j) + (1 - u) * v * z(i, j + 1) +
           u * v * z(i + 1, j + 1);
  }

  void validate() const {
    if (grid_.nx < 2 || grid_.ny < 2) throw ConfigError("heightfield needs at least 2x2 nodes");
    if (!(grid_.cell_size > 0.0) || !std::isfinite(grid_.cell_size))
      throw ConfigError("heightfield cell size must be positive");
    if (z_.size() != grid_.nx * grid_.ny) throw ConfigError("heightfield value count does not match grid");
    for (double v : z_) {
      if (!std::isfinite(v)) throw ConfigError("heightfield contains a non-finite depth");
    }
  }

  bool operator==(const Heightfield&) const = default;

 private:
  GridSpec grid_{};
  std::vector<double> z_;
};

using Face = std::array<std::uint32_t, 3>;

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<double> albedo;  // one reflectivity per face, in [0, 1]

  bool empty() const { return faces.empty(); }

  /// Unnormalised geometric normal (twice the area vector).
  Vec3 face_normal(std::size_t f) const {
    const auto& t = faces[f];
    return cross(vertices[t[1]] - vertices[t[0]], vertices[t[2]] - vertices[t[0]]);
  }

  void validate() const {
    if (albedo.size() != faces.size()) throw ConfigError("mesh albedo count must match face count");
    for (const auto& v : vertices) {
      if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z))
        throw ConfigError("mesh has a non-finite vertex");
    }
    for (std::size_t f = 0; f < faces.size(); ++f) {
      for (auto idx : faces[f]) {
        if (idx >= vertices.size()) throw ConfigError("mesh face index out of range");
      }
      if (norm(face_normal(f)) <= 0.0) throw ConfigError("mesh has a degenerate face");
      if (!(albedo[f] >= 0.0 && albedo[f] <= 1.0)) throw ConfigError("mesh albedo outside [0, 1]");
    }
  }
};

/// Single triangle helper used by tests and synthetic scenes.
inline TriangleMesh make_triangle_mesh(std::vector<Vec3> vertices, std::vector<Face> faces, double albedo = 1.0) {
  TriangleMesh m{std::move(vertices), std::move(faces), {}};
  m.albedo.assign(m.faces.size(), albedo);
  m.validate();
  return m;
}

/// Splits every cell along the (i,j)-(i+1,j+1) diagonal. Vertex k of the mesh
/// is heightfield node k, so gradients on vertex z map 1:1 onto the grid.
inline TriangleMesh heightfield_to_mesh(const Heightfield& hf, double albedo = 1.0) {
  hf.validate();
  const std::size_t nx = hf.nx(), ny = hf.ny();
  TriangleMesh mesh;
  mesh.vertices.reserve(nx * ny);
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) {
      const Vec2 p = hf.node_xy(i, j);
      mesh.vertices.push_back({p.x, p.y, hf.z(i, j)});
    }
  }
  mesh.faces.reserve(2 * (nx - 1) * (ny - 1));
  for (std::size_t j = 0; j + 1 < ny; ++j) {
    for (std::size_t i = 0; i + 1 < nx; ++i) {
      const auto v00 = static_cast<std::uint32_t>(hf.index(i, j));
      const auto v10 = static_cast<std::uint32_t>(hf.index(i + 1, j));
      const auto v01 = static_cast<std::uint32_t>(hf.index(i, j + 1));
      const auto v11 = static_cast<std::uint32_t>(hf.index(i + 1, j + 1));
      mesh.faces.push_back({v00, v10, v11});
      mesh.faces.push_back({v00, v11, v01});
    }
  }
  mesh.albedo.assign(mesh.faces.size(), albedo);
  return mesh;
}

/// Writes heightfield depths into an existing mesh built by heightfield_to_mesh.
inline void update_mesh_z(TriangleMesh& mesh, const Heightfield& hf) {
  const auto z = hf.values();
  for (std::size_t k = 0; k < z.size(); ++k) mesh.vertices[k].z = z[k];
}

inline Heightfield make_flat_scene(const GridSpec& grid, double seafloor_depth) {
  return Heightfield(grid, -seafloor_depth);
}

/// Hemispherical dome on a flat seafloor, centred on the grid.
inline Heightfield make_dome_scene(double radius, double seafloor_depth, const GridSpec& grid) {
  if (!(radius > 0.0)) throw ConfigError("dome radius must be positive");
  if (!(seafloor_depth > radius)) throw ConfigError("seafloor depth must exceed dome radius");
  if (2.0 * radius > grid.width() || 2.0 * radius > grid.height())
    throw ConfigError("dome footprint exceeds the grid extent");
  Heightfield hf(grid, -seafloor_depth);
  const Vec2 c = grid.center();
  for (std::size_t j = 0; j < grid.ny; ++j) {
    for (std::size_t i = 0; i < grid.nx; ++i) {
      const Vec2 d = hf.node_xy(i, j) - c;
      hf.z(i, j) = -seafloor_depth + std::sqrt(std::max(0.0, radius * radius - dot(d, d)));
    }
  }
  return hf;
}

struct RockyParams {
  double cell_size = 0.5;
  double base_depth = 17.0;
  double roughness = 1.0;  // global amplitude multiplier; 0 gives a flat seafloor
  double undulation_amplitude = 3.0;
  double undulation_wavelength = 40.0;
  std::size_t rock_count = 40;
  double rock_radius_min = 0.75;
  double rock_radius_max = 2.5;
  double rock_height_min = 0.3;
  double rock_height_max = 1.5;
  double min_depth = 9.0;
  double max_depth = 25.0;
};

/// Synthetic rocky seafloor: smooth long-wavelength relief plus Gaussian rock
/// bumps, clamped to [min_depth, max_depth]. Bit-identical for a fixed seed.
inline Heightfield make_rocky_scene(std::uint64_t seed, double extent, const RockyParams& p) {
  if (!(extent > 0.0)) throw ConfigError("rocky scene extent must be positive");
  if (!(p.min_depth <= p.max_depth)) throw ConfigError("rocky scene depth band is inverted");
  const GridSpec grid = GridSpec::centered(extent, p.cell_size);
  Heightfield hf(grid, -p.base_depth);

  std::mt19937_64 rng(seed);
  auto uniform = [&rng](double lo, double hi) {
    // Explicit mapping keeps streams identical across standard libraries.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  };
  const double phase_x = uniform(0.0, 2.0 * std::numbers::pi);
  const double phase_y = uniform(0.0, 2.0 * std::numbers::pi);
  const double tilt = uniform(-0.5, 0.5);
  struct Rock {
    Vec2 c;
    double r, h;
  };
  std::vector<Rock> rocks(p.rock_count);
  const Vec2 lo = grid.origin;
  for (auto& r : rocks) {
    r.c = {uniform(lo.x, lo.x + grid.width()), uniform(lo.y, lo.y + grid.height())};
    r.r = uniform(p.rock_radius_min, p.rock_radius_max);
    r.h = uniform(p.rock_height_min, p.rock_height_max);
  }

  const double k = 2.0 * std::numbers::pi / p.undulation_wavelength;
  const Vec2 c = grid.center();
  for (std::size_t j = 0; j < grid.ny; ++j) {
    for (std::size_t i = 0; i < grid.nx; ++i) {
      const Vec2 q = hf.node_xy(i, j);
      double relief = p.undulation_amplitude *
                      (0.5 * std::sin(k * (q.x - c.x) + phase_x) * std::cos(k * (q.y - c.y) + phase_y) +
                       tilt * (q.x - c.x) / extent);
      for (const auto& r : rocks) {
        const Vec2 d = q - r.c;
        relief += r.h * std::exp(-0.5 * dot(d, d) / (r.r * r.r / 4.0));
      }
      const double depth = std::clamp(p.base_depth - p.roughness * relief, p.min_depth, p.max_depth);
      hf.z(i, j) = -depth;
    }
  }
  return hf;
}

struct DepthSample {
  double x = 0.0;
  double y = 0.0;
  double depth = 0.0;  // positive down
};

using SparseDepthSet = std::vector<DepthSample>;

/// Separable Gaussian blur of a grid, kernel truncated at 3 sigma, edges
/// replicated. `sigma_cells` is in grid cells; zero-radius kernels are a no-op.
inline std::vector<double> gaussian_smooth(std::span<const double> values, std::size_t nx, std::size_t ny,
                                           double sigma_cells) {
  std::vector<double> out(values.begin(), values.end());
  if (!(sigma_cells > 0.0)) return out;
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma_cells));
  if (radius == 0) return out;
  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  double wsum = 0.0;
  for (long t = -radius; t <= radius; ++t) {
    const double v = std::exp(-0.5 * static_cast<double>(t * t) / (sigma_cells * sigma_cells));
    w[static_cast<std::size_t>(t + radius)] = v;
    wsum += v;
  }
  for (auto& v : w) v /= wsum;

  auto at = [](long i, long n) { return static_cast<std::size_t>(std::clamp(i, 0L, n - 1)); };
  const long lnx = static_cast<long>(nx), lny = static_cast<long>(ny);
  std::vector<double> tmp(out.size());
  for (long j = 0; j < lny; ++j) {
    for (long i = 0; i < lnx; ++i) {
      double acc = 0.0;
      for (long t = -radius; t <= radius; ++t)
        acc += w[static_cast<std::size_t>(t + radius)] * out[static_cast<std::size_t>(j) * nx + at(i + t, lnx)];
      tmp[static_cast<std::size_t>(j) * nx + static_cast<std::size_t>(i)] = acc;
    }
  }
  for (long j = 0; j < lny; ++j) {
    for (long i = 0; i < lnx; ++i) {
      double acc = 0.0;
      for (long t = -radius; t <= radius; ++t)
        acc += w[static_cast<std::size_t>(t + radius)] * tmp[at(j + t, lny) * nx + static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(j) * nx + static_cast<std::size_t>(i)] = acc;
    }
  }
  return out;
}

/// Delaunay-linear interpolation of sparse depth samples onto the grid, then
/// Gaussian smoothing. Nodes outside the sample hull take the nearest sample.
inline Heightfield init_from_sparse_depth(const SparseDepthSet& samples, const GridSpec& grid, double smooth_sigma) {
  std::vector<Vec2> pts;
  pts.reserve(samples.size());
  for (const auto& s : samples) {
    if (!std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.depth))
      throw ConfigError("sparse depth sample is not finite");
    pts.push_back({s.x, s.y});
  }
  const auto tris = delaunay_triangulate(pts);  // throws on < 3 non-collinear points

  Heightfield hf(grid, 0.0);
  for (std::size_t j = 0; j < grid.ny; ++j) {
    for (std::size_t i = 0; i < grid.nx; ++i) {
      const Vec2 q = hf.node_xy(i, j);
      double depth = 0.0;
      bool inside = false;
      for (const auto& t : tris) {
        const Vec2 a = pts[t[0]], b = pts[t[1]], c = pts[t[2]];
        const double area = cross(b - a, c - a);
        const double l0 = cross(b - q, c - q) / area;
        const double l1 = cross(c - q, a - q) / area;
        const double l2 = 1.0 - l0 - l1;
        constexpr double tol = -1e-12;
        if (l0 >= tol && l1 >= tol && l2 >= tol) {
          depth = l0 * samples[t[0]].depth + l1 * samples[t[1]].depth + l2 * samples[t[2]].depth;
          inside = true;
          break;
        }
      }
      if (!inside) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < pts.size(); ++s) {
          const Vec2 d = pts[s] - q;
          if (dot(d, d) < best) {
            best = dot(d, d);
            depth = samples[s].depth;
          }
        }
      }
      hf.z(i, j) = -depth;
    }
  }
  auto smoothed = gaussian_smooth(hf.values(), grid.nx, grid.ny, smooth_sigma / grid.cell_size);
  return Heightfield(grid, std::move(smoothed));
}

}  // namespace sssdr
