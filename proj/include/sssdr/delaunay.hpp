#pragma once

// Bowyer-Watson Delaunay triangulation for scattered 2D samples, quadratic in
// the number of points.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sssdr/error.hpp"
#include "sssdr/geometry.hpp"

namespace sssdr {

using Tri = std::array<std::uint32_t, 3>;

namespace detail {

inline bool has_three_noncollinear(std::span<const Vec2> pts) {
  if (pts.size() < 3) return false;
  double scale = 0.0;
  for (const auto& p : pts) scale = std::max({scale, std::abs(p.x - pts[0].x), std::abs(p.y - pts[0].y)});
  if (scale == 0.0) return false;
  // Farthest point from pts[0], then the point farthest off that line.
  std::size_t far = 0;
  double best = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const Vec2 d = pts[i] - pts[0];
    if (dot(d, d) > best) {
      best = dot(d, d);
      far = i;
    }
  }
  const Vec2 axis = pts[far] - pts[0];
  for (const auto& p : pts) {
    if (std::abs(cross(axis, p - pts[0])) > 1e-9 * scale * scale) return true;
  }
  return false;
}

}  // namespace detail

/// Returns counter-clockwise triangles indexing into `pts`.
inline std::vector<Tri> delaunay_triangulate(std::span<const Vec2> pts) {
  if (!detail::has_three_noncollinear(pts))
    throw ConfigError("sparse depth needs at least 3 non-collinear samples");

  double minx = pts[0].x, maxx = pts[0].x, miny = pts[0].y, maxy = pts[0].y;
  for (const auto& p : pts) {
    minx = std::min(minx, p.x);
    maxx = std::max(maxx, p.x);
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
  }
  const double span = std::max(maxx - minx, maxy - miny);
  const Vec2 mid{0.5 * (minx + maxx), 0.5 * (miny + maxy)};

  std::vector<Vec2> v(pts.begin(), pts.end());
  const auto n = static_cast<std::uint32_t>(v.size());
  v.push_back({mid.x - 20.0 * span, mid.y - 10.0 * span});
  v.push_back({mid.x + 20.0 * span, mid.y - 10.0 * span});
  v.push_back({mid.x, mid.y + 20.0 * span});

  struct Cell {
    Tri t;
    Vec2 cc;
    double r2;
  };
  auto make = [&v](Tri t) {
    const Vec2 a = v[t[0]], b = v[t[1]], c = v[t[2]];
    const double d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    const double a2 = dot(a, a), b2 = dot(b, b), c2 = dot(c, c);
    const Vec2 cc{(a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d,
                  (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d};
    const Vec2 r = a - cc;
    if (cross(b - a, c - a) < 0.0) std::swap(t[1], t[2]);
    return Cell{t, cc, dot(r, r)};
  };

  std::vector<Cell> cells{make({n, n + 1, n + 2})};
  std::vector<std::array<std::uint32_t, 2>> edges;
  for (std::uint32_t p = 0; p < n; ++p) {
    // Skip exact duplicates; they carry no new geometry.
    bool dup = false;
    for (std::uint32_t q = 0; q < p && !dup; ++q) dup = v[q].x == v[p].x && v[q].y == v[p].y;
    if (dup) continue;

    edges.clear();
    std::vector<Cell> keep;
    keep.reserve(cells.size());
    for (const auto& c : cells) {
      const Vec2 d = v[p] - c.cc;
      if (dot(d, d) <= c.r2 * (1.0 + 1e-12)) {
        edges.push_back({c.t[0], c.t[1]});
        edges.push_back({c.t[1], c.t[2]});
        edges.push_back({c.t[2], c.t[0]});
      } else {
        keep.push_back(c);
      }
    }
    // Boundary of the cavity: edges that appear exactly once.
    for (std::size_t i = 0; i < edges.size(); ++i) {
      bool shared = false;
      for (std::size_t k = 0; k < edges.size(); ++k) {
        if (k != i && edges[k][0] == edges[i][1] && edges[k][1] == edges[i][0]) {
          shared = true;
          break;
        }
      }
      if (!shared && std::abs(cross(v[edges[i][1]] - v[edges[i][0]], v[p] - v[edges[i][0]])) > 0.0)
        keep.push_back(make({edges[i][0], edges[i][1], p}));
    }
    cells = std::move(keep);
  }

  std::vector<Tri> out;
  for (const auto& c : cells) {
    if (c.t[0] < n && c.t[1] < n && c.t[2] < n) out.push_back(c.t);
  }
  return out;
}

}  // namespace sssdr
