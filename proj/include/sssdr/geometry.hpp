#pragma once

#include <array>
#include <cmath>
#include <numbers>

namespace sssdr {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  constexpr bool operator==(const Vec2&) const = default;
};

inline constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr bool operator==(const Vec3&) const = default;
};

inline constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline constexpr Vec3 operator-(Vec3 a) { return {-a.x, -a.y, -a.z}; }
inline constexpr Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline constexpr Vec3& operator+=(Vec3& a, Vec3 b) {
  a.x += b.x;
  a.y += b.y;
  a.z += b.z;
  return a;
}
inline constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline constexpr Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(Vec3 a) { return (1.0 / norm(a)) * a; }

/// Row-major 3x3 rotation matrix.
struct Mat3 {
  std::array<Vec3, 3> rows{};

  static constexpr Mat3 identity() { return {{Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}}}; }
  static Mat3 from_columns(Vec3 c0, Vec3 c1, Vec3 c2) {
    return {{Vec3{c0.x, c1.x, c2.x}, Vec3{c0.y, c1.y, c2.y}, Vec3{c0.z, c1.z, c2.z}}};
  }

  constexpr Vec3 operator*(Vec3 v) const { return {dot(rows[0], v), dot(rows[1], v), dot(rows[2], v)}; }
  constexpr Vec3 column(int j) const { return {rows[0][j], rows[1][j], rows[2][j]}; }
  constexpr Mat3 transposed() const { return {{column(0), column(1), column(2)}}; }
  constexpr Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i) {
      r.rows[i] = {dot(rows[i], o.column(0)), dot(rows[i], o.column(1)), dot(rows[i], o.column(2))};
    }
    return r;
  }
};

// Right-handed elementary rotations.
inline Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {{Vec3{1, 0, 0}, Vec3{0, c, -s}, Vec3{0, s, c}}};
}
inline Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {{Vec3{c, 0, s}, Vec3{0, 1, 0}, Vec3{-s, 0, c}}};
}
inline Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {{Vec3{c, -s, 0}, Vec3{s, c, 0}, Vec3{0, 0, 1}}};
}

inline constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline constexpr double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

/// Ray/triangle intersection (Moller-Trumbore). Returns the ray parameter or a
/// negative value on a miss. Used by the exact ray-casting oracles.
inline double ray_triangle(Vec3 origin, Vec3 dir, Vec3 a, Vec3 b, Vec3 c) {
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 p = cross(dir, e2);
  const double det = dot(e1, p);
  if (std::abs(det) < 1e-14) return -1.0;
  const double inv = 1.0 / det;
  const Vec3 s = origin - a;
  const double u = dot(s, p) * inv;
  if (u < 0.0 || u > 1.0) return -1.0;
  const Vec3 q = cross(s, e1);
  const double v = dot(dir, q) * inv;
  if (v < 0.0 || u + v > 1.0) return -1.0;
  return dot(e2, q) * inv;
}

}  // namespace sssdr
