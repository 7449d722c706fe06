#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "sssdr/error.hpp"
#include "sssdr/renderer.hpp"
#include "sssdr/scene.hpp"

namespace sssdr {

struct LossSpec {
  double lambda_nc = 1e-2;
  // Images are multiplied by this before the squared error; reconstruct sets
  // it to 1 / max(reference) so the image term is unit-normalised.
  double image_scale = 1.0;

  void validate() const {
    if (!(lambda_nc >= 0.0)) throw ConfigError("normal consistency weight must be non-negative");
    if (!(image_scale > 0.0) || !std::isfinite(image_scale)) throw ConfigError("image scale must be positive");
  }
};

/// Pairs of faces sharing an interior edge, in edge-key order.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> interior_edges(const TriangleMesh& mesh) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::uint32_t>> owners;
  for (std::uint32_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    for (int e = 0; e < 3; ++e) {
      const auto a = t[e], b = t[(e + 1) % 3];
      owners[{std::min(a, b), std::max(a, b)}].push_back(f);
    }
  }
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  for (const auto& [edge, faces] : owners) {
    if (faces.size() == 2) out.emplace_back(faces[0], faces[1]);
  }
  return out;
}

/// Mean over interior edges of 1 - cos(angle between adjacent face normals).
inline double normal_consistency(const TriangleMesh& mesh,
                                 std::span<const std::pair<std::uint32_t, std::uint32_t>> edges) {
  if (edges.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& [f, g] : edges) acc += 1.0 - dot(normalized(mesh.face_normal(f)), normalized(mesh.face_normal(g)));
  return acc / static_cast<double>(edges.size());
}

inline double normal_consistency(const TriangleMesh& mesh) { return normal_consistency(mesh, interior_edges(mesh)); }

namespace detail {

// For a scalar f = g . n with n = (b - a) x (c - a), adds df/dvertex to out.
inline void scatter_normal_gradient(const TriangleMesh& mesh, std::uint32_t face, Vec3 g, std::span<Vec3> out) {
  const auto& t = mesh.faces[face];
  const Vec3 e1 = mesh.vertices[t[1]] - mesh.vertices[t[0]];
  const Vec3 e2 = mesh.vertices[t[2]] - mesh.vertices[t[0]];
  const Vec3 gb = cross(e2, g);
  const Vec3 gc = cross(g, e1);
  out[t[0]] += -(gb + gc);
  out[t[1]] += gb;
  out[t[2]] += gc;
}

}  // namespace detail

/// Gradient of normal_consistency with respect to every vertex position.
inline std::vector<Vec3> normal_consistency_gradient(const TriangleMesh& mesh,
                                                     std::span<const std::pair<std::uint32_t, std::uint32_t>> edges) {
  std::vector<Vec3> grad(mesh.vertices.size());
  if (edges.empty()) return grad;
  const double inv = 1.0 / static_cast<double>(edges.size());
  for (const auto& [f, g] : edges) {
    const Vec3 nf = mesh.face_normal(f), ng = mesh.face_normal(g);
    const double lf = norm(nf), lg = norm(ng);
    const Vec3 uf = (1.0 / lf) * nf, ug = (1.0 / lg) * ng;
    const double c = dot(uf, ug);
    // d(-uf.ug)/dnf = -(ug - c uf) / |nf|
    detail::scatter_normal_gradient(mesh, f, (-inv / lf) * (ug - c * uf), grad);
    detail::scatter_normal_gradient(mesh, g, (-inv / lg) * (uf - c * ug), grad);
  }
  return grad;
}

inline double image_mse(const Waterfall& rendered, const Waterfall& reference, double scale = 1.0) {
  if (rendered.rows != reference.rows || rendered.bins != reference.bins)
    throw ConfigError("rendered and reference waterfalls differ in shape");
  if (rendered.data.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < rendered.data.size(); ++k) {
    const double d = scale * (rendered.data[k] - reference.data[k]);
    acc += d * d;
  }
  return acc / static_cast<double>(rendered.data.size());
}

/// Image MSE plus weighted normal-consistency regulariser.
inline double total_loss(const Waterfall& rendered, const Waterfall& reference, const TriangleMesh& mesh,
                         const LossSpec& spec) {
  spec.validate();
  const double img = image_mse(rendered, reference, spec.image_scale);
  return spec.lambda_nc > 0.0 ? img + spec.lambda_nc * normal_consistency(mesh) : img;
}

}  // namespace sssdr
