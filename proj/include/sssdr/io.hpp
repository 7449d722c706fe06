#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "sssdr/error.hpp"
#include "sssdr/renderer.hpp"
#include "sssdr/scene.hpp"
#include "sssdr/sonar_model.hpp"

namespace sssdr {

static_assert(std::endian::native == std::endian::little, "binary grid I/O assumes a little-endian host");

namespace detail {

inline std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  return out;
}

inline std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return in;
}

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError(path + ": truncated file");
  return v;
}

// Round-trip formatting for text outputs.
inline std::ostream& exact(std::ostream& os) { return os << std::setprecision(std::numeric_limits<double>::max_digits10); }

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& path, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError(path + ": expected a number, got '" + s + "'", line);
  }
  if (used != s.size() && s.find_first_not_of(" \t\r", used) != std::string::npos)
    throw ParseError(path + ": trailing characters in '" + s + "'", line);
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------- meshes

/// OBJ subset: `v x y z` and `f i j k` with 1-based indices. Albedo is not
/// stored.
inline void write_obj(const TriangleMesh& mesh, const std::string& path) {
  auto out = detail::open_out(path);
  detail::exact(out);
  for (const auto& v : mesh.vertices) out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

/// Reads the OBJ subset. Comments, blank lines and `vn`/`vt`/`o`/`g`/`s`
/// records are skipped; face entries may carry `/`-suffixed attributes.
inline TriangleMesh read_obj(const std::string& path, double albedo = 1.0) {
  auto in = detail::open_in(path);
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x >> v.y >> v.z)) throw ParseError(path + ": malformed vertex", no);
      if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z))
        throw ParseError(path + ": non-finite vertex", no);
      vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<long long> idx;
      std::string tok;
      while (ls >> tok) {
        const auto slash = tok.find('/');
        const std::string head = tok.substr(0, slash);
        char* end = nullptr;
        const long long k = std::strtoll(head.c_str(), &end, 10);
        if (head.empty() || *end != '\0') throw ParseError(path + ": malformed face index '" + tok + "'", no);
        idx.push_back(k);
      }
      if (idx.size() != 3) throw ParseError(path + ": only triangular faces are supported", no);
      Face f{};
      for (int c = 0; c < 3; ++c) {
        const long long k = idx[c] < 0 ? static_cast<long long>(vertices.size()) + idx[c] + 1 : idx[c];
        if (k < 1 || k > static_cast<long long>(vertices.size()))
          throw ParseError(path + ": face index out of range", no);
        f[c] = static_cast<std::uint32_t>(k - 1);
      }
      faces.push_back(f);
    } else if (tag == "vn" || tag == "vt" || tag == "o" || tag == "g" || tag == "s" || tag == "usemtl" ||
               tag == "mtllib") {
      continue;
    } else {
      throw ParseError(path + ": unknown record '" + tag + "'", no);
    }
  }
  if (faces.empty()) throw ParseError(path + ": mesh has no faces");
  try {
    return make_triangle_mesh(std::move(vertices), std::move(faces), albedo);
  } catch (const ConfigError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// ----------------------------------------------------------- heightfields

inline constexpr std::array<char, 4> kHeightfieldMagic{'S', 'S', 'H', 'F'};
inline constexpr std::array<char, 4> kWaterfallMagic{'S', 'S', 'W', 'F'};

/// 24-byte header (magic, nx u32, ny u32, cell_size f32, origin x/y f32)
/// followed by nx*ny float32 z values, row-major in j.
inline void write_heightfield(const Heightfield& hf, const std::string& path) {
  auto out = detail::open_out(path, std::ios::binary);
  out.write(kHeightfieldMagic.data(), 4);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(hf.nx()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(hf.ny()));
  detail::put<float>(out, static_cast<float>(hf.cell_size()));
  detail::put<float>(out, static_cast<float>(hf.origin().x));
  detail::put<float>(out, static_cast<float>(hf.origin().y));
  for (double z : hf.values()) detail::put<float>(out, static_cast<float>(z));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline Heightfield read_heightfield(const std::string& path) {
  auto in = detail::open_in(path, std::ios::binary);
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kHeightfieldMagic) throw ParseError(path + ": not a heightfield file");
  GridSpec g;
  g.nx = detail::get<std::uint32_t>(in, path);
  g.ny = detail::get<std::uint32_t>(in, path);
  g.cell_size = detail::get<float>(in, path);
  g.origin.x = detail::get<float>(in, path);
  g.origin.y = detail::get<float>(in, path);
  if (g.nx < 2 || g.ny < 2 || g.nx > (1u << 16) || g.ny > (1u << 16))
    throw ParseError(path + ": implausible grid dimensions");
  std::vector<double> z(g.nx * g.ny);
  for (auto& v : z) v = detail::get<float>(in, path);
  try {
    return Heightfield(g, std::move(z));
  } catch (const ConfigError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

/// `x,y,z` per node in storage order.
inline void write_heightfield_csv(const Heightfield& hf, const std::string& path) {
  auto out = detail::open_out(path);
  detail::exact(out);
  out << "i,j,x,y,z\n";
  for (std::size_t j = 0; j < hf.ny(); ++j) {
    for (std::size_t i = 0; i < hf.nx(); ++i) {
      const Vec2 p = hf.node_xy(i, j);
      out << i << ',' << j << ',' << p.x << ',' << p.y << ',' << hf.z(i, j) << '\n';
    }
  }
}

// ------------------------------------------------------------- waterfalls

/// Waterfall grid in the heightfield header layout: magic, rows u32,
/// bins-per-side u32, then three float32 fields (bin width, two reserved
/// zeros), followed by rows*2*bins float32 values in display order.
inline void write_waterfall(const Waterfall& wf, const std::string& path, double bin_width = 0.0) {
  auto out = detail::open_out(path, std::ios::binary);
  out.write(kWaterfallMagic.data(), 4);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(wf.rows));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(wf.bins));
  detail::put<float>(out, static_cast<float>(bin_width));
  detail::put<float>(out, 0.0f);
  detail::put<float>(out, 0.0f);
  for (double v : wf.data) detail::put<float>(out, static_cast<float>(v));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline Waterfall read_waterfall(const std::string& path) {
  auto in = detail::open_in(path, std::ios::binary);
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kWaterfallMagic) throw ParseError(path + ": not a waterfall file");
  const auto rows = detail::get<std::uint32_t>(in, path);
  const auto bins = detail::get<std::uint32_t>(in, path);
  for (int k = 0; k < 3; ++k) detail::get<float>(in, path);
  if (bins < 1 || rows > (1u << 24) || bins > (1u << 20)) throw ParseError(path + ": implausible dimensions");
  Waterfall wf(rows, bins);
  for (auto& v : wf.data) {
    v = detail::get<float>(in, path);
    if (!std::isfinite(v)) throw ParseError(path + ": non-finite intensity");
  }
  return wf;
}

// ------------------------------------------------------------------ poses

inline void write_poses_csv(const std::vector<SonarPose>& poses, const std::string& path) {
  auto out = detail::open_out(path);
  detail::exact(out);
  out << "ping_id,x,y,z,heading_deg,pitch_deg,roll_deg,side\n";
  for (const auto& p : poses) {
    out << p.ping_id << ',' << p.position.x << ',' << p.position.y << ',' << p.position.z << ',' << rad2deg(p.heading)
        << ',' << rad2deg(p.pitch) << ',' << rad2deg(p.roll) << ',' << to_string(p.side) << '\n';
  }
}

/// Reads a pose CSV; every pose gets the supplied tilt. A row may omit the
/// side column, in which case it expands to a port and a starboard pose.
inline std::vector<SonarPose> read_poses_csv(const std::string& path, double tilt) {
  auto in = detail::open_in(path);
  std::vector<SonarPose> poses;
  std::string line;
  std::size_t no = 0;
  if (!std::getline(in, line)) throw ParseError(path + ": empty pose file", 1);
  ++no;
  if (line.rfind("ping_id", 0) != 0) throw ParseError(path + ": missing header", 1);
  while (std::getline(in, line)) {
    ++no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != 7 && cells.size() != 8) throw ParseError(path + ": expected 7 or 8 columns", no);
    SonarPose p;
    const double id = detail::parse_double(cells[0], path, no);
    if (id < 0 || id != std::floor(id) || id > 4294967295.0) throw ParseError(path + ": bad ping id", no);
    p.ping_id = static_cast<std::uint32_t>(id);
    p.position = {detail::parse_double(cells[1], path, no), detail::parse_double(cells[2], path, no),
                  detail::parse_double(cells[3], path, no)};
    p.heading = deg2rad(detail::parse_double(cells[4], path, no));
    p.pitch = deg2rad(detail::parse_double(cells[5], path, no));
    p.roll = deg2rad(detail::parse_double(cells[6], path, no));
    p.tilt = tilt;
    if (cells.size() == 8 && !cells[7].empty()) {
      try {
        p.side = side_from_string(cells[7]);
      } catch (const ConfigError& e) {
        throw ParseError(path + ": " + e.what(), no);
      }
      poses.push_back(p);
    } else {
      for (Side s : {Side::port, Side::starboard}) {
        p.side = s;
        poses.push_back(p);
      }
    }
  }
  if (poses.empty()) throw ParseError(path + ": no poses", no);
  return poses;
}

}  // namespace sssdr
