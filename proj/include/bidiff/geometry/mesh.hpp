#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "bidiff/core/error.hpp"
#include "bidiff/geometry/grid.hpp"
#include "bidiff/detail/mc_tables.hpp"

namespace bidiff {

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }

  double triangle_area(std::size_t t) const {
    const auto& f = triangles[t];
    return 0.5 * (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]).norm();
  }

  double area() const {
    double a = 0.0;
    for (std::size_t t = 0; t < triangles.size(); ++t) a += triangle_area(t);
    return a;
  }
};

/// Marching cubes at level `iso` with the standard 256-case table and linear
/// interpolation along lattice edges. A corner whose value equals iso counts
/// as inside. Vertices are shared between cells; zero-area triangles are
/// dropped. Triangles wind counter-clockwise when seen from outside
/// (normals point toward increasing field values).
inline TriMesh extract_mesh(const SdfGrid& grid, double iso = 0.0) {
  require(grid.channels() == 1, Errc::shape_mismatch, "extract_mesh needs a scalar grid");
  const int n = grid.resolution();
  // Corner offsets and edge endpoints in the table's vertex numbering.
  static constexpr int corner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                       {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  static constexpr int edge_ends[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                           {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

  TriMesh mesh;
  std::unordered_map<std::uint64_t, int> edge_vertex;
  auto vertex_on_edge = [&](int x, int y, int z, int e, const double* val) -> int {
    const int* a = corner[edge_ends[e][0]];
    const int* b = corner[edge_ends[e][1]];
    // Canonical lattice edge id: lower endpoint index and axis.
    const int ax = a[0] != b[0] ? 0 : (a[1] != b[1] ? 1 : 2);
    const int lx = x + std::min(a[0], b[0]), ly = y + std::min(a[1], b[1]), lz = z + std::min(a[2], b[2]);
    const std::uint64_t key = static_cast<std::uint64_t>(grid.index(lx, ly, lz)) * 3 + ax;
    const auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double va = val[edge_ends[e][0]], vb = val[edge_ends[e][1]];
    double t = (vb == va) ? 0.5 : (iso - va) / (vb - va);
    t = std::clamp(t, 0.0, 1.0);
    const Vec3 pa = grid.position(x + a[0], y + a[1], z + a[2]);
    const Vec3 pb = grid.position(x + b[0], y + b[1], z + b[2]);
    mesh.vertices.push_back(pa + t * (pb - pa));
    const int id = static_cast<int>(mesh.vertices.size()) - 1;
    edge_vertex.emplace(key, id);
    return id;
  };

  for (int z = 0; z + 1 < n; ++z) {
    for (int y = 0; y + 1 < n; ++y) {
      for (int x = 0; x + 1 < n; ++x) {
        double val[8];
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          val[c] = grid.at(x + corner[c][0], y + corner[c][1], z + corner[c][2]);
          if (val[c] <= iso) cube |= 1 << c;
        }
        if (detail::kMcEdgeTable[cube] == 0) continue;
        const auto& row = detail::kMcTriTable[cube];
        for (int k = 0; row[k] != -1; k += 3) {
          // The table winds clockwise seen from outside in this corner layout.
          const int i0 = vertex_on_edge(x, y, z, row[k], val);
          const int i1 = vertex_on_edge(x, y, z, row[k + 2], val);
          const int i2 = vertex_on_edge(x, y, z, row[k + 1], val);
          if (i0 == i1 || i1 == i2 || i0 == i2) continue;
          const Vec3& p0 = mesh.vertices[i0];
          const double area2 = (mesh.vertices[i1] - p0).cross(mesh.vertices[i2] - p0).squaredNorm();
          if (area2 <= 1e-24) continue;
          mesh.triangles.push_back({i0, i1, i2});
        }
      }
    }
  }
  return mesh;
}

inline void write_obj(const std::string& path, const TriMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io, "cannot write " + path);
  out.setf(std::ios::fixed);
  out.precision(6);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.triangles) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) throw Error(Errc::io, "write failed for " + path);
}

/// Reads v/f records; faces with more than three vertices are fanned.
inline TriMesh read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open " + path);
  TriMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      ls >> v.x() >> v.y() >> v.z();
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) idx.push_back(std::stoi(tok.substr(0, tok.find('/'))) - 1);
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  for (const auto& f : mesh.triangles) {
    for (int i : f) {
      require(i >= 0 && i < static_cast<int>(mesh.vertices.size()), Errc::parse, path + ": face index out of range");
    }
  }
  return mesh;
}

}  // namespace bidiff
