#include <unordered_map>

#include "gnf/mc_tables.hpp"
#include "gnf/sdf.hpp"

namespace gnf {

namespace {

constexpr int kCornerOffset[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                     {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};

}  // namespace

TriMesh marching_cubes(const ScalarField& field, int resolution, double iso) {
  if (resolution < 8) throw ContractError("marching_cubes: resolution must be >= 8");
  const std::size_t r = resolution;
  const double h = 1.0 / static_cast<double>(resolution - 1);

  // Lattice values, one z-slab per field call.
  std::vector<float> values(r * r * r);
  {
    std::vector<double> pts(r * r * 3), out(r * r);
    for (std::size_t z = 0; z < r; ++z) {
      for (std::size_t y = 0; y < r; ++y) {
        for (std::size_t x = 0; x < r; ++x) {
          double* p = pts.data() + (y * r + x) * 3;
          p[0] = x * h;
          p[1] = y * h;
          p[2] = z * h;
        }
      }
      field(pts, out);
      for (std::size_t i = 0; i < r * r; ++i) values[z * r * r + i] = static_cast<float>(out[i] - iso);
    }
  }
  auto at = [&](std::size_t x, std::size_t y, std::size_t z) { return values[(z * r + y) * r + x]; };

  TriMesh mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  auto vertex_on_edge = [&](std::size_t x, std::size_t y, std::size_t z, int axis) {
    const std::uint64_t key = (((static_cast<std::uint64_t>(z) * r + y) * r + x) << 2) | axis;
    const auto [it, inserted] = edge_vertex.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
    if (inserted) {
      const std::size_t x1 = x + (axis == 0), y1 = y + (axis == 1), z1 = z + (axis == 2);
      const double v0 = at(x, y, z), v1 = at(x1, y1, z1);
      const double t = v1 != v0 ? v0 / (v0 - v1) : 0.5;
      Vec3 p(x * h, y * h, z * h);
      p[axis] += t * h;
      mesh.vertices.push_back(p);
    }
    return it->second;
  };

  for (std::size_t z = 0; z + 1 < r; ++z) {
    for (std::size_t y = 0; y + 1 < r; ++y) {
      for (std::size_t x = 0; x + 1 < r; ++x) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          if (at(x + kCornerOffset[c][0], y + kCornerOffset[c][1], z + kCornerOffset[c][2]) < 0.0f) cube |= 1 << c;
        }
        const int edges = mc::kEdgeTable[cube];
        if (edges == 0) continue;
        std::array<std::uint32_t, 12> vid{};
        for (int e = 0; e < 12; ++e) {
          if (!(edges & (1 << e))) continue;
          const int* a = kCornerOffset[mc::kEdgeCorners[e][0]];
          const int* b = kCornerOffset[mc::kEdgeCorners[e][1]];
          int axis = 0;
          while (a[axis] == b[axis]) ++axis;
          vid[e] = vertex_on_edge(x + std::min(a[0], b[0]), y + std::min(a[1], b[1]), z + std::min(a[2], b[2]), axis);
        }
        for (int k = 0; mc::kTriTable[cube][k] != -1; k += 3) {
          const std::uint32_t i0 = vid[mc::kTriTable[cube][k]];
          const std::uint32_t i1 = vid[mc::kTriTable[cube][k + 1]];
          const std::uint32_t i2 = vid[mc::kTriTable[cube][k + 2]];
          if (i0 == i1 || i1 == i2 || i0 == i2) continue;
          // Table winding faces the low side; flip so normals point outward.
          mesh.faces.push_back({i0, i2, i1});
        }
      }
    }
  }
  return mesh;
}

}  // namespace gnf
