#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "gnf/sdf.hpp"

namespace gnf {

ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk over vertices, edges, then the face interior.
  ClosestPoint r;
  auto finish = [&](const Vec3& q, ClosestFeature f, std::uint32_t idx) {
    r.point = q;
    r.feature = f;
    r.feature_index = idx;
    r.distance = (p - q).norm();
    return r;
  };
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return finish(a, ClosestFeature::vertex, 0);
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return finish(b, ClosestFeature::vertex, 1);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return finish(a + v * ab, ClosestFeature::edge, 0);
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return finish(c, ClosestFeature::vertex, 2);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return finish(a + w * ac, ClosestFeature::edge, 2);
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return finish(b + w * (c - b), ClosestFeature::edge, 1);
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return finish(a + ab * v + ac * w, ClosestFeature::face, 0);
}

MeshDistance::MeshDistance(TriMesh mesh) : mesh_(std::move(mesh)) {
  mesh_.remove_degenerate_faces();
  const std::size_t nf = mesh_.faces.size();
  if (nf == 0) throw ContractError("MeshDistance: mesh has no faces");

  face_normal_.resize(nf);
  for (std::size_t f = 0; f < nf; ++f) face_normal_[f] = mesh_.face_normal(f);

  // Edge pseudonormals: sum of incident face normals; manifold iff 2 faces.
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::uint32_t>> edge_faces;
  for (std::uint32_t f = 0; f < nf; ++f) {
    for (int k = 0; k < 3; ++k) {
      auto a = mesh_.faces[f][k], b = mesh_.faces[f][(k + 1) % 3];
      edge_faces[{std::min(a, b), std::max(a, b)}].push_back(f);
    }
  }
  edge_normal_.resize(nf);
  edge_manifold_.resize(nf);
  vertex_manifold_.assign(mesh_.vertices.size(), true);
  for (std::uint32_t f = 0; f < nf; ++f) {
    for (int k = 0; k < 3; ++k) {
      auto a = mesh_.faces[f][k], b = mesh_.faces[f][(k + 1) % 3];
      const auto& inc = edge_faces[{std::min(a, b), std::max(a, b)}];
      Vec3 n = Vec3::Zero();
      for (auto g : inc) n += face_normal_[g];
      edge_normal_[f][k] = n;
      edge_manifold_[f][k] = inc.size() == 2;
      if (inc.size() != 2) vertex_manifold_[a] = vertex_manifold_[b] = false;
    }
  }

  // Angle-weighted vertex pseudonormals.
  vertex_normal_.assign(mesh_.vertices.size(), Vec3::Zero());
  for (std::uint32_t f = 0; f < nf; ++f) {
    const auto& t = mesh_.faces[f];
    for (int k = 0; k < 3; ++k) {
      const Vec3& v = mesh_.vertices[t[k]];
      const Vec3 e1 = (mesh_.vertices[t[(k + 1) % 3]] - v).normalized();
      const Vec3 e2 = (mesh_.vertices[t[(k + 2) % 3]] - v).normalized();
      const double angle = std::acos(std::clamp(e1.dot(e2), -1.0, 1.0));
      vertex_normal_[t[k]] += angle * face_normal_[f];
    }
  }

  order_.resize(nf);
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * nf / 4 + 1);
  build(0, static_cast<std::uint32_t>(nf));
}

std::uint32_t MeshDistance::build(std::uint32_t first, std::uint32_t count) {
  const std::uint32_t id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back({});
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  Vec3 clo = lo, chi = hi;
  for (std::uint32_t i = first; i < first + count; ++i) {
    const auto& t = mesh_.faces[order_[i]];
    Vec3 centroid = Vec3::Zero();
    for (int k = 0; k < 3; ++k) {
      lo = lo.cwiseMin(mesh_.vertices[t[k]]);
      hi = hi.cwiseMax(mesh_.vertices[t[k]]);
      centroid += mesh_.vertices[t[k]] / 3.0;
    }
    clo = clo.cwiseMin(centroid);
    chi = chi.cwiseMax(centroid);
  }
  nodes_[id].lo = lo;
  nodes_[id].hi = hi;
  if (count <= 8) {
    nodes_[id].first = first;
    nodes_[id].count = count;
    return id;
  }
  int axis = 0;
  (chi - clo).maxCoeff(&axis);
  const std::uint32_t mid = first + count / 2;
  auto centroid_axis = [&](std::uint32_t f) {
    const auto& t = mesh_.faces[f];
    return mesh_.vertices[t[0]][axis] + mesh_.vertices[t[1]][axis] + mesh_.vertices[t[2]][axis];
  };
  std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double ca = centroid_axis(a), cb = centroid_axis(b);
                     return ca < cb || (ca == cb && a < b);
                   });
  const std::uint32_t left = build(first, mid - first);
  const std::uint32_t right = build(mid, first + count - mid);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

ClosestPoint MeshDistance::closest(const Vec3& p) const {
  auto box_dist2 = [&](const Node& n) {
    const Vec3 d = (n.lo - p).cwiseMax(p - n.hi).cwiseMax(0.0);
    return d.squaredNorm();
  };
  ClosestPoint best;
  best.distance = std::numeric_limits<double>::infinity();
  double best2 = best.distance;
  std::vector<std::pair<double, std::uint32_t>> stack;
  stack.reserve(64);
  stack.emplace_back(box_dist2(nodes_[0]), 0u);
  while (!stack.empty()) {
    const auto [d2, id] = stack.back();
    stack.pop_back();
    if (d2 >= best2) continue;
    const Node& n = nodes_[id];
    if (n.count > 0) {
      for (std::uint32_t i = n.first; i < n.first + n.count; ++i) {
        const std::uint32_t f = order_[i];
        const auto& t = mesh_.faces[f];
        auto c = closest_point_on_triangle(p, mesh_.vertices[t[0]], mesh_.vertices[t[1]], mesh_.vertices[t[2]]);
        const double c2 = c.distance * c.distance;
        if (c2 < best2 || (c2 == best2 && f < best.face)) {
          best2 = c2;
          best = c;
          best.face = f;
        }
      }
      continue;
    }
    const double dl = box_dist2(nodes_[n.left]);
    const double dr = box_dist2(nodes_[n.right]);
    // Push the farther child first so the nearer one is visited next.
    if (dl < dr) {
      stack.emplace_back(dr, n.right);
      stack.emplace_back(dl, n.left);
    } else {
      stack.emplace_back(dl, n.left);
      stack.emplace_back(dr, n.right);
    }
  }
  return best;
}

int MeshDistance::ray_crossings(const Vec3& origin, const Vec3& dir) const {
  auto hits_box = [&](const Node& n) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      const double inv = 1.0 / dir[a];
      double ta = (n.lo[a] - origin[a]) * inv, tb = (n.hi[a] - origin[a]) * inv;
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return false;
    }
    return true;
  };
  int crossings = 0;
  std::vector<std::uint32_t> stack{0};
  while (!stack.empty()) {
    const Node& n = nodes_[stack.back()];
    stack.pop_back();
    if (!hits_box(n)) continue;
    if (n.count == 0) {
      stack.push_back(n.left);
      stack.push_back(n.right);
      continue;
    }
    for (std::uint32_t i = n.first; i < n.first + n.count; ++i) {
      // Moller-Trumbore
      const auto& t = mesh_.faces[order_[i]];
      const Vec3 e1 = mesh_.vertices[t[1]] - mesh_.vertices[t[0]];
      const Vec3 e2 = mesh_.vertices[t[2]] - mesh_.vertices[t[0]];
      const Vec3 pv = dir.cross(e2);
      const double det = e1.dot(pv);
      if (std::abs(det) < 1e-18) continue;
      const Vec3 tv = origin - mesh_.vertices[t[0]];
      const double u = tv.dot(pv) / det;
      if (u < 0 || u > 1) continue;
      const Vec3 qv = tv.cross(e1);
      const double v = dir.dot(qv) / det;
      if (v < 0 || u + v > 1) continue;
      if (e2.dot(qv) / det > 0) ++crossings;
    }
  }
  return crossings;
}

int MeshDistance::parity_sign(const Vec3& p) const {
  // Irrational-ish directions avoid grazing lattice-aligned edges.
  static const std::array<Vec3, 3> dirs = {Vec3(0.5773, 0.5774, 0.5775).normalized(),
                                           Vec3(-0.2672, 0.5345, -0.8018).normalized(),
                                           Vec3(0.8729, -0.2182, 0.4364).normalized()};
  int inside_votes = 0;
  for (const auto& d : dirs) inside_votes += ray_crossings(p, d) % 2;
  return inside_votes >= 2 ? -1 : 1;
}

double MeshDistance::signed_distance(const Vec3& p) const {
  const ClosestPoint c = closest(p);
  if (c.distance == 0.0) return 0.0;
  const auto& t = mesh_.faces[c.face];
  Vec3 normal;
  bool manifold = true;
  switch (c.feature) {
    case ClosestFeature::face:
      normal = face_normal_[c.face];
      break;
    case ClosestFeature::edge:
      normal = edge_normal_[c.face][c.feature_index];
      manifold = edge_manifold_[c.face][c.feature_index];
      break;
    case ClosestFeature::vertex:
      normal = vertex_normal_[t[c.feature_index]];
      manifold = vertex_manifold_[t[c.feature_index]];
      break;
  }
  if (!manifold) {
    fallbacks_.fetch_add(1, std::memory_order_relaxed);
    return parity_sign(p) * c.distance;
  }
  return (p - c.point).dot(normal) >= 0 ? c.distance : -c.distance;
}

double mesh_sdf(const MeshDistance& mesh, const Vec3& p) { return mesh.signed_distance(p); }

}  // namespace gnf
