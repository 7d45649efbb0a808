#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "gnf/parallel.hpp"
#include "gnf/sdf.hpp"

namespace gnf {

SurfaceSamples sample_surface(const TriMesh& mesh, std::size_t count, Rng& rng) {
  if (mesh.empty()) throw ContractError("no surface extracted");
  std::vector<double> cumulative(mesh.faces.size());
  double acc = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    acc += mesh.face_area(f);
    cumulative[f] = acc;
  }
  if (!(acc > 0)) throw ContractError("no surface extracted");
  SurfaceSamples s;
  s.points.reserve(count);
  s.normals.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double r = rng.uniform() * acc;
    const std::size_t f = std::min<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin(), mesh.faces.size() - 1);
    const auto& t = mesh.faces[f];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    s.points.push_back((1 - r1) * mesh.vertices[t[0]] + r1 * (1 - r2) * mesh.vertices[t[1]] +
                       r1 * r2 * mesh.vertices[t[2]]);
    s.normals.push_back(mesh.face_normal(f));
  }
  return s;
}

PointKdTree::PointKdTree(std::span<const Vec3> points)
    : points_(points.begin(), points.end()), index_(points.size()), axis_(points.size()) {
  if (points.empty()) throw ContractError("PointKdTree: empty point set");
  std::iota(index_.begin(), index_.end(), std::size_t{0});
  build(0, points_.size(), 0);
}

void PointKdTree::build(std::size_t lo, std::size_t hi, int depth) {
  if (hi - lo <= 1) return;
  Vec3 mn = Vec3::Constant(std::numeric_limits<double>::infinity()), mx = -mn;
  for (std::size_t i = lo; i < hi; ++i) {
    mn = mn.cwiseMin(points_[index_[i]]);
    mx = mx.cwiseMax(points_[index_[i]]);
  }
  int axis = 0;
  (mx - mn).maxCoeff(&axis);
  const std::size_t mid = (lo + hi) / 2;
  std::nth_element(index_.begin() + lo, index_.begin() + mid, index_.begin() + hi,
                   [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
  axis_[mid] = static_cast<std::uint8_t>(axis);
  build(lo, mid, depth + 1);
  build(mid + 1, hi, depth + 1);
}

void PointKdTree::search(std::size_t lo, std::size_t hi, int depth, const Vec3& q, std::size_t& best,
                         double& best_d2) const {
  if (lo >= hi) return;
  const std::size_t mid = (lo + hi) / 2;
  const Vec3& p = points_[index_[mid]];
  const double d2 = (p - q).squaredNorm();
  if (d2 < best_d2) {
    best_d2 = d2;
    best = index_[mid];
  }
  if (hi - lo == 1) return;
  const int axis = axis_[mid];
  const double delta = q[axis] - p[axis];
  if (delta < 0) {
    search(lo, mid, depth + 1, q, best, best_d2);
    if (delta * delta < best_d2) search(mid + 1, hi, depth + 1, q, best, best_d2);
  } else {
    search(mid + 1, hi, depth + 1, q, best, best_d2);
    if (delta * delta < best_d2) search(lo, mid, depth + 1, q, best, best_d2);
  }
}

std::pair<std::size_t, double> PointKdTree::nearest(const Vec3& q) const {
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  search(0, points_.size(), 0, q, best, best_d2);
  return {best, std::sqrt(best_d2)};
}

double chamfer_l1(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw ContractError("no surface extracted");
  auto one_way = [](std::span<const Vec3> from, std::span<const Vec3> to) {
    const PointKdTree tree(to);
    double sum = 0.0;
    for (const auto& p : from) sum += tree.nearest(p).second;
    return sum / static_cast<double>(from.size());
  };
  return 0.5 * one_way(a, b) + 0.5 * one_way(b, a);
}

double chamfer_l1(const TriMesh& a, const TriMesh& b, std::size_t samples, Rng& rng) {
  if (a.empty() || b.empty()) throw ContractError("no surface extracted");
  auto one_way = [&](const TriMesh& from, const TriMesh& to) {
    const auto s = sample_surface(from, samples, rng);
    const MeshDistance target(to);
    double sum = 0.0;
    for (const auto& p : s.points) sum += target.closest(p).distance;
    return sum / static_cast<double>(s.points.size());
  };
  const double ab = one_way(a, b);
  return 0.5 * (ab + one_way(b, a));
}

NormalMetrics normal_metrics(const TriMesh& a, const TriMesh& b, std::size_t samples, Rng& rng) {
  if (a.empty() || b.empty()) throw ContractError("no surface extracted");
  auto one_way = [&](const TriMesh& from, const TriMesh& to) {
    const auto s = sample_surface(from, samples, rng);
    const MeshDistance target(to);
    double cos_sum = 0.0, angle_sum = 0.0;
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      const auto c = target.closest(s.points[i]);
      const double cosine = std::min(1.0, std::abs(s.normals[i].dot(target.mesh().face_normal(c.face))));
      cos_sum += cosine;
      angle_sum += std::acos(cosine) * 180.0 / std::numbers::pi;
    }
    const double n = static_cast<double>(s.points.size());
    return NormalMetrics{cos_sum / n, angle_sum / n};
  };
  const auto ab = one_way(a, b);
  const auto ba = one_way(b, a);
  return {0.5 * (ab.consistency + ba.consistency), 0.5 * (ab.angular_error + ba.angular_error)};
}

double volumetric_iou(const ScalarField& a, const ScalarField& b, int resolution) {
  if (resolution < 16) throw ContractError("volumetric_iou: resolution must be >= 16");
  const std::size_t r = resolution;
  std::vector<double> pts(r * r * 3), va(r * r), vb(r * r);
  std::uint64_t both = 0, either = 0;
  for (std::size_t z = 0; z < r; ++z) {
    for (std::size_t y = 0; y < r; ++y) {
      for (std::size_t x = 0; x < r; ++x) {
        double* p = pts.data() + (y * r + x) * 3;
        p[0] = (x + 0.5) / r;
        p[1] = (y + 0.5) / r;
        p[2] = (z + 0.5) / r;
      }
    }
    a(pts, va);
    b(pts, vb);
    for (std::size_t i = 0; i < r * r; ++i) {
      const bool ia = va[i] < 0, ib = vb[i] < 0;
      both += ia && ib;
      either += ia || ib;
    }
  }
  return either == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(either);
}

ScalarField field_of(const FieldModel<float>& model, int levels, unsigned workers) {
  return [&model, levels, workers](std::span<const double> pts, std::span<double> out) {
    const std::size_t n = out.size();
    parallel_chunks(n, workers, [&](unsigned, std::size_t b, std::size_t e) {
      constexpr std::size_t kBlock = 1024;
      std::vector<float> p, v;
      for (std::size_t s = b; s < e; s += kBlock) {
        const std::size_t len = std::min(kBlock, e - s);
        p.assign(pts.begin() + 3 * s, pts.begin() + 3 * (s + len));
        v.resize(len);
        model.forward(p, v, levels);
        for (std::size_t i = 0; i < len; ++i) out[s + i] = v[i];
      }
    });
  };
}

}  // namespace gnf
