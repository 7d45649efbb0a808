#include <algorithm>
#include <cmath>
#include <numbers>

#include "gnf/sdf.hpp"

namespace gnf {

namespace {

constexpr double kPi = std::numbers::pi;

Vec3 random_direction(Rng& rng) {
  for (;;) {
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

/// Any unit vector orthogonal to `axis`.
Vec3 orthogonal(const Vec3& axis) {
  const Vec3 helper = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return axis.cross(helper).normalized();
}

}  // namespace

double primitive_distance(const Primitive& prim, const Vec3& p) {
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SpherePrimitive>) {
          return (p - s.center).norm() - s.radius;
        } else if constexpr (std::is_same_v<T, TorusPrimitive>) {
          const Vec3 d = p - s.center;
          const double ring = std::hypot(d.x(), d.y()) - s.major;
          return std::hypot(ring, d.z()) - s.minor;
        } else if constexpr (std::is_same_v<T, BoxPrimitive>) {
          const Vec3 q = (p - s.center).cwiseAbs() - s.half_extent;
          const double outside = q.cwiseMax(0.0).norm();
          const double inside = std::min(q.maxCoeff(), 0.0);
          return outside + inside;
        } else {
          const Vec3 ab = s.b - s.a;
          const double len2 = ab.squaredNorm();
          const double t = len2 > 0 ? std::clamp((p - s.a).dot(ab) / len2, 0.0, 1.0) : 0.0;
          return (p - (s.a + t * ab)).norm() - s.radius;
        }
      },
      prim);
}

double primitive_area(const Primitive& prim) {
  return std::visit(
      [](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SpherePrimitive>) {
          return 4.0 * kPi * s.radius * s.radius;
        } else if constexpr (std::is_same_v<T, TorusPrimitive>) {
          return 4.0 * kPi * kPi * s.major * s.minor;
        } else if constexpr (std::is_same_v<T, BoxPrimitive>) {
          const Vec3& h = s.half_extent;
          return 8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z());
        } else {
          const double len = (s.b - s.a).norm();
          return 2.0 * kPi * s.radius * len + 4.0 * kPi * s.radius * s.radius;
        }
      },
      prim);
}

Vec3 primitive_sample_surface(const Primitive& prim, Rng& rng) {
  return std::visit(
      [&](const auto& s) -> Vec3 {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SpherePrimitive>) {
          return s.center + s.radius * random_direction(rng);
        } else if constexpr (std::is_same_v<T, TorusPrimitive>) {
          // Area element is proportional to (R + r cos v).
          double v;
          do {
            v = rng.uniform(0.0, 2.0 * kPi);
          } while (rng.uniform() * (s.major + s.minor) > s.major + s.minor * std::cos(v));
          const double u = rng.uniform(0.0, 2.0 * kPi);
          const double ring = s.major + s.minor * std::cos(v);
          return s.center + Vec3(ring * std::cos(u), ring * std::sin(u), s.minor * std::sin(v));
        } else if constexpr (std::is_same_v<T, BoxPrimitive>) {
          const Vec3& h = s.half_extent;
          const std::array<double, 3> face_area = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
          const double total = face_area[0] + face_area[1] + face_area[2];
          double pick = rng.uniform() * total;
          int axis = 0;
          while (axis < 2 && pick >= face_area[axis]) pick -= face_area[axis++];
          Vec3 local(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
          local[axis] = rng.uniform() < 0.5 ? -1.0 : 1.0;
          return s.center + local.cwiseProduct(h);
        } else {
          const Vec3 ab = s.b - s.a;
          const double len = ab.norm();
          const double side = 2.0 * kPi * s.radius * len;
          const double caps = 4.0 * kPi * s.radius * s.radius;
          if (len > 0 && rng.uniform() * (side + caps) < side) {
            const Vec3 axis = ab / len;
            const Vec3 e1 = orthogonal(axis);
            const Vec3 e2 = axis.cross(e1);
            const double angle = rng.uniform(0.0, 2.0 * kPi);
            return s.a + rng.uniform() * ab + s.radius * (std::cos(angle) * e1 + std::sin(angle) * e2);
          }
          const Vec3 d = random_direction(rng);
          return (d.dot(ab) >= 0 ? s.b : s.a) + s.radius * d;
        }
      },
      prim);
}

SdfOracle SdfOracle::primitive(Primitive prim) { return union_of({std::move(prim)}); }

SdfOracle SdfOracle::union_of(std::vector<Primitive> parts) {
  if (parts.empty()) throw ContractError("SdfOracle: union needs at least one primitive");
  SdfOracle o;
  o.parts_ = std::move(parts);
  double acc = 0.0;
  for (const auto& p : o.parts_) {
    acc += primitive_area(p);
    o.cumulative_area_.push_back(acc);
  }
  return o;
}

SdfOracle SdfOracle::mesh(TriMesh mesh) {
  if (mesh.empty()) throw ContractError("SdfOracle: empty mesh");
  SdfOracle o;
  o.mesh_ = std::make_shared<const MeshDistance>(std::move(mesh));
  double acc = 0.0;
  const auto& m = o.mesh_->mesh();
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    acc += m.face_area(f);
    o.cumulative_area_.push_back(acc);
  }
  return o;
}

double SdfOracle::distance(const Vec3& p) const {
  if (mesh_) return mesh_->signed_distance(p);
  if (parts_.empty()) throw ContractError("SdfOracle: unknown kind");
  double d = primitive_distance(parts_[0], p);
  for (std::size_t i = 1; i < parts_.size(); ++i) d = std::min(d, primitive_distance(parts_[i], p));
  return d;
}

double SdfOracle::signed_distance(const std::array<double, 3>& p) const {
  return distance(Vec3(p[0], p[1], p[2]));
}

std::array<double, 3> SdfOracle::sample_surface(Rng& rng) const {
  auto pick = [&]() {
    const double r = rng.uniform() * cumulative_area_.back();
    const auto it = std::upper_bound(cumulative_area_.begin(), cumulative_area_.end(), r);
    return static_cast<std::size_t>(
        std::min<std::ptrdiff_t>(it - cumulative_area_.begin(), cumulative_area_.size() - 1));
  };
  Vec3 p;
  if (mesh_) {
    const auto& m = mesh_->mesh();
    const auto& f = m.faces[pick()];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    p = (1 - r1) * m.vertices[f[0]] + r1 * (1 - r2) * m.vertices[f[1]] + r1 * r2 * m.vertices[f[2]];
  } else {
    // Points of one part buried inside another are not on the union's surface.
    for (int attempt = 0; attempt < 1000; ++attempt) {
      p = primitive_sample_surface(parts_[pick()], rng);
      if (parts_.size() == 1 || distance(p) > -1e-9) break;
    }
  }
  return {p.x(), p.y(), p.z()};
}

std::string SdfOracle::kind() const {
  if (mesh_) return "mesh";
  if (parts_.size() > 1) return "union";
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SpherePrimitive>) return "sphere";
        else if constexpr (std::is_same_v<T, TorusPrimitive>) return "torus";
        else if constexpr (std::is_same_v<T, BoxPrimitive>) return "box";
        else return "capsule";
      },
      parts_[0]);
}

double analytic_sdf(const SdfOracle& oracle, const Vec3& p) { return oracle.distance(p); }

ScalarField field_of(const SurfaceOracle& oracle) {
  return [&oracle](std::span<const double> pts, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = oracle.signed_distance({pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]});
    }
  };
}

ScalarField field_of(const MeshDistance& mesh) {
  return [&mesh](std::span<const double> pts, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = mesh.signed_distance(Vec3(pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]));
    }
  };
}

}  // namespace gnf
