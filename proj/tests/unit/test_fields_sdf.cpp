#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "gnf/sdf.hpp"

using namespace gnf;

namespace {

TriMesh unit_cube() {
  TriMesh m;
  for (int i = 0; i < 8; ++i) m.vertices.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
  // outward, counter-clockwise seen from outside
  m.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
             {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

TriMesh square(double z, bool vertical = false) {
  TriMesh m;
  if (vertical) {
    m.vertices = {Vec3(0, 0.5, 0), Vec3(1, 0.5, 0), Vec3(1, 0.5, 1), Vec3(0, 0.5, 1)};
  } else {
    m.vertices = {Vec3(0, 0, z), Vec3(1, 0, z), Vec3(1, 1, z), Vec3(0, 1, z)};
  }
  m.faces = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

ScalarField sphere_field(Vec3 c, double r) {
  return [c, r](std::span<const double> pts, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (Vec3(pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]) - c).norm() - r;
  };
}

TriMesh transformed(const TriMesh& m, const Eigen::Matrix3d& rot, const Vec3& t) {
  TriMesh o = m;
  for (auto& v : o.vertices) v = rot * v + t;
  return o;
}

}  // namespace

TEST_SUITE("fields_sdf") {
  TEST_CASE("analytic primitives") {
    const auto sphere = SdfOracle::primitive(SpherePrimitive{});
    CHECK(analytic_sdf(sphere, Vec3(0.5, 0.5, 0.5)) == doctest::Approx(-0.3).epsilon(1e-12));
    CHECK(analytic_sdf(sphere, Vec3(1.0, 0.5, 0.5)) == doctest::Approx(0.2).epsilon(1e-12));

    const auto box = SdfOracle::primitive(BoxPrimitive{});
    CHECK(analytic_sdf(box, Vec3(0.5, 0.5, 0.5)) == doctest::Approx(-0.2));
    CHECK(analytic_sdf(box, Vec3(0.9, 0.5, 0.5)) == doctest::Approx(0.2));
    CHECK(analytic_sdf(box, Vec3(0.8, 0.8, 0.5)) == doctest::Approx(std::sqrt(0.02)));

    const auto capsule = SdfOracle::primitive(CapsulePrimitive{});
    CHECK(analytic_sdf(capsule, Vec3(0.5, 0.5, 0.5)) == doctest::Approx(-0.1));
    CHECK(analytic_sdf(capsule, Vec3(0.5, 0.9, 0.5)) == doctest::Approx(0.1));

    const auto u = SdfOracle::union_of({SpherePrimitive{Vec3(0.3, 0.5, 0.5), 0.1}, SpherePrimitive{Vec3(0.7, 0.5, 0.5), 0.1}});
    CHECK(analytic_sdf(u, Vec3(0.5, 0.5, 0.5)) == doctest::Approx(0.1));
    CHECK(analytic_sdf(u, Vec3(0.7, 0.5, 0.5)) == doctest::Approx(-0.1));
  }

  TEST_CASE("torus distance matches a brute-force surface search") {
    const TorusPrimitive torus{};
    const auto oracle = SdfOracle::primitive(torus);
    CHECK(analytic_sdf(oracle, torus.center) == doctest::Approx(0.2).epsilon(1e-12));

    Rng rng(1);
    std::vector<Vec3> surface(1000000);
    for (auto& p : surface) p = primitive_sample_surface(torus, rng);
    for (const auto& p : surface) REQUIRE(std::abs(primitive_distance(torus, p)) < 1e-9);
    const PointKdTree tree(surface);
    for (int i = 0; i < 30; ++i) {
      const Vec3 q(rng.uniform(), rng.uniform(), rng.uniform());
      const double brute = tree.nearest(q).second;
      CHECK(std::abs(std::abs(analytic_sdf(oracle, q)) - brute) <= 1e-4);
    }
  }

  TEST_CASE("surface samples are area uniform over a union") {
    const auto u = SdfOracle::union_of({SpherePrimitive{Vec3(0.3, 0.5, 0.5), 0.1}, SpherePrimitive{Vec3(0.7, 0.5, 0.5), 0.2}});
    Rng rng(2);
    int left = 0;
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
      const auto p = u.sample_surface(rng);
      if (p[0] < 0.45) ++left;
    }
    // areas 1 : 4
    CHECK(static_cast<double>(left) / n == doctest::Approx(0.2).epsilon(0.05));
  }

  TEST_CASE("marching cubes") {
    SUBCASE("constant field gives an empty mesh") {
      const ScalarField one = [](std::span<const double>, std::span<double> out) {
        std::fill(out.begin(), out.end(), 1.0);
      };
      CHECK(marching_cubes(one, 16).empty());
      CHECK_THROWS_AS(marching_cubes(one, 7), ContractError);
    }

    SUBCASE("sphere area, closure and orientation") {
      const auto mesh = marching_cubes(sphere_field(Vec3(0.5, 0.5, 0.5), 0.3), 128);
      CHECK(mesh.area() == doctest::Approx(4 * std::numbers::pi * 0.09).epsilon(0.02));
      CHECK(is_watertight(mesh));
      int outward = 0;
      for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const Vec3 c = (mesh.vertices[mesh.faces[f][0]] + mesh.vertices[mesh.faces[f][1]] +
                        mesh.vertices[mesh.faces[f][2]]) / 3.0;
        if (mesh.face_normal(f).dot(c - Vec3(0.5, 0.5, 0.5)) > 0) ++outward;
      }
      CHECK(outward == static_cast<int>(mesh.faces.size()));
    }

    SUBCASE("negating the field flips orientation and keeps the vertices") {
      const auto f = sphere_field(Vec3(0.45, 0.52, 0.5), 0.27);
      const ScalarField neg = [f](std::span<const double> p, std::span<double> out) {
        f(p, out);
        for (auto& v : out) v = -v;
      };
      const auto a = marching_cubes(f, 40), b = marching_cubes(neg, 40);
      REQUIRE(a.vertices.size() == b.vertices.size());
      REQUIRE(a.faces.size() == b.faces.size());
      for (std::size_t i = 0; i < a.vertices.size(); ++i) CHECK((a.vertices[i] - b.vertices[i]).norm() <= 1e-6);
      for (std::size_t i = 0; i < a.faces.size(); ++i) {
        CHECK(a.face_normal(i).dot(b.face_normal(i)) == doctest::Approx(-1.0).epsilon(1e-9));
      }
    }
  }

  TEST_CASE("chamfer distance") {
    Rng rng(3);
    const auto s = marching_cubes(sphere_field(Vec3(0.5, 0.5, 0.5), 0.3), 48);
    const auto samples = sample_surface(s, 5000, rng);
    CHECK(chamfer_l1(samples.points, samples.points) == 0.0);

    std::vector<Vec3> a(20000), b(20000);
    for (auto& p : a) p = Vec3(rng.uniform(), rng.uniform(), 0.0);
    for (auto& p : b) p = Vec3(rng.uniform(), rng.uniform(), 0.1);
    CHECK(chamfer_l1(a, b) == doctest::Approx(0.1).epsilon(0.05));
    CHECK(chamfer_l1(a, b) == chamfer_l1(b, a));

    Rng r1(4), r2(4);
    CHECK(chamfer_l1(square(0.0), square(0.1), 20000, r1) == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(chamfer_l1(s, s, 5000, r1) < 1e-12);
    const double ab = chamfer_l1(square(0.0), s, 20000, r1);
    const double ba = chamfer_l1(s, square(0.0), 20000, r2);
    CHECK(ab == doctest::Approx(ba).epsilon(0.02));

    std::vector<Vec3> none;
    CHECK_THROWS_WITH(chamfer_l1(none, a), doctest::Contains("no surface extracted"));
    Rng r3(5);
    CHECK_THROWS_WITH(chamfer_l1(TriMesh{}, s, 10, r3), doctest::Contains("no surface extracted"));
  }

  TEST_CASE("normal metrics") {
    Rng rng(6);
    const auto s = marching_cubes(sphere_field(Vec3(0.5, 0.5, 0.5), 0.3), 48);
    const auto same = normal_metrics(s, s, 20000, rng);
    CHECK(same.consistency == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(same.angular_error < 1e-4);

    const auto perp = normal_metrics(square(0.5), square(0.0, true), 20000, rng);
    CHECK(perp.consistency < 1e-6);
    CHECK(perp.angular_error == doctest::Approx(90.0).epsilon(1e-6));

    const auto fine = marching_cubes(sphere_field(Vec3(0.5, 0.5, 0.5), 0.3), 96);
    CHECK(normal_metrics(s, fine, 20000, rng).consistency >= 0.99);
  }

  TEST_CASE("volumetric iou") {
    const auto a = sphere_field(Vec3(0.5, 0.5, 0.5), 0.3);
    CHECK(volumetric_iou(a, a, 32) == 1.0);
    CHECK(volumetric_iou(sphere_field(Vec3(0.25, 0.5, 0.5), 0.2), sphere_field(Vec3(0.75, 0.5, 0.5), 0.2), 32) == 0.0);
    const ScalarField empty = [](std::span<const double>, std::span<double> out) {
      std::fill(out.begin(), out.end(), 1.0);
    };
    CHECK(volumetric_iou(empty, empty, 16) == 1.0);
    const double ratio = volumetric_iou(sphere_field(Vec3(0.5, 0.5, 0.5), 0.2), a, 256);
    CHECK(ratio == doctest::Approx(8.0 / 27.0).epsilon(0.01));
  }

  TEST_CASE("metrics are invariant under a rigid motion of both inputs") {
    const auto a = marching_cubes(sphere_field(Vec3(0.45, 0.5, 0.52), 0.25), 32);
    const auto b = marching_cubes(sphere_field(Vec3(0.55, 0.48, 0.5), 0.22), 32);
    Rng rr(7);
    const Eigen::Matrix3d rot =
        Eigen::Quaterniond(rr.normal(), rr.normal(), rr.normal(), rr.normal()).normalized().toRotationMatrix();
    const Vec3 t(0.3, -1.2, 2.0);
    const auto ta = transformed(a, rot, t), tb = transformed(b, rot, t);
    Rng r1(8), r2(8);
    CHECK(chamfer_l1(a, b, 5000, r1) == doctest::Approx(chamfer_l1(ta, tb, 5000, r2)).epsilon(1e-9));
    const auto n1 = normal_metrics(a, b, 5000, r1), n2 = normal_metrics(ta, tb, 5000, r2);
    CHECK(n1.consistency == doctest::Approx(n2.consistency).epsilon(1e-3));
    CHECK(n1.angular_error == doctest::Approx(n2.angular_error).epsilon(1e-3));

    // a quarter turn about the vertical axis through the cube center maps the lattice onto itself
    auto turned = [](ScalarField f) -> ScalarField {
      return [f](std::span<const double> p, std::span<double> out) {
        std::vector<double> q(p.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
          q[3 * i] = 1.0 - p[3 * i + 1];
          q[3 * i + 1] = p[3 * i];
          q[3 * i + 2] = p[3 * i + 2];
        }
        f(q, out);
      };
    };
    const auto fa = sphere_field(Vec3(0.4, 0.5, 0.5), 0.25), fb = sphere_field(Vec3(0.55, 0.45, 0.5), 0.2);
    CHECK(volumetric_iou(fa, fb, 64) == volumetric_iou(turned(fa), turned(fb), 64));
  }

  TEST_CASE("mesh signed distance") {
    const MeshDistance cube(unit_cube());
    CHECK(cube.signed_distance(Vec3(0.5, 0.5, 0.5)) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(cube.signed_distance(Vec3(1, 1, 0)) == 0.0);
    CHECK(cube.signed_distance(Vec3(1.5, 0.5, 0.5)) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(cube.signed_distance(Vec3(1.3, 1.4, 0.5)) == doctest::Approx(0.5).epsilon(1e-12));

    const auto sphere = marching_cubes(sphere_field(Vec3(0.5, 0.5, 0.5), 0.3), 10);
    INFO("faces " << sphere.faces.size());
    CHECK(sphere.faces.size() >= 200);
    const MeshDistance md(sphere);
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
      const Vec3 p(rng.uniform(), rng.uniform(), rng.uniform());
      double brute = INFINITY;
      for (const auto& f : sphere.faces) {
        const auto cp = closest_point_on_triangle(p, sphere.vertices[f[0]], sphere.vertices[f[1]], sphere.vertices[f[2]]);
        brute = std::min(brute, cp.distance);
      }
      const double d = md.signed_distance(p);
      CHECK(std::abs(std::abs(d) - brute) <= 1e-6);
      const double r = (p - Vec3(0.5, 0.5, 0.5)).norm();
      if (r < 0.2) CHECK(d < 0);
      if (r > 0.35) CHECK(d > 0);
    }
    for (const auto& v : sphere.vertices) CHECK(std::abs(md.signed_distance(v)) <= 1e-12);
    CHECK(md.parity_fallbacks() == 0);
  }

  TEST_CASE("mesh oracle on a closed mesh") {
    const auto oracle = SdfOracle::mesh(unit_cube());
    CHECK(oracle.signed_distance({0.5, 0.5, 0.5}) == doctest::Approx(-0.5));
    Rng rng(10);
    for (int i = 0; i < 100; ++i) {
      const auto p = oracle.sample_surface(rng);
      CHECK(std::abs(oracle.signed_distance(p)) < 1e-9);
    }
  }

  TEST_CASE("mesh files round trip") {
    const auto mesh = marching_cubes(sphere_field(Vec3(0.5, 0.5, 0.5), 0.3), 16);
    const auto dir = std::filesystem::temp_directory_path();
    for (const char* name : {"gnf_rt.obj", "gnf_rt.ply"}) {
      const auto path = dir / name;
      save_mesh(path, mesh);
      const auto back = load_mesh(path);
      REQUIRE(back.vertices.size() == mesh.vertices.size());
      REQUIRE(back.faces == mesh.faces);
      for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        CHECK((back.vertices[i] - mesh.vertices[i]).norm() <= 1e-6);
      }
      std::filesystem::remove(path);
    }
    TriMesh bad;
    bad.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(0, 1, 0)};
    bad.faces = {{0, 1, 2}, {0, 1, 3}, {0, 0, 3}, {0, 1, 9}};
    CHECK(bad.remove_degenerate_faces() == 3);
    CHECK(bad.faces.size() == 1);
    CHECK_THROWS(load_mesh(dir / "gnf_missing_mesh.obj"));
  }
}
