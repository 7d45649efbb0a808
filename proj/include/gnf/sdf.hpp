#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gnf/field_model.hpp"
#include "gnf/numerics.hpp"
#include "gnf/training.hpp"

namespace gnf {

using Vec3 = Eigen::Vector3d;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;

  bool empty() const { return faces.empty(); }
  double face_area(std::size_t f) const;
  /// Unit normal from the counter-clockwise winding; zero for degenerate faces.
  Vec3 face_normal(std::size_t f) const;
  double area() const;
  /// Drops faces with out-of-range or repeated indices and zero area.
  /// Returns the number of faces removed.
  std::size_t remove_degenerate_faces();
};

/// Every undirected edge is shared by exactly two faces.
bool is_watertight(const TriMesh& mesh);

/// OBJ (ASCII v/f records, polygons fan-triangulated) or binary little-endian
/// PLY, chosen by extension. The result is cleaned of degenerate faces.
TriMesh load_mesh(const std::filesystem::path& path);
void save_mesh(const std::filesystem::path& path, const TriMesh& mesh);

/// Batched scalar field: points is n x 3, values is n.
using ScalarField = std::function<void(std::span<const double> points, std::span<double> values)>;

/// Marching cubes on an R^3 lattice covering [0,1]^3 (spacing 1/(R-1)).
/// Vertices are shared through lattice-edge ids, triangles are emitted
/// slab-major and wound so normals point toward increasing field values.
TriMesh marching_cubes(const ScalarField& field, int resolution, double iso = 0.0);

// --- analytic oracles -------------------------------------------------------

struct SpherePrimitive {
  Vec3 center{0.5, 0.5, 0.5};
  double radius = 0.3;
};
/// Ring in the plane z = center.z.
struct TorusPrimitive {
  Vec3 center{0.5, 0.5, 0.5};
  double major = 0.3;
  double minor = 0.1;
};
struct BoxPrimitive {
  Vec3 center{0.5, 0.5, 0.5};
  Vec3 half_extent{0.2, 0.2, 0.2};
};
struct CapsulePrimitive {
  Vec3 a{0.5, 0.3, 0.5};
  Vec3 b{0.5, 0.7, 0.5};
  double radius = 0.1;
};

using Primitive = std::variant<SpherePrimitive, TorusPrimitive, BoxPrimitive, CapsulePrimitive>;

double primitive_distance(const Primitive& prim, const Vec3& p);
double primitive_area(const Primitive& prim);
Vec3 primitive_sample_surface(const Primitive& prim, Rng& rng);

class MeshDistance;

/// Ground-truth signed distance: one primitive, a union of primitives, or a
/// closed triangle mesh.
class SdfOracle : public SurfaceOracle {
 public:
  static SdfOracle primitive(Primitive prim);
  static SdfOracle union_of(std::vector<Primitive> parts);
  static SdfOracle mesh(TriMesh mesh);

  double signed_distance(const std::array<double, 3>& p) const override;
  std::array<double, 3> sample_surface(Rng& rng) const override;
  double distance(const Vec3& p) const;

  std::string kind() const;
  const std::vector<Primitive>& parts() const { return parts_; }

 private:
  std::vector<Primitive> parts_;
  std::vector<double> cumulative_area_;
  std::shared_ptr<const MeshDistance> mesh_;
};

double analytic_sdf(const SdfOracle& oracle, const Vec3& p);

// --- mesh distance ----------------------------------------------------------

enum class ClosestFeature : std::uint8_t { face, edge, vertex };

struct ClosestPoint {
  double distance = 0.0;
  Vec3 point = Vec3::Zero();
  std::uint32_t face = 0;
  ClosestFeature feature = ClosestFeature::face;
  std::uint32_t feature_index = 0;  // local edge (0: v0v1, 1: v1v2, 2: v2v0) or vertex (0-2)
};

/// Closest point on triangle (a, b, c) to p, with the feature it lies on.
ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Nearest-triangle queries through a bounding-volume hierarchy (median split
/// on the longest axis, up to 8 triangles per leaf), and sign from
/// angle-weighted pseudonormals.
class MeshDistance {
 public:
  explicit MeshDistance(TriMesh mesh);

  const TriMesh& mesh() const { return mesh_; }
  ClosestPoint closest(const Vec3& p) const;
  /// Negative inside. Closest features on non-manifold edges (or vertices
  /// touching them) fall back to a three-ray parity vote.
  double signed_distance(const Vec3& p) const;
  /// +1 outside, -1 inside by majority of three ray-parity tests.
  int parity_sign(const Vec3& p) const;
  std::uint64_t parity_fallbacks() const { return fallbacks_.load(); }

 private:
  struct Node {
    Vec3 lo, hi;
    std::uint32_t left = 0, right = 0;  // children when count == 0
    std::uint32_t first = 0, count = 0;
  };
  std::uint32_t build(std::uint32_t first, std::uint32_t count);
  int ray_crossings(const Vec3& origin, const Vec3& dir) const;

  TriMesh mesh_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::vector<Vec3> face_normal_;
  std::vector<std::array<Vec3, 3>> edge_normal_;
  std::vector<std::array<bool, 3>> edge_manifold_;
  std::vector<Vec3> vertex_normal_;
  std::vector<bool> vertex_manifold_;
  mutable std::atomic<std::uint64_t> fallbacks_{0};
};

double mesh_sdf(const MeshDistance& mesh, const Vec3& p);

// --- metrics ----------------------------------------------------------------

struct SurfaceSamples {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
};

/// Area-uniform samples with the normal of the face each sample lies on.
SurfaceSamples sample_surface(const TriMesh& mesh, std::size_t count, Rng& rng);

/// Static 3-d tree for nearest-neighbour queries.
class PointKdTree {
 public:
  explicit PointKdTree(std::span<const Vec3> points);
  /// Index and distance of the nearest stored point.
  std::pair<std::size_t, double> nearest(const Vec3& q) const;

 private:
  void build(std::size_t lo, std::size_t hi, int depth);
  void search(std::size_t lo, std::size_t hi, int depth, const Vec3& q, std::size_t& best,
              double& best_d2) const;
  std::vector<Vec3> points_;
  std::vector<std::size_t> index_;
  std::vector<std::uint8_t> axis_;
};

/// 0.5 * mean_a min_b |a - b| + 0.5 * mean_b min_a |a - b|.
double chamfer_l1(std::span<const Vec3> a, std::span<const Vec3> b);
/// Area-uniform samples on each mesh, measured to the exact nearest point of
/// the other mesh and averaged over both directions.
double chamfer_l1(const TriMesh& a, const TriMesh& b, std::size_t samples, Rng& rng);

struct NormalMetrics {
  double consistency = 0.0;   // NC, mean |cos|
  double angular_error = 0.0; // NAE, mean arccos|cos| in degrees
};

/// Samples each mesh, takes the normal at the nearest point of the other, and
/// averages both directions.
NormalMetrics normal_metrics(const TriMesh& a, const TriMesh& b, std::size_t samples, Rng& rng);

/// Occupancy (value < 0) IoU over the cell centers of an R^3 lattice; 1 when
/// both are empty.
double volumetric_iou(const ScalarField& a, const ScalarField& b, int resolution);

// --- adapters ---------------------------------------------------------------
// The returned fields refer to their argument, which must outlive them.

ScalarField field_of(const SurfaceOracle& oracle);
ScalarField field_of(const MeshDistance& mesh);
/// Learned SDF, optionally decoded from the first `levels` levels.
ScalarField field_of(const FieldModel<float>& model, int levels = -1, unsigned workers = 1);
ScalarField field_of(const SdfOracle&&) = delete;
ScalarField field_of(const MeshDistance&&) = delete;
ScalarField field_of(const FieldModel<float>&&, int = -1, unsigned = 1) = delete;

}  // namespace gnf
