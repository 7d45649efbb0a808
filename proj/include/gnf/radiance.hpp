#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gnf/field_model.hpp"
#include "gnf/image.hpp"
#include "gnf/numerics.hpp"
#include "gnf/training.hpp"

namespace gnf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kShCoefficients = 16;
/// Density plus 16 SH coefficients per color channel.
inline constexpr int kRadianceOutputs = 1 + 3 * kShCoefficients;

/// Pinhole camera looking down its local -z axis. Columns of `orientation`
/// are the camera's right, up and backward axes in world space.
struct Camera {
  Vec3 position = Vec3::Zero();
  Mat3 orientation = Mat3::Identity();
  double focal = 1.0;
  int width = 1;
  int height = 1;

  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width,
                        int height);
  Vec3 forward() const { return -orientation.col(2); }
  void validate() const;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;
};

/// Ray through the center of pixel (x, y); y grows downward in the image.
Ray generate_ray(const Camera& camera, int x, int y);

/// Real spherical harmonics up to degree 3, l-major with m ascending.
/// Non-unit input is normalized first.
template <typename Real>
std::array<Real, kShCoefficients> sh_basis(Real x, Real y, Real z);

template <typename Real>
inline Real softplus(Real x) {
  using std::exp;
  using std::log1p;
  return x > Real(20) ? x : log1p(exp(x));
}

template <typename Real>
inline Real sigmoid(Real x) {
  using std::exp;
  return Real(1) / (Real(1) + exp(-x));
}

template <typename Real>
struct RadianceSample {
  Real sigma = 0;
  std::array<Real, 3> rgb{};
};

/// Activations applied to one row of raw decoder outputs.
template <typename Real>
RadianceSample<Real> activate_radiance(std::span<const Real> raw, std::span<const Real> sh, Real density_bias);

/// Counts points passed through the encoder and the decoder.
struct EvalCounter {
  std::atomic<std::uint64_t> encoded{0};
  std::atomic<std::uint64_t> decoded{0};
};

/// Scene-level constants a radiance model is rendered with.
struct RadianceSettings {
  std::array<double, 3> background{1.0, 1.0, 1.0};
  Vec3 bounds_center = Vec3::Constant(0.5);
  double bounds_radius = 0.5;
  double density_bias = 0.0;

  /// Depth interval covered by the bounding sphere as seen from `origin`.
  std::pair<double, double> near_far(const Vec3& origin) const;
};

/// Batched decode: one encoder pass and one decoder pass over all points.
/// points, dirs: B x 3; sigma: B; rgb: B x 3. `raw` (B x 49) is optional.
template <typename Real>
void decode_radiance_batch(const FieldModel<Real>& model, const RadianceSettings& settings,
                           std::span<const Real> points, std::span<const Real> dirs, std::span<Real> sigma,
                           std::span<Real> rgb, EvalCounter* counter = nullptr);

/// Single point convenience wrapper.
template <typename Real>
RadianceSample<Real> decode_radiance(const FieldModel<Real>& model, const RadianceSettings& settings,
                                     const std::array<Real, 3>& p, const std::array<Real, 3>& v);

template <typename Real>
struct CompositeResult {
  std::array<Real, 3> rgb{};
  Real opacity = 0;
  Real final_transmittance = 1;
};

/// Alpha compositing front to back. rgb: S x 3. `weights` (size S) receives
/// T_j alpha_j when non-empty.
template <typename Real>
CompositeResult<Real> composite(std::span<const Real> sigma, std::span<const Real> rgb,
                                std::span<const Real> delta, const std::array<Real, 3>& background,
                                std::span<Real> weights = {});

/// Gradients of the composited color w.r.t. per-sample sigma and rgb given
/// d(loss)/d(color).
template <typename Real>
void composite_backward(std::span<const Real> sigma, std::span<const Real> rgb, std::span<const Real> delta,
                        const std::array<Real, 3>& background, const std::array<Real, 3>& upstream,
                        std::span<Real> d_sigma, std::span<Real> d_rgb);

/// Stratified depths: one sample per equal stratum of [near, far], at the
/// stratum midpoint or jittered inside it. Every delta is the stratum width.
struct RaySegmentation {
  std::vector<double> t;
  double delta = 0.0;
};
RaySegmentation stratify(double near, double far, int samples, Rng* jitter = nullptr);

struct RenderOptions {
  int samples = 64;
  bool jitter = false;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  int levels = -1;
};

/// Renders every pixel of `camera`. Output does not depend on the worker count.
ImageBuffer render_view(const FieldModel<float>& model, const RadianceSettings& settings, const Camera& camera,
                        const RenderOptions& options = {}, RenderStats* stats = nullptr,
                        EvalCounter* counter = nullptr, std::vector<float>* weight_sums = nullptr);

struct SceneSphere {
  Vec3 center = Vec3::Constant(0.5);
  double radius = 0.1;
  std::array<double, 3> rgb{1.0, 0.0, 0.0};
  double sigma = 10.0;
};

struct SceneBox {
  Vec3 center = Vec3::Constant(0.5);
  Vec3 half_extent = Vec3::Constant(0.1);
  std::array<double, 3> rgb{0.0, 1.0, 0.0};
  double sigma = 10.0;
};

struct CameraRing {
  int count = 25;
  int test_every = 5;  // every test_every-th camera (offset test_every/2) is held out
  double distance = 1.6;
  double focal = 80.0;
  int width = 64;
  int height = 64;
};

/// Constant-density colored primitives over a uniform background.
struct ToyScene {
  std::vector<SceneSphere> spheres;
  std::vector<SceneBox> boxes;
  std::array<double, 3> background{1.0, 1.0, 1.0};
  Vec3 bounds_center = Vec3::Constant(0.5);
  double bounds_radius = 0.5;
  CameraRing cameras{};
  int reference_samples = 256;

  /// Two spheres of different color and size.
  static ToyScene two_spheres();
  RadianceSettings settings() const;
  /// Density and density-weighted color at p.
  RadianceSample<double> evaluate(const Vec3& p) const;
};

ToyScene load_scene(const std::filesystem::path& path);
void save_scene(const std::filesystem::path& path, const ToyScene& scene);

/// Cameras on a Fibonacci sphere around the bounds center, looking at it.
std::vector<Camera> camera_ring(const ToyScene& scene);
bool is_test_camera(const ToyScene& scene, int index);

struct PosedView {
  int index = 0;
  Camera camera;
  ImageBuffer image;
};

struct SceneViews {
  std::vector<PosedView> train;
  std::vector<PosedView> test;
};

/// Analytic field composited with scene.reference_samples midpoint samples.
ImageBuffer render_reference(const ToyScene& scene, const Camera& camera, int samples = -1,
                             unsigned workers = 1);
SceneViews toy_scene_oracle(const ToyScene& scene, unsigned workers = 1);
void save_poses(const std::filesystem::path& path, const SceneViews& views);

/// Configuration used for radiance fields: L = 32, one feature per level.
GridConfig radiance_grid_config();
/// Radiance model with anisotropic kernels and random initialization.
FieldModel<float> make_radiance_model(const GridConfig& grid, int kernels, std::uint64_t seed);

/// Fixed rays with fixed depths for one optimization step.
template <typename Real>
struct RayBatch {
  int samples = 0;
  std::vector<Real> origins;     // R x 3
  std::vector<Real> directions;  // R x 3
  std::vector<Real> targets;     // R x 3
  std::vector<Real> t;           // R x S
  std::vector<Real> delta;       // R

  std::size_t size() const { return delta.size(); }
};

/// Random rays from random training views with jittered depths.
template <typename Real>
RayBatch<Real> sample_rays(std::span<const PosedView> views, const RadianceSettings& settings, std::size_t rays,
                           int samples, Rng& rng);

/// Mean absolute color error over rays and channels, with gradients
/// accumulated into `grads`.
template <typename Real>
double radiance_loss_and_gradients(const FieldModel<Real>& model, const RadianceSettings& settings,
                                   const RayBatch<Real>& batch, GradBuffer<Real>& grads, unsigned workers = 1);

struct RadianceFitConfig {
  std::uint64_t steps = 3000;
  std::size_t rays_per_batch = 256;
  int samples = 64;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer{};
  unsigned workers = 1;
  std::uint64_t checkpoint_every = 0;
};

std::vector<LossRecord> fit_radiance(FieldModel<float>& model, const RadianceSettings& settings,
                                     std::span<const PosedView> views, const RadianceFitConfig& config,
                                     const CheckpointCallback& on_checkpoint = {});

}  // namespace gnf
