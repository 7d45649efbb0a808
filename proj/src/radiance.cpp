#include "gnf/radiance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "gnf/parallel.hpp"

namespace gnf {

using nlohmann::json;

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width,
                       int height) {
  const Vec3 f = (target - eye).normalized();
  Vec3 u = up.normalized();
  if (std::abs(f.dot(u)) > 0.999) u = std::abs(f.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
  const Vec3 right = f.cross(u).normalized();
  const Vec3 true_up = right.cross(f);
  Camera c;
  c.position = eye;
  c.orientation.col(0) = right;
  c.orientation.col(1) = true_up;
  c.orientation.col(2) = -f;
  c.focal = focal;
  c.width = width;
  c.height = height;
  c.validate();
  return c;
}

void Camera::validate() const {
  if (width <= 0 || height <= 0) throw ContractError("camera: image size must be positive");
  if (!(focal > 0)) throw ContractError("camera: focal length must be positive");
  const double err = (orientation.transpose() * orientation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(err <= 1e-6) || orientation.determinant() < 0) throw ContractError("camera: orientation is not a rotation");
}

Ray generate_ray(const Camera& camera, int x, int y) {
  if (x < 0 || y < 0 || x >= camera.width || y >= camera.height) throw ContractError("generate_ray: pixel outside frame");
  const double u = (x + 0.5 - 0.5 * camera.width) / camera.focal;
  const double v = -(y + 0.5 - 0.5 * camera.height) / camera.focal;
  const Vec3 d = camera.orientation * Vec3(u, v, -1.0);
  return {camera.position, d.normalized()};
}

template <typename Real>
std::array<Real, kShCoefficients> sh_basis(Real x, Real y, Real z) {
  using std::sqrt;
  const Real n = sqrt(x * x + y * y + z * z);
  if (!(n > Real(0))) throw ContractError("sh_basis: zero direction");
  x /= n;
  y /= n;
  z /= n;
  const Real xx = x * x, yy = y * y, zz = z * z;
  return {Real(0.28209479177387814),
          Real(0.4886025119029199) * y,
          Real(0.4886025119029199) * z,
          Real(0.4886025119029199) * x,
          Real(1.0925484305920792) * x * y,
          Real(1.0925484305920792) * y * z,
          Real(0.31539156525252005) * (Real(3) * zz - Real(1)),
          Real(1.0925484305920792) * x * z,
          Real(0.5462742152960396) * (xx - yy),
          Real(0.5900435899266435) * y * (Real(3) * xx - yy),
          Real(2.890611442640554) * x * y * z,
          Real(0.4570457994644658) * y * (Real(5) * zz - Real(1)),
          Real(0.3731763325901154) * z * (Real(5) * zz - Real(3)),
          Real(0.4570457994644658) * x * (Real(5) * zz - Real(1)),
          Real(1.445305721320277) * z * (xx - yy),
          Real(0.5900435899266435) * x * (xx - Real(3) * yy)};
}

template <typename Real>
RadianceSample<Real> activate_radiance(std::span<const Real> raw, std::span<const Real> sh, Real density_bias) {
  RadianceSample<Real> s;
  s.sigma = softplus(raw[0] + density_bias);
  for (int k = 0; k < 3; ++k) {
    Real acc = 0;
    const Real* coef = raw.data() + 1 + k * kShCoefficients;
    for (int j = 0; j < kShCoefficients; ++j) acc += sh[j] * coef[j];
    s.rgb[k] = sigmoid(acc);
  }
  return s;
}

std::pair<double, double> RadianceSettings::near_far(const Vec3& origin) const {
  const double d = (origin - bounds_center).norm();
  return {std::max(0.0, d - bounds_radius), d + bounds_radius};
}

template <typename Real>
void decode_radiance_batch(const FieldModel<Real>& model, const RadianceSettings& settings,
                           std::span<const Real> points, std::span<const Real> dirs, std::span<Real> sigma,
                           std::span<Real> rgb, EvalCounter* counter) {
  const std::size_t n = sigma.size();
  if (model.out_dim() != kRadianceOutputs || model.dim() != 3) {
    throw ContractError("decode_radiance: model is not a radiance field");
  }
  if (points.size() != 3 * n || dirs.size() != 3 * n || rgb.size() != 3 * n) {
    throw ContractError("decode_radiance: shape mismatch");
  }
  std::vector<Real> raw(n * kRadianceOutputs);
  model.forward(points, raw);
  if (counter) {
    counter->encoded.fetch_add(n, std::memory_order_relaxed);
    counter->decoded.fetch_add(n, std::memory_order_relaxed);
  }
  const Real bias = static_cast<Real>(settings.density_bias);
  for (std::size_t i = 0; i < n; ++i) {
    const auto sh = sh_basis(dirs[3 * i], dirs[3 * i + 1], dirs[3 * i + 2]);
    const auto s = activate_radiance<Real>(std::span<const Real>(raw).subspan(i * kRadianceOutputs, kRadianceOutputs),
                                           sh, bias);
    sigma[i] = s.sigma;
    std::copy(s.rgb.begin(), s.rgb.end(), rgb.begin() + 3 * i);
  }
}

template <typename Real>
RadianceSample<Real> decode_radiance(const FieldModel<Real>& model, const RadianceSettings& settings,
                                     const std::array<Real, 3>& p, const std::array<Real, 3>& v) {
  RadianceSample<Real> s;
  decode_radiance_batch<Real>(model, settings, p, v, std::span<Real>(&s.sigma, 1), s.rgb);
  return s;
}

template <typename Real>
CompositeResult<Real> composite(std::span<const Real> sigma, std::span<const Real> rgb,
                                std::span<const Real> delta, const std::array<Real, 3>& background,
                                std::span<Real> weights) {
  using std::exp;
  using std::expm1;
  const std::size_t s = sigma.size();
  if (rgb.size() != 3 * s || delta.size() != s || (!weights.empty() && weights.size() != s)) {
    throw ContractError("composite: shape mismatch");
  }
  CompositeResult<Real> r;
  Real transmittance = 1;
  for (std::size_t j = 0; j < s; ++j) {
    if (!(delta[j] > Real(0))) throw ContractError("composite: deltas must be positive");
    const Real alpha = -expm1(-sigma[j] * delta[j]);
    const Real w = transmittance * alpha;
    for (int c = 0; c < 3; ++c) r.rgb[c] += w * rgb[3 * j + c];
    r.opacity += w;
    if (!weights.empty()) weights[j] = w;
    transmittance *= exp(-sigma[j] * delta[j]);
  }
  r.final_transmittance = transmittance;
  for (int c = 0; c < 3; ++c) r.rgb[c] += transmittance * background[c];
  return r;
}

template <typename Real>
void composite_backward(std::span<const Real> sigma, std::span<const Real> rgb, std::span<const Real> delta,
                        const std::array<Real, 3>& background, const std::array<Real, 3>& upstream,
                        std::span<Real> d_sigma, std::span<Real> d_rgb) {
  using std::exp;
  using std::expm1;
  const std::size_t s = sigma.size();
  if (d_sigma.size() != s || d_rgb.size() != 3 * s) throw ContractError("composite_backward: shape mismatch");
  std::vector<Real> after(s);   // T_{j+1}
  std::vector<Real> proj(s);    // w_j * (c_j . upstream)
  Real transmittance = 1;
  for (std::size_t j = 0; j < s; ++j) {
    const Real alpha = -expm1(-sigma[j] * delta[j]);
    const Real w = transmittance * alpha;
    Real dot = 0;
    for (int c = 0; c < 3; ++c) {
      d_rgb[3 * j + c] = w * upstream[c];
      dot += rgb[3 * j + c] * upstream[c];
    }
    proj[j] = w * dot;
    transmittance *= exp(-sigma[j] * delta[j]);
    after[j] = transmittance;
  }
  Real suffix = transmittance * (background[0] * upstream[0] + background[1] * upstream[1] +
                                 background[2] * upstream[2]);
  for (std::size_t j = s; j-- > 0;) {
    Real dot = 0;
    for (int c = 0; c < 3; ++c) dot += rgb[3 * j + c] * upstream[c];
    d_sigma[j] = delta[j] * (after[j] * dot - suffix);
    suffix += proj[j];
  }
}

RaySegmentation stratify(double near, double far, int samples, Rng* jitter) {
  if (samples < 1) throw ContractError("stratify: need at least one sample");
  if (!(far > near)) throw ContractError("stratify: far must exceed near");
  RaySegmentation seg;
  seg.delta = (far - near) / samples;
  seg.t.resize(samples);
  for (int j = 0; j < samples; ++j) {
    const double u = jitter ? jitter->uniform() : 0.5;
    seg.t[j] = near + (j + u) * seg.delta;
  }
  return seg;
}

ImageBuffer render_view(const FieldModel<float>& model, const RadianceSettings& settings, const Camera& camera,
                        const RenderOptions& options, RenderStats* stats, EvalCounter* counter,
                        std::vector<float>* weight_sums) {
  if (options.samples < 8) throw ContractError("render_view: need at least 8 samples per ray");
  camera.validate();
  const auto start = std::chrono::steady_clock::now();
  const int w = camera.width, h = camera.height, s = options.samples;
  ImageBuffer img(w, h);
  if (weight_sums) weight_sums->assign(img.pixel_count(), 0.0f);
  const std::array<float, 3> bg = {static_cast<float>(settings.background[0]),
                                   static_cast<float>(settings.background[1]),
                                   static_cast<float>(settings.background[2])};
  const Rng root = Rng(options.seed).substream("render");
  parallel_chunks(static_cast<std::size_t>(h), options.workers, [&](unsigned, std::size_t y0, std::size_t y1) {
    std::vector<float> pts(static_cast<std::size_t>(w) * s * 3), dirs(pts.size());
    std::vector<float> sigma(static_cast<std::size_t>(w) * s), rgb(pts.size()), delta(s), weights(s);
    std::vector<float> raw(static_cast<std::size_t>(w) * s * kRadianceOutputs);
    for (std::size_t y = y0; y < y1; ++y) {
      std::vector<float> deltas(w);
      for (int x = 0; x < w; ++x) {
        const Ray ray = generate_ray(camera, x, static_cast<int>(y));
        const auto [near, far] = settings.near_far(ray.origin);
        Rng rng = root.substream(y * w + x);
        const auto seg = stratify(near, far, s, options.jitter ? &rng : nullptr);
        deltas[x] = static_cast<float>(seg.delta);
        for (int j = 0; j < s; ++j) {
          const Vec3 p = ray.origin + seg.t[j] * ray.direction;
          const std::size_t i = (static_cast<std::size_t>(x) * s + j) * 3;
          for (int a = 0; a < 3; ++a) {
            pts[i + a] = static_cast<float>(p[a]);
            dirs[i + a] = static_cast<float>(ray.direction[a]);
          }
        }
      }
      model.forward(pts, raw, options.levels);
      if (counter) {
        counter->encoded.fetch_add(sigma.size(), std::memory_order_relaxed);
        counter->decoded.fetch_add(sigma.size(), std::memory_order_relaxed);
      }
      for (int x = 0; x < w; ++x) {
        const std::size_t base = static_cast<std::size_t>(x) * s;
        const auto sh = sh_basis(dirs[base * 3], dirs[base * 3 + 1], dirs[base * 3 + 2]);
        for (int j = 0; j < s; ++j) {
          const auto a = activate_radiance<float>(
              std::span<const float>(raw).subspan((base + j) * kRadianceOutputs, kRadianceOutputs), sh,
              static_cast<float>(settings.density_bias));
          sigma[base + j] = a.sigma;
          std::copy(a.rgb.begin(), a.rgb.end(), rgb.begin() + (base + j) * 3);
        }
        std::fill(delta.begin(), delta.end(), deltas[x]);
        const auto c = composite<float>(std::span<const float>(sigma).subspan(base, s),
                                        std::span<const float>(rgb).subspan(base * 3, s * 3), delta, bg, weights);
        float* px = img.pixel(x, static_cast<int>(y));
        for (int k = 0; k < 3; ++k) px[k] = std::clamp(c.rgb[k], 0.0f, 1.0f);
        if (weight_sums) (*weight_sums)[y * w + x] = c.opacity;
      }
    }
  });
  if (stats) {
    stats->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    stats->pixels_per_second = stats->seconds > 0 ? img.pixel_count() / stats->seconds : 0.0;
  }
  return img;
}

ToyScene ToyScene::two_spheres() {
  ToyScene s;
  s.spheres.push_back({Vec3(0.40, 0.45, 0.50), 0.16, {0.90, 0.25, 0.20}, 40.0});
  s.spheres.push_back({Vec3(0.63, 0.58, 0.52), 0.11, {0.20, 0.45, 0.90}, 40.0});
  s.background = {1.0, 1.0, 1.0};
  return s;
}

RadianceSettings ToyScene::settings() const {
  RadianceSettings r;
  r.background = background;
  r.bounds_center = bounds_center;
  r.bounds_radius = bounds_radius;
  return r;
}

RadianceSample<double> ToyScene::evaluate(const Vec3& p) const {
  RadianceSample<double> out;
  std::array<double, 3> weighted{};
  auto add = [&](double sigma, const std::array<double, 3>& rgb) {
    out.sigma += sigma;
    for (int c = 0; c < 3; ++c) weighted[c] += sigma * rgb[c];
  };
  for (const auto& s : spheres) {
    if ((p - s.center).squaredNorm() <= s.radius * s.radius) add(s.sigma, s.rgb);
  }
  for (const auto& b : boxes) {
    if (((p - b.center).cwiseAbs() - b.half_extent).maxCoeff() <= 0) add(b.sigma, b.rgb);
  }
  if (out.sigma > 0) {
    for (int c = 0; c < 3; ++c) out.rgb[c] = weighted[c] / out.sigma;
  }
  return out;
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ContractError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ContractError(where + ": unknown key '" + key + "'");
    }
  }
}

Vec3 vec3_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ContractError(where + ": expected 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

std::array<double, 3> rgb_from(const json& j, const std::string& where) {
  const Vec3 v = vec3_from(j, where);
  for (int c = 0; c < 3; ++c) {
    if (v[c] < 0 || v[c] > 1) throw ContractError(where + ": color channels must lie in [0, 1]");
  }
  return {v[0], v[1], v[2]};
}

json to_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

}  // namespace

ToyScene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot open scene " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ContractError(path.string() + ": " + e.what());
  }
  ToyScene scene;
  reject_unknown(j, {"spheres", "boxes", "background", "bounds", "cameras", "reference_samples"}, "scene");
  try {
    for (const auto& s : j.value("spheres", json::array())) {
      reject_unknown(s, {"center", "radius", "rgb", "sigma"}, "scene.spheres[]");
      SceneSphere sp;
      sp.center = vec3_from(s.at("center"), "scene.spheres[].center");
      sp.radius = s.at("radius").get<double>();
      sp.rgb = rgb_from(s.at("rgb"), "scene.spheres[].rgb");
      sp.sigma = s.at("sigma").get<double>();
      if (!(sp.radius > 0) || sp.sigma < 0) throw ContractError("scene.spheres[]: radius > 0 and sigma >= 0 required");
      scene.spheres.push_back(sp);
    }
    for (const auto& b : j.value("boxes", json::array())) {
      reject_unknown(b, {"center", "half_extent", "rgb", "sigma"}, "scene.boxes[]");
      SceneBox bx;
      bx.center = vec3_from(b.at("center"), "scene.boxes[].center");
      bx.half_extent = vec3_from(b.at("half_extent"), "scene.boxes[].half_extent");
      bx.rgb = rgb_from(b.at("rgb"), "scene.boxes[].rgb");
      bx.sigma = b.at("sigma").get<double>();
      if (!(bx.half_extent.minCoeff() > 0) || bx.sigma < 0) {
        throw ContractError("scene.boxes[]: half_extent > 0 and sigma >= 0 required");
      }
      scene.boxes.push_back(bx);
    }
    if (j.contains("background")) scene.background = rgb_from(j["background"], "scene.background");
    if (j.contains("bounds")) {
      const auto& b = j["bounds"];
      reject_unknown(b, {"center", "radius"}, "scene.bounds");
      scene.bounds_center = vec3_from(b.at("center"), "scene.bounds.center");
      scene.bounds_radius = b.at("radius").get<double>();
      if (!(scene.bounds_radius > 0)) throw ContractError("scene.bounds.radius must be positive");
    }
    if (j.contains("cameras")) {
      const auto& c = j["cameras"];
      reject_unknown(c, {"count", "test_every", "distance", "focal", "width", "height"}, "scene.cameras");
      auto& r = scene.cameras;
      r.count = c.value("count", r.count);
      r.test_every = c.value("test_every", r.test_every);
      r.distance = c.value("distance", r.distance);
      r.focal = c.value("focal", r.focal);
      r.width = c.value("width", r.width);
      r.height = c.value("height", r.height);
      if (r.count < 1 || r.test_every < 0 || r.width < 1 || r.height < 1 || !(r.focal > 0)) {
        throw ContractError("scene.cameras: invalid camera ring");
      }
      if (!(r.distance > scene.bounds_radius)) {
        throw ContractError("scene.cameras.distance must exceed scene.bounds.radius");
      }
    }
    scene.reference_samples = j.value("reference_samples", scene.reference_samples);
    if (scene.reference_samples < 8) throw ContractError("scene.reference_samples must be >= 8");
  } catch (const json::exception& e) {
    throw ContractError(path.string() + ": " + e.what());
  }
  return scene;
}

void save_scene(const std::filesystem::path& path, const ToyScene& scene) {
  json j;
  j["spheres"] = json::array();
  for (const auto& s : scene.spheres) {
    j["spheres"].push_back({{"center", to_json(s.center)}, {"radius", s.radius}, {"rgb", s.rgb}, {"sigma", s.sigma}});
  }
  j["boxes"] = json::array();
  for (const auto& b : scene.boxes) {
    j["boxes"].push_back({{"center", to_json(b.center)},
                          {"half_extent", to_json(b.half_extent)},
                          {"rgb", b.rgb},
                          {"sigma", b.sigma}});
  }
  j["background"] = scene.background;
  j["bounds"] = {{"center", to_json(scene.bounds_center)}, {"radius", scene.bounds_radius}};
  const auto& c = scene.cameras;
  j["cameras"] = {{"count", c.count},   {"test_every", c.test_every}, {"distance", c.distance},
                  {"focal", c.focal},   {"width", c.width},           {"height", c.height}};
  j["reference_samples"] = scene.reference_samples;
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write scene " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<Camera> camera_ring(const ToyScene& scene) {
  const auto& r = scene.cameras;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<Camera> cams;
  cams.reserve(r.count);
  for (int i = 0; i < r.count; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / r.count;
    const double rad = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    const Vec3 dir(rad * std::cos(phi), rad * std::sin(phi), z);
    cams.push_back(Camera::look_at(scene.bounds_center + r.distance * dir, scene.bounds_center, Vec3::UnitZ(),
                                   r.focal, r.width, r.height));
  }
  return cams;
}

bool is_test_camera(const ToyScene& scene, int index) {
  const int every = scene.cameras.test_every;
  return every > 0 && index % every == every / 2;
}

ImageBuffer render_reference(const ToyScene& scene, const Camera& camera, int samples, unsigned workers) {
  if (samples < 0) samples = scene.reference_samples;
  const auto settings = scene.settings();
  ImageBuffer img(camera.width, camera.height);
  parallel_chunks(static_cast<std::size_t>(camera.height), workers, [&](unsigned, std::size_t y0, std::size_t y1) {
    std::vector<double> sigma(samples), rgb(3 * samples), delta(samples);
    for (std::size_t y = y0; y < y1; ++y) {
      for (int x = 0; x < camera.width; ++x) {
        const Ray ray = generate_ray(camera, x, static_cast<int>(y));
        const auto [near, far] = settings.near_far(ray.origin);
        const auto seg = stratify(near, far, samples);
        for (int j = 0; j < samples; ++j) {
          const auto s = scene.evaluate(ray.origin + seg.t[j] * ray.direction);
          sigma[j] = s.sigma;
          std::copy(s.rgb.begin(), s.rgb.end(), rgb.begin() + 3 * j);
          delta[j] = seg.delta;
        }
        const auto c = composite<double>(sigma, rgb, delta, scene.background);
        float* px = img.pixel(x, static_cast<int>(y));
        for (int k = 0; k < 3; ++k) px[k] = static_cast<float>(std::clamp(c.rgb[k], 0.0, 1.0));
      }
    }
  });
  return img;
}

SceneViews toy_scene_oracle(const ToyScene& scene, unsigned workers) {
  SceneViews views;
  const auto cams = camera_ring(scene);
  for (int i = 0; i < static_cast<int>(cams.size()); ++i) {
    PosedView v{i, cams[i], render_reference(scene, cams[i], -1, workers)};
    (is_test_camera(scene, i) ? views.test : views.train).push_back(std::move(v));
  }
  return views;
}

void save_poses(const std::filesystem::path& path, const SceneViews& views) {
  json j = json::array();
  auto emit = [&](const PosedView& v, const char* split) {
    json rot = json::array();
    for (int r = 0; r < 3; ++r) rot.push_back(json::array({v.camera.orientation(r, 0), v.camera.orientation(r, 1),
                                                           v.camera.orientation(r, 2)}));
    j.push_back({{"index", v.index},
                 {"split", split},
                 {"position", to_json(v.camera.position)},
                 {"orientation", rot},
                 {"focal", v.camera.focal},
                 {"width", v.camera.width},
                 {"height", v.camera.height}});
  };
  for (const auto& v : views.train) emit(v, "train");
  for (const auto& v : views.test) emit(v, "test");
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write poses " + path.string());
  out << j.dump(2) << '\n';
}

GridConfig radiance_grid_config() {
  GridConfig g;
  g.dim = 3;
  g.levels = 32;
  g.n_min = 4;
  g.n_max = 256;
  g.features_per_level = 1;
  g.table_size = 1u << 18;
  return g;
}

FieldModel<float> make_radiance_model(const GridConfig& grid, int kernels, std::uint64_t seed) {
  FieldModel<float> model(Task::radiance, grid, kernels, kRadianceOutputs, KernelMode::anisotropic);
  const Rng root(seed);
  Rng g = root.substream("grid");
  model.grid.init_uniform(g);
  Rng d = root.substream("decoder");
  model.decoder.init_random(d);
  return model;
}

template <typename Real>
RayBatch<Real> sample_rays(std::span<const PosedView> views, const RadianceSettings& settings, std::size_t rays,
                           int samples, Rng& rng) {
  if (views.empty()) throw ContractError("sample_rays: no training views");
  if (rays == 0 || samples < 1) throw ContractError("sample_rays: empty batch");
  RayBatch<Real> b;
  b.samples = samples;
  b.origins.reserve(3 * rays);
  b.directions.reserve(3 * rays);
  b.targets.reserve(3 * rays);
  b.t.reserve(rays * samples);
  b.delta.reserve(rays);
  for (std::size_t r = 0; r < rays; ++r) {
    const auto& v = views[rng.uniform_index(views.size())];
    const int x = static_cast<int>(rng.uniform_index(v.camera.width));
    const int y = static_cast<int>(rng.uniform_index(v.camera.height));
    const Ray ray = generate_ray(v.camera, x, y);
    const auto [near, far] = settings.near_far(ray.origin);
    const auto seg = stratify(near, far, samples, &rng);
    for (int a = 0; a < 3; ++a) {
      b.origins.push_back(static_cast<Real>(ray.origin[a]));
      b.directions.push_back(static_cast<Real>(ray.direction[a]));
      b.targets.push_back(static_cast<Real>(v.image.pixel(x, y)[a]));
    }
    for (double t : seg.t) b.t.push_back(static_cast<Real>(t));
    b.delta.push_back(static_cast<Real>(seg.delta));
  }
  return b;
}

template <typename Real>
double radiance_loss_and_gradients(const FieldModel<Real>& model, const RadianceSettings& settings,
                                   const RayBatch<Real>& batch, GradBuffer<Real>& grads, unsigned workers) {
  const std::size_t rays = batch.size();
  const std::size_t s = batch.samples;
  const std::size_t n = rays * s;
  const int m = model.grid.feature_dim();
  constexpr int q = kRadianceOutputs;
  if (rays == 0 || batch.t.size() != n || batch.targets.size() != 3 * rays) {
    throw ContractError("radiance: malformed ray batch");
  }
  if (model.out_dim() != q) throw ContractError("radiance: model is not a radiance field");
  const Real bias = static_cast<Real>(settings.density_bias);
  const std::array<Real, 3> bg = {static_cast<Real>(settings.background[0]), static_cast<Real>(settings.background[1]),
                                  static_cast<Real>(settings.background[2])};
  const double scale = 1.0 / (3.0 * static_cast<double>(rays));

  std::vector<Real> points(3 * n), features(n * m), raw(n * q), upstream(n * q), feature_grad(n * m);
  const unsigned used = effective_workers(rays, workers);
  std::vector<double> partial_loss(used, 0.0);
  std::vector<DecoderGrad<Real>> partial(used, model.decoder.make_grad());
  parallel_chunks(rays, workers, [&](unsigned w, std::size_t r0, std::size_t r1) {
    if (r0 == r1) return;
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t j = 0; j < s; ++j) {
        for (int a = 0; a < 3; ++a) {
          points[(r * s + j) * 3 + a] = batch.origins[3 * r + a] + batch.t[r * s + j] * batch.directions[3 * r + a];
        }
      }
    }
    const std::size_t p0 = r0 * s, p1 = r1 * s;
    const auto f = std::span<Real>(features).subspan(p0 * m, (p1 - p0) * m);
    model.grid.encode_batch(std::span<const Real>(points).subspan(p0 * 3, (p1 - p0) * 3), f);
    model.decoder.decode_batch(f, std::span<Real>(raw).subspan(p0 * q, (p1 - p0) * q));

    std::vector<Real> sigma(s), rgb(3 * s), delta(s), d_sigma(s), d_rgb(3 * s);
    for (std::size_t r = r0; r < r1; ++r) {
      const auto sh = sh_basis(batch.directions[3 * r], batch.directions[3 * r + 1], batch.directions[3 * r + 2]);
      for (std::size_t j = 0; j < s; ++j) {
        const auto a = activate_radiance<Real>(std::span<const Real>(raw).subspan((r * s + j) * q, q), sh, bias);
        sigma[j] = a.sigma;
        std::copy(a.rgb.begin(), a.rgb.end(), rgb.begin() + 3 * j);
        delta[j] = batch.delta[r];
      }
      const auto c = composite<Real>(sigma, rgb, delta, bg);
      std::array<Real, 3> up{};
      for (int k = 0; k < 3; ++k) {
        const double diff = static_cast<double>(c.rgb[k]) - static_cast<double>(batch.targets[3 * r + k]);
        partial_loss[w] += std::abs(diff);
        up[k] = static_cast<Real>(diff > 0 ? scale : diff < 0 ? -scale : 0.0);
      }
      composite_backward<Real>(sigma, rgb, delta, bg, up, d_sigma, d_rgb);
      for (std::size_t j = 0; j < s; ++j) {
        const Real* raw_j = raw.data() + (r * s + j) * q;
        Real* up_j = upstream.data() + (r * s + j) * q;
        up_j[0] = d_sigma[j] * sigmoid(raw_j[0] + bias);
        for (int k = 0; k < 3; ++k) {
          const Real g = d_rgb[3 * j + k] * rgb[3 * j + k] * (Real(1) - rgb[3 * j + k]);
          for (int i = 0; i < kShCoefficients; ++i) up_j[1 + k * kShCoefficients + i] = g * sh[i];
        }
      }
    }
    model.decoder.backward(f, std::span<const Real>(upstream).subspan(p0 * q, (p1 - p0) * q), partial[w],
                           std::span<Real>(feature_grad).subspan(p0 * m, (p1 - p0) * m));
  });
  double loss = 0.0;
  for (unsigned w = 0; w < used; ++w) {
    loss += partial_loss[w];
    grads.decoder.add(partial[w]);
  }
  model.grid.backward(points, feature_grad, grads.tables, &grads.touched);
  return loss * scale;
}

std::vector<LossRecord> fit_radiance(FieldModel<float>& model, const RadianceSettings& settings,
                                     std::span<const PosedView> views, const RadianceFitConfig& config,
                                     const CheckpointCallback& on_checkpoint) {
  std::vector<LossRecord> history;
  history.reserve(config.steps);
  ModelOptimizer<float> opt(model, config.optimizer);
  GradBuffer<float> grads(model);
  const Rng root = Rng(config.seed).substream("rays");
  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t step = 0; step < config.steps; ++step) {
    Rng rng = root.substream(step);
    const auto batch = sample_rays<float>(views, settings, config.rays_per_batch, config.samples, rng);
    const double lr = config.optimizer.table_lr(opt.step);
    const double loss = radiance_loss_and_gradients(model, settings, batch, grads, config.workers);
    if (!std::isfinite(loss)) {
      double max_grad = 0.0;
      for (std::uint32_t i : grads.touched) max_grad = std::max(max_grad, std::abs(double(grads.tables[i])));
      for (auto g : grads.decoder.weights) max_grad = std::max(max_grad, std::abs(double(g)));
      throw NumericAbort("fit_radiance: non-finite loss at step " + std::to_string(step) +
                         " (max |grad| = " + std::to_string(max_grad) + ")");
    }
    apply_gradients(model, grads, opt);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    history.push_back({step, loss, lr, ms});
    if (on_checkpoint && config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      on_checkpoint(step + 1, model);
    }
  }
  if (on_checkpoint && (config.checkpoint_every == 0 || config.steps % config.checkpoint_every != 0)) {
    on_checkpoint(config.steps, model);
  }
  return history;
}

#define GNF_INSTANTIATE_RADIANCE(Real)                                                                        \
  template std::array<Real, kShCoefficients> sh_basis<Real>(Real, Real, Real);                                 \
  template RadianceSample<Real> activate_radiance<Real>(std::span<const Real>, std::span<const Real>, Real);  \
  template void decode_radiance_batch<Real>(const FieldModel<Real>&, const RadianceSettings&,                 \
                                            std::span<const Real>, std::span<const Real>, std::span<Real>,    \
                                            std::span<Real>, EvalCounter*);                                   \
  template RadianceSample<Real> decode_radiance<Real>(const FieldModel<Real>&, const RadianceSettings&,       \
                                                      const std::array<Real, 3>&, const std::array<Real, 3>&); \
  template CompositeResult<Real> composite<Real>(std::span<const Real>, std::span<const Real>,                \
                                                 std::span<const Real>, const std::array<Real, 3>&,           \
                                                 std::span<Real>);                                            \
  template void composite_backward<Real>(std::span<const Real>, std::span<const Real>, std::span<const Real>, \
                                         const std::array<Real, 3>&, const std::array<Real, 3>&,              \
                                         std::span<Real>, std::span<Real>);                                   \
  template RayBatch<Real> sample_rays<Real>(std::span<const PosedView>, const RadianceSettings&, std::size_t, \
                                            int, Rng&);                                                       \
  template double radiance_loss_and_gradients<Real>(const FieldModel<Real>&, const RadianceSettings&,         \
                                                    const RayBatch<Real>&, GradBuffer<Real>&, unsigned);

GNF_INSTANTIATE_RADIANCE(float)
GNF_INSTANTIATE_RADIANCE(double)

}  // namespace gnf
