#include "gnf/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gnf/radiance.hpp"

namespace gnf {

using nlohmann::json;

RunConfig default_config(Task task) {
  RunConfig c;
  c.task = task;
  switch (task) {
    case Task::sdf:
      c.encoder = GridConfig{};
      c.mode = KernelMode::spherical;
      c.steps = 20000;
      c.batch_size = 400;
      c.shape = {SpherePrimitive{}};
      break;
    case Task::image:
      c.encoder = GridConfig{};
      c.encoder.dim = 2;
      c.encoder.n_max = 0;  // resolved to the longest image side
      c.mode = KernelMode::spherical;
      c.steps = 10000;
      c.batch_size = 1u << 14;
      break;
    case Task::radiance:
      c.encoder = radiance_grid_config();
      c.mode = KernelMode::anisotropic;
      c.center_init = CenterInit::random;
      c.steps = 3000;
      c.rays_per_batch = 256;
      c.samples_per_ray = 64;
      break;
  }
  return c;
}

namespace {

class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    for (const auto& [key, _] : j_.items()) {
      if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; })) {
        throw ConfigError(name(key) + ": unknown key");
      }
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  void read(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, std::filesystem::path>) {
        if (!v.is_string()) throw ConfigError(name(key) + ": expected a string");
        out = T(v.get<std::string>());
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(name(key) + ": expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.get<std::int64_t>() < 0) throw ConfigError(name(key) + ": must be non-negative");
        }
        out = v.get<T>();
      } else {
        if (!v.is_number()) throw ConfigError(name(key) + ": expected a number");
        out = v.get<T>();
      }
    } catch (const json::exception& e) {
      throw ConfigError(name(key) + ": " + e.what());
    }
  }

  Vec3 vec3(const char* key, const Vec3& fallback) const {
    if (!j_.contains(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number()) {
      throw ConfigError(name(key) + ": expected 3 numbers");
    }
    return Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
  }

 private:
  const json& j_;
  std::string path_;
};

Primitive parse_primitive(const json& j, const std::string& path) {
  Fields f(j, path);
  if (!f.has("type")) throw ConfigError(path + ".type: missing");
  std::string type;
  f.read("type", type);
  auto positive = [&](const char* key, double v) {
    if (!(v > 0)) throw ConfigError(f.name(key) + ": must be positive");
  };
  if (type == "sphere") {
    f.allow({"type", "center", "radius"});
    SpherePrimitive s;
    s.center = f.vec3("center", s.center);
    f.read("radius", s.radius);
    positive("radius", s.radius);
    return s;
  }
  if (type == "torus") {
    f.allow({"type", "center", "major", "minor"});
    TorusPrimitive t;
    t.center = f.vec3("center", t.center);
    f.read("major", t.major);
    f.read("minor", t.minor);
    positive("major", t.major);
    positive("minor", t.minor);
    return t;
  }
  if (type == "box") {
    f.allow({"type", "center", "half_extent"});
    BoxPrimitive b;
    b.center = f.vec3("center", b.center);
    b.half_extent = f.vec3("half_extent", b.half_extent);
    if (!(b.half_extent.minCoeff() > 0)) throw ConfigError(f.name("half_extent") + ": must be positive");
    return b;
  }
  if (type == "capsule") {
    f.allow({"type", "a", "b", "radius"});
    CapsulePrimitive c;
    c.a = f.vec3("a", c.a);
    c.b = f.vec3("b", c.b);
    f.read("radius", c.radius);
    positive("radius", c.radius);
    return c;
  }
  throw ConfigError(path + ".type: unknown primitive '" + type + "'");
}

}  // namespace

void validate_config(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  GridConfig g = c.encoder;
  if (c.task == Task::image && g.n_max == 0) g.n_max = std::max(g.n_min, 1);
  try {
    g.validate();
  } catch (const ContractError& e) {
    fail(std::string("encoder: ") + e.what());
  }
  if (g.dim != (c.task == Task::image ? 2 : 3)) fail("encoder.dim: does not match the task");
  if (c.kernels < 1) fail("decoder.kernels: must be >= 1");
  if (c.batch_size < 1) fail("fit.batch_size: must be >= 1");
  if (c.task == Task::sdf && c.batch_size < 5) fail("fit.batch_size: SDF sampling needs at least 5 points");
  if (!(c.epsilon > 0)) fail("fit.epsilon: must be positive");
  auto check_lr = [&](const LrSchedule& s, const std::string& name) {
    if (!(s.base_lr > 0)) fail("fit.optimizer." + name + ": must be positive");
    if (!(s.decay_factor > 0)) fail("fit.optimizer.decay_factor: must be positive");
    if (s.decay_steps == 0) fail("fit.optimizer.decay_steps: must be positive");
  };
  check_lr(c.optimizer.table_lr, "table_lr");
  check_lr(c.optimizer.decoder_lr, "decoder_lr");
  const auto& a = c.optimizer.adam;
  if (!(a.beta1 > 0 && a.beta1 < 1)) fail("fit.optimizer.beta1: must lie in (0, 1)");
  if (!(a.beta2 > 0 && a.beta2 < 1)) fail("fit.optimizer.beta2: must lie in (0, 1)");
  if (!(a.eps > 0)) fail("fit.optimizer.eps: must be positive");
  if (c.task == Task::radiance) {
    if (c.rays_per_batch < 1) fail("fit.rays_per_batch: must be >= 1");
    if (c.samples_per_ray < 8) fail("fit.samples_per_ray: must be >= 8");
  }
  if (c.task == Task::image && c.input.empty()) fail("io.input: an image path is required");
  if (c.task == Task::sdf && c.shape.empty() && c.input.empty()) fail("shape: give primitives or io.input mesh");
  if (c.output.empty()) fail("io.output: must not be empty");
}

RunConfig parse_config(const std::string& text, const std::string& source, bool validate) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
  Fields root(j, "");
  root.allow({"task", "seed", "encoder", "decoder", "fit", "shape", "io"});
  if (!root.has("task")) throw ConfigError("task: missing");
  std::string task_name;
  root.read("task", task_name);
  Task task;
  try {
    task = task_from_string(task_name);
  } catch (const ContractError&) {
    throw ConfigError("task: unknown task '" + task_name + "' (expected sdf, image or radiance)");
  }
  RunConfig c = default_config(task);
  root.read("seed", c.seed);

  if (root.has("encoder")) {
    Fields e(root.at("encoder"), "encoder");
    e.allow({"levels", "n_min", "n_max", "features_per_level", "table_size", "init_scale"});
    e.read("levels", c.encoder.levels);
    e.read("n_min", c.encoder.n_min);
    e.read("n_max", c.encoder.n_max);
    e.read("features_per_level", c.encoder.features_per_level);
    e.read("table_size", c.encoder.table_size);
    e.read("init_scale", c.encoder.init_scale);
  }
  if (root.has("decoder")) {
    Fields d(root.at("decoder"), "decoder");
    d.allow({"kernels", "mode", "init"});
    d.read("kernels", c.kernels);
    if (d.has("mode")) {
      std::string mode;
      d.read("mode", mode);
      if (mode == "spherical") c.mode = KernelMode::spherical;
      else if (mode == "anisotropic") c.mode = KernelMode::anisotropic;
      else throw ConfigError("decoder.mode: expected 'spherical' or 'anisotropic'");
    }
    if (d.has("init")) {
      std::string init;
      d.read("init", init);
      if (init == "seeds") c.center_init = CenterInit::seeds;
      else if (init == "random") c.center_init = CenterInit::random;
      else throw ConfigError("decoder.init: expected 'seeds' or 'random'");
    }
  }
  if (root.has("fit")) {
    Fields f(root.at("fit"), "fit");
    f.allow({"steps", "batch_size", "epsilon", "checkpoint_every", "rays_per_batch", "samples_per_ray",
             "density_bias", "optimizer"});
    f.read("steps", c.steps);
    f.read("batch_size", c.batch_size);
    f.read("epsilon", c.epsilon);
    f.read("checkpoint_every", c.checkpoint_every);
    f.read("rays_per_batch", c.rays_per_batch);
    f.read("samples_per_ray", c.samples_per_ray);
    f.read("density_bias", c.density_bias);
    if (f.has("optimizer")) {
      Fields o(f.at("optimizer"), "fit.optimizer");
      o.allow({"table_lr", "decoder_lr", "warmup_steps", "decay_factor", "decay_steps", "beta1", "beta2", "eps"});
      o.read("table_lr", c.optimizer.table_lr.base_lr);
      o.read("decoder_lr", c.optimizer.decoder_lr.base_lr);
      std::uint64_t warmup = c.optimizer.table_lr.warmup_steps;
      double factor = c.optimizer.table_lr.decay_factor;
      std::uint64_t decay_steps = c.optimizer.table_lr.decay_steps;
      o.read("warmup_steps", warmup);
      o.read("decay_factor", factor);
      o.read("decay_steps", decay_steps);
      for (auto* s : {&c.optimizer.table_lr, &c.optimizer.decoder_lr}) {
        s->warmup_steps = warmup;
        s->decay_factor = factor;
        s->decay_steps = decay_steps;
      }
      o.read("beta1", c.optimizer.adam.beta1);
      o.read("beta2", c.optimizer.adam.beta2);
      o.read("eps", c.optimizer.adam.eps);
    }
  }
  if (root.has("shape")) {
    if (task != Task::sdf) throw ConfigError("shape: only valid for the sdf task");
    const json& s = root.at("shape");
    c.shape.clear();
    if (s.is_array()) {
      for (std::size_t i = 0; i < s.size(); ++i) c.shape.push_back(parse_primitive(s[i], "shape[" + std::to_string(i) + "]"));
    } else {
      c.shape.push_back(parse_primitive(s, "shape"));
    }
  }
  if (root.has("io")) {
    Fields io(root.at("io"), "io");
    io.allow({"input", "output", "loss_csv"});
    io.read("input", c.input);
    io.read("output", c.output);
    io.read("loss_csv", c.loss_csv);
    if (task == Task::sdf && !c.input.empty() && !root.has("shape")) c.shape.clear();
  }
  if (validate) validate_config(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path, bool validate) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string(), validate);
}

}  // namespace gnf
