#include "gnf/pipeline.hpp"

#include <chrono>

namespace gnf {

SdfOracle make_sdf_oracle(const RunConfig& config) {
  if (!config.shape.empty()) {
    if (config.shape.size() == 1) return SdfOracle::primitive(config.shape.front());
    return SdfOracle::union_of(config.shape);
  }
  if (config.input.empty()) throw ConfigError("shape: give primitives or io.input mesh");
  if (!std::filesystem::exists(config.input)) throw ConfigError("io.input: no such file " + config.input.string());
  return SdfOracle::mesh(load_mesh(config.input));
}

GridConfig resolve_grid(const RunConfig& config, const ImageBuffer* image) {
  GridConfig g = config.encoder;
  if (config.task == Task::image && g.n_max == 0) {
    if (image == nullptr) throw ContractError("resolve_grid: image encoder needs the image size");
    g.n_max = std::max({image->width, image->height, g.n_min});
  }
  g.validate();
  return g;
}

FieldModel<float> make_model(const RunConfig& config, const ImageBuffer* image) {
  const GridConfig g = resolve_grid(config, image);
  const int q = config.task == Task::sdf ? 1 : config.task == Task::image ? 3 : kRadianceOutputs;
  FieldModel<float> model(config.task, g, config.kernels, q, config.mode);
  const Rng root(config.seed);
  Rng grid_rng = root.substream("grid");
  model.grid.init_uniform(grid_rng);
  Rng dec_rng = root.substream("decoder");
  if (config.center_init == CenterInit::random) {
    model.decoder.init_random(dec_rng, g.init_scale);
    return model;
  }
  std::vector<float> seeds;
  if (config.task == Task::image) {
    seeds = regular_seed_points(config.kernels, 2);
  } else {
    Rng pts = root.substream("seed-points");
    seeds.resize(static_cast<std::size_t>(config.kernels) * 3);
    for (auto& s : seeds) s = static_cast<float>(pts.uniform());
  }
  model.decoder.init_centers_from_features(seeds, model.grid, dec_rng);
  return model;
}

FitConfig fit_config(const RunConfig& config, unsigned workers) {
  FitConfig f;
  f.steps = config.steps;
  f.batch_size = config.batch_size;
  f.epsilon = config.epsilon;
  f.seed = config.seed;
  f.task = config.task;
  f.optimizer = config.optimizer;
  f.workers = workers;
  f.checkpoint_every = config.checkpoint_every;
  return f;
}

RadianceFitConfig radiance_fit_config(const RunConfig& config, unsigned workers) {
  RadianceFitConfig f;
  f.steps = config.steps;
  f.rays_per_batch = config.rays_per_batch;
  f.samples = config.samples_per_ray;
  f.seed = config.seed;
  f.optimizer = config.optimizer;
  f.workers = workers;
  f.checkpoint_every = config.checkpoint_every;
  return f;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

FitOutcome fit_sdf(const RunConfig& config, const SurfaceOracle& oracle, unsigned workers,
                   const CheckpointCallback& on_checkpoint) {
  const auto start = std::chrono::steady_clock::now();
  FitOutcome out;
  out.checkpoint.model = make_model(config);
  SdfBatchSource<float> source(oracle);
  out.history = fit(out.checkpoint.model, source, fit_config(config, workers), on_checkpoint);
  out.checkpoint.step = config.steps;
  out.seconds = seconds_since(start);
  return out;
}

FitOutcome fit_image(const RunConfig& config, const ImageBuffer& image, unsigned workers,
                     const CheckpointCallback& on_checkpoint) {
  if (image.empty()) throw ContractError("fit_image: empty image");
  const auto start = std::chrono::steady_clock::now();
  FitOutcome out;
  out.checkpoint.model = make_model(config, &image);
  out.checkpoint.image_width = image.width;
  out.checkpoint.image_height = image.height;
  PixelBatchSource<float> source(image);
  out.history = fit(out.checkpoint.model, source, fit_config(config, workers), on_checkpoint);
  out.checkpoint.step = config.steps;
  out.seconds = seconds_since(start);
  return out;
}

FitOutcome fit_radiance_scene(const RunConfig& config, const ToyScene& scene, const SceneViews& views,
                              unsigned workers, const CheckpointCallback& on_checkpoint) {
  const auto start = std::chrono::steady_clock::now();
  FitOutcome out;
  out.checkpoint.model = make_model(config);
  out.checkpoint.radiance = scene.settings();
  out.checkpoint.radiance.density_bias = config.density_bias;
  out.history = fit_radiance(out.checkpoint.model, out.checkpoint.radiance, views.train,
                             radiance_fit_config(config, workers), on_checkpoint);
  out.checkpoint.step = config.steps;
  out.seconds = seconds_since(start);
  return out;
}

ToyScene scene_from_config(const RunConfig& config) {
  if (config.input.empty()) return ToyScene::two_spheres();
  if (!std::filesystem::exists(config.input)) throw ConfigError("io.input: no such file " + config.input.string());
  return load_scene(config.input);
}

}  // namespace gnf
