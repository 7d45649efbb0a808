// gnf: fit, render, extract meshes, benchmark and gradient-check neural fields.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "gnf/flops.hpp"
#include "gnf/gradcheck.hpp"
#include "gnf/pipeline.hpp"

namespace {

using namespace gnf;
namespace fs = std::filesystem;

enum Exit : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kNumeric = 3 };

unsigned default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

struct FitArgs {
  std::string config;
  std::string output;
  std::string loss_csv;
  std::string input;
  long long steps = -1;
  long long seed = -1;
  unsigned workers = default_workers();
};

RunConfig resolve_run_config(Task task, const FitArgs& a) {
  RunConfig c = a.config.empty() ? default_config(task) : load_config(a.config, false);
  if (c.task != task) {
    throw ConfigError("task: config is for '" + to_string(c.task) + "' but the command fits '" + to_string(task) + "'");
  }
  if (!a.input.empty()) {
    c.input = a.input;
    if (task == Task::sdf) c.shape.clear();
  }
  if (!a.output.empty()) c.output = a.output;
  if (!a.loss_csv.empty()) c.loss_csv = a.loss_csv;
  if (a.steps >= 0) c.steps = static_cast<std::uint64_t>(a.steps);
  if (a.seed >= 0) c.seed = static_cast<std::uint64_t>(a.seed);
  if (const char* env = std::getenv("GNF_SEED")) {
    try {
      std::size_t used = 0;
      c.seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("GNF_SEED: not an unsigned integer: '") + env + "'");
    }
  }
  if (c.loss_csv.empty()) c.loss_csv = fs::path(c.output).replace_extension(".loss.csv");
  validate_config(c);
  if (task != Task::sdf && !c.input.empty() && !fs::exists(c.input)) {
    throw ConfigError("io.input: no such file " + c.input.string());
  }
  return c;
}

fs::path snapshot_path(const fs::path& output, std::uint64_t step) {
  fs::path p = output;
  p.replace_extension("step" + std::to_string(step) + p.extension().string());
  return p;
}

// PSNR of a render against its reference, in float and after 8-bit quantization.
std::pair<double, double> psnr_pair(const ImageBuffer& render, const ImageBuffer& reference) {
  return {psnr(render, reference), psnr(quantize_8bit(render), reference)};
}

void write_summary(const RunConfig& c, const FitOutcome& out, unsigned workers, const nlohmann::json& quality) {
  nlohmann::json s;
  s["task"] = to_string(c.task);
  s["seed"] = c.seed;
  s["steps"] = c.steps;
  s["workers"] = workers;
  s["parameters"] = out.checkpoint.model.parameter_count();
  s["wall_seconds"] = out.seconds;
  s["final_loss"] = out.history.empty() ? 0.0 : out.history.back().loss;
  s["checkpoint"] = c.output.string();
  s["loss_csv"] = c.loss_csv.string();
  if (!quality.is_null()) s["quality"] = quality;
  fs::path p = c.output;
  p.replace_extension(".summary.json");
  std::ofstream(p) << s.dump(2) << "\n";
  std::cout << to_string(c.task) << ": " << c.steps << " steps in " << std::fixed << std::setprecision(2)
            << out.seconds << " s";
  if (!out.history.empty()) std::cout << std::defaultfloat << ", final loss " << out.history.back().loss;
  if (quality.contains("psnr")) {
    std::cout << std::setprecision(2) << ", PSNR " << quality["psnr"].get<double>() << " dB (8-bit "
              << quality["psnr_8bit"].get<double>() << " dB)";
  }
  std::cout << "\ncheckpoint: " << c.output.string() << "\n";
}

int cmd_fit(Task task, const FitArgs& a) {
  const RunConfig c = resolve_run_config(task, a);
  const unsigned workers = a.workers;
  auto snapshots = [&](const FitOutcome& partial) {
    return [&c, &partial](std::uint64_t step, const FieldModel<float>& model) {
      if (step == c.steps) return;
      Checkpoint ck = partial.checkpoint;
      ck.model = model;
      ck.step = step;
      save_checkpoint(snapshot_path(c.output, step), ck);
    };
  };
  FitOutcome out;
  nlohmann::json quality;
  switch (task) {
    case Task::sdf: {
      const SdfOracle oracle = make_sdf_oracle(c);
      out = fit_sdf(c, oracle, workers, snapshots(out));
      break;
    }
    case Task::image: {
      const ImageBuffer image = load_image(c.input);
      out.checkpoint.image_width = image.width;
      out.checkpoint.image_height = image.height;
      out = fit_image(c, image, workers, snapshots(out));
      const auto [p, p8] = psnr_pair(render_image(out.checkpoint.model, image.width, image.height, -1, workers), image);
      quality = {{"psnr", p}, {"psnr_8bit", p8}};
      break;
    }
    case Task::radiance: {
      const ToyScene scene = scene_from_config(c);
      const SceneViews views = toy_scene_oracle(scene, workers);
      out.checkpoint.radiance = scene.settings();
      out.checkpoint.radiance.density_bias = c.density_bias;
      out = fit_radiance_scene(c, scene, views, workers, snapshots(out));
      RenderOptions opt;
      opt.samples = c.samples_per_ray;
      opt.workers = workers;
      double sum = 0.0, sum8 = 0.0;
      for (const auto& v : views.test) {
        const auto [p, p8] = psnr_pair(render_view(out.checkpoint.model, out.checkpoint.radiance, v.camera, opt), v.image);
        sum += p;
        sum8 += p8;
      }
      const double n = static_cast<double>(std::max<std::size_t>(1, views.test.size()));
      quality = {{"psnr", sum / n}, {"psnr_8bit", sum8 / n}, {"views", views.test.size()}};
      break;
    }
  }
  save_checkpoint(c.output, out.checkpoint);
  write_loss_csv(c.loss_csv, out.history);
  write_summary(c, out, workers, quality);
  return kOk;
}

struct RenderArgs {
  std::string checkpoint;
  std::string output = "render.png";
  std::string scene;
  int width = 0;
  int height = 0;
  int levels = -1;
  int camera = -1;
  int samples = 64;
  std::string reference;
  std::string error_map;
  double error_cap = 0.1;
  unsigned workers = default_workers();
};

int cmd_render(const RenderArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto& model = ck.model;
  RenderStats stats;
  ImageBuffer image;
  switch (model.task) {
    case Task::sdf:
      std::cerr << "error: " << a.checkpoint << " holds an SDF model; use extract-mesh\n";
      return kUsage;
    case Task::image: {
      const int w = a.width > 0 ? a.width : ck.image_width;
      const int h = a.height > 0 ? a.height : ck.image_height;
      image = render_image(model, w, h, a.levels, a.workers, &stats);
      break;
    }
    case Task::radiance: {
      const ToyScene scene = a.scene.empty() ? ToyScene::two_spheres() : load_scene(a.scene);
      const auto cameras = camera_ring(scene);
      int index = a.camera;
      if (index < 0) {
        index = scene.cameras.test_every / 2;  // first held-out view
      }
      if (index >= static_cast<int>(cameras.size())) {
        throw ContractError("--camera: index " + std::to_string(index) + " outside the " +
                            std::to_string(cameras.size()) + "-camera ring");
      }
      Camera cam = cameras[index];
      if (a.width > 0) cam.width = a.width;
      if (a.height > 0) cam.height = a.height;
      RenderOptions opt;
      opt.samples = a.samples;
      opt.workers = a.workers;
      opt.levels = a.levels;
      image = render_view(model, ck.radiance, cam, opt, &stats);
      break;
    }
  }
  save_image(a.output, image);
  std::cout << image.width << "x" << image.height << " -> " << a.output << " (" << std::fixed << std::setprecision(0)
            << stats.pixels_per_second << " pixels/s)\n";
  if (!a.reference.empty()) {
    const ImageBuffer reference = load_image(a.reference);
    const auto [p, p8] = psnr_pair(image, reference);
    std::cout << std::setprecision(2) << "PSNR: " << p << " dB (8-bit " << p8 << " dB)\n";
    if (!a.error_map.empty()) save_image(a.error_map, error_map(image, reference, a.error_cap));
  }
  return kOk;
}

struct ExtractArgs {
  std::string checkpoint;
  std::string output = "mesh.obj";
  int resolution = 256;
  double iso = 0.0;
  int levels = -1;
  unsigned workers = default_workers();
};

int cmd_extract(const ExtractArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  if (ck.model.task != Task::sdf) {
    std::cerr << "error: extract-mesh needs an SDF checkpoint, " << a.checkpoint << " is '"
              << to_string(ck.model.task) << "'\n";
    return kUsage;
  }
  const auto start = std::chrono::steady_clock::now();
  const TriMesh mesh = marching_cubes(field_of(ck.model, a.levels, a.workers), a.resolution, a.iso);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (mesh.empty()) {
    std::cerr << "warning: no surface at iso " << a.iso << "; writing an empty mesh\n";
    std::ofstream(a.output, std::ios::trunc);
    std::cout << "triangles: 0\nwatertight: no\n";
    return kOk;
  }
  save_mesh(a.output, mesh);
  std::cout << "triangles: " << mesh.faces.size() << "\nvertices: " << mesh.vertices.size()
            << "\nwatertight: " << (is_watertight(mesh) ? "yes" : "no") << "\nseconds: " << std::fixed
            << std::setprecision(2) << secs << "\n";
  return kOk;
}

struct BenchArgs {
  BenchOptions options;
  std::string csv;
};

int cmd_bench(const BenchArgs& a) {
  if (a.options.batch == 0) throw ContractError("--batch: must be positive");
  const BenchReport report = run_bench(a.options);
  print_bench_table(std::cout, report);
  if (!a.csv.empty()) write_bench_csv(a.csv, report);
  return kOk;
}

int cmd_gradcheck(const GradcheckOptions& o) {
  bool ok = true;
  for (const auto& r : run_gradcheck(o)) {
    std::cout << std::left << std::setw(11) << r.suite << (r.passed() ? " PASS" : " FAIL") << "  instances "
              << r.instances << "  checked " << r.checked << "  worst rel err " << std::scientific
              << std::setprecision(3) << r.worst_error << " (tol " << r.tolerance << ")  at instance "
              << r.worst_instance << " " << r.worst_parameter << " analytic " << r.worst_analytic << " numeric "
              << r.worst_numeric << std::defaultfloat << "  " << std::fixed << std::setprecision(2) << r.seconds
              << " s\n"
              << std::defaultfloat;
    ok = ok && r.passed();
  }
  return ok ? kOk : kCheckFailed;
}

void add_fit(CLI::App& app, const char* name, const char* help, Task task, FitArgs& args, int& code) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("config", args.config, "JSON run config (task defaults when omitted)")->check(CLI::ExistingFile);
  sub->add_option("-o,--output", args.output, "checkpoint path");
  sub->add_option("--loss-csv", args.loss_csv, "per-step loss log");
  sub->add_option("-i,--input", args.input, "image, mesh or scene file");
  sub->add_option("--steps", args.steps, "override fit.steps");
  sub->add_option("--seed", args.seed, "override seed (GNF_SEED takes precedence)");
  sub->add_option("--workers", args.workers, "worker threads; 1 is bit-reproducible")->check(CLI::PositiveNumber);
  sub->callback([task, &args, &code] { code = cmd_fit(task, args); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural fields with a multiresolution hash grid and a Gaussian RBF decoder"};
  app.require_subcommand(1);
  int code = kOk;

  FitArgs sdf_args, image_args, radiance_args;
  add_fit(app, "fit-sdf", "fit a signed distance field", Task::sdf, sdf_args, code);
  add_fit(app, "fit-image", "fit an RGB image", Task::image, image_args, code);
  add_fit(app, "fit-radiance", "fit a radiance field to a toy scene", Task::radiance, radiance_args, code);

  RenderArgs render;
  auto* r = app.add_subcommand("render", "render an image or radiance checkpoint to PNG");
  r->add_option("checkpoint", render.checkpoint)->required()->check(CLI::ExistingFile);
  r->add_option("-o,--output", render.output);
  r->add_option("--width", render.width);
  r->add_option("--height", render.height);
  r->add_option("--levels", render.levels, "decode from the first k levels");
  r->add_option("--camera", render.camera, "camera index on the scene ring");
  r->add_option("--scene", render.scene, "scene JSON (built-in two spheres when omitted)");
  r->add_option("--samples", render.samples, "samples per ray");
  r->add_option("--reference", render.reference, "image to report PSNR against")->check(CLI::ExistingFile);
  auto* emap = r->add_option("--error-map", render.error_map, "write the per-pixel error map (needs --reference)");
  r->add_option("--error-cap", render.error_cap, "residual mapped to the top of the ramp")->check(CLI::PositiveNumber);
  emap->needs("--reference");
  r->add_option("--workers", render.workers)->check(CLI::PositiveNumber);
  r->callback([&] { code = cmd_render(render); });

  ExtractArgs extract;
  auto* e = app.add_subcommand("extract-mesh", "marching cubes on an SDF checkpoint");
  e->add_option("checkpoint", extract.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("-o,--output", extract.output, ".obj or .ply");
  e->add_option("-r,--resolution", extract.resolution, "lattice points per axis");
  e->add_option("--iso", extract.iso);
  e->add_option("--levels", extract.levels, "decode from the first k levels");
  e->add_option("--workers", extract.workers)->check(CLI::PositiveNumber);
  e->callback([&] { code = cmd_extract(extract); });

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "FLOP counts and decoder throughput");
  b->add_option("-F,--features", bench.options.feature_dim);
  b->add_option("--size", bench.options.size, "hidden width / kernel count");
  b->add_option("-B,--batch", bench.options.batch);
  b->add_option("--repeats", bench.options.repeats);
  b->add_option("--warmup", bench.options.warmup);
  b->add_option("--workers", bench.options.workers)->check(CLI::PositiveNumber);
  b->add_option("--csv", bench.csv, "write the report as CSV");
  b->callback([&] { code = cmd_bench(bench); });

  GradcheckOptions grad;
  auto* g = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
  g->add_option("--instances", grad.instances);
  g->add_option("--seed", grad.seed);
  g->add_option("--tolerance", grad.tolerance);
  g->add_option("--step", grad.step);
  g->callback([&] { code = cmd_gradcheck(grad); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  } catch (const NumericAbort& err) {
    std::cerr << "numeric abort: " << err.what() << "\n";
    return kNumeric;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  }
  return code;
}
