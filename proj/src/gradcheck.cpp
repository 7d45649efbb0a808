#include "gnf/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <span>

#include "gnf/field_model.hpp"
#include "gnf/radiance.hpp"
#include "gnf/training.hpp"

namespace gnf {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

using Clock = std::chrono::steady_clock;

struct Group {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

class Tracker {
 public:
  Tracker(std::string suite, const GradcheckOptions& o, double tolerance) {
    r_.suite = std::move(suite);
    r_.tolerance = tolerance;
    floor_ = o.floor;
  }

  void record(int instance, const std::string& param, double analytic, double numeric) {
    const double e = relative_error(analytic, numeric, floor_);
    ++r_.checked;
    if (r_.worst_instance < 0 || !(e <= r_.worst_error)) {
      r_.worst_error = std::isnan(e) ? INFINITY : e;
      r_.worst_instance = instance;
      r_.worst_parameter = param;
      r_.worst_analytic = analytic;
      r_.worst_numeric = numeric;
    }
  }

  GradcheckResult finish(int instances, Clock::time_point start) {
    r_.instances = instances;
    r_.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return r_;
  }

 private:
  GradcheckResult r_;
  double floor_ = 1e-6;
};

// Compares every coordinate of every group against central differences of
// `loss`. `refresh` runs after each perturbation (e.g. to resync bandwidths).
template <typename Loss, typename Refresh>
void compare_all(Tracker& tracker, int instance, std::vector<Group>& groups, double h, Loss&& loss,
                 Refresh&& refresh) {
  for (auto& g : groups) {
    std::vector<double> theta(g.values.begin(), g.values.end());
    auto f = [&](std::span<const double> x) {
      std::copy(x.begin(), x.end(), g.values.begin());
      refresh();
      return loss();
    };
    const auto numeric = finite_diff_grad(f, theta, h);
    std::copy(theta.begin(), theta.end(), g.values.begin());
    refresh();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      tracker.record(instance, g.name + "[" + std::to_string(i) + "]", g.analytic[i], numeric[i]);
    }
  }
}

GridConfig tiny_grid(int dim, Rng& rng) {
  GridConfig g;
  g.dim = dim;
  g.levels = 2;
  g.n_min = 2;
  g.n_max = 5 + static_cast<int>(rng.uniform_index(3));
  g.features_per_level = 1 + static_cast<int>(rng.uniform_index(2));
  g.table_size = 64;  // the finer level is hashed
  g.init_scale = 0.5;
  return g;
}

void randomize_decoder(GaussianRbfLayer<double>& dec, Rng& rng) {
  for (auto& c : dec.centers) c = rng.uniform(-0.5, 0.5);
  for (auto& r : dec.log_bandwidths) r = rng.uniform(-0.5, 0.5);
  for (auto& w : dec.weights) w = rng.uniform(-1.0, 1.0);
  dec.sync_bandwidths();
}

std::vector<double> random_points(std::size_t count, int dim, Rng& rng) {
  std::vector<double> p(count * dim);
  for (auto& x : p) x = rng.uniform(0.02, 0.98);
  return p;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

GradcheckResult check_decoder_gradients(const GradcheckOptions& o) {
  const auto start = Clock::now();
  Tracker tracker("decoder", o, o.tolerance);
  const Rng base = Rng(o.seed).substream("gradcheck-decoder");
  for (int inst = 0; inst < o.instances; ++inst) {
    Rng rng = base.substream(static_cast<std::uint64_t>(inst));
    const int m = 2 + static_cast<int>(rng.uniform_index(3));
    const int q = 1 + static_cast<int>(rng.uniform_index(3));
    const auto mode = inst % 2 == 0 ? KernelMode::spherical : KernelMode::anisotropic;
    GaussianRbfLayer<double> dec(4, m, q, mode);
    randomize_decoder(dec, rng);
    // Every third instance decodes from a feature prefix.
    const int active = inst % 3 == 2 ? m - 1 : m;
    const std::size_t batch = 6;
    std::vector<double> features(batch * active);
    for (auto& f : features) f = rng.uniform(-0.6, 0.6);
    std::vector<double> coef(batch * q);
    for (auto& c : coef) c = rng.uniform(-1.0, 1.0);

    auto grad = dec.make_grad();
    std::vector<double> feature_grad(features.size());
    dec.backward(features, coef, grad, feature_grad, active);

    std::vector<double> out(batch * q);
    auto loss = [&] {
      dec.decode_batch(features, out, active);
      return dot(out, coef);
    };
    std::vector<Group> groups{{"centers", dec.centers, grad.centers},
                              {"log_bandwidths", dec.log_bandwidths, grad.log_bandwidths},
                              {"weights", dec.weights, grad.weights},
                              {"features", features, feature_grad}};
    compare_all(tracker, inst, groups, o.step, loss, [&] { dec.sync_bandwidths(); });
  }
  return tracker.finish(o.instances, start);
}

GradcheckResult check_encoder_gradients(const GradcheckOptions& o) {
  const auto start = Clock::now();
  Tracker tracker("encoder", o, o.tolerance);
  const Rng base = Rng(o.seed).substream("gradcheck-encoder");
  for (int inst = 0; inst < o.instances; ++inst) {
    Rng rng = base.substream(static_cast<std::uint64_t>(inst));
    const int dim = inst % 2 == 0 ? 3 : 2;
    FeatureGrid<double> grid(tiny_grid(dim, rng));
    grid.init_uniform(rng);
    const std::size_t batch = 5;
    const auto points = random_points(batch, dim, rng);
    const int m = grid.feature_dim();
    std::vector<double> coef(batch * m);
    for (auto& c : coef) c = rng.uniform(-1.0, 1.0);

    std::vector<double> grad(grid.params().size(), 0.0);
    grid.backward(points, coef, grad);
    std::vector<double> features(batch * m);
    auto loss = [&] {
      grid.encode_batch(points, features);
      return dot(features, coef);
    };
    std::vector<Group> groups{{"tables", grid.params(), grad}};
    compare_all(tracker, inst, groups, o.step, loss, [] {});
  }
  return tracker.finish(o.instances, start);
}

GradcheckResult check_end_to_end_gradients(const GradcheckOptions& o) {
  const auto start = Clock::now();
  Tracker tracker("end-to-end", o, o.tolerance);
  const Rng base = Rng(o.seed).substream("gradcheck-end-to-end");
  for (int inst = 0; inst < o.instances; ++inst) {
    Rng rng = base.substream(static_cast<std::uint64_t>(inst));
    const bool sdf = inst % 2 == 0;
    const int dim = sdf ? 3 : 2;
    const int q = sdf ? 1 : 3;
    const auto g = tiny_grid(dim, rng);
    const auto mode = (inst / 2) % 2 == 0 ? KernelMode::spherical : KernelMode::anisotropic;
    FieldModel<double> model(sdf ? Task::sdf : Task::image, g, 3 + static_cast<int>(rng.uniform_index(2)), q,
                             mode);
    model.grid.init_uniform(rng);
    randomize_decoder(model.decoder, rng);

    TrainBatch<double> batch;
    batch.dim = dim;
    batch.out_dim = q;
    const std::size_t n = 6;
    batch.points = random_points(n, dim, rng);
    batch.targets.resize(n * q);
    for (auto& t : batch.targets) t = sdf ? rng.uniform(-0.1, 0.1) : rng.uniform(0.0, 1.0);
    batch.weights.assign(n, 1.0);
    // Odd SDF instances exercise per-sample weights.
    if (inst % 4 == 2) {
      for (auto& w : batch.weights) w = rng.uniform(0.5, 2.0);
    }
    const StepOptions options{sdf ? LossKind::sdf_scaled_l1 : LossKind::rgb_l2, 0.01, 1};

    GradBuffer<double> grads(model);
    loss_and_gradients(model, batch, grads, options);
    const GradBuffer<double> analytic = grads;
    auto loss = [&] {
      GradBuffer<double> scratch(model);
      return loss_and_gradients(model, batch, scratch, options);
    };
    std::vector<Group> groups{{"tables", model.grid.params(), analytic.tables},
                              {"centers", model.decoder.centers, analytic.decoder.centers},
                              {"log_bandwidths", model.decoder.log_bandwidths, analytic.decoder.log_bandwidths},
                              {"weights", model.decoder.weights, analytic.decoder.weights}};
    compare_all(tracker, inst, groups, o.step, loss, [&] { model.decoder.sync_bandwidths(); });
  }
  return tracker.finish(o.instances, start);
}

GradcheckResult check_radiance_gradients(const GradcheckOptions& o) {
  const auto start = Clock::now();
  Tracker tracker("radiance", o, o.radiance_tolerance);
  const Rng base = Rng(o.seed).substream("gradcheck-radiance");
  for (int inst = 0; inst < o.instances; ++inst) {
    Rng rng = base.substream(static_cast<std::uint64_t>(inst));
    FieldModel<double> model(Task::radiance, tiny_grid(3, rng), 4, kRadianceOutputs, KernelMode::anisotropic);
    model.grid.init_uniform(rng);
    randomize_decoder(model.decoder, rng);
    RadianceSettings settings;
    settings.background = {rng.uniform(), rng.uniform(), rng.uniform()};

    RayBatch<double> batch;
    batch.samples = 8;
    const std::size_t rays = 3;
    for (std::size_t r = 0; r < rays; ++r) {
      Vec3 out(rng.normal(), rng.normal(), rng.normal());
      out.normalize();
      const Vec3 origin = settings.bounds_center + 1.6 * out;
      Vec3 dir = -out + 0.15 * Vec3(rng.normal(), rng.normal(), rng.normal());
      dir.normalize();
      const double near = 1.1, far = 2.1;
      const double delta = (far - near) / batch.samples;
      for (int a = 0; a < 3; ++a) {
        batch.origins.push_back(origin[a]);
        batch.directions.push_back(dir[a]);
        batch.targets.push_back(rng.uniform());
      }
      for (int s = 0; s < batch.samples; ++s) batch.t.push_back(near + delta * (s + rng.uniform()));
      batch.delta.push_back(delta);
    }

    GradBuffer<double> grads(model);
    radiance_loss_and_gradients(model, settings, batch, grads);
    grads.collect_touched();

    // Candidates: touched table entries and every decoder parameter.
    struct Candidate {
      std::string name;
      double* value;
      double analytic;
    };
    std::vector<Candidate> candidates;
    for (std::uint32_t i : grads.unique_touched) {
      candidates.push_back({"tables[" + std::to_string(i) + "]", &model.grid.params()[i], grads.tables[i]});
    }
    auto add = [&](const char* name, std::vector<double>& v, const std::vector<double>& g) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        candidates.push_back({std::string(name) + "[" + std::to_string(i) + "]", &v[i], g[i]});
      }
    };
    add("centers", model.decoder.centers, grads.decoder.centers);
    add("log_bandwidths", model.decoder.log_bandwidths, grads.decoder.log_bandwidths);
    add("weights", model.decoder.weights, grads.decoder.weights);

    auto loss = [&] {
      model.decoder.sync_bandwidths();
      GradBuffer<double> scratch(model);
      return radiance_loss_and_gradients(model, settings, batch, scratch);
    };
    for (int k = 0; k < o.radiance_parameters; ++k) {
      auto& c = candidates[rng.uniform_index(candidates.size())];
      const double saved = *c.value;
      *c.value = saved + o.step;
      const double up = loss();
      *c.value = saved - o.step;
      const double down = loss();
      *c.value = saved;
      model.decoder.sync_bandwidths();
      tracker.record(inst, c.name, c.analytic, (up - down) / (2.0 * o.step));
    }
  }
  return tracker.finish(o.instances, start);
}

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options) {
  return {check_decoder_gradients(options), check_encoder_gradients(options),
          check_end_to_end_gradients(options), check_radiance_gradients(options)};
}

}  // namespace gnf
