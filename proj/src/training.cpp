#include "gnf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "gnf/parallel.hpp"

namespace gnf {

LossResult sdf_loss(std::span<const double> pred, std::span<const double> gt, double epsilon) {
  if (pred.size() != gt.size()) throw ContractError("sdf_loss: size mismatch");
  if (!(epsilon > 0)) throw ContractError("sdf_loss: epsilon must be positive");
  LossResult r;
  r.grad.resize(pred.size());
  const double inv_b = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double scale = inv_b / (std::abs(gt[i]) + epsilon);
    const double diff = pred[i] - gt[i];
    r.loss += std::abs(diff) * scale;
    r.grad[i] = diff > 0 ? scale : (diff < 0 ? -scale : 0.0);
  }
  return r;
}

LossResult rgb_loss(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size() || pred.size() % 3 != 0) throw ContractError("rgb_loss: shape mismatch");
  LossResult r;
  r.grad.resize(pred.size());
  const double inv_b = 1.0 / static_cast<double>(pred.size() / 3);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double diff = pred[i] - gt[i];
    r.loss += diff * diff * inv_b;
    r.grad[i] = 2.0 * diff * inv_b;
  }
  return r;
}

template <typename Real>
TrainBatch<Real> sample_sdf_points(const SurfaceOracle& oracle, std::size_t count, Rng& rng,
                                   const SdfSamplingConfig& config) {
  if (count < 5) throw ContractError("sample_sdf_points: need at least 5 points");
  const std::size_t n_surface = count * 2 / 5;
  const std::size_t n_perturbed = n_surface;
  TrainBatch<Real> batch;
  batch.dim = 3;
  batch.out_dim = 1;
  batch.points.resize(count * 3);
  batch.targets.resize(count);
  batch.weights.assign(count, Real(1));
  auto clamp01 = [](double x) { return std::clamp(x, 0.0, 1.0); };
  for (std::size_t i = 0; i < count; ++i) {
    std::array<double, 3> p;
    double target;
    if (i < n_surface) {
      p = oracle.sample_surface(rng);
      target = 0.0;
    } else if (i < n_surface + n_perturbed) {
      p = oracle.sample_surface(rng);
      const double sigma = (i - n_surface) < n_perturbed / 2 ? config.coarse_sigma : config.fine_sigma;
      for (auto& x : p) x = clamp01(x + sigma * rng.normal());
      target = oracle.signed_distance(p);
    } else {
      p = {rng.uniform(), rng.uniform(), rng.uniform()};
      target = oracle.signed_distance(p);
    }
    if (config.target_clamp > 0) target = std::clamp(target, -config.target_clamp, config.target_clamp);
    for (int a = 0; a < 3; ++a) batch.points[i * 3 + a] = static_cast<Real>(p[a]);
    batch.targets[i] = static_cast<Real>(target);
  }
  return batch;
}

template <typename Real>
TrainBatch<Real> sample_pixels(const ImageBuffer& image, std::size_t count, Rng& rng) {
  if (image.empty()) throw ContractError("sample_pixels: empty image");
  TrainBatch<Real> batch;
  batch.dim = 2;
  batch.out_dim = 3;
  batch.points.resize(count * 2);
  batch.targets.resize(count * 3);
  batch.weights.assign(count, Real(1));
  const std::uint64_t pixels = image.pixel_count();
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t idx = rng.uniform_index(pixels);
    const int x = static_cast<int>(idx % image.width);
    const int y = static_cast<int>(idx / image.width);
    const auto c = pixel_center(x, y, image.width, image.height);
    batch.points[i * 2] = static_cast<Real>(c[0]);
    batch.points[i * 2 + 1] = static_cast<Real>(c[1]);
    const float* rgb = image.pixel(x, y);
    for (int k = 0; k < 3; ++k) batch.targets[i * 3 + k] = static_cast<Real>(rgb[k]);
  }
  return batch;
}

template <typename Real>
ModelOptimizer<Real>::ModelOptimizer(const FieldModel<Real>& model, OptimizerConfig cfg)
    : config(cfg) {
  AdamHyper table_h = cfg.adam;
  table_h.lr = cfg.table_lr(0);
  AdamHyper dec_h = cfg.adam;
  dec_h.lr = cfg.decoder_lr(0);
  tables = AdamState<Real>(model.grid.params().size(), table_h);
  centers = AdamState<Real>(model.decoder.centers.size(), dec_h);
  log_bandwidths = AdamState<Real>(model.decoder.log_bandwidths.size(), dec_h);
  weights = AdamState<Real>(model.decoder.weights.size(), dec_h);
}

template <typename Real>
GradBuffer<Real>::GradBuffer(const FieldModel<Real>& model)
    : tables(model.grid.params().size(), Real(0)),
      touched_mask(model.grid.params().size(), 0),
      decoder(model.decoder.make_grad()) {}

template <typename Real>
void GradBuffer<Real>::collect_touched() {
  unique_touched.clear();
  for (std::uint32_t i : touched) {
    if (!touched_mask[i]) {
      touched_mask[i] = 1;
      unique_touched.push_back(i);
    }
  }
  for (std::uint32_t i : unique_touched) touched_mask[i] = 0;
  touched.clear();
}

template <typename Real>
void GradBuffer<Real>::clear() {
  for (std::uint32_t i : unique_touched) tables[i] = Real(0);
  unique_touched.clear();
  touched.clear();
  decoder.reset();
}

template <typename Real>
void apply_gradients(FieldModel<Real>& model, GradBuffer<Real>& grads, ModelOptimizer<Real>& opt) {
  const double table_lr = opt.config.table_lr(opt.step);
  const double dec_lr = opt.config.decoder_lr(opt.step);
  opt.tables.hyper.lr = table_lr;
  opt.centers.hyper.lr = dec_lr;
  opt.log_bandwidths.hyper.lr = dec_lr;
  opt.weights.hyper.lr = dec_lr;
  if (!grads.touched.empty()) grads.collect_touched();
  adam_step_sparse<Real>(model.grid.params(), grads.tables, grads.unique_touched, opt.tables);
  adam_step<Real>(model.decoder.centers, grads.decoder.centers, opt.centers);
  adam_step<Real>(model.decoder.log_bandwidths, grads.decoder.log_bandwidths, opt.log_bandwidths);
  adam_step<Real>(model.decoder.weights, grads.decoder.weights, opt.weights);
  model.decoder.sync_bandwidths();
  opt.step += 1;
  grads.clear();
}

template <typename Real>
double loss_and_gradients(const FieldModel<Real>& model, const TrainBatch<Real>& batch,
                          GradBuffer<Real>& grads, const StepOptions& options) {
  const std::size_t n = batch.size();
  const int d = model.dim();
  const int m = model.grid.feature_dim();
  const int q = model.out_dim();
  if (n == 0 || batch.points.size() != n * d || batch.targets.size() != n * q) {
    throw ContractError("train_step: batch does not match model dimensions");
  }
  std::vector<Real> features(n * m);
  std::vector<Real> pred(n * q);
  parallel_chunks(n, options.workers, [&](unsigned, std::size_t b, std::size_t e) {
    if (b == e) return;
    const auto pts = std::span<const Real>(batch.points).subspan(b * d, (e - b) * d);
    const auto f = std::span<Real>(features).subspan(b * m, (e - b) * m);
    model.grid.encode_batch(pts, f);
    model.decoder.decode_batch(f, std::span<Real>(pred).subspan(b * q, (e - b) * q));
  });

  std::vector<double> pred_d(pred.begin(), pred.end());
  std::vector<double> gt_d(batch.targets.begin(), batch.targets.end());
  LossResult lr = options.loss == LossKind::sdf_scaled_l1 ? sdf_loss(pred_d, gt_d, options.epsilon)
                                                          : rgb_loss(pred_d, gt_d);
  std::vector<Real> upstream(n * q);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = static_cast<double>(batch.weights[i]);
    for (int k = 0; k < q; ++k) upstream[i * q + k] = static_cast<Real>(lr.grad[i * q + k] * w);
  }
  if (!std::all_of(batch.weights.begin(), batch.weights.end(), [](Real w) { return w == Real(1); })) {
    // Re-evaluate the loss with per-sample weights.
    double weighted = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double term = 0.0;
      for (int k = 0; k < q; ++k) {
        const double diff = pred_d[i * q + k] - gt_d[i * q + k];
        term += options.loss == LossKind::sdf_scaled_l1
                    ? std::abs(diff) / (std::abs(gt_d[i * q + k]) + options.epsilon)
                    : diff * diff;
      }
      weighted += term * static_cast<double>(batch.weights[i]);
    }
    lr.loss = weighted / static_cast<double>(n);
  }

  std::vector<Real> feature_grad(n * m);
  const unsigned workers = effective_workers(n, options.workers);
  std::vector<DecoderGrad<Real>> partial(workers, model.decoder.make_grad());
  parallel_chunks(n, options.workers, [&](unsigned w, std::size_t b, std::size_t e) {
    if (b == e) return;
    model.decoder.backward(std::span<const Real>(features).subspan(b * m, (e - b) * m),
                           std::span<const Real>(upstream).subspan(b * q, (e - b) * q), partial[w],
                           std::span<Real>(feature_grad).subspan(b * m, (e - b) * m));
  });
  for (const auto& p : partial) grads.decoder.add(p);
  model.grid.backward(batch.points, feature_grad, grads.tables, &grads.touched);
  return lr.loss;
}

template <typename Real>
double train_step(FieldModel<Real>& model, const TrainBatch<Real>& batch, ModelOptimizer<Real>& opt,
                  GradBuffer<Real>& grads, const StepOptions& options) {
  const double loss = loss_and_gradients(model, batch, grads, options);
  if (!std::isfinite(loss)) {
    double max_grad = 0.0;
    for (std::uint32_t i : grads.touched) max_grad = std::max(max_grad, std::abs(static_cast<double>(grads.tables[i])));
    for (auto g : grads.decoder.weights) max_grad = std::max(max_grad, std::abs(static_cast<double>(g)));
    for (auto g : grads.decoder.centers) max_grad = std::max(max_grad, std::abs(static_cast<double>(g)));
    throw NumericAbort("train_step: non-finite loss at step " + std::to_string(opt.step) +
                       " (max |grad| = " + std::to_string(max_grad) + ")");
  }
  apply_gradients(model, grads, opt);
  return loss;
}

std::vector<LossRecord> fit(FieldModel<float>& model, BatchSource<float>& source,
                            const FitConfig& config, const CheckpointCallback& on_checkpoint) {
  std::vector<LossRecord> history;
  history.reserve(config.steps);
  ModelOptimizer<float> opt(model, config.optimizer);
  GradBuffer<float> grads(model);
  const StepOptions options{config.task == Task::sdf ? LossKind::sdf_scaled_l1 : LossKind::rgb_l2,
                            config.epsilon, config.workers};
  const Rng batches = Rng(config.seed).substream("batches");
  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t step = 0; step < config.steps; ++step) {
    Rng rng = batches.substream(step);
    const auto batch = source.sample(config.batch_size, rng);
    const double lr = config.optimizer.table_lr(opt.step);
    const double loss = train_step(model, batch, opt, grads, options);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
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

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write loss history to " + path.string());
  out << "step,loss,lr,wall_ms\n";
  out.precision(9);
  for (const auto& r : history) out << r.step << ',' << r.loss << ',' << r.lr << ',' << r.wall_ms << '\n';
}

std::vector<float> regular_seed_points(int count, int dim) {
  const int side = std::max(1, static_cast<int>(std::ceil(std::pow(count, 1.0 / dim) - 1e-9)));
  std::vector<float> pts;
  pts.reserve(static_cast<std::size_t>(count) * dim);
  for (int i = 0; i < count; ++i) {
    int rem = i;
    for (int a = 0; a < dim; ++a) {
      pts.push_back((static_cast<float>(rem % side) + 0.5f) / static_cast<float>(side));
      rem /= side;
    }
  }
  return pts;
}

#define GNF_INSTANTIATE_TRAINING(Real)                                                            \
  template TrainBatch<Real> sample_sdf_points<Real>(const SurfaceOracle&, std::size_t, Rng&,     \
                                                    const SdfSamplingConfig&);                   \
  template TrainBatch<Real> sample_pixels<Real>(const ImageBuffer&, std::size_t, Rng&);           \
  template struct ModelOptimizer<Real>;                                                           \
  template struct GradBuffer<Real>;                                                               \
  template void apply_gradients<Real>(FieldModel<Real>&, GradBuffer<Real>&, ModelOptimizer<Real>&); \
  template double loss_and_gradients<Real>(const FieldModel<Real>&, const TrainBatch<Real>&,      \
                                           GradBuffer<Real>&, const StepOptions&);                \
  template double train_step<Real>(FieldModel<Real>&, const TrainBatch<Real>&,                    \
                                   ModelOptimizer<Real>&, GradBuffer<Real>&, const StepOptions&);

GNF_INSTANTIATE_TRAINING(float)
GNF_INSTANTIATE_TRAINING(double)

}  // namespace gnf
