#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "gnf/field_model.hpp"
#include "gnf/image.hpp"
#include "gnf/numerics.hpp"

namespace gnf {

template <typename Real>
struct TrainBatch {
  int dim = 3;
  int out_dim = 1;
  std::vector<Real> points;   // B x d, inside [0,1]^d
  std::vector<Real> targets;  // B x q
  std::vector<Real> weights;  // B, >= 0

  std::size_t size() const { return weights.size(); }
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // d(loss)/d(pred), same layout as pred
};

/// (1/B) sum |pred - gt| / (|gt| + eps). Subgradient 0 where pred == gt.
LossResult sdf_loss(std::span<const double> pred, std::span<const double> gt, double epsilon);
/// (1/B) sum ||pred_i - gt_i||^2 over rows of width 3.
LossResult rgb_loss(std::span<const double> pred, std::span<const double> gt);

/// Ground truth for SDF fitting.
class SurfaceOracle {
 public:
  virtual ~SurfaceOracle() = default;
  virtual double signed_distance(const std::array<double, 3>& p) const = 0;
  /// Area-uniform point on the zero level set.
  virtual std::array<double, 3> sample_surface(Rng& rng) const = 0;
};

struct SdfSamplingConfig {
  double coarse_sigma = 0.05;
  double fine_sigma = 0.005;
  double target_clamp = 0.1;
};

/// 40% surface, 40% perturbed surface (half coarse, half fine noise), 20%
/// uniform in [0,1]^3. Counts are exact: surface = floor(2P/5).
template <typename Real>
TrainBatch<Real> sample_sdf_points(const SurfaceOracle& oracle, std::size_t count, Rng& rng,
                                   const SdfSamplingConfig& config = {});

/// Uniform pixel draws with replacement; point = pixel center.
template <typename Real>
TrainBatch<Real> sample_pixels(const ImageBuffer& image, std::size_t count, Rng& rng);

/// Produces training batches for `fit`.
template <typename Real>
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual TrainBatch<Real> sample(std::size_t count, Rng& rng) = 0;
};

template <typename Real>
class SdfBatchSource : public BatchSource<Real> {
 public:
  SdfBatchSource(const SurfaceOracle& oracle, SdfSamplingConfig config = {})
      : oracle_(oracle), config_(config) {}
  TrainBatch<Real> sample(std::size_t count, Rng& rng) override {
    return sample_sdf_points<Real>(oracle_, count, rng, config_);
  }

 private:
  const SurfaceOracle& oracle_;
  SdfSamplingConfig config_;
};

template <typename Real>
class PixelBatchSource : public BatchSource<Real> {
 public:
  explicit PixelBatchSource(const ImageBuffer& image) : image_(image) {}
  TrainBatch<Real> sample(std::size_t count, Rng& rng) override {
    return sample_pixels<Real>(image_, count, rng);
  }

 private:
  const ImageBuffer& image_;
};

enum class LossKind { sdf_scaled_l1, rgb_l2 };

struct OptimizerConfig {
  LrSchedule table_lr{1e-2, 0, 1.0, 10000};
  LrSchedule decoder_lr{1e-3, 0, 1.0, 10000};
  AdamHyper adam{};
};

/// Adam state for every trainable tensor of a FieldModel.
template <typename Real>
struct ModelOptimizer {
  OptimizerConfig config;
  AdamState<Real> tables;
  AdamState<Real> centers;
  AdamState<Real> log_bandwidths;
  AdamState<Real> weights;
  std::uint64_t step = 0;

  ModelOptimizer() = default;
  ModelOptimizer(const FieldModel<Real>& model, OptimizerConfig cfg);
};

/// Gradient buffers reused across steps.
template <typename Real>
struct GradBuffer {
  std::vector<Real> tables;
  std::vector<std::uint32_t> touched;
  std::vector<std::uint8_t> touched_mask;
  std::vector<std::uint32_t> unique_touched;
  DecoderGrad<Real> decoder;

  explicit GradBuffer(const FieldModel<Real>& model);
  /// Deduplicates `touched` (first-touch order) into unique_touched.
  void collect_touched();
  /// Zeroes exactly the entries listed in unique_touched and the decoder grads.
  void clear();
};

/// Applies one optimizer step from `grads` and clears them.
template <typename Real>
void apply_gradients(FieldModel<Real>& model, GradBuffer<Real>& grads, ModelOptimizer<Real>& opt);

struct StepOptions {
  LossKind loss = LossKind::sdf_scaled_l1;
  double epsilon = 0.01;
  unsigned workers = 1;
};

/// Forward, loss, backward through decoder and encoder, Adam on every
/// parameter group. Returns the loss evaluated before the update.
template <typename Real>
double train_step(FieldModel<Real>& model, const TrainBatch<Real>& batch, ModelOptimizer<Real>& opt,
                  GradBuffer<Real>& grads, const StepOptions& options);

/// Loss and full gradient without updating; used by gradient checks.
template <typename Real>
double loss_and_gradients(const FieldModel<Real>& model, const TrainBatch<Real>& batch,
                          GradBuffer<Real>& grads, const StepOptions& options);

struct LossRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct FitConfig {
  std::uint64_t steps = 20000;
  std::size_t batch_size = 1u << 14;
  double epsilon = 0.01;
  std::uint64_t seed = 0;
  Task task = Task::sdf;
  OptimizerConfig optimizer{};
  unsigned workers = 1;
  std::uint64_t checkpoint_every = 0;  // 0 disables the callback
};

using CheckpointCallback = std::function<void(std::uint64_t step, const FieldModel<float>& model)>;

/// sample -> train_step loop. `on_checkpoint` fires every checkpoint_every
/// steps and after the last step.
std::vector<LossRecord> fit(FieldModel<float>& model, BatchSource<float>& source,
                            const FitConfig& config, const CheckpointCallback& on_checkpoint = {});

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history);

/// Regular sqrt(N) x sqrt(N) (or nearest) lattice of pixel centers for center
/// initialization on images.
std::vector<float> regular_seed_points(int count, int dim);

}  // namespace gnf
