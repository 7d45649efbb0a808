#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gnf/grid_encoder.hpp"
#include "gnf/rbf_decoder.hpp"

namespace gnf {

enum class Task : std::uint32_t { sdf = 0, image = 1, radiance = 2 };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

/// Hash-grid encoder followed by a Gaussian RBF decoder.
template <typename Real>
struct FieldModel {
  Task task = Task::sdf;
  FeatureGrid<Real> grid;
  GaussianRbfLayer<Real> decoder;

  FieldModel() = default;
  FieldModel(Task t, const GridConfig& grid_config, int kernels, int out_dim, KernelMode mode)
      : task(t), grid(grid_config), decoder(kernels, grid_config.feature_dim(), out_dim, mode) {}

  int dim() const { return grid.config().dim; }
  int out_dim() const { return decoder.out_dim(); }

  /// points: B x d; out: B x q. `levels` < L decodes from a feature prefix.
  void forward(std::span<const Real> points, std::span<Real> out, int levels = -1) const {
    const auto& cfg = grid.config();
    if (levels < 0) levels = cfg.levels;
    const std::size_t batch = points.size() / cfg.dim;
    const int m = cfg.feature_dim();
    std::vector<Real> features(batch * m);
    grid.encode_batch(points, features);
    if (levels == cfg.levels) {
      decoder.decode_batch(features, out);
      return;
    }
    const int width = levels * cfg.features_per_level;
    if (levels < 1 || levels > cfg.levels) throw ContractError("forward: level count out of range");
    std::vector<Real> sliced(batch * width);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(features.begin() + b * m, width, sliced.begin() + b * width);
    }
    decoder.decode_batch(sliced, out, width);
  }

  template <typename Other>
  FieldModel<Other> cast() const {
    FieldModel<Other> o;
    o.task = task;
    o.grid = grid.template cast<Other>();
    o.decoder = decoder.template cast<Other>();
    return o;
  }

  std::size_t parameter_count() const {
    return grid.params().size() + decoder.centers.size() + decoder.log_bandwidths.size() +
           decoder.weights.size();
  }
};

}  // namespace gnf
