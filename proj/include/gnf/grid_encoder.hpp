#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gnf/numerics.hpp"

namespace gnf {

struct GridConfig {
  int dim = 3;
  int levels = 16;
  int n_min = 4;
  int n_max = 512;
  int features_per_level = 1;
  std::uint32_t table_size = 1u << 19;
  double init_scale = 1e-4;

  int feature_dim() const { return levels * features_per_level; }
  /// Throws ContractError naming the first offending field.
  void validate() const;
};

/// N_l = floor(n_min * b^l), b = (n_max / n_min)^(1 / (L - 1)); endpoints exact.
int level_resolution(const GridConfig& config, int level);

inline constexpr std::array<std::uint32_t, 3> kHashPrimes = {1u, 2654435761u, 805459861u};

/// XOR of coordinate * prime products (mod 2^32), masked to the table size.
inline std::uint32_t hash_index(std::span<const std::uint32_t> coords, std::uint32_t table_size) {
  std::uint32_t h = 0;
  for (std::size_t i = 0; i < coords.size(); ++i) h ^= coords[i] * kHashPrimes[i];
  return h & (table_size - 1);
}

/// Corner indices (into the level's entry range) and d-linear weights for one
/// point at one level.
template <typename Real>
struct LevelStencil {
  std::array<std::uint32_t, 8> entry{};
  std::array<Real, 8> weight{};
  int corners = 0;
};

/// Multiresolution grid of trainable codes. Levels whose (N_l + 1)^d lattice
/// fits in the table size are indexed densely; finer levels are hashed.
template <typename Real>
class FeatureGrid {
 public:
  FeatureGrid() = default;
  explicit FeatureGrid(const GridConfig& config);

  const GridConfig& config() const { return config_; }
  int feature_dim() const { return config_.feature_dim(); }
  int resolution(int level) const { return resolution_[level]; }
  bool is_dense(int level) const { return dense_[level]; }
  std::uint32_t level_entries(int level) const { return entries_[level]; }
  std::size_t level_offset(int level) const { return offset_[level]; }

  /// All codes, level-major; entry e of level l, feature c lives at
  /// level_offset(l) + e * features_per_level + c.
  std::span<Real> params() { return params_; }
  std::span<const Real> params() const { return params_; }

  /// Uniform in [-init_scale, init_scale].
  void init_uniform(Rng& rng);

  LevelStencil<Real> stencil(int level, std::span<const Real> p) const;

  void encode_point(std::span<const Real> p, std::span<Real> out) const;
  /// points: B x d row-major; out: B x m.
  void encode_batch(std::span<const Real> points, std::span<Real> out) const;

  /// Accumulates d(loss)/d(codes) into `grad` (same layout as params()).
  /// When `touched` is given, the flat index of every entry receiving a
  /// contribution is appended (duplicates possible).
  void backward(std::span<const Real> points, std::span<const Real> upstream,
                std::span<Real> grad, std::vector<std::uint32_t>* touched = nullptr) const;

  template <typename Other>
  FeatureGrid<Other> cast() const;

 private:
  template <typename>
  friend class FeatureGrid;

  void layout();

  GridConfig config_;
  std::vector<int> resolution_;
  std::vector<bool> dense_;
  std::vector<std::uint32_t> entries_;
  std::vector<std::size_t> offset_;
  std::vector<Real> params_;
};

/// First k levels of a feature vector.
template <typename Real>
std::vector<Real> slice_levels(std::span<const Real> f, int k, const GridConfig& config) {
  if (k < 1 || k > config.levels) {
    throw ContractError("slice_levels: level count " + std::to_string(k) + " outside [1, " +
                        std::to_string(config.levels) + "]");
  }
  if (f.size() < static_cast<std::size_t>(k * config.features_per_level)) {
    throw ContractError("slice_levels: feature vector too short");
  }
  return std::vector<Real>(f.begin(), f.begin() + k * config.features_per_level);
}

// ---------------------------------------------------------------------------

template <typename Real>
FeatureGrid<Real>::FeatureGrid(const GridConfig& config) : config_(config) {
  config_.validate();
  layout();
  params_.assign(offset_.back(), Real(0));
}

template <typename Real>
void FeatureGrid<Real>::layout() {
  const int levels = config_.levels;
  resolution_.resize(levels);
  dense_.resize(levels);
  entries_.resize(levels);
  offset_.assign(levels + 1, 0);
  for (int l = 0; l < levels; ++l) {
    resolution_[l] = level_resolution(config_, l);
    const double side = static_cast<double>(resolution_[l]) + 1.0;
    const double lattice = std::pow(side, config_.dim);
    dense_[l] = lattice <= static_cast<double>(config_.table_size);
    entries_[l] = dense_[l] ? static_cast<std::uint32_t>(lattice) : config_.table_size;
    offset_[l + 1] =
        offset_[l] + static_cast<std::size_t>(entries_[l]) * config_.features_per_level;
  }
}

template <typename Real>
void FeatureGrid<Real>::init_uniform(Rng& rng) {
  for (auto& x : params_) x = static_cast<Real>(rng.uniform(-config_.init_scale, config_.init_scale));
}

template <typename Real>
LevelStencil<Real> FeatureGrid<Real>::stencil(int level, std::span<const Real> p) const {
  const int d = config_.dim;
  const int res = resolution_[level];
  std::array<std::uint32_t, 3> cell{};
  std::array<Real, 3> frac{};
  for (int a = 0; a < d; ++a) {
    Real x = p[a];
    if (!std::isfinite(static_cast<double>(x))) {
      throw ContractError("encode_point: non-finite coordinate");
    }
    x = std::clamp(x, Real(0), Real(1)) * static_cast<Real>(res);
    int c = static_cast<int>(std::floor(static_cast<double>(x)));
    c = std::min(c, res - 1);
    cell[a] = static_cast<std::uint32_t>(c);
    frac[a] = x - static_cast<Real>(c);
  }
  LevelStencil<Real> s;
  s.corners = 1 << d;
  const std::uint32_t side = static_cast<std::uint32_t>(res) + 1;
  for (int k = 0; k < s.corners; ++k) {
    std::array<std::uint32_t, 3> corner{};
    Real w = Real(1);
    for (int a = 0; a < d; ++a) {
      const bool hi = (k >> a) & 1;
      corner[a] = cell[a] + (hi ? 1u : 0u);
      w *= hi ? frac[a] : Real(1) - frac[a];
    }
    std::uint32_t idx;
    if (dense_[level]) {
      idx = corner[0];
      std::uint32_t stride = side;
      for (int a = 1; a < d; ++a) {
        idx += corner[a] * stride;
        stride *= side;
      }
    } else {
      idx = hash_index(std::span<const std::uint32_t>(corner.data(), d), config_.table_size);
    }
    s.entry[k] = idx;
    s.weight[k] = w;
  }
  return s;
}

template <typename Real>
void FeatureGrid<Real>::encode_point(std::span<const Real> p, std::span<Real> out) const {
  const int fpl = config_.features_per_level;
  for (int l = 0; l < config_.levels; ++l) {
    const auto s = stencil(l, p);
    const Real* table = params_.data() + offset_[l];
    for (int c = 0; c < fpl; ++c) {
      Real acc = Real(0);
      for (int k = 0; k < s.corners; ++k) acc += s.weight[k] * table[s.entry[k] * fpl + c];
      out[l * fpl + c] = acc;
    }
  }
}

template <typename Real>
void FeatureGrid<Real>::encode_batch(std::span<const Real> points, std::span<Real> out) const {
  const std::size_t d = config_.dim;
  const std::size_t m = feature_dim();
  const std::size_t batch = points.size() / d;
  if (points.size() != batch * d || out.size() != batch * m) {
    throw ContractError("encode_batch: shape mismatch");
  }
  for (std::size_t b = 0; b < batch; ++b) encode_point(points.subspan(b * d, d), out.subspan(b * m, m));
}

template <typename Real>
void FeatureGrid<Real>::backward(std::span<const Real> points, std::span<const Real> upstream,
                                 std::span<Real> grad, std::vector<std::uint32_t>* touched) const {
  const std::size_t d = config_.dim;
  const std::size_t m = feature_dim();
  const std::size_t batch = points.size() / d;
  const int fpl = config_.features_per_level;
  if (upstream.size() != batch * m || grad.size() != params_.size()) {
    throw ContractError("encoder_backward: shape mismatch");
  }
  for (std::size_t b = 0; b < batch; ++b) {
    const auto p = points.subspan(b * d, d);
    const Real* up = upstream.data() + b * m;
    for (int l = 0; l < config_.levels; ++l) {
      const auto s = stencil(l, p);
      Real* g = grad.data() + offset_[l];
      for (int k = 0; k < s.corners; ++k) {
        const std::size_t base = static_cast<std::size_t>(s.entry[k]) * fpl;
        for (int c = 0; c < fpl; ++c) g[base + c] += s.weight[k] * up[l * fpl + c];
        if (touched) {
          for (int c = 0; c < fpl; ++c) {
            touched->push_back(static_cast<std::uint32_t>(offset_[l] + base + c));
          }
        }
      }
    }
  }
}

template <typename Real>
template <typename Other>
FeatureGrid<Other> FeatureGrid<Real>::cast() const {
  FeatureGrid<Other> g;
  g.config_ = config_;
  g.resolution_ = resolution_;
  g.dense_ = dense_;
  g.entries_ = entries_;
  g.offset_ = offset_;
  g.params_.assign(params_.begin(), params_.end());
  return g;
}

}  // namespace gnf
