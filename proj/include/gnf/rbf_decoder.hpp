#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gnf/grid_encoder.hpp"
#include "gnf/numerics.hpp"

namespace gnf {

/// Spherical: one bandwidth per kernel. Anisotropic: a diagonal bandwidth per
/// feature dimension.
enum class KernelMode : int { spherical = 0, anisotropic = 1 };

/// Exponents are clamped to this value; responses below e^-60 are zero for
/// every practical purpose.
inline constexpr double kMaxExponent = 60.0;

template <typename Real>
struct DecoderGrad {
  std::vector<Real> centers;
  std::vector<Real> log_bandwidths;
  std::vector<Real> weights;

  void reset() {
    std::fill(centers.begin(), centers.end(), Real(0));
    std::fill(log_bandwidths.begin(), log_bandwidths.end(), Real(0));
    std::fill(weights.begin(), weights.end(), Real(0));
  }
  void add(const DecoderGrad& o) {
    for (std::size_t i = 0; i < centers.size(); ++i) centers[i] += o.centers[i];
    for (std::size_t i = 0; i < log_bandwidths.size(); ++i) log_bandwidths[i] += o.log_bandwidths[i];
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] += o.weights[i];
  }
};

/// Single layer of N Gaussian kernels in feature space:
///
///   out_k(f) = sum_i W[i,k] * exp(-sum_j beta[i,j] * (f_j - mu[i,j])^2)
///
/// Bandwidths are stored as log_bandwidths (rho) with beta = exp(rho), so they
/// stay positive under any optimizer step. Call sync_bandwidths() after
/// mutating log_bandwidths directly.
///
/// Every decode entry point accepts feature rows of any width up to in_dim();
/// only that many leading coordinates of the centers and bandwidths are used.
/// This is how coarse reconstructions are produced from a prefix of the
/// feature levels.
template <typename Real>
class GaussianRbfLayer {
 public:
  GaussianRbfLayer() = default;
  GaussianRbfLayer(int kernels, int in_dim, int out_dim, KernelMode mode);

  int kernels() const { return kernels_; }
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  KernelMode mode() const { return mode_; }
  int bandwidths_per_kernel() const { return mode_ == KernelMode::spherical ? 1 : in_dim_; }

  std::vector<Real> centers;         // N x m
  std::vector<Real> log_bandwidths;  // N x 1 or N x m
  std::vector<Real> weights;         // N x q

  void sync_bandwidths();
  std::span<const Real> bandwidths() const { return bandwidth_; }

  /// mu ~ U[-center_scale, center_scale], beta = 1, W ~ U[-1/sqrt(N), 1/sqrt(N)].
  void init_random(Rng& rng, double center_scale = 1e-4);
  /// mu_i = encoding of seed point i; beta = 1, W as init_random.
  void init_centers_from_features(std::span<const Real> seed_points, const FeatureGrid<Real>& grid,
                                  Rng& rng);

  /// N kernel responses for one feature row.
  void kernel_eval(std::span<const Real> f, std::span<Real> responses) const;
  void decode(std::span<const Real> f, std::span<Real> out) const;
  /// F: B x active_dim, out: B x q. active_dim defaults to in_dim().
  void decode_batch(std::span<const Real> features, std::span<Real> out, int active_dim = -1) const;
  /// Decodes with the first k levels of a feature vector.
  void decode_sliced(std::span<const Real> f_sliced, int k, int features_per_level,
                     std::span<Real> out) const;

  /// Accumulates parameter gradients into `grad` and writes input gradients
  /// into `feature_grad` (B x active_dim, overwritten) when non-empty.
  void backward(std::span<const Real> features, std::span<const Real> upstream,
                DecoderGrad<Real>& grad, std::span<Real> feature_grad, int active_dim = -1) const;

  DecoderGrad<Real> make_grad() const;

  template <typename Other>
  GaussianRbfLayer<Other> cast() const;

 private:
  template <typename>
  friend class GaussianRbfLayer;

  void check_features(std::size_t size, int active_dim, std::size_t& batch) const;
  // Squared (bandwidth-weighted) distances of one row to all kernels, kernel-major
  // scratch layout: centers_t is m x N.
  void exponents(const Real* f, int active_dim, const Real* centers_t, Real* t) const;
  std::vector<Real> transposed_centers(int active_dim) const;

  int kernels_ = 0;
  int in_dim_ = 0;
  int out_dim_ = 0;
  KernelMode mode_ = KernelMode::spherical;
  std::vector<Real> bandwidth_;
};

// ---------------------------------------------------------------------------

template <typename Real>
GaussianRbfLayer<Real>::GaussianRbfLayer(int kernels, int in_dim, int out_dim, KernelMode mode)
    : kernels_(kernels), in_dim_(in_dim), out_dim_(out_dim), mode_(mode) {
  if (kernels < 1 || in_dim < 1 || out_dim < 1) {
    throw ContractError("GaussianRbfLayer: dimensions must be positive");
  }
  centers.assign(static_cast<std::size_t>(kernels) * in_dim, Real(0));
  log_bandwidths.assign(static_cast<std::size_t>(kernels) * bandwidths_per_kernel(), Real(0));
  weights.assign(static_cast<std::size_t>(kernels) * out_dim, Real(0));
  sync_bandwidths();
}

template <typename Real>
void GaussianRbfLayer<Real>::sync_bandwidths() {
  using std::exp;
  bandwidth_.resize(log_bandwidths.size());
  for (std::size_t i = 0; i < log_bandwidths.size(); ++i) bandwidth_[i] = exp(log_bandwidths[i]);
}

template <typename Real>
void GaussianRbfLayer<Real>::init_random(Rng& rng, double center_scale) {
  for (auto& c : centers) c = static_cast<Real>(rng.uniform(-center_scale, center_scale));
  std::fill(log_bandwidths.begin(), log_bandwidths.end(), Real(0));
  const double s = 1.0 / std::sqrt(static_cast<double>(kernels_));
  for (auto& w : weights) w = static_cast<Real>(rng.uniform(-s, s));
  sync_bandwidths();
}

template <typename Real>
void GaussianRbfLayer<Real>::init_centers_from_features(std::span<const Real> seed_points,
                                                        const FeatureGrid<Real>& grid, Rng& rng) {
  const std::size_t d = grid.config().dim;
  if (seed_points.size() != d * kernels_ || grid.feature_dim() != in_dim_) {
    throw ContractError("init_centers_from_features: need one seed point per kernel");
  }
  grid.encode_batch(seed_points, centers);
  std::fill(log_bandwidths.begin(), log_bandwidths.end(), Real(0));
  const double s = 1.0 / std::sqrt(static_cast<double>(kernels_));
  for (auto& w : weights) w = static_cast<Real>(rng.uniform(-s, s));
  sync_bandwidths();
}

template <typename Real>
void GaussianRbfLayer<Real>::check_features(std::size_t size, int active_dim,
                                            std::size_t& batch) const {
  if (active_dim < 1 || active_dim > in_dim_) {
    throw ContractError("GaussianRbfLayer: feature width " + std::to_string(active_dim) +
                        " outside [1, " + std::to_string(in_dim_) + "]");
  }
  batch = size / active_dim;
  if (batch * active_dim != size) throw ContractError("GaussianRbfLayer: ragged feature batch");
}

template <typename Real>
std::vector<Real> GaussianRbfLayer<Real>::transposed_centers(int active_dim) const {
  std::vector<Real> t(static_cast<std::size_t>(active_dim) * kernels_);
  for (int i = 0; i < kernels_; ++i) {
    for (int j = 0; j < active_dim; ++j) t[static_cast<std::size_t>(j) * kernels_ + i] = centers[i * in_dim_ + j];
  }
  return t;
}

template <typename Real>
void GaussianRbfLayer<Real>::exponents(const Real* f, int active_dim, const Real* centers_t,
                                       Real* t) const {
  const int n = kernels_;
  for (int j = 0; j < active_dim; ++j) {
    if (!std::isfinite(static_cast<double>(f[j]))) {
      throw ContractError("GaussianRbfLayer: non-finite feature");
    }
  }
  if (mode_ == KernelMode::spherical) {
    {
      const Real fj = f[0];
      for (int i = 0; i < n; ++i) {
        const Real diff = fj - centers_t[i];
        t[i] = diff * diff;
      }
    }
    for (int j = 1; j < active_dim; ++j) {
      const Real fj = f[j];
      const Real* ct = centers_t + static_cast<std::size_t>(j) * n;
      for (int i = 0; i < n; ++i) {
        const Real diff = fj - ct[i];
        t[i] += diff * diff;
      }
    }
    for (int i = 0; i < n; ++i) t[i] = bandwidth_[i] * t[i];
  } else {
    const std::size_t m = in_dim_;
    {
      const Real fj = f[0];
      for (int i = 0; i < n; ++i) {
        const Real diff = fj - centers_t[i];
        t[i] = bandwidth_[i * m] * diff * diff;
      }
    }
    for (int j = 1; j < active_dim; ++j) {
      const Real fj = f[j];
      const Real* ct = centers_t + static_cast<std::size_t>(j) * n;
      for (int i = 0; i < n; ++i) {
        const Real diff = fj - ct[i];
        t[i] += bandwidth_[i * m + j] * diff * diff;
      }
    }
  }
  const Real cap = static_cast<Real>(kMaxExponent);
  for (int i = 0; i < n; ++i) {
    if (t[i] > cap) t[i] = cap;
  }
}

template <typename Real>
void GaussianRbfLayer<Real>::kernel_eval(std::span<const Real> f, std::span<Real> responses) const {
  using std::exp;
  std::size_t batch = 0;
  check_features(f.size(), static_cast<int>(f.size()), batch);
  if (responses.size() != static_cast<std::size_t>(kernels_)) {
    throw ContractError("kernel_eval: responses must have one entry per kernel");
  }
  const auto ct = transposed_centers(static_cast<int>(f.size()));
  exponents(f.data(), static_cast<int>(f.size()), ct.data(), responses.data());
  for (auto& r : responses) r = exp(-r);
}

template <typename Real>
void GaussianRbfLayer<Real>::decode(std::span<const Real> f, std::span<Real> out) const {
  decode_batch(f, out, static_cast<int>(f.size()));
}

template <typename Real>
void GaussianRbfLayer<Real>::decode_sliced(std::span<const Real> f_sliced, int k,
                                           int features_per_level, std::span<Real> out) const {
  if (static_cast<std::size_t>(k) * features_per_level != f_sliced.size()) {
    throw ContractError("decode_sliced: feature width " + std::to_string(f_sliced.size()) +
                        " does not match " + std::to_string(k) + " levels");
  }
  decode_batch(f_sliced, out, static_cast<int>(f_sliced.size()));
}

template <typename Real>
void GaussianRbfLayer<Real>::decode_batch(std::span<const Real> features, std::span<Real> out,
                                          int active_dim) const {
  using std::exp;
  if (active_dim < 0) active_dim = in_dim_;
  std::size_t batch = 0;
  check_features(features.size(), active_dim, batch);
  const std::size_t q = out_dim_;
  if (out.size() != batch * q) throw ContractError("decode_batch: output shape mismatch");
  const auto ct = transposed_centers(active_dim);
  std::vector<Real> t(kernels_);
  for (std::size_t b = 0; b < batch; ++b) {
    exponents(features.data() + b * active_dim, active_dim, ct.data(), t.data());
    Real* o = out.data() + b * q;
    std::fill(o, o + q, Real(0));
    for (int i = 0; i < kernels_; ++i) {
      const Real response = exp(-t[i]);
      const Real* w = weights.data() + static_cast<std::size_t>(i) * q;
      for (std::size_t k = 0; k < q; ++k) o[k] += w[k] * response;
    }
  }
}

template <typename Real>
DecoderGrad<Real> GaussianRbfLayer<Real>::make_grad() const {
  DecoderGrad<Real> g;
  g.centers.assign(centers.size(), Real(0));
  g.log_bandwidths.assign(log_bandwidths.size(), Real(0));
  g.weights.assign(weights.size(), Real(0));
  return g;
}

template <typename Real>
void GaussianRbfLayer<Real>::backward(std::span<const Real> features, std::span<const Real> upstream,
                                      DecoderGrad<Real>& grad, std::span<Real> feature_grad,
                                      int active_dim) const {
  using std::exp;
  if (active_dim < 0) active_dim = in_dim_;
  std::size_t batch = 0;
  check_features(features.size(), active_dim, batch);
  const std::size_t q = out_dim_;
  const std::size_t m = in_dim_;
  const int n = kernels_;
  if (upstream.size() != batch * q) throw ContractError("decoder_backward: upstream shape mismatch");
  if (!feature_grad.empty() && feature_grad.size() != features.size()) {
    throw ContractError("decoder_backward: feature gradient shape mismatch");
  }
  const auto ct = transposed_centers(active_dim);
  std::vector<Real> dct(ct.size(), Real(0));  // center gradients, m x N
  std::vector<Real> t(n), scale(n);
  const Real cap = static_cast<Real>(kMaxExponent);
  const bool spherical = mode_ == KernelMode::spherical;
  for (std::size_t b = 0; b < batch; ++b) {
    const Real* f = features.data() + b * active_dim;
    const Real* up = upstream.data() + b * q;
    exponents(f, active_dim, ct.data(), t.data());
    for (int i = 0; i < n; ++i) {
      const Real response = exp(-t[i]);
      Real* gw = grad.weights.data() + static_cast<std::size_t>(i) * q;
      const Real* w = weights.data() + static_cast<std::size_t>(i) * q;
      Real g_response = Real(0);
      for (std::size_t k = 0; k < q; ++k) {
        gw[k] += up[k] * response;
        g_response += up[k] * w[k];
      }
      // dL/dt_i = -g_response * response; zero where the exponent was clamped.
      scale[i] = t[i] < cap ? g_response * response : Real(0);
    }
    if (spherical) {
      for (int i = 0; i < n; ++i) {
        // t = beta * d2, d(t)/d(rho) = t.
        grad.log_bandwidths[i] -= scale[i] * t[i];
        scale[i] *= Real(2) * bandwidth_[i];
      }
      for (int j = 0; j < active_dim; ++j) {
        const Real fj = f[j];
        const Real* c = ct.data() + static_cast<std::size_t>(j) * n;
        Real* dc = dct.data() + static_cast<std::size_t>(j) * n;
        Real df = Real(0);
        for (int i = 0; i < n; ++i) {
          const Real g = scale[i] * (fj - c[i]);
          dc[i] += g;
          df -= g;
        }
        if (!feature_grad.empty()) feature_grad[b * active_dim + j] = df;
      }
    } else {
      for (int j = 0; j < active_dim; ++j) {
        const Real fj = f[j];
        const Real* c = ct.data() + static_cast<std::size_t>(j) * n;
        Real* dc = dct.data() + static_cast<std::size_t>(j) * n;
        Real df = Real(0);
        for (int i = 0; i < n; ++i) {
          const Real diff = fj - c[i];
          const Real beta = bandwidth_[i * m + j];
          const Real sb = scale[i] * beta;
          grad.log_bandwidths[i * m + j] -= sb * diff * diff;
          const Real g = Real(2) * sb * diff;
          dc[i] += g;
          df -= g;
        }
        if (!feature_grad.empty()) feature_grad[b * active_dim + j] = df;
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < active_dim; ++j) grad.centers[i * m + j] += dct[static_cast<std::size_t>(j) * n + i];
  }
}

template <typename Real>
template <typename Other>
GaussianRbfLayer<Other> GaussianRbfLayer<Real>::cast() const {
  GaussianRbfLayer<Other> o;
  o.kernels_ = kernels_;
  o.in_dim_ = in_dim_;
  o.out_dim_ = out_dim_;
  o.mode_ = mode_;
  o.centers.assign(centers.begin(), centers.end());
  o.log_bandwidths.assign(log_bandwidths.begin(), log_bandwidths.end());
  o.weights.assign(weights.begin(), weights.end());
  o.sync_bandwidths();
  return o;
}

}  // namespace gnf
