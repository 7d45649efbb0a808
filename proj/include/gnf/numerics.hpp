#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gnf {

/// Raised when a caller breaks an operation's preconditions (shape mismatch,
/// out-of-range argument, malformed input).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when training produces a non-finite value.
class NumericAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Counter-based generator: the n-th draw of a stream is a pure function of
/// (key, n), so substreams derived by name never interact.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

  /// Independent stream keyed by `name`. Deriving the same name twice from
  /// equal parents yields identical streams.
  Rng substream(std::string_view name) const;
  Rng substream(std::uint64_t index) const;

  std::uint64_t next_u64() { return mix(key_ + mix(counter_++)); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Standard normal via Box-Muller (one draw per pair, no caching).
  double normal();

  std::uint64_t counter() const { return counter_; }

 private:
  explicit Rng(std::uint64_t key, int) : key_(key) {}
  static std::uint64_t mix(std::uint64_t z);

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

struct AdamHyper {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-15;
};

template <typename Real>
struct AdamState {
  std::vector<Real> m;
  std::vector<Real> v;
  std::uint64_t t = 0;
  AdamHyper hyper;

  AdamState() = default;
  AdamState(std::size_t size, AdamHyper h) : m(size, Real(0)), v(size, Real(0)), hyper(h) {}
};

/// One Adam step with bias correction. Entries whose gradient is exactly zero
/// keep their parameter and moments untouched (lazy update), which makes a
/// sparse step over the touched indices equivalent to the dense one.
template <typename Real>
void adam_step(std::span<Real> param, std::span<const Real> grad, AdamState<Real>& state);

/// Same update restricted to `indices`; every other entry must have zero
/// gradient for the result to equal adam_step.
template <typename Real>
void adam_step_sparse(std::span<Real> param, std::span<const Real> grad,
                      std::span<const std::uint32_t> indices, AdamState<Real>& state);

/// Constant for `warmup_steps`, then exponential decay by `decay_factor` every
/// `decay_steps`.
struct LrSchedule {
  double base_lr = 1e-2;
  std::uint64_t warmup_steps = 0;
  double decay_factor = 1.0;
  std::uint64_t decay_steps = 10000;

  double operator()(std::uint64_t step) const;
};

/// Central differences, one coordinate at a time.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta, double h);

}  // namespace gnf
