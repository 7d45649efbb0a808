#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gnf/numerics.hpp"

namespace gnf {

/// Scalar operation tallies. One FLOP = one add/subtract, one multiply/divide,
/// or one transcendental call.
struct OpCounts {
  std::uint64_t add = 0;
  std::uint64_t mul = 0;
  std::uint64_t transcendental = 0;
  std::uint64_t total() const { return add + mul + transcendental; }
};

/// Double that counts arithmetic into a thread-local tally. Negation and
/// comparisons are free.
class CountedReal {
 public:
  CountedReal(double v = 0.0) : v_(v) {}
  explicit operator double() const { return v_; }
  double value() const { return v_; }

  static OpCounts& counts() {
    thread_local OpCounts c;
    return c;
  }
  static void reset() { counts() = {}; }

  CountedReal operator-() const { return CountedReal(-v_); }
  CountedReal& operator+=(CountedReal o) { ++counts().add; v_ += o.v_; return *this; }
  CountedReal& operator-=(CountedReal o) { ++counts().add; v_ -= o.v_; return *this; }
  CountedReal& operator*=(CountedReal o) { ++counts().mul; v_ *= o.v_; return *this; }
  CountedReal& operator/=(CountedReal o) { ++counts().mul; v_ /= o.v_; return *this; }
  friend CountedReal operator+(CountedReal a, CountedReal b) { return a += b; }
  friend CountedReal operator-(CountedReal a, CountedReal b) { return a -= b; }
  friend CountedReal operator*(CountedReal a, CountedReal b) { return a *= b; }
  friend CountedReal operator/(CountedReal a, CountedReal b) { return a /= b; }
  friend auto operator<=>(CountedReal a, CountedReal b) { return a.v_ <=> b.v_; }
  friend bool operator==(CountedReal a, CountedReal b) { return a.v_ == b.v_; }
  friend CountedReal exp(CountedReal a) {
    ++counts().transcendental;
    return CountedReal(std::exp(a.v_));
  }
  friend CountedReal sqrt(CountedReal a) {
    ++counts().transcendental;
    return CountedReal(std::sqrt(a.v_));
  }

 private:
  double v_;
};

enum class FlopMode { forward, total };

/// 2(Fw + w^2 + w)B forward, 6(Fw + w^2 + w)B total.
std::uint64_t flops_mlp(std::uint64_t feature_dim, std::uint64_t width, std::uint64_t batch, FlopMode mode);
/// (3F + 3)BN forward, (7F + 6)BN total.
std::uint64_t flops_rbf(std::uint64_t feature_dim, std::uint64_t kernels, std::uint64_t batch, FlopMode mode);

/// Published reference values at F = 32, w = N = 64, B = 10^4.
struct PublishedFlops {
  static constexpr double mlp_forward = 126.7e6;
  static constexpr double mlp_total = 380.2e6;
  static constexpr double rbf_forward = 69.1e6;
  static constexpr double rbf_total = 192.0e6;
};

/// MLP F -> w -> w -> q with ReLU hidden activations, used only as a
/// benchmarking baseline with the same batch API as the RBF decoder.
template <typename Real>
class RefMlp {
 public:
  RefMlp() = default;
  RefMlp(int in_dim, int width, int out_dim);

  void init_random(Rng& rng);
  int in_dim() const { return in_; }
  int width() const { return width_; }
  int out_dim() const { return out_; }

  /// F: B x in_dim, out: B x out_dim.
  void decode_batch(std::span<const Real> features, std::span<Real> out) const;
  /// Gradients of sum(upstream * out) w.r.t. all weights, biases and inputs.
  void backward(std::span<const Real> features, std::span<const Real> upstream, std::vector<Real>& weight_grad,
                std::span<Real> feature_grad) const;

  std::size_t parameter_count() const { return params_.size(); }

 private:
  void forward_row(const Real* f, Real* h1, Real* h2, Real* o) const;

  int in_ = 0;
  int width_ = 0;
  int out_ = 0;
  // W1 (w x F), b1, W2 (w x w), b2, W3 (q x w), b3.
  std::vector<Real> params_;
};

enum class DecoderKind { rbf, mlp };

struct FlopReport {
  std::string model;
  int feature_dim = 0;
  int size = 0;  // MLP width or RBF kernel count
  std::uint64_t batch = 0;
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
  std::uint64_t total() const { return forward + backward; }
};

/// Closed-form counts.
FlopReport formula_report(DecoderKind kind, int feature_dim, int size, std::uint64_t batch);
/// Counts the scalar operations executed by the real decode (and backward)
/// code on a CountedReal instance. Single-threaded.
FlopReport instrumented_count(DecoderKind kind, int feature_dim, int size, std::uint64_t batch,
                              bool include_backward = true);

struct ThroughputStats {
  double median = 0.0;  // points per second
  double p10 = 0.0;
  double p90 = 0.0;
  int repeats = 0;
};

/// Wall-clock points/sec over `repeats` timed decode_batch calls after
/// `warmup` (>= 3) untimed ones. Output dimension is 1.
ThroughputStats measure_throughput(DecoderKind kind, int feature_dim, int size, std::size_t batch, int repeats,
                                   int warmup = 3, unsigned workers = 1);

struct BenchRow {
  FlopReport formula;
  FlopReport measured;
  double published_forward = 0.0;
  double published_total = 0.0;
  ThroughputStats throughput;
};

struct BenchReport {
  int feature_dim = 32;
  int size = 64;
  std::uint64_t batch = 10000;
  unsigned workers = 1;
  std::vector<BenchRow> rows;  // MLP first, then RBF

  double formula_total_ratio() const;
  double measured_total_ratio() const;
  double published_total_ratio() const;
};

struct BenchOptions {
  int feature_dim = 32;
  int size = 64;
  std::uint64_t batch = 10000;
  int repeats = 10;
  int warmup = 3;
  unsigned workers = 1;
};

BenchReport run_bench(const BenchOptions& options);
void write_bench_csv(const std::filesystem::path& path, const BenchReport& report);
void print_bench_table(std::ostream& out, const BenchReport& report);

}  // namespace gnf
