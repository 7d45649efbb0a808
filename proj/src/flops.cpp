#include "gnf/flops.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "gnf/parallel.hpp"
#include "gnf/rbf_decoder.hpp"

namespace gnf {

std::uint64_t flops_mlp(std::uint64_t feature_dim, std::uint64_t width, std::uint64_t batch, FlopMode mode) {
  const std::uint64_t per = feature_dim * width + width * width + width;
  return (mode == FlopMode::forward ? 2 : 6) * per * batch;
}

std::uint64_t flops_rbf(std::uint64_t feature_dim, std::uint64_t kernels, std::uint64_t batch, FlopMode mode) {
  const std::uint64_t per = mode == FlopMode::forward ? 3 * feature_dim + 3 : 7 * feature_dim + 6;
  return per * batch * kernels;
}

template <typename Real>
RefMlp<Real>::RefMlp(int in_dim, int width, int out_dim) : in_(in_dim), width_(width), out_(out_dim) {
  if (in_dim < 1 || width < 1 || out_dim < 1) throw ContractError("RefMlp: dimensions must be positive");
  const std::size_t n = static_cast<std::size_t>(width) * in_dim + width + static_cast<std::size_t>(width) * width +
                        width + static_cast<std::size_t>(out_dim) * width + out_dim;
  params_.assign(n, Real(0));
}

template <typename Real>
void RefMlp<Real>::init_random(Rng& rng) {
  std::size_t o = 0;
  auto fill = [&](std::size_t count, int fan_in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < count; ++i) params_[o++] = static_cast<Real>(rng.uniform(-s, s));
  };
  fill(static_cast<std::size_t>(width_) * in_ + width_, in_);
  fill(static_cast<std::size_t>(width_) * width_ + width_, width_);
  fill(static_cast<std::size_t>(out_) * width_ + out_, width_);
}

template <typename Real>
void RefMlp<Real>::forward_row(const Real* f, Real* h1, Real* h2, Real* o) const {
  const Real* w1 = params_.data();
  const Real* b1 = w1 + static_cast<std::size_t>(width_) * in_;
  const Real* w2 = b1 + width_;
  const Real* b2 = w2 + static_cast<std::size_t>(width_) * width_;
  const Real* w3 = b2 + width_;
  const Real* b3 = w3 + static_cast<std::size_t>(out_) * width_;
  auto layer = [](const Real* w, const Real* bias, const Real* x, int rows, int cols, Real* y, bool relu) {
    for (int r = 0; r < rows; ++r) {
      Real acc = bias[r];
      const Real* wr = w + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) acc += wr[c] * x[c];
      y[r] = relu && acc < Real(0) ? Real(0) : acc;
    }
  };
  layer(w1, b1, f, width_, in_, h1, true);
  layer(w2, b2, h1, width_, width_, h2, true);
  layer(w3, b3, h2, out_, width_, o, false);
}

template <typename Real>
void RefMlp<Real>::decode_batch(std::span<const Real> features, std::span<Real> out) const {
  const std::size_t batch = features.size() / in_;
  if (batch * in_ != features.size() || out.size() != batch * out_) throw ContractError("RefMlp: shape mismatch");
  std::vector<Real> h1(width_), h2(width_);
  for (std::size_t b = 0; b < batch; ++b) forward_row(features.data() + b * in_, h1.data(), h2.data(), out.data() + b * out_);
}

template <typename Real>
void RefMlp<Real>::backward(std::span<const Real> features, std::span<const Real> upstream,
                            std::vector<Real>& weight_grad, std::span<Real> feature_grad) const {
  const std::size_t batch = features.size() / in_;
  if (upstream.size() != batch * out_) throw ContractError("RefMlp: upstream shape mismatch");
  weight_grad.resize(params_.size(), Real(0));
  const std::size_t w = width_;
  const Real* w2 = params_.data() + w * in_ + w;
  const Real* w3 = w2 + w * w + w;
  Real* g1 = weight_grad.data();
  Real* gb1 = g1 + w * in_;
  Real* g2 = gb1 + w;
  Real* gb2 = g2 + w * w;
  Real* g3 = gb2 + w;
  Real* gb3 = g3 + static_cast<std::size_t>(out_) * w;
  std::vector<Real> h1(w), h2(w), o(out_), d2(w), d1(w);
  const Real* w1 = params_.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const Real* f = features.data() + b * in_;
    const Real* up = upstream.data() + b * out_;
    forward_row(f, h1.data(), h2.data(), o.data());
    std::fill(d2.begin(), d2.end(), Real(0));
    for (int k = 0; k < out_; ++k) {
      gb3[k] += up[k];
      for (std::size_t c = 0; c < w; ++c) {
        g3[k * w + c] += up[k] * h2[c];
        d2[c] += up[k] * w3[k * w + c];
      }
    }
    for (std::size_t r = 0; r < w; ++r) {
      if (!(h2[r] > Real(0))) d2[r] = Real(0);
    }
    std::fill(d1.begin(), d1.end(), Real(0));
    for (std::size_t r = 0; r < w; ++r) {
      gb2[r] += d2[r];
      for (std::size_t c = 0; c < w; ++c) {
        g2[r * w + c] += d2[r] * h1[c];
        d1[c] += d2[r] * w2[r * w + c];
      }
    }
    for (std::size_t r = 0; r < w; ++r) {
      if (!(h1[r] > Real(0))) d1[r] = Real(0);
    }
    for (std::size_t r = 0; r < w; ++r) {
      gb1[r] += d1[r];
      for (int c = 0; c < in_; ++c) g1[r * in_ + c] += d1[r] * f[c];
    }
    if (!feature_grad.empty()) {
      for (int c = 0; c < in_; ++c) {
        Real acc = Real(0);
        for (std::size_t r = 0; r < w; ++r) acc += d1[r] * w1[r * in_ + c];
        feature_grad[b * in_ + c] = acc;
      }
    }
  }
}

template class RefMlp<float>;
template class RefMlp<double>;
template class RefMlp<CountedReal>;

FlopReport formula_report(DecoderKind kind, int feature_dim, int size, std::uint64_t batch) {
  FlopReport r;
  r.model = kind == DecoderKind::mlp ? "MLP (3 layers)" : "GNF decoder";
  r.feature_dim = feature_dim;
  r.size = size;
  r.batch = batch;
  const auto fn = kind == DecoderKind::mlp ? flops_mlp : flops_rbf;
  r.forward = fn(feature_dim, size, batch, FlopMode::forward);
  r.backward = fn(feature_dim, size, batch, FlopMode::total) - r.forward;
  return r;
}

FlopReport instrumented_count(DecoderKind kind, int feature_dim, int size, std::uint64_t batch,
                              bool include_backward) {
  if (feature_dim < 1 || size < 1) throw ContractError("instrumented_count: dimensions must be positive");
  FlopReport r;
  r.model = kind == DecoderKind::mlp ? "MLP (3 layers)" : "GNF decoder";
  r.feature_dim = feature_dim;
  r.size = size;
  r.batch = batch;
  Rng rng = Rng(0x0f10).substream("instrumented");
  std::vector<CountedReal> features(batch * feature_dim), out(batch), upstream(batch, CountedReal(1.0));
  for (auto& f : features) f = CountedReal(rng.uniform(0.0, 0.1));
  std::vector<CountedReal> feature_grad(features.size());
  if (kind == DecoderKind::rbf) {
    GaussianRbfLayer<CountedReal> layer(size, feature_dim, 1, KernelMode::spherical);
    layer.init_random(rng, 0.1);
    auto grad = layer.make_grad();
    CountedReal::reset();
    layer.decode_batch(features, out);
    r.forward = CountedReal::counts().total();
    if (include_backward) {
      CountedReal::reset();
      layer.backward(features, upstream, grad, feature_grad);
      r.backward = CountedReal::counts().total();
    }
  } else {
    RefMlp<CountedReal> mlp(feature_dim, size, 1);
    mlp.init_random(rng);
    std::vector<CountedReal> wgrad;
    CountedReal::reset();
    mlp.decode_batch(features, out);
    r.forward = CountedReal::counts().total();
    if (include_backward) {
      CountedReal::reset();
      mlp.backward(features, upstream, wgrad, feature_grad);
      r.backward = CountedReal::counts().total();
    }
  }
  CountedReal::reset();
  return r;
}

namespace {

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

ThroughputStats measure_throughput(DecoderKind kind, int feature_dim, int size, std::size_t batch, int repeats,
                                   int warmup, unsigned workers) {
  if (batch == 0) throw ContractError("measure_throughput: batch must be positive");
  if (repeats < 1) throw ContractError("measure_throughput: repeats must be positive");
  if (warmup < 3) throw ContractError("measure_throughput: at least 3 warmup iterations are required");
  Rng rng = Rng(0x7b).substream("throughput");
  std::vector<float> features(batch * feature_dim), out(batch);
  for (auto& f : features) f = static_cast<float>(rng.uniform(0.0, 0.1));
  GaussianRbfLayer<float> rbf;
  RefMlp<float> mlp;
  if (kind == DecoderKind::rbf) {
    rbf = GaussianRbfLayer<float>(size, feature_dim, 1, KernelMode::spherical);
    rbf.init_random(rng, 0.1);
  } else {
    mlp = RefMlp<float>(feature_dim, size, 1);
    mlp.init_random(rng);
  }
  auto run = [&] {
    parallel_chunks(batch, workers, [&](unsigned, std::size_t b, std::size_t e) {
      const auto f = std::span<const float>(features).subspan(b * feature_dim, (e - b) * feature_dim);
      const auto o = std::span<float>(out).subspan(b, e - b);
      if (kind == DecoderKind::rbf) {
        rbf.decode_batch(f, o);
      } else {
        mlp.decode_batch(f, o);
      }
    });
  };
  for (int i = 0; i < warmup; ++i) run();
  std::vector<double> rates;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rates.push_back(static_cast<double>(batch) / std::max(s, 1e-12));
  }
  return {percentile(rates, 0.5), percentile(rates, 0.1), percentile(rates, 0.9), repeats};
}

double BenchReport::formula_total_ratio() const {
  return static_cast<double>(rows.at(1).formula.total()) / static_cast<double>(rows.at(0).formula.total());
}

double BenchReport::measured_total_ratio() const {
  return static_cast<double>(rows.at(1).measured.total()) / static_cast<double>(rows.at(0).measured.total());
}

double BenchReport::published_total_ratio() const { return PublishedFlops::rbf_total / PublishedFlops::mlp_total; }

BenchReport run_bench(const BenchOptions& o) {
  if (o.batch == 0) throw ContractError("bench: batch must be positive");
  if (o.feature_dim < 1 || o.size < 1) throw ContractError("bench: dimensions must be positive");
  BenchReport report;
  report.feature_dim = o.feature_dim;
  report.size = o.size;
  report.batch = o.batch;
  report.workers = effective_workers(o.batch, o.workers);
  // The counted run is linear in B; count a small batch and scale.
  const std::uint64_t counted = std::min<std::uint64_t>(o.batch, 64);
  for (DecoderKind kind : {DecoderKind::mlp, DecoderKind::rbf}) {
    BenchRow row;
    row.formula = formula_report(kind, o.feature_dim, o.size, o.batch);
    row.measured = instrumented_count(kind, o.feature_dim, o.size, counted);
    row.measured.forward = row.measured.forward / counted * o.batch;
    row.measured.backward = row.measured.backward / counted * o.batch;
    row.measured.batch = o.batch;
    const bool published = o.feature_dim == 32 && o.size == 64 && o.batch == 10000;
    if (published) {
      row.published_forward = kind == DecoderKind::mlp ? PublishedFlops::mlp_forward : PublishedFlops::rbf_forward;
      row.published_total = kind == DecoderKind::mlp ? PublishedFlops::mlp_total : PublishedFlops::rbf_total;
    }
    row.throughput = measure_throughput(kind, o.feature_dim, o.size, o.batch, o.repeats, o.warmup, o.workers);
    report.rows.push_back(row);
  }
  return report;
}

void write_bench_csv(const std::filesystem::path& path, const BenchReport& report) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write bench report " + path.string());
  out << "model,F,size,B,workers,forward_formula,total_formula,forward_measured,total_measured,"
         "forward_published,total_published,points_per_sec_median,points_per_sec_p10,points_per_sec_p90\n";
  out.precision(10);
  for (const auto& r : report.rows) {
    out << r.formula.model << ',' << report.feature_dim << ',' << report.size << ',' << report.batch << ','
        << report.workers << ',' << r.formula.forward << ',' << r.formula.total() << ',' << r.measured.forward
        << ',' << r.measured.total() << ',';
    if (r.published_total > 0) out << r.published_forward << ',' << r.published_total;
    else out << ',';
    out << ',' << r.throughput.median << ',' << r.throughput.p10 << ',' << r.throughput.p90 << '\n';
  }
}

void print_bench_table(std::ostream& out, const BenchReport& report) {
  const auto flags = out.flags();
  out << "F=" << report.feature_dim << " size=" << report.size << " B=" << report.batch
      << " workers=" << report.workers << "\n";
  out << std::left << std::setw(16) << "Model" << std::right << std::setw(14) << "Fwd formula" << std::setw(14)
      << "Fwd measured" << std::setw(14) << "Fwd table" << std::setw(14) << "Tot formula" << std::setw(14)
      << "Tot measured" << std::setw(14) << "Tot table" << std::setw(16) << "Mpts/s median" << "\n";
  out << std::fixed << std::setprecision(2);
  for (const auto& r : report.rows) {
    auto mega = [](double v) { return v / 1e6; };
    out << std::left << std::setw(16) << r.formula.model << std::right << std::setw(14) << mega(r.formula.forward)
        << std::setw(14) << mega(r.measured.forward) << std::setw(14);
    if (r.published_forward > 0) out << mega(r.published_forward);
    else out << "-";
    out << std::setw(14) << mega(r.formula.total()) << std::setw(14) << mega(r.measured.total()) << std::setw(14);
    if (r.published_total > 0) out << mega(r.published_total);
    else out << "-";
    out << std::setw(16) << mega(r.throughput.median) << "\n";
  }
  out << std::setprecision(4) << "total ratio GNF/MLP: formula " << report.formula_total_ratio() << ", measured "
      << report.measured_total_ratio();
  if (report.rows.size() == 2 && report.rows[0].published_total > 0) {
    out << ", table " << report.published_total_ratio();
  }
  out << "\n";
  out.flags(flags);
}

}  // namespace gnf
