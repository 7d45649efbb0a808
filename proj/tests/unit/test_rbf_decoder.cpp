#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gnf/flops.hpp"
#include "gnf/numerics.hpp"
#include "gnf/rbf_decoder.hpp"

using namespace gnf;

namespace {

template <typename Real>
GaussianRbfLayer<Real> random_layer(int n, int m, int q, KernelMode mode, std::uint64_t seed) {
  GaussianRbfLayer<Real> layer(n, m, q, mode);
  Rng rng(seed);
  for (auto& v : layer.centers) v = static_cast<Real>(rng.uniform(-0.5, 0.5));
  for (auto& v : layer.log_bandwidths) v = static_cast<Real>(rng.uniform(-0.5, 0.5));
  for (auto& v : layer.weights) v = static_cast<Real>(rng.uniform(-1, 1));
  layer.sync_bandwidths();
  return layer;
}

template <typename Real>
std::vector<Real> random_features(std::size_t count, std::uint64_t seed, double scale = 0.6) {
  Rng rng(seed);
  std::vector<Real> f(count);
  for (auto& v : f) v = static_cast<Real>(rng.uniform(-scale, scale));
  return f;
}

std::vector<double> flatten(const GaussianRbfLayer<double>& l) {
  std::vector<double> t(l.centers);
  t.insert(t.end(), l.log_bandwidths.begin(), l.log_bandwidths.end());
  t.insert(t.end(), l.weights.begin(), l.weights.end());
  return t;
}

void unflatten(GaussianRbfLayer<double>& l, std::span<const double> t) {
  auto it = t.begin();
  std::copy_n(it, l.centers.size(), l.centers.begin());
  it += l.centers.size();
  std::copy_n(it, l.log_bandwidths.size(), l.log_bandwidths.begin());
  it += l.log_bandwidths.size();
  std::copy_n(it, l.weights.size(), l.weights.begin());
  l.sync_bandwidths();
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace

TEST_SUITE("rbf_decoder") {
  TEST_CASE("kernel responses") {
    GaussianRbfLayer<double> layer(2, 3, 1, KernelMode::spherical);
    layer.centers = {0.1, 0.2, 0.3, 0.0, 0.0, 0.0};
    std::vector<double> b(2);

    const std::vector<double> at_center{0.1, 0.2, 0.3};
    layer.kernel_eval(at_center, b);
    CHECK(b[0] == 1.0);

    const std::vector<double> unit{1.0, 0.0, 0.0};
    layer.kernel_eval(unit, b);
    CHECK(b[1] == doctest::Approx(0.367879).epsilon(1e-6));

    double prev = b[1];
    for (double rho : {0.5, 1.0, 2.0}) {
      layer.log_bandwidths[1] = rho;
      layer.sync_bandwidths();
      layer.kernel_eval(unit, b);
      CHECK(b[1] < prev);
      prev = b[1];
    }

    const std::vector<double> bad{0.0, NAN, 0.0};
    CHECK_THROWS_AS(layer.kernel_eval(bad, b), ContractError);
    std::vector<double> short_b(1);
    CHECK_THROWS_AS(layer.kernel_eval(unit, short_b), ContractError);
  }

  TEST_CASE("anisotropic bandwidths weight each coordinate") {
    GaussianRbfLayer<double> layer(1, 2, 1, KernelMode::anisotropic);
    layer.log_bandwidths = {std::log(2.0), std::log(0.5)};
    layer.sync_bandwidths();
    std::vector<double> b(1);
    const std::vector<double> f{1.0, 2.0};
    layer.kernel_eval(f, b);
    CHECK(b[0] == doctest::Approx(std::exp(-(2.0 * 1.0 + 0.5 * 4.0))).epsilon(1e-14));
  }

  TEST_CASE("responses lie in (0, 1] and equal 1 only at the center") {
    for (auto mode : {KernelMode::spherical, KernelMode::anisotropic}) {
      auto layer = random_layer<double>(16, 4, 1, mode, 3);
      std::vector<double> b(16);
      const auto fs = random_features<double>(4 * 50, 4);
      for (int i = 0; i < 50; ++i) {
        layer.kernel_eval(std::span<const double>(fs).subspan(4 * i, 4), b);
        for (double v : b) {
          CHECK(v > 0.0);
          CHECK(v < 1.0);
        }
      }
      layer.kernel_eval(std::span<const double>(layer.centers).subspan(4 * 5, 4), b);
      CHECK(b[5] == 1.0);
    }
  }

  TEST_CASE("decode examples") {
    GaussianRbfLayer<double> one(1, 2, 1, KernelMode::spherical);
    one.centers = {0.3, -0.2};
    one.weights = {2.0};
    std::vector<double> out(1);
    one.decode(one.centers, out);
    CHECK(out[0] == 2.0);

    auto layer = random_layer<double>(8, 3, 2, KernelMode::spherical, 5);
    std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
    std::vector<double> o2(2);
    const auto f = random_features<double>(3, 6);
    layer.decode(f, o2);
    CHECK(o2[0] == 0.0);
    CHECK(o2[1] == 0.0);
  }

  TEST_CASE("kernel permutation leaves the output unchanged") {
    auto layer = random_layer<float>(12, 4, 3, KernelMode::anisotropic, 8);
    auto perm = layer;
    std::vector<int> order(12);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(1);
    for (int i = 11; i > 0; --i) std::swap(order[i], order[rng.uniform_index(i + 1)]);
    for (int i = 0; i < 12; ++i) {
      const int s = order[i];
      std::copy_n(layer.centers.begin() + 4 * s, 4, perm.centers.begin() + 4 * i);
      std::copy_n(layer.log_bandwidths.begin() + 4 * s, 4, perm.log_bandwidths.begin() + 4 * i);
      std::copy_n(layer.weights.begin() + 3 * s, 3, perm.weights.begin() + 3 * i);
    }
    perm.sync_bandwidths();
    const auto f = random_features<float>(4 * 20, 9);
    std::vector<float> a(3 * 20), b(3 * 20);
    layer.decode_batch(f, a);
    perm.decode_batch(f, b);
    for (int k = 0; k < 60; ++k) CHECK(std::abs(a[k] - b[k]) <= 1e-6f);
  }

  TEST_CASE("batch decode matches the scalar loop") {
    auto layer = random_layer<float>(16, 8, 2, KernelMode::spherical, 10);
    const auto f = random_features<float>(8 * 64, 11);
    std::vector<float> batch(2 * 64), one(2);
    layer.decode_batch(f, batch);
    for (int b = 0; b < 64; ++b) {
      layer.decode(std::span<const float>(f).subspan(8 * b, 8), one);
      for (int k = 0; k < 2; ++k) CHECK(std::abs(batch[2 * b + k] - one[k]) <= 1e-6f);
    }
    std::vector<float> twin(16);
    std::copy_n(f.begin(), 8, twin.begin());
    std::copy_n(f.begin(), 8, twin.begin() + 8);
    std::vector<float> o(4);
    layer.decode_batch(twin, o);
    CHECK(o[0] == o[2]);
    CHECK(o[1] == o[3]);
    std::vector<float> wrong(3);
    CHECK_THROWS_AS(layer.decode_batch(twin, wrong), ContractError);
  }

  TEST_CASE("decode is linear in the weights") {
    auto w1 = random_layer<float>(10, 5, 2, KernelMode::anisotropic, 12);
    auto w2 = w1, sum = w1;
    Rng rng(13);
    for (std::size_t i = 0; i < w1.weights.size(); ++i) {
      w2.weights[i] = static_cast<float>(rng.uniform(-1, 1));
      sum.weights[i] = w1.weights[i] + w2.weights[i];
    }
    const auto f = random_features<float>(5 * 30, 14);
    std::vector<float> a(60), b(60), c(60);
    w1.decode_batch(f, a);
    w2.decode_batch(f, b);
    sum.decode_batch(f, c);
    for (int k = 0; k < 60; ++k) CHECK(std::abs(c[k] - (a[k] + b[k])) <= 1e-6f);
  }

  TEST_CASE("sliced decoding uses only the leading coordinates") {
    auto layer = random_layer<double>(8, 6, 2, KernelMode::anisotropic, 15);
    const auto f = random_features<double>(6, 16);
    std::vector<double> full(2), sliced(2), again(2);
    layer.decode(f, full);
    layer.decode_sliced(f, 3, 2, sliced);
    CHECK(sliced == full);

    const std::span<const double> prefix(f.data(), 4);
    layer.decode_sliced(prefix, 2, 2, sliced);
    for (int i = 0; i < 8; ++i) {
      layer.centers[6 * i + 4] += 3.0;
      layer.log_bandwidths[6 * i + 5] -= 1.0;
    }
    layer.sync_bandwidths();
    layer.decode_sliced(prefix, 2, 2, again);
    CHECK(again == sliced);
    CHECK_THROWS_AS(layer.decode_sliced(prefix, 3, 2, again), ContractError);
    CHECK_THROWS_AS(layer.decode_sliced(f, 4, 2, again), ContractError);
  }

  TEST_CASE("backward examples") {
    auto layer = random_layer<double>(4, 3, 2, KernelMode::anisotropic, 17);
    auto grad = layer.make_grad();
    std::vector<double> fgrad(3);

    SUBCASE("zero upstream") {
      const auto f = random_features<double>(3, 18);
      const std::vector<double> up(2, 0.0);
      layer.backward(f, up, grad, fgrad);
      for (double v : grad.centers) CHECK(v == 0.0);
      for (double v : grad.log_bandwidths) CHECK(v == 0.0);
      for (double v : grad.weights) CHECK(v == 0.0);
      for (double v : fgrad) CHECK(v == 0.0);
    }

    SUBCASE("at a kernel center") {
      // other kernels pushed far away so only kernel 1 contributes
      for (int i : {0, 2, 3})
        for (int j = 0; j < 3; ++j) layer.centers[3 * i + j] = 50.0;
      const std::vector<double> f(layer.centers.begin() + 3, layer.centers.begin() + 6);
      const std::vector<double> up{0.4, -1.1};
      layer.backward(f, up, grad, fgrad);
      for (int j = 0; j < 3; ++j) {
        CHECK(grad.centers[3 + j] == 0.0);
        CHECK(grad.log_bandwidths[3 + j] == 0.0);
        CHECK(fgrad[j] == 0.0);
      }
      CHECK(grad.weights[2] == doctest::Approx(0.4));
      CHECK(grad.weights[3] == doctest::Approx(-1.1));
    }
  }

  TEST_CASE("backward matches finite differences") {
    for (int inst = 0; inst < 20; ++inst) {
      const auto mode = inst % 2 ? KernelMode::anisotropic : KernelMode::spherical;
      const int m = 2 + inst % 3, q = 1 + inst % 2, batch = 5;
      auto layer = random_layer<double>(4, m, q, mode, 100 + inst);
      const auto f = random_features<double>(batch * m, 200 + inst);
      const auto up = random_features<double>(batch * q, 300 + inst, 1.0);

      auto grad = layer.make_grad();
      std::vector<double> fgrad(batch * m);
      layer.backward(f, up, grad, fgrad);

      std::vector<double> out(batch * q);
      auto objective_params = [&](std::span<const double> t) {
        unflatten(layer, t);
        layer.decode_batch(f, out);
        return std::inner_product(out.begin(), out.end(), up.begin(), 0.0);
      };
      const auto theta = flatten(layer);
      const auto numeric = finite_diff_grad(objective_params, theta, 1e-5);
      unflatten(layer, theta);
      std::vector<double> analytic(grad.centers);
      analytic.insert(analytic.end(), grad.log_bandwidths.begin(), grad.log_bandwidths.end());
      analytic.insert(analytic.end(), grad.weights.begin(), grad.weights.end());
      for (std::size_t i = 0; i < theta.size(); ++i) CHECK(rel_err(analytic[i], numeric[i]) <= 1e-4);

      auto objective_features = [&](std::span<const double> x) {
        layer.decode_batch(x, out);
        return std::inner_product(out.begin(), out.end(), up.begin(), 0.0);
      };
      const auto fnum = finite_diff_grad(objective_features, f, 1e-5);
      for (std::size_t i = 0; i < f.size(); ++i) CHECK(rel_err(fgrad[i], fnum[i]) <= 1e-4);
    }
  }

  TEST_CASE("center init from features") {
    GridConfig g;
    g.levels = 4;
    g.n_max = 32;
    g.table_size = 1u << 10;
    g.init_scale = 0.3;
    FeatureGrid<float> grid(g);
    Rng rng(19);
    grid.init_uniform(rng);
    GaussianRbfLayer<float> layer(8, g.feature_dim(), 1, KernelMode::spherical);

    std::vector<float> seeds(8 * 3);
    for (auto& v : seeds) v = static_cast<float>(rng.uniform());
    layer.init_centers_from_features(seeds, grid, rng);
    std::vector<float> enc(8 * g.feature_dim());
    grid.encode_batch(seeds, enc);
    CHECK(layer.centers == enc);
    for (float b : layer.bandwidths()) CHECK(b == 1.0f);

    std::vector<float> same(8 * 3, 0.25f);
    layer.init_centers_from_features(same, grid, rng);
    for (int i = 1; i < 8; ++i)
      for (int j = 0; j < g.feature_dim(); ++j) CHECK(layer.centers[i * 4 + j] == layer.centers[j]);

    std::fill(grid.params().begin(), grid.params().end(), 0.0f);
    layer.init_centers_from_features(seeds, grid, rng);
    for (float v : layer.centers) CHECK(v == 0.0f);

    std::vector<float> too_few(7 * 3);
    CHECK_THROWS_AS(layer.init_centers_from_features(too_few, grid, rng), ContractError);
  }

  TEST_CASE("random init") {
    for (auto mode : {KernelMode::spherical, KernelMode::anisotropic}) {
      GaussianRbfLayer<float> a(64, 32, 49, mode), b(64, 32, 49, mode);
      Rng ra(20), rb(20);
      a.init_random(ra);
      b.init_random(rb);
      CHECK(a.centers == b.centers);
      CHECK(a.weights == b.weights);
      for (float beta : a.bandwidths()) CHECK(beta == 1.0f);
      for (float mu : a.centers) CHECK(std::abs(mu) <= 1e-4f);
      for (float w : a.weights) CHECK(std::abs(w) <= 1.0f / 8.0f);
    }
  }

  TEST_CASE("bandwidths stay positive under optimizer steps") {
    auto layer = random_layer<float>(6, 3, 1, KernelMode::anisotropic, 21);
    AdamState<float> state(layer.log_bandwidths.size(), AdamHyper{0.5, 0.9, 0.99, 1e-15});
    std::vector<float> g(layer.log_bandwidths.size(), 1.0f);
    for (int s = 0; s < 200; ++s) {
      adam_step<float>(layer.log_bandwidths, g, state);
      layer.sync_bandwidths();
    }
    for (float beta : layer.bandwidths()) CHECK(beta > 0.0f);
  }

  TEST_CASE("instrumented forward count equals the closed form") {
    for (int m : {2, 8, 16}) {
      for (int n : {1, 4, 16}) {
        const auto counted = instrumented_count(DecoderKind::rbf, m, n, 3, false);
        CHECK(counted.forward == static_cast<std::uint64_t>(3 * m + 3) * 3 * n);
      }
    }
  }
}
