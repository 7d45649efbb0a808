#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "gnf/grid_encoder.hpp"

using namespace gnf;

namespace {

struct GoldenHash {
  std::array<std::uint32_t, 3> coords;
  std::uint32_t table_size;
  std::uint32_t index;
};

const GoldenHash kGolden[] = {
#include "hash_golden.inc"
};

GridConfig small_grid(int dim, int levels = 3, int fpl = 1, std::uint32_t table = 1u << 8) {
  GridConfig g;
  g.dim = dim;
  g.levels = levels;
  g.n_min = 2;
  g.n_max = 9;
  g.features_per_level = fpl;
  g.table_size = table;
  g.init_scale = 0.5;
  return g;
}

template <typename Real>
FeatureGrid<Real> random_grid(const GridConfig& g, std::uint64_t seed) {
  FeatureGrid<Real> grid(g);
  Rng rng(seed);
  grid.init_uniform(rng);
  return grid;
}

}  // namespace

TEST_SUITE("grid_encoder") {
  TEST_CASE("level resolutions") {
    GridConfig g;
    CHECK(level_resolution(g, 0) == 4);
    CHECK(level_resolution(g, 15) == 512);
    CHECK(level_resolution(g, 8) == 53);
    for (int l = 1; l < g.levels; ++l) CHECK(level_resolution(g, l) >= level_resolution(g, l - 1));

    GridConfig one = g;
    one.levels = 1;
    CHECK(level_resolution(one, 0) == 4);

    GridConfig wide = g;
    wide.levels = 32;
    wide.n_max = 2048;
    CHECK(level_resolution(wide, 31) == 2048);
  }

  TEST_CASE("config validation") {
    GridConfig g;
    g.table_size = 1000;
    CHECK_THROWS_AS(g.validate(), ContractError);
    g = GridConfig{};
    g.n_min = 600;
    CHECK_THROWS_AS(g.validate(), ContractError);
    g = GridConfig{};
    g.dim = 4;
    CHECK_THROWS_AS(g.validate(), ContractError);
    g = GridConfig{};
    g.levels = 0;
    CHECK_THROWS_AS(g.validate(), ContractError);
    CHECK_NOTHROW(GridConfig{}.validate());
  }

  TEST_CASE("hash index examples") {
    const std::uint32_t t19 = 1u << 19;
    const std::uint32_t zero[3] = {0, 0, 0}, x[3] = {1, 0, 0}, y[3] = {0, 1, 0};
    CHECK(hash_index(zero, t19) == 0);
    CHECK(hash_index(zero, 16) == 0);
    CHECK(hash_index(x, t19) == 1);
    CHECK(hash_index(y, t19) == 489905);
  }

  TEST_CASE("hash index golden values") {
    for (const auto& row : kGolden) {
      CAPTURE(row.coords[0]);
      CHECK(hash_index(row.coords, row.table_size) == row.index);
    }
  }

  TEST_CASE("dense levels are collision free") {
    const GridConfig g = small_grid(3, 3, 1, 1u << 12);
    FeatureGrid<double> grid(g);
    for (int l = 0; l < g.levels; ++l) {
      if (!grid.is_dense(l)) continue;
      const int n = grid.resolution(l) + 1;
      std::set<std::uint32_t> seen;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          for (int k = 0; k < n; ++k) {
            const double p[3] = {double(i) / (n - 1), double(j) / (n - 1), double(k) / (n - 1)};
            const auto s = grid.stencil(l, p);
            // the low corner of a node's cell is the node itself, except on the upper face
            std::uint32_t best = s.entry[0];
            for (int c = 0; c < s.corners; ++c)
              if (s.weight[c] > 0.5) best = s.entry[c];
            seen.insert(best);
          }
      CHECK(seen.size() == static_cast<std::size_t>(n * n * n));
    }
  }

  TEST_CASE("interpolation examples") {
    const GridConfig g = small_grid(2, 3, 2);
    auto grid = random_grid<double>(g, 3);
    const int m = g.feature_dim();
    std::vector<double> f(m);

    SUBCASE("grid node returns the node code") {
      for (int l = 0; l < g.levels; ++l) {
        const int n = grid.resolution(l);
        const double p[2] = {2.0 / n, 1.0 / n};
        const auto s = grid.stencil(l, p);
        int hot = -1;
        for (int c = 0; c < s.corners; ++c) {
          if (s.weight[c] == 1.0) hot = c;
          else CHECK(s.weight[c] == 0.0);
        }
        REQUIRE(hot >= 0);
        grid.encode_point(p, f);
        const auto table = grid.params().subspan(grid.level_offset(l));
        for (int c = 0; c < 2; ++c) CHECK(f[l * 2 + c] == table[s.entry[hot] * 2 + c]);
      }
    }

    SUBCASE("cell center returns the corner mean") {
      const int l = 1;
      const int n = grid.resolution(l);
      const double p[2] = {1.5 / n, 0.5 / n};
      const auto s = grid.stencil(l, p);
      grid.encode_point(p, f);
      const auto table = grid.params().subspan(grid.level_offset(l));
      for (int c = 0; c < 2; ++c) {
        double mean = 0;
        for (int k = 0; k < 4; ++k) mean += table[s.entry[k] * 2 + c] / 4;
        CHECK(f[l * 2 + c] == doctest::Approx(mean).epsilon(1e-14));
      }
    }

    SUBCASE("constant tables give a constant encoding") {
      std::fill(grid.params().begin(), grid.params().end(), 0.37);
      Rng rng(5);
      for (int i = 0; i < 50; ++i) {
        const double p[2] = {rng.uniform(), rng.uniform()};
        grid.encode_point(p, f);
        for (double v : f) CHECK(v == doctest::Approx(0.37).epsilon(1e-14));
      }
    }
  }

  TEST_CASE("out-of-domain points are clamped and non-finite points rejected") {
    const GridConfig g = small_grid(3);
    auto grid = random_grid<double>(g, 4);
    std::vector<double> a(g.feature_dim()), b(g.feature_dim());
    const double outside[3] = {-0.3, 1.7, 0.5}, clamped[3] = {0.0, 1.0, 0.5};
    grid.encode_point(outside, a);
    grid.encode_point(clamped, b);
    CHECK(a == b);
    const double bad[3] = {0.2, NAN, 0.1};
    CHECK_THROWS_AS(grid.encode_point(bad, a), ContractError);
  }

  TEST_CASE("weights are a partition of unity and outputs stay in the corner hull") {
    for (int dim : {2, 3}) {
      const GridConfig g = small_grid(dim, 4, 1, 1u << 6);
      auto grid = random_grid<double>(g, 11 + dim);
      std::vector<double> f(g.feature_dim());
      Rng rng(dim);
      for (int i = 0; i < 200; ++i) {
        double p[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
        grid.encode_point(std::span<const double>(p, dim), f);
        for (int l = 0; l < g.levels; ++l) {
          const auto s = grid.stencil(l, std::span<const double>(p, dim));
          double sum = 0, lo = INFINITY, hi = -INFINITY;
          const auto table = grid.params().subspan(grid.level_offset(l));
          for (int k = 0; k < s.corners; ++k) {
            CHECK(s.weight[k] >= 0.0);
            sum += s.weight[k];
            lo = std::min(lo, table[s.entry[k]]);
            hi = std::max(hi, table[s.entry[k]]);
          }
          CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
          CHECK(f[l] >= lo - 1e-15);
          CHECK(f[l] <= hi + 1e-15);
        }
      }
    }
  }

  TEST_CASE("encoding is Lipschitz away from cell boundaries") {
    const GridConfig g = small_grid(3, 4);
    auto grid = random_grid<double>(g, 8);
    double max_code = 0;
    for (double v : grid.params()) max_code = std::max(max_code, std::abs(v));
    double bound = 0;
    for (int l = 0; l < g.levels; ++l) bound += grid.resolution(l) * max_code;
    std::vector<double> a(g.feature_dim()), b(g.feature_dim());
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
      double p[3] = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
      double q[3];
      double norm = 0;
      for (int k = 0; k < 3; ++k) {
        q[k] = p[k] + rng.uniform(-1e-6, 1e-6);
        norm += std::abs(q[k] - p[k]);
      }
      grid.encode_point(p, a);
      grid.encode_point(q, b);
      double diff = 0;
      for (int k = 0; k < g.feature_dim(); ++k) diff += std::abs(a[k] - b[k]);
      // neighbouring codes differ by at most 2 max|code| along each axis
      CHECK(diff <= 2.0 * bound * norm + 1e-15);
    }
  }

  TEST_CASE("batch encoding matches the scalar path") {
    const GridConfig g = small_grid(3, 3, 2);
    auto grid = random_grid<float>(g, 21);
    const int m = g.feature_dim();
    Rng rng(2);
    std::vector<float> pts(3 * 5);
    for (auto& v : pts) v = static_cast<float>(rng.uniform());
    std::copy(pts.begin(), pts.begin() + 3, pts.begin() + 6);  // row 2 duplicates row 0
    std::vector<float> batch(5 * m), one(m);
    grid.encode_batch(pts, batch);
    for (int b = 0; b < 5; ++b) {
      grid.encode_point(std::span<const float>(pts).subspan(3 * b, 3), one);
      for (int k = 0; k < m; ++k) CHECK(batch[b * m + k] == one[k]);
    }
    for (int k = 0; k < m; ++k) CHECK(batch[2 * m + k] == batch[k]);
    std::vector<float> wrong(4 * m);
    CHECK_THROWS_AS(grid.encode_batch(pts, wrong), ContractError);
  }

  TEST_CASE("backward examples") {
    const GridConfig g = small_grid(2, 2);
    auto grid = random_grid<double>(g, 1);
    const int m = g.feature_dim();
    std::vector<double> grad(grid.params().size());

    SUBCASE("zero upstream leaves a zero buffer") {
      const double p[2] = {0.3, 0.6};
      const std::vector<double> up(m, 0.0);
      grid.backward(p, up, grad);
      for (double v : grad) CHECK(v == 0.0);
    }

    SUBCASE("grid node sends the whole upstream to one entry per level") {
      const double p[2] = {0.5, 0.5};  // a node on every level with even resolution
      const std::vector<double> up{0.7, -1.3};
      std::vector<std::uint32_t> touched;
      grid.backward(p, up, grad, &touched);
      for (int l = 0; l < g.levels; ++l) {
        if (grid.resolution(l) % 2 != 0) continue;
        int nonzero = 0;
        for (std::uint32_t e = 0; e < grid.level_entries(l); ++e) {
          const double v = grad[grid.level_offset(l) + e];
          if (v != 0.0) {
            ++nonzero;
            CHECK(v == up[l]);
          }
        }
        CHECK(nonzero == 1);
      }
      CHECK_FALSE(touched.empty());
    }

    SUBCASE("interior point: corner gradients sum to the upstream") {
      const double p[2] = {0.31, 0.77};
      const std::vector<double> up{0.9, 2.5};
      grid.backward(p, up, grad);
      for (int l = 0; l < g.levels; ++l) {
        double sum = 0;
        for (std::uint32_t e = 0; e < grid.level_entries(l); ++e) sum += grad[grid.level_offset(l) + e];
        CHECK(sum == doctest::Approx(up[l]).epsilon(1e-14));
      }
    }
  }

  TEST_CASE("backward matches finite differences on every touched entry") {
    for (int dim : {2, 3}) {
      const GridConfig g = small_grid(dim, 3, 2, 1u << 6);
      auto grid = random_grid<double>(g, 40 + dim);
      const int m = g.feature_dim();
      Rng rng(100 + dim);
      std::vector<double> pts(8 * dim), up(8 * m);
      for (auto& v : pts) v = rng.uniform();
      for (auto& v : up) v = rng.uniform(-1, 1);

      std::vector<double> grad(grid.params().size());
      std::vector<std::uint32_t> touched;
      grid.backward(pts, up, grad, &touched);
      std::sort(touched.begin(), touched.end());
      touched.erase(std::unique(touched.begin(), touched.end()), touched.end());

      std::vector<double> theta(grid.params().begin(), grid.params().end());
      std::vector<double> out(8 * m);
      auto objective = [&](std::span<const double> t) {
        std::copy(t.begin(), t.end(), grid.params().begin());
        grid.encode_batch(pts, out);
        double s = 0;
        for (std::size_t k = 0; k < out.size(); ++k) s += up[k] * out[k];
        return s;
      };
      const auto numeric = finite_diff_grad(objective, theta, 1e-5);
      std::copy(theta.begin(), theta.end(), grid.params().begin());
      for (std::uint32_t e : touched) {
        const double scale = std::max({std::abs(grad[e]), std::abs(numeric[e]), 1e-6});
        CHECK(std::abs(grad[e] - numeric[e]) / scale <= 1e-4);
      }
      for (std::size_t e = 0; e < grad.size(); ++e) {
        if (!std::binary_search(touched.begin(), touched.end(), static_cast<std::uint32_t>(e))) {
          CHECK(grad[e] == 0.0);
        }
      }
    }
  }

  TEST_CASE("slice levels") {
    const GridConfig g = small_grid(3, 4, 2);
    std::vector<double> f(g.feature_dim());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<double>(i);
    CHECK(slice_levels<double>(f, 4, g) == f);
    CHECK(slice_levels<double>(f, 1, g) == std::vector<double>{0.0, 1.0});
    const auto three = slice_levels<double>(f, 3, g);
    CHECK(slice_levels<double>(three, 2, g) == slice_levels<double>(f, 2, g));
    CHECK_THROWS_AS(slice_levels<double>(f, 0, g), ContractError);
    CHECK_THROWS_AS(slice_levels<double>(f, 5, g), ContractError);
  }

  TEST_CASE("float and double grids agree after a cast") {
    const GridConfig g = small_grid(3, 3);
    auto grid = random_grid<double>(g, 77);
    const auto single = grid.cast<float>();
    std::vector<double> a(g.feature_dim());
    std::vector<float> b(g.feature_dim());
    const double p[3] = {0.21, 0.62, 0.93};
    const float pf[3] = {0.21f, 0.62f, 0.93f};
    grid.encode_point(p, a);
    single.encode_point(pf, b);
    for (int k = 0; k < g.feature_dim(); ++k) CHECK(b[k] == doctest::Approx(a[k]).epsilon(1e-5));
  }
}
