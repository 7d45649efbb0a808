#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "gnf/flops.hpp"

using namespace gnf;

TEST_SUITE("flops") {
  TEST_CASE("closed forms") {
    CHECK(flops_mlp(32, 64, 10000, FlopMode::forward) == 124160000u);
    CHECK(flops_rbf(32, 64, 10000, FlopMode::forward) == 63360000u);
    CHECK(flops_mlp(32, 64, 10000, FlopMode::total) == 3 * 124160000u);
    CHECK(flops_rbf(32, 64, 10000, FlopMode::total) == (7u * 32 + 6) * 64 * 10000);
    CHECK(flops_mlp(32, 64, 0, FlopMode::forward) == 0);
    CHECK(flops_rbf(32, 0, 10000, FlopMode::forward) == 0);
    CHECK(flops_rbf(16, 4, 2, FlopMode::forward) == 408);
    CHECK(flops_mlp(16, 8, 1, FlopMode::forward) == 400);
  }

  TEST_CASE("scaling properties") {
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
      const std::uint64_t f = 1 + rng.uniform_index(64), n = 1 + rng.uniform_index(128), b = 1 + rng.uniform_index(5000);
      const auto base = flops_rbf(f, n, b, FlopMode::forward);
      CHECK(flops_rbf(f, n, 2 * b, FlopMode::forward) == 2 * base);
      CHECK(flops_rbf(f, 3 * n, b, FlopMode::forward) == 3 * base);
      // affine in F with zero intercept at F = -1
      CHECK(flops_rbf(2 * f + 1, n, b, FlopMode::forward) == 2 * base);
      CHECK(flops_mlp(f, n, b, FlopMode::total) == 3 * flops_mlp(f, n, b, FlopMode::forward));
      const double ratio = double(flops_rbf(f, n, b, FlopMode::total)) / double(flops_rbf(f, n, b, FlopMode::forward));
      CHECK(ratio == doctest::Approx(double(7 * f + 6) / double(3 * f + 3)).epsilon(1e-12));
    }
    const double q = double(flops_mlp(32, 2048, 1, FlopMode::forward)) / double(flops_mlp(32, 1024, 1, FlopMode::forward));
    CHECK(q > 3.5);
  }

  TEST_CASE("instrumented counts") {
    const auto rbf = instrumented_count(DecoderKind::rbf, 16, 4, 2);
    CHECK(rbf.forward == 408);
    CHECK(rbf.total() == rbf.forward + rbf.backward);
    CHECK(instrumented_count(DecoderKind::rbf, 32, 64, 10).forward == flops_rbf(32, 64, 10, FlopMode::forward));

    const auto mlp = instrumented_count(DecoderKind::mlp, 16, 8, 1);
    CHECK(mlp.forward == 400);
    for (auto kind : {DecoderKind::rbf, DecoderKind::mlp}) {
      const auto one = instrumented_count(kind, 12, 6, 3), two = instrumented_count(kind, 12, 6, 6),
                 three = instrumented_count(kind, 12, 6, 9);
      CHECK(two.forward == 2 * one.forward);
      // backward carries a per-call parameter term, so it is affine in the batch
      CHECK(three.backward - two.backward == two.backward - one.backward);
    }
    CHECK_THROWS_AS(instrumented_count(DecoderKind::rbf, 0, 4, 2), ContractError);
  }

  TEST_CASE("formula report matches the closed forms") {
    const auto r = formula_report(DecoderKind::rbf, 32, 64, 10000);
    CHECK(r.forward == 63360000u);
    CHECK(r.total() == flops_rbf(32, 64, 10000, FlopMode::total));
    const auto m = formula_report(DecoderKind::mlp, 32, 64, 10000);
    CHECK(m.total() == flops_mlp(32, 64, 10000, FlopMode::total));
  }

  TEST_CASE("reference mlp gradients match finite differences") {
    RefMlp<double> mlp(5, 7, 2);
    Rng rng(2);
    mlp.init_random(rng);
    std::vector<double> f(3 * 5), up(3 * 2);
    for (auto& v : f) v = rng.uniform(-1, 1);
    for (auto& v : up) v = rng.uniform(-1, 1);
    std::vector<double> wg, fg(f.size());
    mlp.backward(f, up, wg, fg);
    std::vector<double> out(6);
    auto obj = [&](std::span<const double> x) {
      mlp.decode_batch(x, out);
      double s = 0;
      for (int i = 0; i < 6; ++i) s += up[i] * out[i];
      return s;
    };
    const auto num = finite_diff_grad(obj, f, 1e-6);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(fg[i] == doctest::Approx(num[i]).epsilon(1e-6));
    CHECK(wg.size() == mlp.parameter_count());
  }

  TEST_CASE("throughput statistics") {
    const auto one = measure_throughput(DecoderKind::rbf, 8, 8, 256, 1);
    CHECK(one.repeats == 1);
    CHECK(one.p10 == one.median);
    CHECK(one.p90 == one.median);
    CHECK(one.median > 0);
    const auto many = measure_throughput(DecoderKind::mlp, 8, 8, 256, 9);
    CHECK(many.p10 <= many.median);
    CHECK(many.median <= many.p90);
    CHECK_THROWS_AS(measure_throughput(DecoderKind::rbf, 8, 8, 256, 1, 2), ContractError);
    CHECK_THROWS_AS(measure_throughput(DecoderKind::rbf, 8, 8, 0, 1), ContractError);
  }

  TEST_CASE("doubling the batch keeps points per second within the linear band") {
    const auto a = measure_throughput(DecoderKind::rbf, 32, 64, 10000, 15);
    const auto b = measure_throughput(DecoderKind::rbf, 32, 64, 20000, 15);
    INFO(a.median << " vs " << b.median << " points/s");
    CHECK(b.median / a.median == doctest::Approx(1.0).epsilon(0.3));
  }

  TEST_CASE("bench report") {
    BenchOptions o;
    o.batch = 2000;
    o.repeats = 3;
    const auto r = run_bench(o);
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].formula.model.starts_with("MLP"));
    CHECK(r.published_total_ratio() == doctest::Approx(192.0 / 380.2).epsilon(1e-9));
    CHECK(r.formula_total_ratio() ==
          doctest::Approx(double(flops_rbf(32, 64, 1, FlopMode::total)) / double(flops_mlp(32, 64, 1, FlopMode::total))));
    std::ostringstream table;
    print_bench_table(table, r);
    CHECK(table.str().find("GNF decoder") != std::string::npos);
    const auto path = std::filesystem::temp_directory_path() / "gnf_bench.csv";
    write_bench_csv(path, r);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header.find("forward") != std::string::npos);
    std::filesystem::remove(path);
    o.batch = 0;
    CHECK_THROWS_AS(run_bench(o), ContractError);
  }
}
