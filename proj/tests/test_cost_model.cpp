#include <random>

#include "doctest.h"
#include "moesim/cost_model.hpp"
#include "moesim/error.hpp"
#include "support.hpp"

using namespace moesim;

TEST_SUITE("cost_model") {
  TEST_CASE("inactive experts cost nothing") {
    const CostModel m = CostModel::default_3090();
    CHECK(m.t_cpu(0) == 0.0);
    CHECK(m.t_gpu(0, false) == 0.0);
  }

  TEST_CASE("interpolation and slope extrapolation") {
    const CostCurve c = CostCurve::fit({{1, 2.0}, {3, 6.0}});
    CHECK(c(2) == doctest::Approx(4.0));
    // Frozen oracle: last slope (6 - 2) / (3 - 1) = 2 ms per token.
    CHECK(c(5) == doctest::Approx(10.0));
    CHECK(c(0.5) == doctest::Approx(1.0));
  }

  TEST_CASE("single sample passes through the anchor") {
    const CostCurve c = CostCurve::fit({{8, 4.0}});
    CHECK(c(4) == doctest::Approx(2.0));
  }

  TEST_CASE("t_gpu takes the larger of transfer and compute") {
    const CostModel m = fit_cost_model({{1, 1.0}}, {{4, 1.0}}, 3.0);
    CHECK(m.t_gpu(4, false) == doctest::Approx(3.0));
    CHECK(m.t_gpu(4, true) == doctest::Approx(1.0));
  }

  TEST_CASE("bad samples are rejected") {
    CHECK_THROWS_AS(CostCurve::fit({{2, 3.0}, {1, 5.0}}), InvalidInput);
    CHECK_THROWS_AS(CostCurve::fit({}), InvalidInput);
    CHECK_THROWS_AS(CostCurve::fit({{1, 1.0}, {1, 2.0}}), InvalidInput);
    CHECK_THROWS_AS(CostCurve::fit({{0, 1.0}}), InvalidInput);
    CHECK_THROWS_AS(fit_cost_model({{1, 1.0}}, {{1, 1.0}}, -1.0), InvalidInput);
  }

  TEST_CASE("property: fitted curves are monotone and t_gpu respects residency") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> step(0.0, 3.0);
    for (int i = 0; i < 200; ++i) {
      std::vector<CostSample> cpu;
      std::vector<CostSample> gpu;
      double a = 0.0;
      double b = 0.0;
      for (int k = 1; k <= 6; ++k) {
        a += step(rng);
        b += step(rng);
        cpu.push_back({static_cast<double>(k * k), a});
        gpu.push_back({static_cast<double>(k * 3), b});
      }
      const CostModel m = fit_cost_model(cpu, gpu, step(rng) + 0.01);
      double prev_c = 0.0;
      double prev_g = 0.0;
      for (double w = 0.0; w <= 60.0; w += 0.5) {
        CHECK(m.t_cpu(w) >= prev_c);
        CHECK(m.compute(w) >= prev_g);
        prev_c = m.t_cpu(w);
        prev_g = m.compute(w);
        CHECK(m.t_gpu(w, true) <= m.t_gpu(w, false));
        if (w > 0) CHECK(m.t_gpu(w, false) >= m.trans_time);
      }
    }
  }

  TEST_CASE("file round trip and the bundled profile") {
    testing::TempDir dir("cost");
    const CostModel m = CostModel::default_3090();
    m.save(dir / "m.cost");
    CHECK(CostModel::load(dir / "m.cost") == m);
    CHECK(CostModel::load(std::string(MOESIM_SOURCE_DIR) + "/configs/rtx3090.cost") == m);
    write_text_file(dir / "bad.cost", "format = moesim-cost v9\ncpu_samples = 1:1\ngpu_samples = 1:1\ntrans_time = 1\n",
                    "test");
    CHECK_THROWS_AS(CostModel::load(dir / "bad.cost"), InvalidInput);
  }
}
