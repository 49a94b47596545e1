#include <random>

#include "doctest.h"
#include "moesim/error.hpp"
#include "moesim/metrics.hpp"
#include "moesim/synthetic.hpp"

using namespace moesim;

namespace {

Trace workload_trace(std::size_t n, std::size_t steps, std::uint64_t seed, bool frozen) {
  Trace t;
  t.config = {1, n, 0, 3, 4};
  t.batch_size = 1;
  t.tokens_per_step = 1;
  std::mt19937_64 rng(seed);
  Workloads first;
  for (std::size_t s = 0; s < steps; ++s) {
    Workloads w(n, 0);
    if (frozen && s > 0) {
      w = first;
    } else {
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t k = 0; k < 3; ++k) w[idx[k]] = 1;
      first = w;
    }
    TokenStep step;
    step.index = s;
    step.workloads.push_back(w);
    t.steps.push_back(step);
  }
  return t;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("a frozen trace puts all heatmap mass on the diagonal") {
    const HeatmapTable h = locality_heatmap(workload_trace(16, 10, 1, true), 0, 3);
    CHECK(h.total == 9 * 9);
    CHECK(h.diagonal == 27);
    CHECK(h.diagonal_ratio == doctest::Approx(27.0 / 81.0));
    std::int64_t diag_cells = 0;
    for (std::size_t e = 0; e < 16; ++e) diag_cells += h(e, e);
    CHECK(diag_cells == h.diagonal);
  }

  TEST_CASE("independent steps give a diagonal ratio near 1/N") {
    const std::size_t n = 16;
    const HeatmapTable h = locality_heatmap(workload_trace(n, 4000, 2, false), 0, 3);
    CHECK(h.total == 9 * 3999);
    // Each of the 3 top experts matches one of the 3 next ones with chance 3/N.
    CHECK(static_cast<double>(h.diagonal) / static_cast<double>(h.total / 3) == doctest::Approx(3.0 / n).epsilon(0.1));
  }

  TEST_CASE("heatmap rejects one-step traces and bad layers") {
    CHECK_THROWS_AS(locality_heatmap(workload_trace(8, 1, 3, false), 0, 3), InvalidInput);
    CHECK_THROWS(locality_heatmap(workload_trace(8, 5, 3, false), 4, 3));
  }

  TEST_CASE("property: heatmap total is top_m squared times the step transitions") {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 20; ++i) {
      const std::size_t steps = std::uniform_int_distribution<std::size_t>(2, 40)(rng);
      const std::size_t m = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
      const HeatmapTable h = locality_heatmap(workload_trace(12, steps, rng(), false), 0, m);
      CHECK(h.total == static_cast<std::int64_t>(m * m * (steps - 1)));
      std::int64_t sum = 0;
      for (auto c : h.cells) sum += c;
      CHECK(sum == h.total);
    }
  }

  TEST_CASE("load balance rows") {
    SyntheticTraceOptions o;
    o.config = {4, 16, 0, 2, 32};
    o.batch_size = 16;
    o.num_steps = 12;
    o.seed = 5;
    const Trace t = generate_synthetic_trace(o);
    SimConfig c;
    c.assignment = AssignmentPolicy::parse("all-cpu");
    const RunReport cpu = simulate_run(t, c);
    c.assignment = AssignmentPolicy::parse("greedy");
    const RunReport greedy = simulate_run(t, c);
    c.assignment = AssignmentPolicy::parse("static-threshold:8");
    const RunReport fixed = simulate_run(t, c);
    const auto rows = load_balance_table({{"cpu", cpu}, {"greedy", greedy}, {"static", fixed}});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].gpu_busy_ms == 0.0);
    CHECK(rows[1].imbalance <= rows[2].imbalance);
    CHECK(rows[1].imbalance >= 1.0);
  }

  TEST_CASE("CSV tables start with a format line and are deterministic") {
    const std::vector<BreakdownRow> rows = {{"naive", 10.0, 100.0, 0.5, 1.0, 1.0}, {"greedy", 20.0, 50.0, 0.4, 2.0, 2.0}};
    const std::string csv = breakdown_table(rows).to_csv();
    CHECK(csv.rfind("# moesim-table v1 breakdown\n", 0) == 0);
    CHECK(csv.find("config,tokens_per_second,mean_token_latency_ms,pcie_fraction,speedup,step_factor\n") !=
          std::string::npos);
    CHECK(csv == breakdown_table(rows).to_csv());
    const std::string hm = heatmap_table(locality_heatmap(workload_trace(8, 6, 7, false), 0, 2)).to_csv();
    CHECK(hm == heatmap_table(locality_heatmap(workload_trace(8, 6, 7, false), 0, 2)).to_csv());
  }
}
