#include <algorithm>
#include <random>

#include "doctest.h"
#include "moesim/error.hpp"
#include "moesim/simulator.hpp"
#include "moesim/synthetic.hpp"

using namespace moesim;

namespace {

SimConfig with_model(CostModel cm, PolicyKind kind = PolicyKind::greedy) {
  SimConfig c;
  c.cost_model = std::move(cm);
  c.assignment.kind = kind;
  return c;
}

SyntheticTraceOptions run_options(std::uint64_t seed) {
  SyntheticTraceOptions o;
  o.config = {4, 16, 1, 2, 32};
  o.batch_size = 8;
  o.num_steps = 24;
  o.noise_scale = 0.3;
  o.seed = seed;
  return o;
}

SimConfig full_config(std::size_t capacity = 8) {
  SimConfig c;
  c.prefetch_kind = PredictorKind::residual;
  c.prefetch_size = 2;
  CacheConfig cache;
  cache.capacity = capacity;
  cache.update_size = std::min<std::size_t>(4, std::min(capacity, 16 - capacity));
  c.cache = cache;
  c.keep_timelines = true;
  return c;
}

void check_timeline(const LayerTimeline& tl) {
  std::vector<PcieInterval> pcie = tl.pcie;
  std::sort(pcie.begin(), pcie.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  for (std::size_t i = 1; i < pcie.size(); ++i) CHECK(pcie[i].start >= pcie[i - 1].end);
  for (std::size_t i = 1; i < tl.gpu.size(); ++i) CHECK(tl.gpu[i].start >= tl.gpu[i - 1].end);
  for (const ComputeInterval& g : tl.gpu) {
    for (const PcieInterval& p : tl.pcie) {
      if (p.purpose == TransferPurpose::demand && p.expert == g.expert) CHECK(g.start >= p.end);
    }
  }
  const double lo = std::max(tl.demand_transfer_sum, tl.compute_sum);
  CHECK(tl.gpu_lane >= lo - 1e-9);
  CHECK(tl.gpu_lane <= tl.demand_transfer_sum + tl.compute_sum + 1e-9);
}

}  // namespace

TEST_SUITE("simulator") {
  TEST_CASE("two transfer-bound experts pipeline to 7 ms") {
    const SimConfig c = with_model(fit_cost_model({{1, 100.0}}, {{1, 1.0}}, 3.0), PolicyKind::all_gpu);
    const LayerResult r = simulate_layer({1, 1}, nullptr, {}, c);
    const LayerTimeline& tl = r.timeline;
    REQUIRE(tl.pcie.size() == 2);
    CHECK(tl.pcie[0].start == 0.0);
    CHECK(tl.pcie[0].end == 3.0);
    CHECK(tl.pcie[1].start == 3.0);
    CHECK(tl.pcie[1].end == 6.0);
    REQUIRE(tl.gpu.size() == 2);
    CHECK(tl.gpu[0].start == 3.0);
    CHECK(tl.gpu[0].end == 4.0);
    CHECK(tl.gpu[1].start == 6.0);
    CHECK(tl.gpu[1].end == 7.0);
    CHECK(tl.layer_latency == 7.0);
  }

  TEST_CASE("resident GPU experts need no transfers") {
    const SimConfig c = with_model(fit_cost_model({{1, 100.0}}, {{1, 1.0}}, 3.0));
    CacheState cache = init_cache(0, 4, 3, 4, 1, CachePolicy::workload, 0);
    const std::size_t cached[] = {0, 1, 2};
    cache.set_cached(cached);
    const LayerResult r = simulate_layer({2, 1, 3, 0}, &cache, {}, c);
    CHECK(r.timeline.pcie.empty());
    CHECK(r.timeline.gpu_lane == doctest::Approx(6.0));
    CHECK(r.timeline.gpu_lane == r.timeline.compute_sum);
  }

  TEST_CASE("all-cpu layer latency is the CPU sum plus the shared term") {
    CostModel cm = fit_cost_model({{1, 2.0}, {4, 5.0}}, {{1, 0.1}}, 1.0, 0.25);
    const SimConfig c = with_model(cm, PolicyKind::all_cpu);
    const LayerResult r = simulate_layer({1, 0, 4, 2}, nullptr, {}, c, 2);
    CHECK(r.timeline.layer_latency == doctest::Approx(2.0 + 5.0 + 3.0 + 0.25));
    CHECK(simulate_layer({1, 0, 4, 2}, nullptr, {}, c, 0).timeline.layer_latency == doctest::Approx(10.0));
  }

  TEST_CASE("prefetched experts create no demand transfers") {
    const SimConfig c = with_model(fit_cost_model({{1, 100.0}}, {{1, 1.0}}, 3.0), PolicyKind::all_gpu);
    const LayerResult r = simulate_layer({1, 1, 1}, nullptr, {0, 1, 0}, c);
    for (const auto& p : r.timeline.pcie) CHECK(p.expert != 1);
    CHECK(r.timeline.demand_transfers == 2);
  }

  TEST_CASE("property: every active expert runs on exactly one lane") {
    std::mt19937_64 rng(21);
    const SimConfig base = with_model(CostModel::default_3090());
    for (int i = 0; i < 200; ++i) {
      Workloads w(16);
      for (auto& v : w) v = std::uniform_int_distribution<int>(0, 3)(rng) == 0 ? 0 : std::uniform_int_distribution<int>(1, 40)(rng);
      SimConfig c = base;
      c.assignment.kind = static_cast<PolicyKind>(i % 6);
      if (i % 4 == 0) c.gpu_capacity = 3;
      const LayerResult r = simulate_layer(w, nullptr, {}, c);
      for (std::size_t e = 0; e < 16; ++e) {
        std::size_t on_gpu = 0;
        for (const auto& g : r.timeline.gpu) on_gpu += g.expert == e;
        if (w[e] == 0) {
          CHECK(on_gpu == 0);
          CHECK(r.assignment.cpu[e] == 0);
        } else {
          CHECK(on_gpu + r.assignment.cpu[e] == 1);
        }
      }
      check_timeline(r.timeline);
    }
  }

  TEST_CASE("property: timelines stay consistent across whole runs") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const Trace t = generate_synthetic_trace(run_options(seed));
      const Calibration cal = calibrate(t);
      const RunReport r = simulate_run(t, full_config(), &cal);
      for (std::size_t i = 0; i < r.layers.size(); ++i) {
        const LayerTimeline& tl = r.layers[i];
        check_timeline(tl);
        if (tl.layer + 1 < t.config.num_layers) {
          const LayerTimeline& next = r.layers[i + 1];
          for (const auto& p : tl.pcie) {
            if (p.purpose != TransferPurpose::prefetch) continue;
            CHECK(p.end <= tl.layer_latency + CostModel::default_3090().non_moe_layer_time + 1e-9);
            for (const auto& d : next.pcie) {
              if (d.purpose == TransferPurpose::demand) CHECK(d.expert != p.expert);
            }
          }
        }
      }
      CHECK(r.pcie_fraction >= 0.0);
      CHECK(r.pcie_fraction <= 1.0);
      for (double f : r.layer_pcie_fraction) CHECK(f <= 1.0);
      CHECK(r.cpu_busy_ms <= r.total_ms);
      CHECK(r.gpu_lane_ms <= r.total_ms);
    }
  }

  TEST_CASE("property: more cache never adds demand traffic for a fixed assignment") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      SyntheticTraceOptions o = run_options(seed);
      o.locality = 0.9;
      const Trace t = generate_synthetic_trace(o);
      double prev = 1e300;
      for (std::size_t cap = 1; cap < 16; ++cap) {
        SimConfig c = with_model(CostModel::default_3090(), PolicyKind::all_gpu);
        CacheConfig cache;
        cache.capacity = cap;
        cache.update_size = 0;
        c.cache = cache;
        const double demand = simulate_run(t, c).pcie_demand_ms;
        CHECK(demand <= prev);
        prev = demand;
      }
    }
  }

  TEST_CASE("no prefetch and a cache covering every active expert gives no demand traffic") {
    // Build routing that never touches the one expert each layer's initial cache leaves out.
    const std::size_t n = 8;
    const std::size_t layers = 3;
    Trace t;
    t.config = {layers, n, 0, 2, 4};
    t.batch_size = 2;
    t.tokens_per_step = 2;
    std::mt19937_64 rng(2);
    for (std::size_t s = 0; s < 10; ++s) {
      TokenStep step;
      step.index = s;
      for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t missing = init_cache(l, n, n - 1, 4, 0, CachePolicy::workload, 5).expert_on_cpu()[0];
        Workloads w(n, 0);
        for (int k = 0; k < 4; ++k) {
          std::size_t e = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
          if (e == missing) e = (e + 1) % n;
          ++w[e];
        }
        step.workloads.push_back(w);
      }
      t.steps.push_back(step);
    }
    SimConfig c;
    CacheConfig cache;
    cache.capacity = n - 1;
    cache.update_size = 0;
    c.cache = cache;
    c.seed = 5;
    const RunReport r = simulate_run(t, c);
    CHECK(r.pcie_demand_ms == 0.0);
    CHECK(r.pcie_fraction == 0.0);
    CHECK(pcie_fraction(r) == 0.0);
  }

  TEST_CASE("transfer-bound runs: PCIe share equals the GPU lane share") {
    const Trace t = generate_synthetic_trace(run_options(3));
    SimConfig c = with_model(fit_cost_model({{1, 50.0}}, {{1000, 1e-9}}, 2.0), PolicyKind::all_gpu);
    const RunReport r = simulate_run(t, c);
    CHECK(r.pcie_fraction == doctest::Approx(r.gpu_lane_ms / r.total_ms).epsilon(1e-6));
  }

  TEST_CASE("greedy beats all-cpu on a heavy trace") {
    SyntheticTraceOptions o = run_options(4);
    o.batch_size = 64;
    const Trace t = generate_synthetic_trace(o);
    const RunReport cpu = simulate_run(t, with_model(CostModel::default_3090(), PolicyKind::all_cpu));
    const RunReport greedy = simulate_run(t, with_model(CostModel::default_3090()));
    CHECK(greedy.mean_token_latency_ms < cpu.mean_token_latency_ms);
    CHECK(cpu.gpu_lane_ms == 0.0);
  }

  TEST_CASE("runs are deterministic and reports round trip") {
    const Trace t = generate_synthetic_trace(run_options(5));
    const Calibration cal = calibrate(t);
    SimConfig c = full_config();
    c.keep_timelines = false;
    const RunReport a = simulate_run(t, c, &cal);
    const RunReport b = simulate_run(t, c, &cal);
    CHECK(a.to_kv().to_string() == b.to_kv().to_string());
    const RunReport back = RunReport::from_kv(KvDocument::parse(a.to_kv().to_string(), "test"));
    CHECK(back.total_ms == a.total_ms);
    CHECK(back.pcie_fraction == a.pcie_fraction);
    CHECK(back.hit_rate == a.hit_rate);
    CHECK(back.prefetch_accuracy == a.prefetch_accuracy);
  }

  TEST_CASE("exact policy falls back to greedy above its limit") {
    SyntheticTraceOptions o = run_options(6);
    o.batch_size = 16;
    const Trace t = generate_synthetic_trace(o);
    SimConfig c = with_model(CostModel::default_3090(), PolicyKind::optimal);
    c.exact_limit = 4;
    const RunReport r = simulate_run(t, c);
    CHECK(r.optimal_fallbacks > 0);
    c.exact_limit = 24;
    CHECK(simulate_run(t, c).optimal_fallbacks == 0);
  }

  TEST_CASE("solver overhead is charged per search node") {
    const Trace t = generate_synthetic_trace(run_options(7));
    SimConfig c = with_model(CostModel::default_3090(), PolicyKind::beam);
    const RunReport free = simulate_run(t, c);
    c.solver_node_cost_ms = 0.001;
    const RunReport paid = simulate_run(t, c);
    CHECK(paid.total_ms == doctest::Approx(free.total_ms + 0.001 * static_cast<double>(free.solver_nodes)));
  }

  TEST_CASE("configuration errors") {
    const ModelConfig m{4, 16, 0, 2, 32};
    SimConfig c;
    c.prefetch_size = 17;
    CHECK_THROWS_AS(c.validate(m), ConfigError);
    c = SimConfig{};
    CHECK_THROWS_AS(AssignmentPolicy::parse("static-threshold:-1"), ConfigError);
    c.assignment.kind = PolicyKind::static_threshold;
    c.assignment.threshold = -1.0;
    CHECK_THROWS_AS(c.validate(m), ConfigError);
    CHECK_THROWS_AS(AssignmentPolicy::parse("simulated-annealing"), ConfigError);
    const Trace t = generate_synthetic_trace(run_options(1));
    c = SimConfig{};
    c.prefetch_size = 2;
    CHECK_THROWS_AS(simulate_run(t, c), ConfigError);
    for (const char* p : {"greedy", "optimal", "beam:3", "all-cpu", "all-gpu", "static-threshold:4"}) {
      CHECK(AssignmentPolicy::parse(p).to_string() == p);
    }
  }

  TEST_CASE("breakdown rows") {
    SyntheticTraceOptions o = run_options(8);
    o.batch_size = 32;
    o.locality = 0.9;
    const Trace t = generate_synthetic_trace(o);
    const Calibration cal = calibrate(t);
    SimConfig full = full_config();
    full.keep_timelines = false;
    const auto rows = breakdown_experiment(t, full, &cal);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].speedup == 1.0);
    CHECK(rows[0].step_factor == 1.0);
    CHECK(rows[1].speedup > 1.0);
    CHECK(rows[3].tokens_per_second > rows[2].tokens_per_second);
    const auto cfgs = breakdown_configs(full);
    CHECK(cfgs[0].second.assignment.kind == PolicyKind::all_cpu);
    CHECK_FALSE(cfgs[1].second.prefetch_enabled());
    CHECK_FALSE(cfgs[2].second.cache);
  }
}
