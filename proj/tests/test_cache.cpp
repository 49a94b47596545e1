#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "moesim/cache.hpp"
#include "moesim/error.hpp"
#include "moesim/synthetic.hpp"

using namespace moesim;

namespace {

void check_partition(const CacheState& s) {
  auto on = s.expert_on_gpu();
  auto off = s.expert_on_cpu();
  CHECK(on.size() == s.capacity());
  CHECK(on.size() + off.size() == s.num_experts());
  for (std::size_t e : on) CHECK(std::find(off.begin(), off.end(), e) == off.end());
}

}  // namespace

TEST_SUITE("cache") {
  TEST_CASE("initial set sizes, determinism and validation") {
    const CacheState s = init_cache(0, 8, 4, 4, 2, CachePolicy::workload, 1);
    CHECK(s.expert_on_gpu().size() == 4);
    CHECK(s.expert_on_cpu().size() == 4);
    CHECK(init_cache(0, 8, 4, 4, 2, CachePolicy::workload, 1).expert_on_gpu() == s.expert_on_gpu());
    CHECK_THROWS_AS(init_cache(0, 8, 8, 4, 2, CachePolicy::workload, 1), ConfigError);
    CHECK_THROWS_AS(init_cache(0, 8, 0, 4, 2, CachePolicy::workload, 1), ConfigError);
    CHECK_THROWS_AS(init_cache(0, 8, 6, 4, 3, CachePolicy::workload, 1), ConfigError);
    CHECK_THROWS_AS(init_cache(0, 8, 4, 0, 1, CachePolicy::workload, 1), ConfigError);
  }

  TEST_CASE("worked replacement: evict the lowest cached, admit the highest uncached") {
    CacheState s = init_cache(0, 8, 4, 4, 2, CachePolicy::workload, 1);
    const std::size_t first[] = {0, 1, 2, 3};
    s.set_cached(first);
    s.set_scores({9, 1, 8, 2, 7, 0, 6, 0});
    const auto ev = s.replace_now(3);
    REQUIRE(ev);
    CHECK(ev->evicted == std::vector<std::size_t>{1, 3});
    CHECK(ev->admitted == std::vector<std::size_t>{4, 6});
    CHECK(s.expert_on_gpu() == std::vector<std::size_t>{0, 2, 4, 6});
    for (double v : s.scores()) CHECK(v == 0.0);
  }

  TEST_CASE("equal scores swap the lowest indices on each side") {
    CacheState s = init_cache(0, 6, 3, 4, 1, CachePolicy::workload, 1);
    const std::size_t first[] = {1, 3, 5};
    s.set_cached(first);
    s.set_scores({2, 2, 2, 2, 2, 2});
    const auto ev = s.replace_now(0);
    REQUIRE(ev);
    CHECK(ev->evicted == std::vector<std::size_t>{1});
    CHECK(ev->admitted == std::vector<std::size_t>{0});
  }

  TEST_CASE("u_size 0 never replaces") {
    CacheState s = init_cache(0, 8, 4, 2, 0, CachePolicy::workload, 1);
    const auto before = s.expert_on_gpu();
    for (std::size_t t = 0; t < 10; ++t) {
      CHECK_FALSE(record_and_maybe_replace(s, {5, 5, 5, 5, 5, 5, 5, 5}, t, false));
    }
    CHECK(s.expert_on_gpu() == before);
  }

  TEST_CASE("scores are window sums and reset after the window") {
    CacheState s = init_cache(0, 4, 2, 3, 1, CachePolicy::workload, 1);
    record_and_maybe_replace(s, {1, 0, 2, 0}, 0, false);
    record_and_maybe_replace(s, {0, 3, 1, 0}, 1, false);
    CHECK(s.scores() == std::vector<double>{1, 3, 3, 0});
    CHECK(s.tokens_in_window() == 2);
    record_and_maybe_replace(s, {0, 0, 0, 1}, 2, false);
    CHECK(s.scores() == std::vector<double>{0, 0, 0, 0});
    CHECK(s.tokens_in_window() == 0);
  }

  TEST_CASE("EOS stops all updates") {
    CacheState s = init_cache(0, 4, 2, 1, 1, CachePolicy::workload, 1);
    const auto before = s.expert_on_gpu();
    CHECK_FALSE(record_and_maybe_replace(s, {9, 9, 9, 9}, 0, true));
    CHECK(s.stopped());
    const Workloads hot = {0, 0, 0, 0};
    for (std::size_t e : s.expert_on_cpu()) {
      Workloads w = hot;
      w[e] = 100;
      CHECK_FALSE(record_and_maybe_replace(s, w, 1, false));
    }
    CHECK(s.expert_on_gpu() == before);
  }

  TEST_CASE("score policy needs gate scores") {
    CacheState s = init_cache(0, 4, 2, 1, 1, CachePolicy::score, 1);
    CHECK_THROWS_AS(record_and_maybe_replace(s, {1, 0, 0, 0}, 0, false), InvalidInput);
    const std::vector<double> p = {0.1, 0.2, 0.3, 0.4};
    CHECK_NOTHROW(record_and_maybe_replace(s, {1, 0, 0, 0}, 0, false, p));
  }

  TEST_CASE("LRU inserts GPU-assigned misses over the least recently used") {
    CacheState s = init_cache(0, 4, 2, 1, 1, CachePolicy::lru, 1);
    const std::size_t first[] = {0, 1};
    s.set_cached(first);
    const std::vector<std::uint8_t> gpu = {1, 1, 1, 1};
    record_and_maybe_replace(s, {1, 0, 0, 0}, 0, false, {}, gpu);
    const auto ev = record_and_maybe_replace(s, {0, 0, 2, 0}, 1, false, {}, gpu);
    REQUIRE(ev);
    CHECK(ev->evicted == std::vector<std::size_t>{1});
    CHECK(s.expert_on_gpu() == std::vector<std::size_t>{0, 2});
    const std::vector<std::uint8_t> cpu_only = {0, 0, 0, 0};
    CHECK_FALSE(record_and_maybe_replace(s, {0, 0, 0, 5}, 2, false, {}, cpu_only));
  }

  TEST_CASE("lookup, hit rate and grouping") {
    CacheState s = init_cache(0, 4, 2, 4, 1, CachePolicy::workload, 1);
    const std::size_t first[] = {0, 1};
    s.set_cached(first);
    HitCounters c(1, 16);
    CHECK(c.lookup(s, 0, 0));
    CHECK(c.lookup(s, 1, 0));
    CHECK(c.lookup(s, 1, 1));
    CHECK_FALSE(c.lookup(s, 3, 1));
    CHECK(hit_rate(c) == 0.75);
    CHECK(layer_hit_rate(c, 0) == 0.75);

    s.set_scores({0, 0, 0, 5});
    s.replace_now(2);
    CHECK_FALSE(c.lookup(s, 0, 2));

    const auto g = hit_rate_by_group(c, 8);
    REQUIRE(g.size() == 2);
    CHECK_FALSE(g[0].empty);
    CHECK(g[1].empty);
    CHECK(std::isnan(g[1].rate));
    CHECK_THROWS_AS(hit_rate(HitCounters(1, 4)), InvalidInput);
    CHECK(hit_rate_by_group(HitCounters(2, 64), 8).size() == 8);
  }

  TEST_CASE("window where every GPU expert is cached scores 1.0") {
    CacheState s = init_cache(0, 6, 3, 4, 1, CachePolicy::workload, 2);
    HitCounters c(1, 4);
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t e : s.expert_on_gpu()) c.lookup(s, e, t);
    }
    CHECK(hit_rate_by_group(c, 4)[0].rate == 1.0);
  }

  TEST_CASE("property: replacements keep a partition and admit higher scores") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 40; ++trial) {
      const std::size_t n = 6 + trial % 10;
      const std::size_t cap = 1 + trial % (n - 1);
      const std::size_t u = std::min(cap, n - cap);
      const CachePolicy policy = trial % 3 == 0 ? CachePolicy::lru : CachePolicy::workload;
      CacheState s = init_cache(trial, n, cap, 1 + trial % 4, u, policy, trial);
      std::vector<double> sum(n, 0.0);
      for (std::size_t t = 0; t < 40; ++t) {
        Workloads w(n);
        for (auto& v : w) v = std::uniform_int_distribution<int>(0, 4)(rng);
        for (std::size_t e = 0; e < n; ++e) sum[e] += static_cast<double>(w[e]);
        const auto ev = record_and_maybe_replace(s, w, t, false);
        check_partition(s);
        if (policy == CachePolicy::workload) {
          if (s.tokens_in_window() == 0) {
            for (double v : s.scores()) CHECK(v == 0.0);
            if (ev) {
              for (std::size_t a : ev->admitted) {
                for (std::size_t e : ev->evicted) CHECK(sum[a] >= sum[e]);
              }
            }
            std::fill(sum.begin(), sum.end(), 0.0);
          } else {
            CHECK(s.scores() == sum);
          }
        }
      }
    }
  }

  TEST_CASE("property: identical inputs give identical event sequences") {
    SyntheticTraceOptions o;
    o.config = {3, 16, 0, 2, 16};
    o.num_steps = 24;
    o.seed = 4;
    const Trace t = generate_synthetic_trace(o);
    for (const CachePolicy p : {CachePolicy::workload, CachePolicy::lru, CachePolicy::score}) {
      CacheConfig c;
      c.policy = p;
      c.capacity = 6;
      c.update_size = 2;
      const auto a = replay_cache(t, c, CostModel::default_3090(), 5);
      const auto b = replay_cache(t, c, CostModel::default_3090(), 5);
      REQUIRE(a.events.size() == b.events.size());
      for (std::size_t i = 0; i < a.events.size(); ++i) {
        CHECK(a.events[i].admitted == b.events[i].admitted);
        CHECK(a.events[i].evicted == b.events[i].evicted);
      }
      CHECK(a.counters.step_hits == b.counters.step_hits);
    }
  }

  TEST_CASE("property: stationary routing reaches and keeps a perfect hit rate") {
    SyntheticTraceOptions o;
    o.config = {2, 16, 0, 2, 16};
    o.batch_size = 2;
    o.num_steps = 40;
    o.locality = 1.0;
    o.seed = 6;
    const Trace t = generate_synthetic_trace(o);
    CacheConfig c;
    c.capacity = 8;
    c.update_size = 4;
    const auto r = replay_cache(t, c, CostModel::default_3090(), 1);
    REQUIRE_FALSE(r.events.empty());
    const std::size_t settle = r.events.back().token_index + 1;
    for (std::size_t s = settle; s + 1 < t.steps.size(); ++s) CHECK(r.counters.step_misses[s] == 0);
  }

  TEST_CASE("capacity for ratio") {
    CHECK(capacity_for_ratio(0.5, 64) == 32);
    CHECK(capacity_for_ratio(0.125, 8) == 1);
    CHECK(capacity_for_ratio(0.01, 8) == 1);
    CHECK(capacity_for_ratio(0.99, 8) == 7);
    CHECK_THROWS(capacity_for_ratio(0.0, 8));
    CHECK_THROWS(capacity_for_ratio(1.0, 8));
  }
}
