#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "moesim/error.hpp"
#include "moesim/prefetch.hpp"
#include "moesim/synthetic.hpp"
#include "moesim/trace_io.hpp"
#include "support.hpp"

using namespace moesim;

namespace {

Trace two_layer(const std::vector<std::vector<double>>& l0, const std::vector<std::vector<double>>& l1) {
  Trace t;
  t.config = {2, 2, 0, 1, l0[0].size()};
  t.tokens_per_step = l0.size();
  t.batch_size = l0.size();
  t.has_features = true;
  TokenStep s;
  for (const auto* layer : {&l0, &l1}) {
    Matrix m(layer->size(), (*layer)[0].size());
    for (std::size_t r = 0; r < layer->size(); ++r) std::copy((*layer)[r].begin(), (*layer)[r].end(), m.row(r).begin());
    s.hidden.push_back(m);
    s.workloads.push_back({static_cast<std::int64_t>(layer->size()), 0});
  }
  t.steps.push_back(s);
  return t;
}

SyntheticTraceOptions drift_options(std::uint64_t seed, double noise) {
  SyntheticTraceOptions o;
  o.config = {5, 16, 0, 2, 32};
  o.batch_size = 4;
  o.num_steps = 16;
  o.drift_scale = 0.6;
  o.noise_scale = noise;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_SUITE("prefetch") {
  TEST_CASE("residual calibration examples") {
    CHECK(calibrate_residuals(two_layer({{1, 2}}, {{1, 2}})).layers[0] == std::vector<double>{0, 0});
    CHECK(calibrate_residuals(two_layer({{1, 2}, {3, 4}}, {{1.5, 1}, {3.5, 3}})).layers[0] ==
          std::vector<double>{0.5, -1});
    // Two tokens with differences d1 = (2, 0) and d2 = (0, 4): mean (1, 2).
    CHECK(calibrate_residuals(two_layer({{0, 0}, {1, 1}}, {{2, 0}, {1, 5}})).layers[0] == std::vector<double>{1, 2});
  }

  TEST_CASE("hand gate computation with a residual vector (frozen oracle)") {
    Matrix gate(2, 4);
    gate.data = {0.5, -0.2, 0.1, 0.3, 0.1, 0.4, -0.3, 0.2};
    Matrix h(2, 2);
    h.data = {1, 0, 0, 1};
    // h + res: (0, 1) -> logits [0.1,0.4,-0.3,0.2] -> {1,3}; (-1, 2) ->
    // [-0.3,1.0,-0.7,0.1] -> {1,3}. Without res: {0,3} and {1,3}.
    const Predictor r = Predictor::residual(ResidualVectors{{{-1.0, 1.0}}});
    const PrefetchDecision d = predict_next_layer(r, h, gate, 2, 0, 2);
    CHECK(d.layer == 1);
    CHECK(d.predicted_workloads == Workloads{0, 2, 0, 2});
    CHECK(d.prefetch_set == std::vector<std::size_t>{1, 3});
    CHECK(predict_next_layer(Predictor::feature(), h, gate, 2, 0, 2).predicted_workloads == Workloads{1, 1, 0, 2});
  }

  TEST_CASE("noise-free drift makes residual prediction exact") {
    const Trace t = generate_synthetic_trace(drift_options(3, 0.0));
    const Predictor r = Predictor::residual(calibrate_residuals(t));
    for (const TokenStep& s : t.steps) {
      for (std::size_t l = 0; l + 1 < t.config.num_layers; ++l) {
        CHECK(predict_next_layer(r, s.hidden[l], t.gate->layers[l + 1], 2, l, 4).predicted_workloads ==
              s.workloads[l + 1]);
      }
    }
  }

  TEST_CASE("property: zero residuals equal the feature predictor") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Trace t = generate_synthetic_trace(drift_options(seed, 0.3));
      ResidualVectors zero;
      for (int l = 0; l < 4; ++l) zero.layers.emplace_back(32, 0.0);
      for (const TokenStep& s : t.steps) {
        for (std::size_t l = 0; l < 4; ++l) {
          const auto a = predict_next_layer(Predictor::residual(zero), s.hidden[l], t.gate->layers[l + 1], 2, l, 5);
          const auto b = predict_next_layer(Predictor::feature(), s.hidden[l], t.gate->layers[l + 1], 2, l, 5);
          CHECK(a.predicted_workloads == b.predicted_workloads);
          CHECK(a.prefetch_set == b.prefetch_set);
        }
      }
    }
  }

  TEST_CASE("accuracy examples") {
    const Workloads truth = {0, 5, 1, 7, 0, 2};
    const std::vector<std::size_t> top = {3, 1};
    CHECK(prefetch_accuracy(top, truth, 2) == 1.0);
    CHECK(prefetch_accuracy(std::vector<std::size_t>{0, 4}, truth, 2) == 0.0);
    CHECK(prefetch_accuracy(std::vector<std::size_t>{3, 0}, truth, 2) == 0.5);
    CHECK_THROWS_AS(prefetch_accuracy(std::vector<std::size_t>{3}, truth, 2), InvalidInput);
  }

  TEST_CASE("property: accuracy is invariant under expert relabeling") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
      Workloads w(10);
      for (auto& v : w) v = std::uniform_int_distribution<int>(0, 6)(rng);
      std::vector<std::size_t> pred(10);
      std::iota(pred.begin(), pred.end(), std::size_t{0});
      std::shuffle(pred.begin(), pred.end(), rng);
      std::vector<std::size_t> perm(10);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      // Relabel with distinct tie-free values so the true top-k is unique.
      for (std::size_t e = 0; e < 10; ++e) w[e] = w[e] * 16 + static_cast<std::int64_t>(e);
      Workloads w2(10);
      std::vector<std::size_t> pred2(10);
      for (std::size_t e = 0; e < 10; ++e) w2[perm[e]] = w[e];
      for (std::size_t j = 0; j < 10; ++j) pred2[j] = perm[pred[j]];
      for (std::size_t k : {1, 2, 3, 5}) CHECK(prefetch_accuracy(pred, w, k) == prefetch_accuracy(pred2, w2, k));
    }
  }

  TEST_CASE("statistical predictor ignores its input") {
    const Trace t = generate_synthetic_trace(drift_options(8, 0.3));
    const Predictor s = Predictor::statistical(frequency_table(t));
    const auto first = predict_next_layer(s, t.steps[0].hidden[1], t.gate->layers[2], 2, 1, 4);
    for (const TokenStep& step : t.steps) {
      const auto d = predict_next_layer(s, step.hidden[1], t.gate->layers[2], 2, 1, 4);
      CHECK(d.prefetch_set == first.prefetch_set);
      CHECK(d.predicted_workloads == first.predicted_workloads);
    }
  }

  TEST_CASE("random predictor is seeded") {
    const Trace t = generate_synthetic_trace(drift_options(8, 0.3));
    const auto a = predict_next_layer(Predictor::random(1), t.steps[0].hidden[0], t.gate->layers[1], 2, 0, 4, 3);
    const auto b = predict_next_layer(Predictor::random(1), t.steps[0].hidden[0], t.gate->layers[1], 2, 0, 4, 3);
    CHECK(a.prefetch_set == b.prefetch_set);
    CHECK(a.prefetch_set.size() == 4);
  }

  TEST_CASE("cosine similarity report") {
    SyntheticTraceOptions o = drift_options(2, 0.0);
    o.drift_scale = 0.0;
    const Trace still = generate_synthetic_trace(o);
    for (const CosineLayer& c : cosine_similarity_report(still, calibrate_residuals(still))) {
      CHECK(c.corrected == doctest::Approx(1.0));
      CHECK(c.uncorrected == doctest::Approx(1.0));
    }
    const Trace exact = generate_synthetic_trace(drift_options(2, 0.0));
    for (const CosineLayer& c : cosine_similarity_report(exact, calibrate_residuals(exact))) {
      CHECK(c.corrected == doctest::Approx(1.0));
      CHECK(c.corrected > c.uncorrected);
    }
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Trace noisy = generate_synthetic_trace(drift_options(seed, 0.3));
      for (const CosineLayer& c : cosine_similarity_report(noisy, calibrate_residuals(noisy))) {
        CHECK(c.corrected >= c.uncorrected);
      }
    }
  }

  TEST_CASE("property: residual beats feature top-1 on average over 20 drift traces") {
    double gain = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Trace t = generate_synthetic_trace(drift_options(40 + seed, 0.3));
      const Predictor r = Predictor::residual(calibrate_residuals(t));
      gain += evaluate_prefetch(t, r, 1).mean - evaluate_prefetch(t, Predictor::feature(), 1).mean;
    }
    CHECK(gain > 0.0);
  }

  TEST_CASE("calibration file round trip") {
    testing::TempDir dir("cal");
    const Calibration c = calibrate(generate_synthetic_trace(drift_options(1, 0.2)));
    save_calibration(c, dir / "c.cal", {"spec.trace = x"});
    const Calibration back = load_calibration(dir / "c.cal");
    CHECK(back.residuals == c.residuals);
    CHECK(back.frequency == c.frequency);
    CHECK_THROWS_AS(parse_predictor_kind("oracle"), ConfigError);
  }
}
