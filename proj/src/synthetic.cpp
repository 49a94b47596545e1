#include "moesim/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "moesim/error.hpp"
#include "moesim/kernels.hpp"

namespace moesim {

namespace {

struct Structure {
  std::vector<Matrix> gates;
  std::vector<std::vector<double>> drift;
};

void check_options(const SyntheticTraceOptions& o) {
  o.config.validate();
  if (o.batch_size < 1) throw ConfigError("trace", "batch_size must be at least 1");
  if (o.prompt_len < 1) throw ConfigError("trace", "prompt_len must be at least 1");
  if (!(o.locality >= 0.0 && o.locality <= 1.0)) throw ConfigError("trace", "locality must lie in [0, 1]");
  if (!(o.drift_scale >= 0.0)) throw ConfigError("trace", "drift_scale must be nonnegative");
  if (!(o.noise_scale >= 0.0)) throw ConfigError("trace", "noise_scale must be nonnegative");
  if (!(o.gate_scale > 0.0)) throw ConfigError("trace", "gate_scale must be positive");
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void rescale(std::span<double> v, double target) {
  const double n = norm(v);
  if (n == 0.0) return;
  const double f = target / n;
  for (double& x : v) x *= f;
}

void fill_normal(std::span<double> v, std::mt19937_64& rng, std::normal_distribution<double>& normal) {
  for (double& x : v) x = normal(rng);
}

// Gates first, then drift: both consumers of the seed rely on this order.
Structure draw_structure(const SyntheticTraceOptions& o, std::mt19937_64& rng,
                         std::normal_distribution<double>& normal) {
  const ModelConfig& c = o.config;
  const double radius = std::sqrt(static_cast<double>(c.hidden_dim));
  Structure s;
  s.gates.reserve(c.num_layers);
  const double gate_sd = o.gate_scale / radius;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    Matrix g(c.hidden_dim, c.num_routed_experts);
    for (double& x : g.data) x = gate_sd * normal(rng);
    s.gates.push_back(std::move(g));
  }
  for (std::size_t l = 0; l + 1 < c.num_layers; ++l) {
    std::vector<double> d(c.hidden_dim);
    fill_normal(d, rng, normal);
    if (o.drift_scale == 0.0) {
      std::fill(d.begin(), d.end(), 0.0);
    } else {
      rescale(d, o.drift_scale * radius);
    }
    s.drift.push_back(std::move(d));
  }
  return s;
}

}  // namespace

Trace generate_synthetic_trace(const SyntheticTraceOptions& o) {
  check_options(o);
  const ModelConfig& c = o.config;
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Structure s = draw_structure(o, rng, normal);

  const std::size_t rows = o.phase == Phase::prefill ? o.batch_size * o.prompt_len : o.batch_size;
  const std::size_t d = c.hidden_dim;
  const double radius = std::sqrt(static_cast<double>(d));

  Matrix base(rows, d);
  for (std::size_t r = 0; r < rows; ++r) {
    fill_normal(base.row(r), rng, normal);
    rescale(base.row(r), radius);
  }

  Trace trace;
  trace.config = c;
  trace.batch_size = o.batch_size;
  trace.tokens_per_step = rows;
  trace.phase = o.phase;
  trace.generator_seed = o.seed;
  trace.has_features = true;
  trace.steps.reserve(o.num_steps);

  std::vector<double> fresh(d);
  for (std::size_t t = 0; t < o.num_steps; ++t) {
    if (t > 0 && o.locality < 1.0) {
      for (std::size_t r = 0; r < rows; ++r) {
        fill_normal(fresh, rng, normal);
        auto h = base.row(r);
        for (std::size_t j = 0; j < d; ++j) h[j] = o.locality * h[j] + (1.0 - o.locality) * fresh[j];
        rescale(h, radius);
      }
    }

    TokenStep step;
    step.index = t;
    step.eos = o.mark_eos && t + 1 == o.num_steps;
    step.hidden.reserve(c.num_layers);
    step.hidden.push_back(base);
    for (std::size_t l = 0; l + 1 < c.num_layers; ++l) {
      Matrix next = step.hidden.back();
      for (std::size_t r = 0; r < rows; ++r) {
        auto h = next.row(r);
        for (std::size_t j = 0; j < d; ++j) h[j] += s.drift[l][j];
        if (o.noise_scale > 0.0) {
          for (std::size_t j = 0; j < d; ++j) h[j] += o.noise_scale * normal(rng);
        }
      }
      step.hidden.push_back(std::move(next));
    }
    step.workloads.reserve(c.num_layers);
    for (std::size_t l = 0; l < c.num_layers; ++l) {
      step.workloads.push_back(kernels::derive_workloads(step.hidden[l], s.gates[l], c.top_k));
    }
    trace.steps.push_back(std::move(step));
  }
  trace.gate = GateParams{std::move(s.gates)};
  return trace;
}

std::vector<std::vector<double>> synthetic_drift_vectors(const SyntheticTraceOptions& o) {
  check_options(o);
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  return draw_structure(o, rng, normal).drift;
}

Workloads generate_skewed_workloads(std::mt19937_64& rng, std::size_t num_experts, std::size_t active,
                                    std::size_t tokens, std::size_t top_k, double skew) {
  if (top_k < 1 || active < top_k || active > num_experts || tokens * top_k < active) {
    throw ConfigError("trace", "skewed workload request is infeasible (N=" + std::to_string(num_experts) +
                                   ", active=" + std::to_string(active) + ", tokens=" + std::to_string(tokens) +
                                   ", k=" + std::to_string(top_k) + ")");
  }
  std::vector<std::size_t> experts(num_experts);
  std::iota(experts.begin(), experts.end(), std::size_t{0});
  std::shuffle(experts.begin(), experts.end(), rng);
  experts.resize(active);

  std::vector<double> weight(active);
  for (std::size_t r = 0; r < active; ++r) weight[r] = 1.0 / std::pow(static_cast<double>(r + 1), skew);

  // Every active expert gets one token; the rest follow the Zipf weights,
  // capped at one route per token per expert.
  std::vector<std::int64_t> count(active, 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto cap = static_cast<std::int64_t>(tokens);
  for (std::size_t left = tokens * top_k - active; left > 0; --left) {
    double total = 0.0;
    for (std::size_t r = 0; r < active; ++r) {
      if (count[r] < cap) total += weight[r];
    }
    double u = unit(rng) * total;
    std::size_t pick = active;
    for (std::size_t r = 0; r < active; ++r) {
      if (count[r] >= cap) continue;
      pick = r;
      if (u < weight[r]) break;
      u -= weight[r];
    }
    ++count[pick];
  }

  Workloads w(num_experts, 0);
  for (std::size_t r = 0; r < active; ++r) w[experts[r]] = count[r];
  return w;
}

}  // namespace moesim
