#include "moesim/prefetch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "moesim/error.hpp"
#include "moesim/kernels.hpp"

namespace moesim {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void require_features(const Trace& trace, std::string_view what) {
  if (!trace.has_features) {
    throw InvalidInput("prefetch", std::string(what) + " needs a trace with hidden states");
  }
  if (trace.steps.empty()) throw InvalidInput("prefetch", std::string(what) + " needs at least one step");
}

}  // namespace

std::string_view to_string(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::residual: return "residual";
    case PredictorKind::feature: return "feature";
    case PredictorKind::statistical: return "statistical";
    case PredictorKind::random: return "random";
  }
  return "unknown";
}

PredictorKind parse_predictor_kind(std::string_view text) {
  if (text == "residual") return PredictorKind::residual;
  if (text == "feature") return PredictorKind::feature;
  if (text == "statistical") return PredictorKind::statistical;
  if (text == "random") return PredictorKind::random;
  throw ConfigError("prefetch", "unknown predictor '" + std::string(text) + "'");
}

Predictor Predictor::residual(ResidualVectors residuals) {
  Predictor p;
  p.kind = PredictorKind::residual;
  p.residuals = std::move(residuals);
  return p;
}

Predictor Predictor::feature() { return Predictor{}; }

Predictor Predictor::statistical(FrequencyTable frequency) {
  Predictor p;
  p.kind = PredictorKind::statistical;
  p.frequency = std::move(frequency);
  return p;
}

Predictor Predictor::random(std::uint64_t seed) {
  Predictor p;
  p.kind = PredictorKind::random;
  p.seed = seed;
  return p;
}

ResidualVectors calibrate_residuals(const Trace& trace) {
  require_features(trace, "residual calibration");
  const ModelConfig& c = trace.config;
  ResidualVectors out;
  const double tokens = static_cast<double>(trace.steps.size() * trace.tokens_per_step);
  for (std::size_t l = 0; l + 1 < c.num_layers; ++l) {
    std::vector<double> total(c.hidden_dim, 0.0);
    for (const TokenStep& step : trace.steps) {
      const auto sums = kernels::difference_sums(step.hidden[l], step.hidden[l + 1]);
      for (std::size_t j = 0; j < total.size(); ++j) total[j] += sums[j];
    }
    for (double& v : total) v /= tokens;
    out.layers.push_back(std::move(total));
  }
  return out;
}

FrequencyTable frequency_table(const Trace& trace) {
  FrequencyTable table;
  table.layers.assign(trace.config.num_layers, Workloads(trace.config.num_routed_experts, 0));
  for (const TokenStep& step : trace.steps) {
    for (std::size_t l = 0; l < trace.config.num_layers; ++l) {
      for (std::size_t e = 0; e < trace.config.num_routed_experts; ++e) table.layers[l][e] += step.workloads[l][e];
    }
  }
  return table;
}

Calibration calibrate(const Trace& trace) {
  Calibration cal;
  cal.residuals = calibrate_residuals(trace);
  cal.frequency = frequency_table(trace);
  cal.num_experts = trace.config.num_routed_experts;
  return cal;
}

std::vector<std::size_t> rank_experts(const Workloads& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

PrefetchDecision predict_next_layer(const Predictor& predictor, const Matrix& hidden, const Matrix& next_gate,
                                    std::size_t top_k, std::size_t layer, std::size_t prefetch_size,
                                    std::uint64_t salt) {
  const std::size_t n = next_gate.cols;
  PrefetchDecision d;
  d.layer = layer + 1;

  switch (predictor.kind) {
    case PredictorKind::residual: {
      if (layer >= predictor.residuals.layers.size()) {
        throw InvalidInput("prefetch", "no residual vector for layer " + std::to_string(layer) +
                                           " (the last layer has nothing to prefetch for)");
      }
      const auto& res = predictor.residuals.layers[layer];
      if (res.size() != hidden.cols) {
        throw InvalidInput("prefetch", "residual vector length " + std::to_string(res.size()) +
                                           " does not match hidden dimension " + std::to_string(hidden.cols));
      }
      Matrix shifted = hidden;
      for (std::size_t r = 0; r < shifted.rows; ++r) {
        auto row = shifted.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += res[j];
      }
      d.predicted_workloads = kernels::derive_workloads(shifted, next_gate, top_k);
      break;
    }
    case PredictorKind::feature:
      d.predicted_workloads = kernels::derive_workloads(hidden, next_gate, top_k);
      break;
    case PredictorKind::statistical:
      if (layer + 1 >= predictor.frequency.layers.size() || predictor.frequency.layers[layer + 1].size() != n) {
        throw InvalidInput("prefetch", "frequency table has no entry for layer " + std::to_string(layer + 1));
      }
      d.predicted_workloads = predictor.frequency.layers[layer + 1];
      break;
    case PredictorKind::random: {
      std::mt19937_64 rng(mix(predictor.seed ^ mix(layer ^ mix(salt))));
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      d.predicted_workloads.assign(n, 0);
      for (std::size_t r = 0; r < n; ++r) d.predicted_workloads[perm[r]] = static_cast<std::int64_t>(n - r);
      break;
    }
  }

  d.prefetch_set = rank_experts(d.predicted_workloads);
  d.prefetch_set.resize(std::min(prefetch_size, n));
  return d;
}

double prefetch_accuracy(std::span<const std::size_t> predicted_set, const Workloads& true_workloads, std::size_t k) {
  if (k == 0) throw InvalidInput("prefetch", "accuracy needs k >= 1");
  if (predicted_set.size() < k) {
    throw InvalidInput("prefetch", "predicted set has " + std::to_string(predicted_set.size()) + " experts, need " +
                                       std::to_string(k));
  }
  const auto truth = rank_experts(true_workloads);
  const std::size_t kk = std::min(k, truth.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (std::find(truth.begin(), truth.begin() + static_cast<std::ptrdiff_t>(kk), predicted_set[i]) !=
        truth.begin() + static_cast<std::ptrdiff_t>(kk)) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(k);
}

std::vector<CosineLayer> cosine_similarity_report(const Trace& trace, const ResidualVectors& residuals) {
  require_features(trace, "cosine similarity report");
  residuals.validate(trace.config);
  std::vector<CosineLayer> out;
  for (std::size_t l = 0; l + 1 < trace.config.num_layers; ++l) {
    CosineLayer row;
    row.layer = l;
    double corrected = 0.0;
    double uncorrected = 0.0;
    for (const TokenStep& step : trace.steps) {
      const auto with = kernels::row_cosines(step.hidden[l], residuals.layers[l], step.hidden[l + 1]);
      const auto without = kernels::row_cosines(step.hidden[l], {}, step.hidden[l + 1]);
      for (std::size_t r = 0; r < with.size(); ++r) {
        if (std::isnan(with[r]) || std::isnan(without[r])) {
          ++row.excluded;
          continue;
        }
        corrected += with[r];
        uncorrected += without[r];
        ++row.tokens;
      }
    }
    if (row.tokens > 0) {
      row.corrected = corrected / static_cast<double>(row.tokens);
      row.uncorrected = uncorrected / static_cast<double>(row.tokens);
    }
    out.push_back(row);
  }
  return out;
}

AccuracyRow evaluate_prefetch(const Trace& trace, const Predictor& predictor, std::size_t top_k) {
  const ModelConfig& c = trace.config;
  if (predictor.kind == PredictorKind::residual || predictor.kind == PredictorKind::feature) {
    require_features(trace, "gate-based prefetch evaluation");
    if (!trace.gate) throw InvalidInput("prefetch", "gate-based prefetch evaluation needs gate parameters");
  }
  AccuracyRow row;
  row.kind = predictor.kind;
  row.top_k = top_k;
  if (c.num_layers < 2 || trace.steps.empty()) return row;

  row.per_layer.assign(c.num_layers - 1, 0.0);
  const Matrix no_gate(c.hidden_dim, c.num_routed_experts);
  for (std::size_t l = 0; l + 1 < c.num_layers; ++l) {
    double sum = 0.0;
    for (const TokenStep& step : trace.steps) {
      const Matrix& gate = trace.gate ? trace.gate->layers[l + 1] : no_gate;
      const Matrix empty;
      const Matrix& hidden = trace.has_features ? step.hidden[l] : empty;
      const auto d = predict_next_layer(predictor, hidden, gate, c.top_k, l, top_k, step.index);
      sum += prefetch_accuracy(d.prefetch_set, step.workloads[l + 1], top_k);
    }
    row.per_layer[l] = sum / static_cast<double>(trace.steps.size());
  }
  row.mean = std::accumulate(row.per_layer.begin(), row.per_layer.end(), 0.0) / static_cast<double>(row.per_layer.size());
  return row;
}

}  // namespace moesim
