#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "moesim/trace.hpp"
#include "moesim/trace_io.hpp"

namespace moesim {

enum class PredictorKind { residual, feature, statistical, random };

std::string_view to_string(PredictorKind kind);
PredictorKind parse_predictor_kind(std::string_view text);

/// Next-layer expert predictor. Immutable once built.
struct Predictor {
  PredictorKind kind = PredictorKind::feature;
  ResidualVectors residuals;
  FrequencyTable frequency;
  std::uint64_t seed = 0;

  static Predictor residual(ResidualVectors residuals);
  static Predictor feature();
  static Predictor statistical(FrequencyTable frequency);
  static Predictor random(std::uint64_t seed);
};

struct PrefetchDecision {
  /// Layer being predicted (current layer + 1).
  std::size_t layer = 0;
  /// Token counts for gate-based kinds, ranking scores otherwise.
  Workloads predicted_workloads;
  /// Highest predicted first, lower index on ties.
  std::vector<std::size_t> prefetch_set;
};

/// Mean over every calibration token of hidden(l+1) - hidden(l).
ResidualVectors calibrate_residuals(const Trace& calibration);

/// Sum of workloads per layer over the calibration trace.
FrequencyTable frequency_table(const Trace& calibration);

/// Residuals and frequency table from one calibration trace.
Calibration calibrate(const Trace& calibration);

/// Predicts layer `layer + 1` from layer `layer`'s gate inputs. The gate-based
/// kinds route every token row through `next_gate` (after adding the
/// layer's residual vector for the residual kind). `salt` only feeds the
/// random kind so different steps draw different permutations.
PrefetchDecision predict_next_layer(const Predictor& predictor, const Matrix& hidden, const Matrix& next_gate,
                                    std::size_t top_k, std::size_t layer, std::size_t prefetch_size,
                                    std::uint64_t salt = 0);

/// Expert indices by descending score, lower index on ties.
std::vector<std::size_t> rank_experts(const Workloads& scores);

/// |first k of predicted_set  ∩  true top-k| / k. Requires |predicted_set| >= k.
double prefetch_accuracy(std::span<const std::size_t> predicted_set, const Workloads& true_workloads, std::size_t k);

struct CosineLayer {
  std::size_t layer = 0;
  double corrected = 0.0;
  double uncorrected = 0.0;
  std::size_t tokens = 0;
  /// Tokens skipped because a vector was zero.
  std::size_t excluded = 0;
};

/// Per layer l: mean cos(h(l) + res(l), h(l+1)) and mean cos(h(l), h(l+1)).
std::vector<CosineLayer> cosine_similarity_report(const Trace& trace, const ResidualVectors& residuals);

struct AccuracyRow {
  PredictorKind kind = PredictorKind::feature;
  std::size_t top_k = 1;
  /// Predicted layer; `per_layer` holds one entry per layer 1..L-1.
  std::vector<double> per_layer;
  double mean = 0.0;
};

/// Average top-k accuracy of `predictor` over every step and layer pair.
AccuracyRow evaluate_prefetch(const Trace& trace, const Predictor& predictor, std::size_t top_k);

}  // namespace moesim
