#pragma once

#include <cstdint>
#include <random>

#include "moesim/trace.hpp"

namespace moesim {

struct SyntheticTraceOptions {
  ModelConfig config;
  std::size_t batch_size = 8;
  std::size_t num_steps = 64;
  /// Weight of the previous step's layer-0 state in the per-token random walk.
  double locality = 0.8;
  /// Norm of each layer's drift vector, relative to the hidden-state norm.
  double drift_scale = 0.5;
  /// Per-component standard deviation of the per-layer transition noise,
  /// relative to unit-variance hidden components.
  double noise_scale = 0.0;
  /// Standard deviation of the gate logits for a unit-variance input.
  double gate_scale = 1.0;
  Phase phase = Phase::decode;
  /// Prompt tokens per sequence; prefill steps gate batch_size * prompt_len rows.
  std::size_t prompt_len = 1;
  /// Marks the final step as end-of-sequence for the whole batch.
  bool mark_eos = true;
  std::uint64_t seed = 0;
};

/// Builds a featureful trace with gate parameters. Layer-0 hidden states of
/// each token row follow h' = renorm(locality*h + (1-locality)*fresh), and
/// each layer adds a fixed drift vector plus Gaussian noise. Deterministic in
/// the seed.
Trace generate_synthetic_trace(const SyntheticTraceOptions& options);

/// The drift vectors the generator injects for these options (one per layer
/// transition), reproduced from the same seed.
std::vector<std::vector<double>> synthetic_drift_vectors(const SyntheticTraceOptions& options);

/// Skewed routing counts for a single layer: `tokens` tokens each pick
/// `top_k` distinct experts among `active` randomly chosen experts with
/// Zipf(`skew`) popularity. Every chosen expert receives at least one token,
/// so exactly `active` entries are nonzero. Requires top_k <= active <= N
/// and tokens * top_k >= active.
Workloads generate_skewed_workloads(std::mt19937_64& rng, std::size_t num_experts, std::size_t active,
                                    std::size_t tokens, std::size_t top_k, double skew);

}  // namespace moesim
