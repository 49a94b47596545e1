#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "moesim/matrix.hpp"

namespace moesim {

/// Tokens routed to each routed expert in one step of one layer.
using Workloads = std::vector<std::int64_t>;

/// Shape of an MoE model. Shared experts are always active and never
/// part of the routed workload vector.
struct ModelConfig {
  std::size_t num_layers = 1;
  std::size_t num_routed_experts = 8;
  std::size_t num_shared_experts = 0;
  std::size_t top_k = 2;
  std::size_t hidden_dim = 64;

  /// Throws InvalidInput on an impossible shape.
  void validate() const;

  /// Known shapes: "deepseek-v2-lite", "qwen3-30b-a3b", "mixtral-8x7b".
  static ModelConfig preset(std::string_view name);
  static std::vector<std::string> preset_names();

  bool operator==(const ModelConfig&) const = default;
};

/// Per-layer gate matrices, each hidden_dim x num_routed_experts.
struct GateParams {
  std::vector<Matrix> layers;

  void validate(const ModelConfig& config) const;
  bool operator==(const GateParams&) const = default;
};

/// Calibrated mean hidden-state difference between layer l and l+1, for
/// l = 0 .. num_layers-2. The last layer has nothing to prefetch for.
struct ResidualVectors {
  std::vector<std::vector<double>> layers;

  void validate(const ModelConfig& config) const;
  bool operator==(const ResidualVectors&) const = default;
};

/// Per-layer expert activation counts accumulated over a calibration trace.
struct FrequencyTable {
  std::vector<Workloads> layers;

  bool operator==(const FrequencyTable&) const = default;
};

enum class Phase { prefill, decode };

std::string_view to_string(Phase phase);
Phase parse_phase(std::string_view text);

struct TokenStep {
  std::size_t index = 0;
  /// Per layer: tokens_per_step x hidden_dim gate inputs. Empty for
  /// workload-only traces.
  std::vector<Matrix> hidden;
  /// Per layer: routed-expert workloads.
  std::vector<Workloads> workloads;
  bool eos = false;

  bool operator==(const TokenStep&) const = default;
};

struct Trace {
  ModelConfig config;
  std::optional<GateParams> gate;
  std::size_t batch_size = 1;
  /// Gated token rows per step: batch_size in decode, batch_size times the
  /// prompt length in prefill (all prompt tokens form one step).
  std::size_t tokens_per_step = 1;
  Phase phase = Phase::decode;
  std::uint64_t generator_seed = 0;
  bool has_features = false;
  std::vector<TokenStep> steps;

  /// Shape checks for every step; when gate parameters are present the
  /// stored workloads must equal the gating recomputed from hidden states.
  void validate() const;

  std::size_t num_steps() const { return steps.size(); }

  bool operator==(const Trace&) const = default;
};

}  // namespace moesim
