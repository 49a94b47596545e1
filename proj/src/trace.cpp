#include "moesim/trace.hpp"

#include <string>

#include "moesim/error.hpp"
#include "moesim/kernels.hpp"

namespace moesim {

namespace {

std::string where(std::size_t step, std::size_t layer) {
  return "step " + std::to_string(step) + " layer " + std::to_string(layer);
}

}  // namespace

void ModelConfig::validate() const {
  if (num_layers < 1) throw InvalidInput("trace", "num_layers must be at least 1");
  if (hidden_dim < 1) throw InvalidInput("trace", "hidden_dim must be at least 1");
  if (num_routed_experts < 1) throw InvalidInput("trace", "num_routed_experts must be at least 1");
  if (top_k < 1 || top_k > num_routed_experts) {
    throw InvalidInput("trace", "top_k must lie in [1, num_routed_experts], got " + std::to_string(top_k));
  }
}

ModelConfig ModelConfig::preset(std::string_view name) {
  // Layers, routed experts, shared experts, activated experts, hidden size.
  if (name == "deepseek-v2-lite") return {27, 64, 2, 6, 2048};
  if (name == "qwen3-30b-a3b") return {48, 128, 0, 8, 2048};
  if (name == "mixtral-8x7b") return {32, 8, 0, 2, 4096};
  throw ConfigError("trace", "unknown model preset '" + std::string(name) + "'");
}

std::vector<std::string> ModelConfig::preset_names() {
  return {"deepseek-v2-lite", "qwen3-30b-a3b", "mixtral-8x7b"};
}

void GateParams::validate(const ModelConfig& config) const {
  if (layers.size() != config.num_layers) {
    throw InvalidInput("trace", "gate parameters cover " + std::to_string(layers.size()) + " layers, expected " +
                                    std::to_string(config.num_layers));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Matrix& m = layers[l];
    if (m.rows != config.hidden_dim || m.cols != config.num_routed_experts) {
      throw InvalidInput("trace", "gate matrix for layer " + std::to_string(l) + " is " + std::to_string(m.rows) +
                                      "x" + std::to_string(m.cols) + ", expected " +
                                      std::to_string(config.hidden_dim) + "x" +
                                      std::to_string(config.num_routed_experts));
    }
  }
}

void ResidualVectors::validate(const ModelConfig& config) const {
  if (layers.size() + 1 != config.num_layers) {
    throw InvalidInput("prefetch", "residual vectors cover " + std::to_string(layers.size()) +
                                       " layers, expected " + std::to_string(config.num_layers - 1));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].size() != config.hidden_dim) {
      throw InvalidInput("prefetch", "residual vector for layer " + std::to_string(l) + " has " +
                                         std::to_string(layers[l].size()) + " entries, expected " +
                                         std::to_string(config.hidden_dim));
    }
  }
}

std::string_view to_string(Phase phase) { return phase == Phase::prefill ? "prefill" : "decode"; }

Phase parse_phase(std::string_view text) {
  if (text == "prefill") return Phase::prefill;
  if (text == "decode") return Phase::decode;
  throw InvalidInput("trace", "unknown phase '" + std::string(text) + "'");
}

void Trace::validate() const {
  config.validate();
  if (batch_size < 1) throw InvalidInput("trace", "batch_size must be at least 1");
  if (tokens_per_step < 1) throw InvalidInput("trace", "tokens_per_step must be at least 1");
  if (gate) gate->validate(config);

  const std::size_t n = config.num_routed_experts;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    const TokenStep& step = steps[s];
    if (step.workloads.size() != config.num_layers) {
      throw InvalidInput("trace", "step " + std::to_string(s) + " has " + std::to_string(step.workloads.size()) +
                                      " workload vectors, expected " + std::to_string(config.num_layers));
    }
    for (std::size_t l = 0; l < config.num_layers; ++l) {
      const Workloads& w = step.workloads[l];
      if (w.size() != n) {
        throw InvalidInput("trace", where(s, l) + ": workload vector has " + std::to_string(w.size()) +
                                        " entries, expected " + std::to_string(n));
      }
      for (std::size_t e = 0; e < n; ++e) {
        if (w[e] < 0) {
          throw InvalidInput("trace", where(s, l) + ": negative workload " + std::to_string(w[e]) +
                                          " for expert " + std::to_string(e));
        }
      }
    }

    if (!has_features) {
      if (!step.hidden.empty()) throw InvalidInput("trace", "step " + std::to_string(s) + " carries features in a workload-only trace");
      continue;
    }
    if (step.hidden.size() != config.num_layers) {
      throw InvalidInput("trace", "step " + std::to_string(s) + " has " + std::to_string(step.hidden.size()) +
                                      " hidden-state layers, expected " + std::to_string(config.num_layers));
    }
    for (std::size_t l = 0; l < config.num_layers; ++l) {
      const Matrix& h = step.hidden[l];
      if (h.rows != tokens_per_step || h.cols != config.hidden_dim) {
        throw InvalidInput("trace", where(s, l) + ": hidden states are " + std::to_string(h.rows) + "x" +
                                        std::to_string(h.cols) + ", expected " + std::to_string(tokens_per_step) +
                                        "x" + std::to_string(config.hidden_dim));
      }
      if (gate) {
        const Workloads expected = kernels::derive_workloads(h, gate->layers[l], config.top_k);
        if (expected != step.workloads[l]) {
          throw InvalidInput("trace", where(s, l) + ": stored workloads disagree with gating of the hidden states");
        }
      }
    }
  }
}

}  // namespace moesim
