#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "moesim/trace.hpp"

namespace moesim {

/// Writes the trace to `path` and, when it carries gate parameters, the gate
/// sidecar to gate_sidecar_path(path). Each `provenance` string becomes a
/// "# ..." comment line after the header; readers skip such lines.
void save_trace(const Trace& trace, const std::filesystem::path& path, const std::vector<std::string>& provenance = {});

/// Reads a trace (and its gate sidecar if the header declares one). Records
/// that fail to parse or validate are reported with their line number.
Trace load_trace(const std::filesystem::path& path);

std::filesystem::path gate_sidecar_path(const std::filesystem::path& trace_path);

void save_gate_params(const GateParams& gate, const std::filesystem::path& path);
GateParams load_gate_params(const std::filesystem::path& path);

/// Residual vectors plus (optionally) the statistical predictor's frequency
/// table, both produced from one calibration trace.
struct Calibration {
  ResidualVectors residuals;
  FrequencyTable frequency;
  std::size_t num_experts = 0;
};

void save_calibration(const Calibration& calibration, const std::filesystem::path& path,
                      const std::vector<std::string>& provenance = {});
Calibration load_calibration(const std::filesystem::path& path);

}  // namespace moesim
