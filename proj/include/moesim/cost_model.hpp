#pragma once

#include <filesystem>
#include <string_view>
#include <utility>
#include <vector>

#include "moesim/kv.hpp"

namespace moesim {

/// Profiled (workload, milliseconds) sample.
struct CostSample {
  double workload = 0.0;
  double ms = 0.0;

  bool operator==(const CostSample&) const = default;
};

/// Piecewise-linear latency curve anchored at (0, 0). Linear interpolation
/// between samples, extrapolation with the last segment's slope.
class CostCurve {
 public:
  CostCurve() = default;

  /// Sorts the samples and prepends the (0, 0) anchor. Throws InvalidInput
  /// on an empty set, duplicate or nonpositive workloads, negative times, or
  /// latency that decreases as workload grows.
  static CostCurve fit(std::vector<CostSample> samples, std::string_view name = "curve");

  double operator()(double workload) const;

  /// Samples without the anchor, ascending by workload.
  std::vector<CostSample> samples() const { return {points_.begin() + 1, points_.end()}; }

  bool operator==(const CostCurve&) const = default;

 private:
  std::vector<CostSample> points_;
};

/// Profiled timing for one model on one machine. All routed experts share
/// one size, hence one PCIe transfer time.
struct CostModel {
  CostCurve cpu;
  CostCurve gpu_compute;
  double trans_time = 0.0;
  double shared_expert_gpu_time = 0.0;
  double non_moe_layer_time = 0.0;

  /// CPU latency of an expert with `workload` tokens; 0 when inactive.
  double t_cpu(double workload) const { return workload <= 0.0 ? 0.0 : cpu(workload); }

  double compute(double workload) const { return workload <= 0.0 ? 0.0 : gpu_compute(workload); }

  /// max(transfer, compute); the transfer term vanishes when the expert is
  /// inactive or already resident on the GPU.
  double t_gpu(double workload, bool resident) const {
    if (workload <= 0.0) return 0.0;
    const double transfer = resident ? 0.0 : trans_time;
    const double c = gpu_compute(workload);
    return transfer > c ? transfer : c;
  }

  /// Illustrative RTX 3090 + PCIe 4.0 shaped profile: one expert transfer
  /// costs as much as several tokens of CPU work, GPU compute is nearly flat.
  static CostModel default_3090();

  static CostModel from_kv(const KvDocument& doc);
  KvDocument to_kv() const;
  static CostModel load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool operator==(const CostModel&) const = default;
};

CostModel fit_cost_model(std::vector<CostSample> cpu_samples, std::vector<CostSample> gpu_samples, double trans_time,
                         double shared_expert_gpu_time = 0.0, double non_moe_layer_time = 0.0);

}  // namespace moesim
