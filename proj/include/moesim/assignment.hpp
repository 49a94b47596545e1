#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "moesim/cost_model.hpp"
#include "moesim/trace.hpp"

namespace moesim {

/// CPU/GPU placement of one layer's experts. cpu[i] and gpu[i] are 0/1.
struct Assignment {
  std::vector<std::uint8_t> cpu;
  std::vector<std::uint8_t> gpu;

  static Assignment empty(std::size_t n) { return {std::vector<std::uint8_t>(n, 0), std::vector<std::uint8_t>(n, 0)}; }
  std::size_t size() const { return cpu.size(); }
  std::size_t gpu_count() const;

  bool operator==(const Assignment&) const = default;
};

/// One layer's placement problem.
struct AssignmentInstance {
  Workloads workloads;
  /// Expert already on the GPU (cache or completed prefetch): no transfer cost.
  std::vector<std::uint8_t> resident;
  const CostModel* cost_model = nullptr;
  /// GPU slots for newly transferred experts; resident experts do not count.
  std::optional<std::size_t> gpu_capacity;
};

/// Per-expert latencies the solvers work on. Built from an instance, or
/// directly when a test wants literal numbers.
struct CostTable {
  std::vector<double> cpu;
  std::vector<double> gpu;
  std::vector<std::uint8_t> active;
  /// Expert occupies a capacity slot when placed on the GPU.
  std::vector<std::uint8_t> uses_slot;
  std::optional<std::size_t> gpu_capacity;

  std::size_t size() const { return cpu.size(); }
  std::size_t active_count() const;

  static CostTable from_instance(const AssignmentInstance& instance);
  /// Every expert active and slot-consuming; no capacity.
  static CostTable literal(std::vector<double> cpu, std::vector<double> gpu);
};

struct Makespan {
  double cpu = 0.0;
  double gpu = 0.0;
  double layer = 0.0;
};

struct Violation {
  enum class Kind { shape, mutual_exclusion, activation, inactive_assigned, capacity };
  Kind kind;
  std::optional<std::size_t> expert;
  std::string message;
};

std::vector<Violation> validate(const CostTable& costs, const Assignment& assignment);
std::vector<Violation> validate(const AssignmentInstance& instance, const Assignment& assignment);

/// Sums in ascending expert index. Throws InvalidInput naming the first
/// violated constraint.
Makespan makespan(const CostTable& costs, const Assignment& assignment);
Makespan makespan(const AssignmentInstance& instance, const Assignment& assignment);

/// Active experts by |gpu - cpu| descending, lower index first on ties.
/// Greedy, beam and the simulator's GPU order all use this order.
std::vector<std::size_t> priority_order(const CostTable& costs);

/// Completion-time greedy: each expert in priority order goes to the GPU
/// when T_gpu + t_gpu <= T_cpu + t_cpu and a slot is free, else the CPU.
Assignment greedy_assign(const CostTable& costs);
Assignment greedy_assign(const AssignmentInstance& instance);

struct SearchStats {
  std::uint64_t nodes = 0;
};

/// Beam search over the priority order keeping the `beam_width` partial
/// placements with the smallest max(T_cpu, T_gpu). Width 1 is greedy. Wider
/// beams fall back to the width/2 answer when it is strictly better, so the
/// makespan never grows with the width.
Assignment beam_assign(const CostTable& costs, std::size_t beam_width, SearchStats* stats = nullptr);
Assignment beam_assign(const AssignmentInstance& instance, std::size_t beam_width, SearchStats* stats = nullptr);

struct OptimalResult {
  Assignment assignment;
  double layer_ms = 0.0;
  SearchStats stats;
};

inline constexpr std::size_t kDefaultExactLimit = 24;

/// Exact minimum makespan by branch and bound. Among optimal placements the
/// one with the fewest GPU experts wins, then the lexicographically smallest
/// GPU index set. Throws Refused when more than `max_active` experts are
/// active.
OptimalResult optimal_assign(const CostTable& costs, std::size_t max_active = kDefaultExactLimit);
OptimalResult optimal_assign(const AssignmentInstance& instance, std::size_t max_active = kDefaultExactLimit);

/// Static baseline: GPU iff workload >= threshold (and a slot is free,
/// filled in descending workload order).
Assignment static_threshold_assign(const AssignmentInstance& instance, double threshold);

Assignment all_cpu_assign(const AssignmentInstance& instance);
/// Every active expert on the GPU; experts beyond the capacity fall back to CPU.
Assignment all_gpu_assign(const AssignmentInstance& instance);

/// max/min of the two lane times; 1 when both are zero, infinity when one is.
double imbalance_ratio(double cpu_ms, double gpu_ms);

}  // namespace moesim
