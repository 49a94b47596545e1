#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "moesim/assignment.hpp"
#include "moesim/cache.hpp"
#include "moesim/cost_model.hpp"
#include "moesim/kv.hpp"
#include "moesim/prefetch.hpp"
#include "moesim/trace.hpp"
#include "moesim/trace_io.hpp"

namespace moesim {

enum class PolicyKind { greedy, optimal, beam, all_cpu, all_gpu, static_threshold };

struct AssignmentPolicy {
  PolicyKind kind = PolicyKind::greedy;
  std::size_t beam_width = 2;
  double threshold = 8.0;

  /// "greedy", "optimal", "beam:2", "all-cpu", "all-gpu", "static-threshold:8".
  std::string to_string() const;
  static AssignmentPolicy parse(std::string_view text);
};

struct SimConfig {
  AssignmentPolicy assignment;
  /// prefetch_size 0 disables prefetching.
  PredictorKind prefetch_kind = PredictorKind::residual;
  std::size_t prefetch_size = 0;
  std::optional<CacheConfig> cache;
  CostModel cost_model = CostModel::default_3090();
  std::optional<std::size_t> gpu_capacity;
  /// Constant planning cost charged to every layer.
  double scheduling_overhead_ms = 0.0;
  /// Charged per search node for the beam and exact solvers.
  double solver_node_cost_ms = 0.0;
  /// Extra gate evaluation per layer when prefetching is on.
  double prefetch_gate_ms = 0.0;
  std::size_t exact_limit = kDefaultExactLimit;
  std::uint64_t seed = 0;
  std::size_t hit_group_size = 8;
  /// Keep every layer's PCIe/compute intervals in the report.
  bool keep_timelines = false;

  bool prefetch_enabled() const { return prefetch_size > 0; }
  /// Throws ConfigError on an inconsistent combination.
  void validate(const ModelConfig& model) const;
};

enum class TransferPurpose { demand, prefetch, replacement };
std::string_view to_string(TransferPurpose purpose);

struct PcieInterval {
  double start = 0.0;
  double end = 0.0;
  TransferPurpose purpose = TransferPurpose::demand;
  std::size_t expert = 0;
};

struct ComputeInterval {
  double start = 0.0;
  double end = 0.0;
  std::size_t expert = 0;
};

/// One layer of one step. Interval times are relative to the layer start.
struct LayerTimeline {
  std::size_t step = 0;
  std::size_t layer = 0;
  double start = 0.0;
  double cpu_busy = 0.0;
  /// Demand transfers and computes only.
  double gpu_lane = 0.0;
  double demand_transfer_sum = 0.0;
  double compute_sum = 0.0;
  double replacement_end = 0.0;
  double overhead = 0.0;
  double layer_latency = 0.0;
  std::size_t demand_transfers = 0;
  std::size_t prefetch_transfers = 0;
  std::size_t replacement_transfers = 0;
  std::vector<PcieInterval> pcie;
  std::vector<ComputeInterval> gpu;
};

struct LayerResult {
  Assignment assignment;
  LayerTimeline timeline;
  std::uint64_t solver_nodes = 0;
  bool fell_back = false;
};

/// Places and schedules one layer. `cache` may be null (nothing cached);
/// `prefetched` may be empty. Replacement and prefetch transfers are added
/// by simulate_run.
LayerResult simulate_layer(const Workloads& workloads, const CacheState* cache,
                           const std::vector<std::uint8_t>& prefetched, const SimConfig& config,
                           std::size_t num_shared_experts = 0);

struct RunReport {
  std::string assignment_policy;
  std::size_t steps = 0;
  std::size_t tokens = 0;
  std::size_t num_layers = 0;
  double total_ms = 0.0;
  double tokens_per_second = 0.0;
  double mean_token_latency_ms = 0.0;
  double pcie_busy_ms = 0.0;
  double pcie_demand_ms = 0.0;
  double pcie_prefetch_ms = 0.0;
  double pcie_replacement_ms = 0.0;
  double pcie_fraction = 0.0;
  std::vector<double> layer_pcie_fraction;
  /// Entry l - 1 is the accuracy of predictions for layer l. Empty when
  /// prefetching is off.
  std::vector<double> prefetch_accuracy;
  double hit_rate = 0.0;
  bool has_hit_rate = false;
  std::vector<GroupRate> hit_groups;
  HitCounters hit_counters;
  double cpu_busy_ms = 0.0;
  double gpu_busy_ms = 0.0;
  double gpu_lane_ms = 0.0;
  std::uint64_t solver_nodes = 0;
  std::size_t optimal_fallbacks = 0;
  std::size_t demand_transfers = 0;
  std::size_t replacement_event_count = 0;
  std::vector<ReplacementEvent> events;
  /// One entry per (step, layer); intervals only with keep_timelines.
  std::vector<LayerTimeline> layers;

  /// `spec` entries are copied first under a "spec." prefix.
  KvDocument to_kv(const KvDocument* spec = nullptr) const;
  /// Reads back the summary fields (not the per-layer records).
  static RunReport from_kv(const KvDocument& doc);
};

/// PCIe busy time over simulated wall time.
double pcie_fraction(const RunReport& report);

/// Runs every step through every layer. `calibration` supplies residuals
/// (residual predictor) and the frequency table (statistical predictor).
RunReport simulate_run(const Trace& trace, const SimConfig& config, const Calibration* calibration = nullptr);

struct BreakdownRow {
  std::string label;
  double tokens_per_second = 0.0;
  double mean_token_latency_ms = 0.0;
  double pcie_fraction = 0.0;
  /// Throughput relative to the first row.
  double speedup = 1.0;
  /// Throughput relative to the previous row.
  double step_factor = 1.0;
};

/// naive (all on CPU), then the configured assignment, then prefetching,
/// then caching; each row adds one technique to the previous one.
/// `full` must enable prefetching and a cache.
std::vector<BreakdownRow> breakdown_experiment(const Trace& trace, const SimConfig& full,
                                               const Calibration* calibration);

/// The four configs breakdown_experiment runs, in order.
std::vector<std::pair<std::string, SimConfig>> breakdown_configs(const SimConfig& full);

}  // namespace moesim
