#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "moesim/prefetch.hpp"
#include "moesim/simulator.hpp"
#include "moesim/trace.hpp"

namespace moesim {

/// cells(m, n) counts steps where expert m is in the top set at step i and
/// expert n is in the top set at step i + 1.
struct HeatmapTable {
  std::size_t layer = 0;
  std::size_t top_m = 3;
  std::size_t num_experts = 0;
  std::vector<std::int64_t> cells;
  std::int64_t total = 0;
  std::int64_t diagonal = 0;
  double diagonal_ratio = 0.0;

  std::int64_t operator()(std::size_t m, std::size_t n) const { return cells[m * num_experts + n]; }
};

/// Top set: the `top_m` highest-workload active experts, lower index on ties.
/// Needs at least two steps.
HeatmapTable locality_heatmap(const Trace& trace, std::size_t layer, std::size_t top_m = 3);

struct LoadBalanceRow {
  std::string label;
  double cpu_busy_ms = 0.0;
  double gpu_busy_ms = 0.0;
  double imbalance = 1.0;
};

/// GPU busy is the GPU lane (transfers pipelined with computes).
std::vector<LoadBalanceRow> load_balance_table(const std::vector<std::pair<std::string, RunReport>>& runs);

/// A named CSV table. The first emitted line is "# moesim-table v1 <name>".
struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  /// Appended to the format line.
  std::string note;

  std::string to_csv() const;
};

Table breakdown_table(const std::vector<BreakdownRow>& rows);
Table hit_rate_table(const std::vector<std::pair<std::string, RunReport>>& runs);
Table prefetch_accuracy_table(const std::vector<std::pair<std::string, RunReport>>& runs);
Table prefetch_eval_table(const std::vector<AccuracyRow>& rows);
Table pcie_fraction_table(const std::vector<std::pair<std::string, RunReport>>& runs);
Table load_balance_csv(const std::vector<LoadBalanceRow>& rows);
Table heatmap_table(const HeatmapTable& heatmap);
Table cosine_table(const std::vector<CosineLayer>& layers);

}  // namespace moesim
