#include "moesim/metrics.hpp"

#include <string>

#include "moesim/error.hpp"
#include "moesim/kv.hpp"

namespace moesim {

namespace {

std::vector<std::size_t> top_set(const Workloads& w, std::size_t m) {
  std::vector<std::size_t> out;
  for (std::size_t e : rank_experts(w)) {
    if (out.size() == m || w[e] <= 0) break;
    out.push_back(e);
  }
  return out;
}

std::string num(double v) { return format_double(v); }

}  // namespace

HeatmapTable locality_heatmap(const Trace& trace, std::size_t layer, std::size_t top_m) {
  if (trace.steps.size() < 2) throw InvalidInput("metrics", "a locality heatmap needs at least two steps");
  if (layer >= trace.config.num_layers) throw InvalidInput("metrics", "layer " + std::to_string(layer) + " out of range");
  if (top_m == 0) throw InvalidInput("metrics", "top_m must be at least 1");
  HeatmapTable h;
  h.layer = layer;
  h.top_m = top_m;
  h.num_experts = trace.config.num_routed_experts;
  h.cells.assign(h.num_experts * h.num_experts, 0);
  auto prev = top_set(trace.steps[0].workloads[layer], top_m);
  for (std::size_t s = 1; s < trace.steps.size(); ++s) {
    auto cur = top_set(trace.steps[s].workloads[layer], top_m);
    for (std::size_t m : prev) {
      for (std::size_t n : cur) {
        ++h.cells[m * h.num_experts + n];
        ++h.total;
        if (m == n) ++h.diagonal;
      }
    }
    prev = std::move(cur);
  }
  h.diagonal_ratio = h.total > 0 ? static_cast<double>(h.diagonal) / static_cast<double>(h.total) : 0.0;
  return h;
}

std::vector<LoadBalanceRow> load_balance_table(const std::vector<std::pair<std::string, RunReport>>& runs) {
  std::vector<LoadBalanceRow> out;
  for (const auto& [label, r] : runs) {
    out.push_back({label, r.cpu_busy_ms, r.gpu_lane_ms, imbalance_ratio(r.cpu_busy_ms, r.gpu_lane_ms)});
  }
  return out;
}

std::string Table::to_csv() const {
  std::string s = "# moesim-table v1 " + name + (note.empty() ? "" : " " + note) + "\n";
  for (std::size_t i = 0; i < columns.size(); ++i) s += (i ? "," : "") + columns[i];
  s += '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) s += (i ? "," : "") + row[i];
    s += '\n';
  }
  return s;
}

Table breakdown_table(const std::vector<BreakdownRow>& rows) {
  Table t{"breakdown", {"config", "tokens_per_second", "mean_token_latency_ms", "pcie_fraction", "speedup", "step_factor"}, {}, {}};
  for (const auto& r : rows) {
    t.rows.push_back({r.label, num(r.tokens_per_second), num(r.mean_token_latency_ms), num(r.pcie_fraction),
                      num(r.speedup), num(r.step_factor)});
  }
  return t;
}

Table hit_rate_table(const std::vector<std::pair<std::string, RunReport>>& runs) {
  Table t{"hit-rate-by-group", {"run", "group", "first_step", "hits", "misses", "rate", "empty"}, {}, {}};
  for (const auto& [label, r] : runs) {
    for (std::size_t g = 0; g < r.hit_groups.size(); ++g) {
      const GroupRate& gr = r.hit_groups[g];
      t.rows.push_back({label, std::to_string(g), std::to_string(gr.first_step), std::to_string(gr.hits),
                        std::to_string(gr.misses), gr.empty ? "" : num(gr.rate), gr.empty ? "1" : "0"});
    }
    t.rows.push_back({label, "overall", "", "", "", r.has_hit_rate ? num(r.hit_rate) : "", r.has_hit_rate ? "0" : "1"});
  }
  return t;
}

Table prefetch_accuracy_table(const std::vector<std::pair<std::string, RunReport>>& runs) {
  Table t{"prefetch-accuracy", {"run", "layer", "accuracy"}, {}, {}};
  for (const auto& [label, r] : runs) {
    for (std::size_t i = 0; i < r.prefetch_accuracy.size(); ++i) {
      t.rows.push_back({label, std::to_string(i + 1), num(r.prefetch_accuracy[i])});
    }
  }
  return t;
}

Table prefetch_eval_table(const std::vector<AccuracyRow>& rows) {
  Table t{"prefetch-accuracy", {"predictor", "top_k", "layer", "accuracy"}, {}, {}};
  for (const AccuracyRow& r : rows) {
    for (std::size_t i = 0; i < r.per_layer.size(); ++i) {
      t.rows.push_back({std::string(to_string(r.kind)), std::to_string(r.top_k), std::to_string(i + 1), num(r.per_layer[i])});
    }
    t.rows.push_back({std::string(to_string(r.kind)), std::to_string(r.top_k), "mean", num(r.mean)});
  }
  return t;
}

Table pcie_fraction_table(const std::vector<std::pair<std::string, RunReport>>& runs) {
  Table t{"pcie-fraction", {"run", "layer", "pcie_fraction"}, {}, {}};
  for (const auto& [label, r] : runs) {
    for (std::size_t l = 0; l < r.layer_pcie_fraction.size(); ++l) {
      t.rows.push_back({label, std::to_string(l), num(r.layer_pcie_fraction[l])});
    }
    t.rows.push_back({label, "overall", num(r.pcie_fraction)});
  }
  return t;
}

Table load_balance_csv(const std::vector<LoadBalanceRow>& rows) {
  Table t{"load-balance", {"run", "cpu_busy_ms", "gpu_busy_ms", "imbalance"}, {}, {}};
  for (const auto& r : rows) t.rows.push_back({r.label, num(r.cpu_busy_ms), num(r.gpu_busy_ms), num(r.imbalance)});
  return t;
}

Table heatmap_table(const HeatmapTable& h) {
  Table t{"heatmap", {"from_expert"}, {}, {}};
  for (std::size_t n = 0; n < h.num_experts; ++n) t.columns.push_back("to_" + std::to_string(n));
  for (std::size_t m = 0; m < h.num_experts; ++m) {
    std::vector<std::string> row{std::to_string(m)};
    for (std::size_t n = 0; n < h.num_experts; ++n) row.push_back(std::to_string(h(m, n)));
    t.rows.push_back(std::move(row));
  }
  t.note = "layer=" + std::to_string(h.layer) + " top_m=" + std::to_string(h.top_m) + " total=" + std::to_string(h.total) +
           " diagonal_ratio=" + num(h.diagonal_ratio);
  return t;
}

Table cosine_table(const std::vector<CosineLayer>& layers) {
  Table t{"cosine-similarity", {"layer", "corrected", "uncorrected", "tokens", "excluded"}, {}, {}};
  for (const auto& c : layers) {
    t.rows.push_back({std::to_string(c.layer), num(c.corrected), num(c.uncorrected), std::to_string(c.tokens),
                      std::to_string(c.excluded)});
  }
  return t;
}

}  // namespace moesim
