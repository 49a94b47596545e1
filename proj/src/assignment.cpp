#include "moesim/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "moesim/error.hpp"

namespace moesim {

namespace {

std::string expert_name(std::size_t i) { return "expert " + std::to_string(i); }

bool slot_free(const CostTable& costs, std::size_t expert, std::size_t used) {
  return !costs.gpu_capacity || !costs.uses_slot[expert] || used < *costs.gpu_capacity;
}

// Experts sorted by descending workload, lower index first on ties.
std::vector<std::size_t> by_workload(const Workloads& w) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] > 0) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
  return order;
}

// Places experts in `order` on the GPU while `wants_gpu` holds and slots last.
Assignment place_by_rule(const AssignmentInstance& instance, const std::vector<std::size_t>& order,
                         const auto& wants_gpu) {
  const CostTable costs = CostTable::from_instance(instance);
  Assignment a = Assignment::empty(costs.size());
  std::size_t used = 0;
  for (std::size_t i : order) {
    if (wants_gpu(i) && slot_free(costs, i, used)) {
      a.gpu[i] = 1;
      used += costs.uses_slot[i];
    } else {
      a.cpu[i] = 1;
    }
  }
  return a;
}

}  // namespace

std::size_t Assignment::gpu_count() const {
  return static_cast<std::size_t>(std::count(gpu.begin(), gpu.end(), std::uint8_t{1}));
}

std::size_t CostTable::active_count() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), std::uint8_t{1}));
}

CostTable CostTable::from_instance(const AssignmentInstance& instance) {
  if (instance.cost_model == nullptr) throw InvalidInput("assignment", "instance has no cost model");
  const std::size_t n = instance.workloads.size();
  if (!instance.resident.empty() && instance.resident.size() != n) {
    throw InvalidInput("assignment", "resident flags have " + std::to_string(instance.resident.size()) +
                                         " entries, workloads have " + std::to_string(n));
  }
  CostTable t;
  t.cpu.resize(n);
  t.gpu.resize(n);
  t.active.resize(n);
  t.uses_slot.resize(n);
  t.gpu_capacity = instance.gpu_capacity;
  for (std::size_t i = 0; i < n; ++i) {
    const auto w = instance.workloads[i];
    if (w < 0) throw InvalidInput("assignment", expert_name(i) + " has a negative workload");
    const bool resident = !instance.resident.empty() && instance.resident[i] != 0;
    const double wd = static_cast<double>(w);
    t.cpu[i] = instance.cost_model->t_cpu(wd);
    t.gpu[i] = instance.cost_model->t_gpu(wd, resident);
    t.active[i] = w > 0;
    t.uses_slot[i] = !resident;
  }
  return t;
}

CostTable CostTable::literal(std::vector<double> cpu, std::vector<double> gpu) {
  if (cpu.size() != gpu.size()) throw InvalidInput("assignment", "cpu and gpu cost vectors differ in length");
  CostTable t;
  t.active.assign(cpu.size(), 1);
  t.uses_slot.assign(cpu.size(), 1);
  t.cpu = std::move(cpu);
  t.gpu = std::move(gpu);
  return t;
}

std::vector<Violation> validate(const CostTable& costs, const Assignment& a) {
  std::vector<Violation> out;
  const std::size_t n = costs.size();
  if (a.cpu.size() != n || a.gpu.size() != n) {
    out.push_back({Violation::Kind::shape, std::nullopt,
                   "assignment vectors have lengths " + std::to_string(a.cpu.size()) + "/" + std::to_string(a.gpu.size()) +
                       ", expected " + std::to_string(n)});
    return out;
  }
  std::size_t placed = 0;
  std::size_t slots = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool c = a.cpu[i] != 0;
    const bool g = a.gpu[i] != 0;
    if (a.cpu[i] > 1 || a.gpu[i] > 1) {
      out.push_back({Violation::Kind::shape, i, expert_name(i) + " has a non-binary placement"});
    }
    if (c && g) {
      out.push_back({Violation::Kind::mutual_exclusion, i, "mutual exclusion: " + expert_name(i) + " is on both CPU and GPU"});
    }
    if (costs.active[i] && !c && !g) {
      out.push_back({Violation::Kind::activation, i, "activation: " + expert_name(i) + " is active but unassigned"});
    }
    if (!costs.active[i] && (c || g)) {
      out.push_back({Violation::Kind::inactive_assigned, i, "activation: " + expert_name(i) + " is inactive but assigned"});
    }
    placed += (c || g) ? 1 : 0;
    if (g && costs.uses_slot[i]) ++slots;
  }
  if (placed != costs.active_count() && out.empty()) {
    out.push_back({Violation::Kind::activation, std::nullopt,
                   "activation: " + std::to_string(placed) + " experts placed, " + std::to_string(costs.active_count()) +
                       " active"});
  }
  if (costs.gpu_capacity && slots > *costs.gpu_capacity) {
    out.push_back({Violation::Kind::capacity, std::nullopt,
                   "capacity: " + std::to_string(slots) + " GPU slots used, capacity " + std::to_string(*costs.gpu_capacity)});
  }
  return out;
}

std::vector<Violation> validate(const AssignmentInstance& instance, const Assignment& a) {
  return validate(CostTable::from_instance(instance), a);
}

Makespan makespan(const CostTable& costs, const Assignment& a) {
  const auto violations = validate(costs, a);
  if (!violations.empty()) throw InvalidInput("assignment", violations.front().message);
  Makespan m;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    if (a.cpu[i]) m.cpu += costs.cpu[i];
    if (a.gpu[i]) m.gpu += costs.gpu[i];
  }
  m.layer = std::max(m.cpu, m.gpu);
  return m;
}

Makespan makespan(const AssignmentInstance& instance, const Assignment& a) {
  return makespan(CostTable::from_instance(instance), a);
}

std::vector<std::size_t> priority_order(const CostTable& costs) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    if (costs.active[i]) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(costs.gpu[a] - costs.cpu[a]) > std::abs(costs.gpu[b] - costs.cpu[b]);
  });
  return order;
}

Assignment greedy_assign(const CostTable& costs) {
  Assignment a = Assignment::empty(costs.size());
  double t_cpu = 0.0;
  double t_gpu = 0.0;
  std::size_t used = 0;
  for (std::size_t i : priority_order(costs)) {
    if (slot_free(costs, i, used) && t_gpu + costs.gpu[i] <= t_cpu + costs.cpu[i]) {
      a.gpu[i] = 1;
      t_gpu += costs.gpu[i];
      used += costs.uses_slot[i];
    } else {
      a.cpu[i] = 1;
      t_cpu += costs.cpu[i];
    }
  }
  return a;
}

Assignment greedy_assign(const AssignmentInstance& instance) { return greedy_assign(CostTable::from_instance(instance)); }

namespace {

Assignment beam_pass(const CostTable& costs, std::size_t beam_width, SearchStats* stats) {
  struct State {
    Assignment a;
    double t_cpu = 0.0;
    double t_gpu = 0.0;
    std::size_t used = 0;
    double score() const { return std::max(t_cpu, t_gpu); }
  };

  std::vector<State> beam{State{Assignment::empty(costs.size())}};
  std::vector<State> next;
  std::uint64_t nodes = 0;
  for (std::size_t i : priority_order(costs)) {
    next.clear();
    for (const State& s : beam) {
      // GPU child first so that score ties resolve exactly like greedy's "<=".
      if (slot_free(costs, i, s.used)) {
        State g = s;
        g.a.gpu[i] = 1;
        g.t_gpu += costs.gpu[i];
        g.used += costs.uses_slot[i];
        next.push_back(std::move(g));
      }
      State c = s;
      c.a.cpu[i] = 1;
      c.t_cpu += costs.cpu[i];
      next.push_back(std::move(c));
    }
    nodes += next.size();
    std::stable_sort(next.begin(), next.end(), [](const State& x, const State& y) { return x.score() < y.score(); });
    if (next.size() > beam_width) next.resize(beam_width);
    std::swap(beam, next);
  }
  if (stats) stats->nodes += nodes;

  // Re-score survivors in index order so ties match makespan() exactly.
  std::size_t best = 0;
  double best_ms = makespan(costs, beam[0].a).layer;
  for (std::size_t s = 1; s < beam.size(); ++s) {
    const double ms = makespan(costs, beam[s].a).layer;
    if (ms < best_ms) {
      best = s;
      best_ms = ms;
    }
  }
  return beam[best].a;
}

}  // namespace

Assignment beam_assign(const CostTable& costs, std::size_t beam_width, SearchStats* stats) {
  if (beam_width < 1) throw InvalidInput("assignment", "beam width must be at least 1");
  Assignment raw = beam_pass(costs, beam_width, stats);
  if (beam_width == 1) return raw;
  // A wider beam can prune the narrower beam's path; keep that answer as an
  // incumbent so widening never loses.
  Assignment incumbent = beam_assign(costs, beam_width / 2, stats);
  return makespan(costs, incumbent).layer < makespan(costs, raw).layer ? incumbent : raw;
}

Assignment beam_assign(const AssignmentInstance& instance, std::size_t beam_width, SearchStats* stats) {
  return beam_assign(CostTable::from_instance(instance), beam_width, stats);
}

namespace {

class BranchAndBound {
 public:
  BranchAndBound(const CostTable& costs, std::vector<std::size_t> order)
      : costs_(costs), order_(std::move(order)), current_(Assignment::empty(costs.size())) {
    const std::size_t m = order_.size();
    rest_min_sum_.assign(m + 1, 0.0);
    rest_max_min_.assign(m + 1, 0.0);
    for (std::size_t j = m; j-- > 0;) {
      const std::size_t i = order_[j];
      const double cheapest = std::min(costs_.cpu[i], costs_.gpu[i]);
      rest_min_sum_[j] = rest_min_sum_[j + 1] + cheapest;
      rest_max_min_[j] = std::max(rest_max_min_[j + 1], cheapest);
    }
  }

  OptimalResult solve() {
    // Greedy seeds the incumbent.
    consider(greedy_assign(costs_));
    search(0, 0.0, 0.0, 0);
    OptimalResult r;
    r.assignment = best_;
    r.layer_ms = best_ms_;
    r.stats.nodes = nodes_;
    return r;
  }

 private:
  void consider(const Assignment& a) {
    const double ms = makespan(costs_, a).layer;
    const std::size_t g = a.gpu_count();
    bool better = false;
    if (!have_best_ || ms < best_ms_) {
      better = true;
    } else if (ms == best_ms_) {
      if (g < best_gpu_) {
        better = true;
      } else if (g == best_gpu_) {
        better = gpu_set_less(a, best_);
      }
    }
    if (better) {
      best_ = a;
      best_ms_ = ms;
      best_gpu_ = g;
      have_best_ = true;
    }
  }

  // Sorted GPU index lists compared lexicographically.
  static bool gpu_set_less(const Assignment& x, const Assignment& y) {
    for (std::size_t i = 0; i < x.gpu.size(); ++i) {
      if (x.gpu[i] != y.gpu[i]) return x.gpu[i] > y.gpu[i];
    }
    return false;
  }

  void search(std::size_t depth, double t_cpu, double t_gpu, std::size_t used) {
    ++nodes_;
    if (depth == order_.size()) {
      consider(current_);
      return;
    }
    const double bound = std::max({t_cpu, t_gpu, 0.5 * (t_cpu + t_gpu + rest_min_sum_[depth]), rest_max_min_[depth]});
    // Partial sums run in priority order while leaves are scored in index
    // order; the slack keeps rounding from pruning a true optimum.
    if (bound > best_ms_ + 1e-9 * std::max(1.0, best_ms_)) return;

    const std::size_t i = order_[depth];
    current_.cpu[i] = 1;
    search(depth + 1, t_cpu + costs_.cpu[i], t_gpu, used);
    current_.cpu[i] = 0;

    if (slot_free(costs_, i, used)) {
      current_.gpu[i] = 1;
      search(depth + 1, t_cpu, t_gpu + costs_.gpu[i], used + costs_.uses_slot[i]);
      current_.gpu[i] = 0;
    }
  }

  const CostTable& costs_;
  std::vector<std::size_t> order_;
  std::vector<double> rest_min_sum_;
  std::vector<double> rest_max_min_;
  Assignment current_;
  Assignment best_;
  double best_ms_ = std::numeric_limits<double>::infinity();
  std::size_t best_gpu_ = 0;
  bool have_best_ = false;
  std::uint64_t nodes_ = 0;
};

}  // namespace

OptimalResult optimal_assign(const CostTable& costs, std::size_t max_active) {
  const std::size_t active = costs.active_count();
  if (active > max_active) {
    throw Refused("assignment", std::to_string(active) + " active experts exceed the exact-search limit of " +
                                    std::to_string(max_active) + "; use greedy");
  }
  return BranchAndBound(costs, priority_order(costs)).solve();
}

OptimalResult optimal_assign(const AssignmentInstance& instance, std::size_t max_active) {
  return optimal_assign(CostTable::from_instance(instance), max_active);
}

Assignment static_threshold_assign(const AssignmentInstance& instance, double threshold) {
  if (!(threshold >= 0.0)) throw InvalidInput("assignment", "static threshold must be nonnegative");
  return place_by_rule(instance, by_workload(instance.workloads),
                       [&](std::size_t i) { return static_cast<double>(instance.workloads[i]) >= threshold; });
}

Assignment all_cpu_assign(const AssignmentInstance& instance) {
  return place_by_rule(instance, by_workload(instance.workloads), [](std::size_t) { return false; });
}

Assignment all_gpu_assign(const AssignmentInstance& instance) {
  return place_by_rule(instance, by_workload(instance.workloads), [](std::size_t) { return true; });
}

double imbalance_ratio(double cpu_ms, double gpu_ms) {
  const double hi = std::max(cpu_ms, gpu_ms);
  const double lo = std::min(cpu_ms, gpu_ms);
  if (hi == 0.0) return 1.0;
  if (lo == 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

}  // namespace moesim
