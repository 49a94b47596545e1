#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "moesim/cost_model.hpp"
#include "moesim/trace.hpp"

namespace moesim {

enum class CachePolicy { workload, lru, score };

std::string_view to_string(CachePolicy policy);
CachePolicy parse_cache_policy(std::string_view text);

struct ReplacementEvent {
  std::size_t token_index = 0;
  std::size_t layer = 0;
  std::vector<std::size_t> evicted;
  std::vector<std::size_t> admitted;
  /// Filled in by the simulator once the transfers are scheduled.
  double transfer_cost = 0.0;
};

/// One layer's GPU-resident expert set.
class CacheState {
 public:
  CacheState() = default;

  std::size_t layer() const { return layer_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t num_experts() const { return on_gpu_.size(); }
  std::size_t window_size() const { return window_size_; }
  std::size_t update_size() const { return update_size_; }
  std::size_t tokens_in_window() const { return tokens_in_window_; }
  CachePolicy policy() const { return policy_; }
  bool stopped() const { return stopped_; }

  bool contains(std::size_t expert) const { return on_gpu_.at(expert) != 0; }
  /// Cached experts, ascending.
  std::vector<std::size_t> expert_on_gpu() const;
  /// Uncached experts, ascending.
  std::vector<std::size_t> expert_on_cpu() const;
  const std::vector<double>& scores() const { return scores_; }
  const std::vector<std::uint64_t>& lru_clock() const { return lru_clock_; }

  /// Test hook: replaces the accumulated scores.
  void set_scores(std::vector<double> scores);
  /// Test hook: replaces the cached set.
  void set_cached(std::span<const std::size_t> experts);

  /// Window replacement for the workload/score policies (see record()).
  std::optional<ReplacementEvent> replace_now(std::size_t token_index);

  /// Inserts `expert`, evicting one victim picked by the policy (least
  /// recently used for LRU, lowest score otherwise). No-op when cached.
  std::optional<std::size_t> admit(std::size_t expert);

  friend CacheState init_cache(std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, CachePolicy,
                               std::uint64_t);
  friend std::optional<ReplacementEvent> record_and_maybe_replace(CacheState&, const Workloads&, std::size_t, bool,
                                                                 std::span<const double>,
                                                                 std::span<const std::uint8_t>);

 private:
  std::size_t victim() const;

  std::size_t layer_ = 0;
  std::size_t capacity_ = 0;
  std::size_t window_size_ = 1;
  std::size_t update_size_ = 0;
  std::size_t tokens_in_window_ = 0;
  CachePolicy policy_ = CachePolicy::workload;
  bool stopped_ = false;
  std::uint64_t clock_ = 0;
  std::vector<std::uint8_t> on_gpu_;
  std::vector<double> scores_;
  std::vector<std::uint64_t> lru_clock_;
};

/// Seeded random initial set of `capacity` experts out of `num_experts`.
/// Requires 0 < capacity < num_experts and update_size <= min(capacity,
/// num_experts - capacity).
CacheState init_cache(std::size_t layer, std::size_t num_experts, std::size_t capacity, std::size_t window_size,
                      std::size_t update_size, CachePolicy policy, std::uint64_t seed);

/// Feeds one token step's workloads for this layer.
///  workload: scores += workloads; every window_size tokens swap up to
///    update_size lowest-score cached experts for the highest-score uncached
///    ones, then zero the scores.
///  score: the same window, but scores += `gate_scores` (summed gate
///    probabilities, required).
///  lru: each activated cached expert is touched; each GPU-assigned
///    (`gpu_assigned`) uncached expert is inserted, evicting the least
///    recently used. Returns an event per step that changed the set.
/// An EOS step stops the state: it and all later calls do nothing.
std::optional<ReplacementEvent> record_and_maybe_replace(CacheState& state, const Workloads& workloads,
                                                         std::size_t token_index, bool is_eos,
                                                         std::span<const double> gate_scores = {},
                                                         std::span<const std::uint8_t> gpu_assigned = {});

/// Hit/miss counts for GPU-assigned experts, by layer and by token step.
struct HitCounters {
  std::vector<std::uint64_t> layer_hits;
  std::vector<std::uint64_t> layer_misses;
  std::vector<std::uint64_t> step_hits;
  std::vector<std::uint64_t> step_misses;

  HitCounters() = default;
  HitCounters(std::size_t layers, std::size_t steps);
  /// Counts one lookup. Returns true on a hit.
  bool lookup(const CacheState& state, std::size_t expert, std::size_t step);
  void add(std::size_t layer, std::size_t step, bool hit);
  std::uint64_t hits() const;
  std::uint64_t misses() const;
};

struct GroupRate {
  std::size_t first_step = 0;
  std::size_t steps = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  /// NaN when the group recorded no lookups.
  double rate = 0.0;
  bool empty = false;
};

/// hits / (hits + misses); throws InvalidInput when nothing was recorded.
double hit_rate(const HitCounters& counters);
double layer_hit_rate(const HitCounters& counters, std::size_t layer);
/// Consecutive groups of `group_size` steps; empty groups are flagged.
std::vector<GroupRate> hit_rate_by_group(const HitCounters& counters, std::size_t group_size);

struct CacheConfig {
  CachePolicy policy = CachePolicy::workload;
  /// Cached experts per layer.
  std::size_t capacity = 1;
  std::size_t window_size = 4;
  std::size_t update_size = 1;
  /// Insert correctly prefetched experts that were used on the GPU.
  bool admit_prefetched = false;
  /// Insert demand-fetched experts.
  bool admit_demand = false;
};

/// capacity = round(ratio * N), clamped to [1, N-1].
std::size_t capacity_for_ratio(double ratio, std::size_t num_experts);

struct CacheReplay {
  HitCounters counters;
  std::vector<ReplacementEvent> events;
};

/// Replays a trace through per-layer caches without prefetch: each layer's
/// placement is the greedy assignment with cached experts resident, and the
/// GPU-assigned experts are looked up. Seeds the initial sets from `seed`.
CacheReplay replay_cache(const Trace& trace, const CacheConfig& config, const CostModel& cost_model,
                         std::uint64_t seed);

}  // namespace moesim
