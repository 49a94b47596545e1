#include "moesim/cache.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "moesim/assignment.hpp"
#include "moesim/error.hpp"
#include "moesim/kernels.hpp"

namespace moesim {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::string_view to_string(CachePolicy policy) {
  switch (policy) {
    case CachePolicy::workload: return "workload";
    case CachePolicy::lru: return "lru";
    case CachePolicy::score: return "score";
  }
  return "unknown";
}

CachePolicy parse_cache_policy(std::string_view text) {
  if (text == "workload") return CachePolicy::workload;
  if (text == "lru") return CachePolicy::lru;
  if (text == "score") return CachePolicy::score;
  throw ConfigError("cache", "unknown cache policy '" + std::string(text) + "'");
}

std::vector<std::size_t> CacheState::expert_on_gpu() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < on_gpu_.size(); ++i) {
    if (on_gpu_[i]) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> CacheState::expert_on_cpu() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < on_gpu_.size(); ++i) {
    if (!on_gpu_[i]) out.push_back(i);
  }
  return out;
}

void CacheState::set_scores(std::vector<double> scores) {
  if (scores.size() != on_gpu_.size()) throw InvalidInput("cache", "score vector has the wrong length");
  scores_ = std::move(scores);
}

void CacheState::set_cached(std::span<const std::size_t> experts) {
  if (experts.size() != capacity_) throw InvalidInput("cache", "cached set must have exactly capacity experts");
  std::vector<std::uint8_t> next(on_gpu_.size(), 0);
  for (std::size_t e : experts) {
    if (e >= next.size() || next[e]) throw InvalidInput("cache", "cached set has an invalid or repeated expert");
    next[e] = 1;
  }
  on_gpu_ = std::move(next);
}

CacheState init_cache(std::size_t layer, std::size_t num_experts, std::size_t capacity, std::size_t window_size,
                      std::size_t update_size, CachePolicy policy, std::uint64_t seed) {
  if (capacity == 0 || capacity >= num_experts) {
    throw ConfigError("cache", "capacity " + std::to_string(capacity) + " must be in [1, " +
                                   std::to_string(num_experts > 0 ? num_experts - 1 : 0) + "]");
  }
  if (window_size == 0) throw ConfigError("cache", "w_size must be at least 1");
  if (policy != CachePolicy::lru && update_size > std::min(capacity, num_experts - capacity)) {
    throw ConfigError("cache", "u_size " + std::to_string(update_size) + " exceeds min(capacity, N - capacity) = " +
                                   std::to_string(std::min(capacity, num_experts - capacity)));
  }
  CacheState s;
  s.layer_ = layer;
  s.capacity_ = capacity;
  s.window_size_ = window_size;
  s.update_size_ = update_size;
  s.policy_ = policy;
  s.on_gpu_.assign(num_experts, 0);
  s.scores_.assign(num_experts, 0.0);
  s.lru_clock_.assign(num_experts, 0);

  std::vector<std::size_t> ids(num_experts);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::mt19937_64 rng(mix(seed ^ mix(layer + 1)));
  for (std::size_t i = 0; i < capacity; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, num_experts - 1);
    std::swap(ids[i], ids[pick(rng)]);
    s.on_gpu_[ids[i]] = 1;
  }
  return s;
}

std::size_t CacheState::victim() const {
  std::size_t best = on_gpu_.size();
  for (std::size_t i = 0; i < on_gpu_.size(); ++i) {
    if (!on_gpu_[i]) continue;
    if (best == on_gpu_.size()) {
      best = i;
      continue;
    }
    const bool older = policy_ == CachePolicy::lru ? lru_clock_[i] < lru_clock_[best] : scores_[i] < scores_[best];
    if (older) best = i;
  }
  return best;
}

std::optional<std::size_t> CacheState::admit(std::size_t expert) {
  if (on_gpu_.at(expert)) return std::nullopt;
  const std::size_t out = victim();
  on_gpu_[out] = 0;
  on_gpu_[expert] = 1;
  lru_clock_[expert] = ++clock_;
  return out;
}

std::optional<ReplacementEvent> CacheState::replace_now(std::size_t token_index) {
  std::vector<std::size_t> cached = expert_on_gpu();
  std::vector<std::size_t> uncached = expert_on_cpu();
  std::stable_sort(cached.begin(), cached.end(), [&](std::size_t a, std::size_t b) { return scores_[a] < scores_[b]; });
  std::stable_sort(uncached.begin(), uncached.end(),
                   [&](std::size_t a, std::size_t b) { return scores_[a] > scores_[b]; });

  ReplacementEvent ev;
  ev.token_index = token_index;
  ev.layer = layer_;
  const std::size_t pairs = std::min({update_size_, cached.size(), uncached.size()});
  for (std::size_t j = 0; j < pairs; ++j) {
    const double s_admit = scores_[uncached[j]];
    const double s_evict = scores_[cached[j]];
    // A swap must not trade a better expert for a worse one, and an expert
    // nobody used in the window is never worth a transfer.
    if (!(s_admit >= s_evict && s_admit > 0.0)) break;
    ev.evicted.push_back(cached[j]);
    ev.admitted.push_back(uncached[j]);
  }
  for (std::size_t e : ev.evicted) on_gpu_[e] = 0;
  for (std::size_t e : ev.admitted) on_gpu_[e] = 1;
  std::fill(scores_.begin(), scores_.end(), 0.0);
  tokens_in_window_ = 0;
  if (ev.admitted.empty()) return std::nullopt;
  return ev;
}

std::optional<ReplacementEvent> record_and_maybe_replace(CacheState& state, const Workloads& workloads,
                                                         std::size_t token_index, bool is_eos,
                                                         std::span<const double> gate_scores,
                                                         std::span<const std::uint8_t> gpu_assigned) {
  const std::size_t n = state.on_gpu_.size();
  if (workloads.size() != n) {
    throw InvalidInput("cache", "workload vector has " + std::to_string(workloads.size()) + " entries, cache has " +
                                    std::to_string(n) + " experts");
  }
  if (state.stopped_) return std::nullopt;
  if (is_eos) {
    state.stopped_ = true;
    return std::nullopt;
  }

  if (state.policy_ == CachePolicy::lru) {
    if (!gpu_assigned.empty() && gpu_assigned.size() != n) throw InvalidInput("cache", "GPU mask has the wrong length");
    ReplacementEvent ev;
    ev.token_index = token_index;
    ev.layer = state.layer_;
    for (std::size_t i = 0; i < n; ++i) {
      if (workloads[i] <= 0) continue;
      if (state.on_gpu_[i]) {
        state.lru_clock_[i] = ++state.clock_;
        continue;
      }
      const bool on_gpu_lane = gpu_assigned.empty() || gpu_assigned[i];
      if (!on_gpu_lane) continue;
      const auto out = state.admit(i);
      ev.evicted.push_back(*out);
      ev.admitted.push_back(i);
    }
    if (ev.admitted.empty()) return std::nullopt;
    return ev;
  }

  if (state.policy_ == CachePolicy::workload) {
    for (std::size_t i = 0; i < n; ++i) state.scores_[i] += static_cast<double>(workloads[i]);
  } else {
    if (gate_scores.size() != n) {
      throw InvalidInput("cache", "score-based policy needs gate probability sums for every expert");
    }
    for (std::size_t i = 0; i < n; ++i) state.scores_[i] += gate_scores[i];
  }
  if (++state.tokens_in_window_ < state.window_size_) return std::nullopt;
  return state.replace_now(token_index);
}

HitCounters::HitCounters(std::size_t layers, std::size_t steps)
    : layer_hits(layers, 0), layer_misses(layers, 0), step_hits(steps, 0), step_misses(steps, 0) {}

void HitCounters::add(std::size_t layer, std::size_t step, bool hit) {
  if (hit) {
    ++layer_hits.at(layer);
    ++step_hits.at(step);
  } else {
    ++layer_misses.at(layer);
    ++step_misses.at(step);
  }
}

bool HitCounters::lookup(const CacheState& state, std::size_t expert, std::size_t step) {
  const bool hit = state.contains(expert);
  add(state.layer(), step, hit);
  return hit;
}

std::uint64_t HitCounters::hits() const { return std::accumulate(layer_hits.begin(), layer_hits.end(), std::uint64_t{0}); }

std::uint64_t HitCounters::misses() const {
  return std::accumulate(layer_misses.begin(), layer_misses.end(), std::uint64_t{0});
}

double hit_rate(const HitCounters& counters) {
  const auto h = counters.hits();
  const auto m = counters.misses();
  if (h + m == 0) throw InvalidInput("cache", "hit rate needs at least one recorded lookup");
  return static_cast<double>(h) / static_cast<double>(h + m);
}

double layer_hit_rate(const HitCounters& counters, std::size_t layer) {
  const auto h = counters.layer_hits.at(layer);
  const auto m = counters.layer_misses.at(layer);
  if (h + m == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(h) / static_cast<double>(h + m);
}

std::vector<GroupRate> hit_rate_by_group(const HitCounters& counters, std::size_t group_size) {
  if (group_size == 0) throw InvalidInput("cache", "group size must be at least 1");
  std::vector<GroupRate> out;
  const std::size_t steps = counters.step_hits.size();
  for (std::size_t first = 0; first < steps; first += group_size) {
    GroupRate g;
    g.first_step = first;
    g.steps = std::min(group_size, steps - first);
    for (std::size_t s = first; s < first + g.steps; ++s) {
      g.hits += counters.step_hits[s];
      g.misses += counters.step_misses[s];
    }
    g.empty = g.hits + g.misses == 0;
    g.rate = g.empty ? std::numeric_limits<double>::quiet_NaN()
                     : static_cast<double>(g.hits) / static_cast<double>(g.hits + g.misses);
    out.push_back(g);
  }
  return out;
}

std::size_t capacity_for_ratio(double ratio, std::size_t num_experts) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("cache", "cache ratio must be in (0, 1)");
  if (num_experts < 2) throw ConfigError("cache", "a cache needs at least two experts");
  const auto c = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(num_experts)));
  return std::clamp<std::size_t>(c, 1, num_experts - 1);
}

CacheReplay replay_cache(const Trace& trace, const CacheConfig& config, const CostModel& cost_model,
                         std::uint64_t seed) {
  const ModelConfig& c = trace.config;
  if (config.policy == CachePolicy::score && (!trace.has_features || !trace.gate)) {
    throw InvalidInput("cache", "score-based policy needs a trace with hidden states and gate parameters");
  }
  std::vector<CacheState> caches;
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    caches.push_back(init_cache(l, c.num_routed_experts, config.capacity, config.window_size, config.update_size,
                                config.policy, seed));
  }
  CacheReplay out;
  out.counters = HitCounters(c.num_layers, trace.steps.size());
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    const TokenStep& step = trace.steps[s];
    for (std::size_t l = 0; l < c.num_layers; ++l) {
      CacheState& cache = caches[l];
      AssignmentInstance inst;
      inst.workloads = step.workloads[l];
      inst.resident.assign(c.num_routed_experts, 0);
      for (std::size_t e = 0; e < c.num_routed_experts; ++e) inst.resident[e] = cache.contains(e) ? 1 : 0;
      inst.cost_model = &cost_model;
      const Assignment a = greedy_assign(inst);
      for (std::size_t e = 0; e < c.num_routed_experts; ++e) {
        if (!a.gpu[e]) continue;
        const bool hit = out.counters.lookup(cache, e, s);
        if (!hit && config.admit_demand && cache.policy() != CachePolicy::lru) cache.admit(e);
      }
      std::vector<double> probs;
      if (config.policy == CachePolicy::score) probs = kernels::gate_probability_sums(step.hidden[l], trace.gate->layers[l]);
      if (auto ev = record_and_maybe_replace(cache, step.workloads[l], step.index, step.eos, probs, a.gpu)) {
        out.events.push_back(std::move(*ev));
      }
    }
  }
  return out;
}

}  // namespace moesim
