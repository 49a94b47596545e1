#include "moesim/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "moesim/error.hpp"
#include "moesim/kernels.hpp"

namespace moesim {

namespace {

std::string join_ids(const std::vector<std::size_t>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(ids[i]);
  }
  return s.empty() ? "-" : s;
}

}  // namespace

std::string AssignmentPolicy::to_string() const {
  switch (kind) {
    case PolicyKind::greedy: return "greedy";
    case PolicyKind::optimal: return "optimal";
    case PolicyKind::beam: return "beam:" + std::to_string(beam_width);
    case PolicyKind::all_cpu: return "all-cpu";
    case PolicyKind::all_gpu: return "all-gpu";
    case PolicyKind::static_threshold: return "static-threshold:" + format_double(threshold);
  }
  return "unknown";
}

AssignmentPolicy AssignmentPolicy::parse(std::string_view text) {
  AssignmentPolicy p;
  const auto colon = text.find(':');
  const std::string_view name = text.substr(0, colon);
  const std::string_view arg = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  const std::string ctx = "assignment policy '" + std::string(text) + "'";
  if (name == "greedy") {
    p.kind = PolicyKind::greedy;
  } else if (name == "optimal") {
    p.kind = PolicyKind::optimal;
  } else if (name == "beam") {
    p.kind = PolicyKind::beam;
    if (!arg.empty()) {
      const auto w = parse_int(arg, "simulator", ctx);
      if (w < 1) throw ConfigError("simulator", "beam width must be at least 1");
      p.beam_width = static_cast<std::size_t>(w);
    }
  } else if (name == "all-cpu") {
    p.kind = PolicyKind::all_cpu;
  } else if (name == "all-gpu") {
    p.kind = PolicyKind::all_gpu;
  } else if (name == "static-threshold") {
    p.kind = PolicyKind::static_threshold;
    if (!arg.empty()) p.threshold = parse_double(arg, "simulator", ctx);
    if (!(p.threshold >= 0.0)) throw ConfigError("simulator", "static threshold must be nonnegative");
  } else {
    throw ConfigError("simulator", "unknown assignment policy '" + std::string(text) + "'");
  }
  if (!arg.empty() && p.kind != PolicyKind::beam && p.kind != PolicyKind::static_threshold) {
    throw ConfigError("simulator", "policy '" + std::string(name) + "' takes no argument");
  }
  return p;
}

void SimConfig::validate(const ModelConfig& model) const {
  const std::size_t n = model.num_routed_experts;
  if (prefetch_size > n) {
    throw ConfigError("simulator", "prefetch size " + std::to_string(prefetch_size) + " exceeds " + std::to_string(n) +
                                       " experts");
  }
  if (assignment.kind == PolicyKind::static_threshold && !(assignment.threshold >= 0.0)) {
    throw ConfigError("simulator", "static threshold must be nonnegative");
  }
  if (assignment.kind == PolicyKind::beam && assignment.beam_width == 0) {
    throw ConfigError("simulator", "beam width must be at least 1");
  }
  if (cache) {
    if (cache->capacity == 0 || cache->capacity >= n) {
      throw ConfigError("simulator", "cache capacity must be in [1, " + std::to_string(n - 1) + "]");
    }
    if (cache->window_size == 0) throw ConfigError("simulator", "w_size must be at least 1");
    if (cache->policy != CachePolicy::lru && cache->update_size > std::min(cache->capacity, n - cache->capacity)) {
      throw ConfigError("simulator", "u_size exceeds min(capacity, N - capacity)");
    }
  }
  if (hit_group_size == 0) throw ConfigError("simulator", "hit-rate group size must be at least 1");
  for (double v : {scheduling_overhead_ms, solver_node_cost_ms, prefetch_gate_ms}) {
    if (!(v >= 0.0)) throw ConfigError("simulator", "overhead constants must be nonnegative");
  }
}

std::string_view to_string(TransferPurpose purpose) {
  switch (purpose) {
    case TransferPurpose::demand: return "demand";
    case TransferPurpose::prefetch: return "prefetch";
    case TransferPurpose::replacement: return "replacement";
  }
  return "unknown";
}

LayerResult simulate_layer(const Workloads& workloads, const CacheState* cache,
                           const std::vector<std::uint8_t>& prefetched, const SimConfig& config,
                           std::size_t num_shared_experts) {
  const std::size_t n = workloads.size();
  if (cache && cache->num_experts() != n) throw InvalidInput("simulator", "cache size does not match the workloads");
  if (!prefetched.empty() && prefetched.size() != n) throw InvalidInput("simulator", "prefetch mask has the wrong length");

  AssignmentInstance inst;
  inst.workloads = workloads;
  inst.resident.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool cached = cache && cache->contains(i);
    const bool fetched = !prefetched.empty() && prefetched[i];
    inst.resident[i] = (cached || fetched) ? 1 : 0;
  }
  inst.cost_model = &config.cost_model;
  inst.gpu_capacity = config.gpu_capacity;

  LayerResult out;
  switch (config.assignment.kind) {
    case PolicyKind::greedy: out.assignment = greedy_assign(inst); break;
    case PolicyKind::optimal:
      try {
        auto r = optimal_assign(inst, config.exact_limit);
        out.assignment = std::move(r.assignment);
        out.solver_nodes = r.stats.nodes;
      } catch (const Refused&) {
        out.assignment = greedy_assign(inst);
        out.fell_back = true;
      }
      break;
    case PolicyKind::beam: {
      SearchStats stats;
      out.assignment = beam_assign(inst, config.assignment.beam_width, &stats);
      out.solver_nodes = stats.nodes;
      break;
    }
    case PolicyKind::all_cpu: out.assignment = all_cpu_assign(inst); break;
    case PolicyKind::all_gpu: out.assignment = all_gpu_assign(inst); break;
    case PolicyKind::static_threshold: out.assignment = static_threshold_assign(inst, config.assignment.threshold); break;
  }
  if (const auto v = validate(inst, out.assignment); !v.empty()) {
    throw Error("simulator", "policy " + config.assignment.to_string() + " produced an invalid assignment: " + v.front().message);
  }

  const CostModel& cm = config.cost_model;
  LayerTimeline& tl = out.timeline;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.assignment.cpu[i]) tl.cpu_busy += cm.t_cpu(static_cast<double>(workloads[i]));
  }

  double pcie_free = 0.0;
  double gpu_free = 0.0;
  for (std::size_t e : priority_order(CostTable::from_instance(inst))) {
    if (!out.assignment.gpu[e]) continue;
    double ready = 0.0;
    if (!inst.resident[e]) {
      tl.pcie.push_back({pcie_free, pcie_free + cm.trans_time, TransferPurpose::demand, e});
      pcie_free += cm.trans_time;
      tl.demand_transfer_sum += cm.trans_time;
      ++tl.demand_transfers;
      ready = pcie_free;
    }
    const double c = cm.compute(static_cast<double>(workloads[e]));
    const double start = std::max(gpu_free, ready);
    tl.gpu.push_back({start, start + c, e});
    gpu_free = start + c;
    tl.compute_sum += c;
  }
  tl.gpu_lane = std::max(gpu_free, pcie_free);
  tl.replacement_end = pcie_free;
  tl.overhead = config.scheduling_overhead_ms + config.solver_node_cost_ms * static_cast<double>(out.solver_nodes) +
                (config.prefetch_enabled() ? config.prefetch_gate_ms : 0.0);
  const double shared = num_shared_experts > 0 ? cm.shared_expert_gpu_time : 0.0;
  tl.layer_latency = std::max(tl.cpu_busy, tl.gpu_lane) + shared + tl.overhead;
  return out;
}

RunReport simulate_run(const Trace& trace, const SimConfig& config, const Calibration* calibration) {
  const ModelConfig& c = trace.config;
  const std::size_t n = c.num_routed_experts;
  const std::size_t L = c.num_layers;
  config.validate(c);

  std::optional<Predictor> predictor;
  if (config.prefetch_enabled() && L > 1) {
    switch (config.prefetch_kind) {
      case PredictorKind::residual:
        if (!calibration) throw ConfigError("simulator", "residual prefetching needs a calibration (residuals) file");
        calibration->residuals.validate(c);
        predictor = Predictor::residual(calibration->residuals);
        break;
      case PredictorKind::statistical:
        if (!calibration) throw ConfigError("simulator", "statistical prefetching needs a calibration file");
        predictor = Predictor::statistical(calibration->frequency);
        break;
      case PredictorKind::feature: predictor = Predictor::feature(); break;
      case PredictorKind::random: predictor = Predictor::random(config.seed); break;
    }
    const bool gate_based =
        config.prefetch_kind == PredictorKind::residual || config.prefetch_kind == PredictorKind::feature;
    if (gate_based && (!trace.has_features || !trace.gate)) {
      throw ConfigError("simulator", "gate-based prefetching needs a trace with hidden states and gate parameters");
    }
  }
  if (config.cache && config.cache->policy == CachePolicy::score && (!trace.has_features || !trace.gate)) {
    throw ConfigError("simulator", "score-based caching needs a trace with hidden states and gate parameters");
  }

  std::vector<CacheState> caches;
  if (config.cache) {
    for (std::size_t l = 0; l < L; ++l) {
      caches.push_back(init_cache(l, n, config.cache->capacity, config.cache->window_size, config.cache->update_size,
                                  config.cache->policy, config.seed));
    }
  }

  RunReport rep;
  rep.assignment_policy = config.assignment.to_string();
  rep.steps = trace.steps.size();
  rep.tokens = trace.steps.size() * trace.tokens_per_step;
  rep.num_layers = L;
  rep.hit_counters = HitCounters(L, trace.steps.size());
  std::vector<double> layer_pcie(L, 0.0);
  std::vector<double> layer_time(L, 0.0);
  std::vector<double> acc_sum(L > 0 ? L - 1 : 0, 0.0);
  const CostModel& cm = config.cost_model;
  double clock = 0.0;

  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    const TokenStep& step = trace.steps[s];
    std::vector<std::uint8_t> prefetched;
    for (std::size_t l = 0; l < L; ++l) {
      const Workloads& w = step.workloads[l];
      CacheState* cache = caches.empty() ? nullptr : &caches[l];
      LayerResult r = simulate_layer(w, cache, prefetched, config, c.num_shared_experts);
      LayerTimeline& tl = r.timeline;
      tl.step = s;
      tl.layer = l;
      tl.start = clock;
      rep.solver_nodes += r.solver_nodes;
      if (r.fell_back) ++rep.optimal_fallbacks;

      if (cache) {
        std::vector<std::uint8_t> on_gpu_now(n, 0);
        for (std::size_t e = 0; e < n; ++e) {
          if (!r.assignment.gpu[e]) continue;
          on_gpu_now[e] = 1;
          const bool hit = rep.hit_counters.lookup(*cache, e, s);
          if (hit || cache->policy() == CachePolicy::lru) continue;
          const bool was_prefetched = !prefetched.empty() && prefetched[e];
          if ((was_prefetched && config.cache->admit_prefetched) || (!was_prefetched && config.cache->admit_demand)) {
            cache->admit(e);
          }
        }
        std::vector<double> probs;
        if (cache->policy() == CachePolicy::score) probs = kernels::gate_probability_sums(step.hidden[l], trace.gate->layers[l]);
        if (auto ev = record_and_maybe_replace(*cache, w, step.index, step.eos, probs, r.assignment.gpu)) {
          double pcie_free = tl.replacement_end;
          for (std::size_t e : ev->admitted) {
            if (on_gpu_now[e]) continue;
            tl.pcie.push_back({pcie_free, pcie_free + cm.trans_time, TransferPurpose::replacement, e});
            pcie_free += cm.trans_time;
            ev->transfer_cost += cm.trans_time;
            ++tl.replacement_transfers;
          }
          tl.replacement_end = pcie_free;
          ++rep.replacement_event_count;
          rep.events.push_back(std::move(*ev));
        }
      }

      const double shared = c.num_shared_experts > 0 ? cm.shared_expert_gpu_time : 0.0;
      tl.layer_latency = std::max({tl.cpu_busy, tl.gpu_lane, tl.replacement_end}) + shared + tl.overhead;

      std::vector<std::uint8_t> next_prefetched;
      if (predictor && l + 1 < L) {
        const Matrix empty;
        const Matrix& hidden = trace.has_features ? step.hidden[l] : empty;
        const Matrix no_gate(c.hidden_dim, n);
        const Matrix& gate = trace.gate ? trace.gate->layers[l + 1] : no_gate;
        const PrefetchDecision d =
            predict_next_layer(*predictor, hidden, gate, c.top_k, l, config.prefetch_size, step.index);
        acc_sum[l] += prefetch_accuracy(d.prefetch_set, step.workloads[l + 1], config.prefetch_size);
        next_prefetched.assign(n, 0);
        double pcie_free = tl.replacement_end;
        for (std::size_t e : d.prefetch_set) {
          if (!caches.empty() && caches[l + 1].contains(e)) continue;
          // The next layer's non-MoE work runs before its experts do.
          if (pcie_free + cm.trans_time > tl.layer_latency + cm.non_moe_layer_time) break;
          tl.pcie.push_back({pcie_free, pcie_free + cm.trans_time, TransferPurpose::prefetch, e});
          pcie_free += cm.trans_time;
          next_prefetched[e] = 1;
          ++tl.prefetch_transfers;
        }
      }
      prefetched = std::move(next_prefetched);

      double busy = 0.0;
      for (const PcieInterval& iv : tl.pcie) {
        const double d = iv.end - iv.start;
        busy += d;
        if (iv.purpose == TransferPurpose::demand) rep.pcie_demand_ms += d;
        if (iv.purpose == TransferPurpose::prefetch) rep.pcie_prefetch_ms += d;
        if (iv.purpose == TransferPurpose::replacement) rep.pcie_replacement_ms += d;
      }
      rep.pcie_busy_ms += busy;
      layer_pcie[l] += busy;
      layer_time[l] += tl.layer_latency + cm.non_moe_layer_time;
      rep.cpu_busy_ms += tl.cpu_busy;
      rep.gpu_busy_ms += tl.compute_sum;
      rep.gpu_lane_ms += tl.gpu_lane;
      rep.demand_transfers += tl.demand_transfers;
      clock += tl.layer_latency + cm.non_moe_layer_time;
      if (!config.keep_timelines) {
        tl.pcie.clear();
        tl.pcie.shrink_to_fit();
        tl.gpu.clear();
        tl.gpu.shrink_to_fit();
      }
      rep.layers.push_back(std::move(tl));
    }
  }

  rep.total_ms = clock;
  if (rep.steps > 0) rep.mean_token_latency_ms = clock / static_cast<double>(rep.steps);
  if (clock > 0.0) {
    rep.tokens_per_second = static_cast<double>(rep.tokens) / (clock / 1000.0);
    rep.pcie_fraction = rep.pcie_busy_ms / clock;
  }
  rep.layer_pcie_fraction.assign(L, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    if (layer_time[l] > 0.0) rep.layer_pcie_fraction[l] = layer_pcie[l] / layer_time[l];
  }
  if (predictor && !trace.steps.empty()) {
    for (double& a : acc_sum) a /= static_cast<double>(trace.steps.size());
    rep.prefetch_accuracy = std::move(acc_sum);
  }
  if (config.cache && rep.hit_counters.hits() + rep.hit_counters.misses() > 0) {
    rep.has_hit_rate = true;
    rep.hit_rate = hit_rate(rep.hit_counters);
  }
  if (config.cache) rep.hit_groups = hit_rate_by_group(rep.hit_counters, config.hit_group_size);
  return rep;
}

double pcie_fraction(const RunReport& report) {
  return report.total_ms > 0.0 ? report.pcie_busy_ms / report.total_ms : 0.0;
}

KvDocument RunReport::to_kv(const KvDocument* spec) const {
  KvDocument doc("simulator");
  doc.set("format", "moesim-report v1");
  if (spec) {
    for (const auto& [k, v] : spec->entries()) doc.set("spec." + k, v);
  }
  doc.set("assignment_policy", assignment_policy);
  doc.set("steps", steps);
  doc.set("tokens", tokens);
  doc.set("num_layers", num_layers);
  doc.set("total_ms", total_ms);
  doc.set("tokens_per_second", tokens_per_second);
  doc.set("mean_token_latency_ms", mean_token_latency_ms);
  doc.set("pcie_busy_ms", pcie_busy_ms);
  doc.set("pcie_demand_ms", pcie_demand_ms);
  doc.set("pcie_prefetch_ms", pcie_prefetch_ms);
  doc.set("pcie_replacement_ms", pcie_replacement_ms);
  doc.set("pcie_fraction", pcie_fraction);
  doc.set_list("layer_pcie_fraction", layer_pcie_fraction);
  doc.set_list("prefetch_accuracy", prefetch_accuracy);
  doc.set("has_hit_rate", has_hit_rate);
  doc.set("hit_rate", has_hit_rate ? hit_rate : std::numeric_limits<double>::quiet_NaN());
  std::vector<double> rates;
  std::vector<std::int64_t> hits;
  std::vector<std::int64_t> misses;
  for (const GroupRate& g : hit_groups) {
    rates.push_back(g.rate);
    hits.push_back(static_cast<std::int64_t>(g.hits));
    misses.push_back(static_cast<std::int64_t>(g.misses));
  }
  doc.set_list("hit_group_rates", rates);
  doc.set_list("hit_group_hits", hits);
  doc.set_list("hit_group_misses", misses);
  doc.set("hit_group_size", hit_groups.empty() ? std::size_t{0} : hit_groups.front().steps);
  doc.set("cpu_busy_ms", cpu_busy_ms);
  doc.set("gpu_busy_ms", gpu_busy_ms);
  doc.set("gpu_lane_ms", gpu_lane_ms);
  doc.set("solver_nodes", static_cast<std::int64_t>(solver_nodes));
  doc.set("optimal_fallbacks", optimal_fallbacks);
  doc.set("demand_transfers", demand_transfers);
  doc.set("replacement_events", replacement_event_count);
  for (std::size_t i = 0; i < events.size(); ++i) {
    const ReplacementEvent& e = events[i];
    doc.set("event." + std::to_string(i), "token=" + std::to_string(e.token_index) + " layer=" + std::to_string(e.layer) +
                                              " evicted=" + join_ids(e.evicted) + " admitted=" + join_ids(e.admitted) +
                                              " cost=" + format_double(e.transfer_cost));
  }
  return doc;
}

RunReport RunReport::from_kv(const KvDocument& doc) {
  if (doc.get_or("format", "") != "moesim-report v1") {
    throw InvalidInput("simulator", "not a run report (expected format = moesim-report v1)");
  }
  RunReport r;
  r.assignment_policy = doc.get("assignment_policy");
  r.steps = static_cast<std::size_t>(doc.get_int("steps"));
  r.tokens = static_cast<std::size_t>(doc.get_int("tokens"));
  r.num_layers = static_cast<std::size_t>(doc.get_int("num_layers"));
  r.total_ms = doc.get_double("total_ms");
  r.tokens_per_second = doc.get_double("tokens_per_second");
  r.mean_token_latency_ms = doc.get_double("mean_token_latency_ms");
  r.pcie_busy_ms = doc.get_double("pcie_busy_ms");
  r.pcie_demand_ms = doc.get_double("pcie_demand_ms");
  r.pcie_prefetch_ms = doc.get_double("pcie_prefetch_ms");
  r.pcie_replacement_ms = doc.get_double("pcie_replacement_ms");
  r.pcie_fraction = doc.get_double("pcie_fraction");
  r.layer_pcie_fraction = doc.get_doubles("layer_pcie_fraction");
  r.prefetch_accuracy = doc.get_doubles("prefetch_accuracy");
  r.has_hit_rate = doc.get_bool("has_hit_rate");
  r.hit_rate = r.has_hit_rate ? doc.get_double("hit_rate") : 0.0;
  const auto rates = doc.get_doubles("hit_group_rates");
  const auto hits = doc.get_ints("hit_group_hits");
  const auto misses = doc.get_ints("hit_group_misses");
  const auto group = static_cast<std::size_t>(doc.get_int("hit_group_size"));
  if (hits.size() != rates.size() || misses.size() != rates.size()) {
    throw InvalidInput("simulator", "hit-group lists have different lengths");
  }
  for (std::size_t i = 0; i < rates.size(); ++i) {
    GroupRate g;
    g.first_step = i * group;
    g.steps = std::min(group, r.steps - std::min(r.steps, g.first_step));
    g.hits = static_cast<std::uint64_t>(hits[i]);
    g.misses = static_cast<std::uint64_t>(misses[i]);
    g.empty = g.hits + g.misses == 0;
    g.rate = rates[i];
    r.hit_groups.push_back(g);
  }
  r.cpu_busy_ms = doc.get_double("cpu_busy_ms");
  r.gpu_busy_ms = doc.get_double("gpu_busy_ms");
  r.gpu_lane_ms = doc.get_double("gpu_lane_ms");
  r.solver_nodes = static_cast<std::uint64_t>(doc.get_int("solver_nodes"));
  r.optimal_fallbacks = static_cast<std::size_t>(doc.get_int("optimal_fallbacks"));
  r.demand_transfers = static_cast<std::size_t>(doc.get_int("demand_transfers"));
  r.replacement_event_count = static_cast<std::size_t>(doc.get_int("replacement_events"));
  return r;
}

std::vector<std::pair<std::string, SimConfig>> breakdown_configs(const SimConfig& full) {
  if (!full.prefetch_enabled()) throw ConfigError("simulator", "breakdown needs prefetching enabled in the full config");
  if (!full.cache) throw ConfigError("simulator", "breakdown needs a cache in the full config");
  SimConfig naive = full;
  naive.assignment.kind = PolicyKind::all_cpu;
  naive.prefetch_size = 0;
  naive.cache.reset();
  SimConfig assigned = full;
  if (assigned.assignment.kind == PolicyKind::all_cpu) assigned.assignment.kind = PolicyKind::greedy;
  assigned.prefetch_size = 0;
  assigned.cache.reset();
  SimConfig with_prefetch = assigned;
  with_prefetch.prefetch_kind = full.prefetch_kind;
  with_prefetch.prefetch_size = full.prefetch_size;
  SimConfig with_cache = with_prefetch;
  with_cache.cache = full.cache;
  return {{"naive", naive},
          {"+" + assigned.assignment.to_string(), assigned},
          {"+prefetch", with_prefetch},
          {"+cache", with_cache}};
}

std::vector<BreakdownRow> breakdown_experiment(const Trace& trace, const SimConfig& full,
                                               const Calibration* calibration) {
  std::vector<BreakdownRow> rows;
  for (const auto& [label, cfg] : breakdown_configs(full)) {
    const RunReport r = simulate_run(trace, cfg, calibration);
    BreakdownRow row;
    row.label = label;
    row.tokens_per_second = r.tokens_per_second;
    row.mean_token_latency_ms = r.mean_token_latency_ms;
    row.pcie_fraction = r.pcie_fraction;
    if (!rows.empty()) {
      row.speedup = rows.front().tokens_per_second > 0.0 ? r.tokens_per_second / rows.front().tokens_per_second : 0.0;
      row.step_factor = rows.back().tokens_per_second > 0.0 ? r.tokens_per_second / rows.back().tokens_per_second : 0.0;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace moesim
