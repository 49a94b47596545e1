#include "moesim/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "moesim/assignment.hpp"
#include "moesim/cache.hpp"
#include "moesim/cost_model.hpp"
#include "moesim/error.hpp"
#include "moesim/kv.hpp"
#include "moesim/metrics.hpp"
#include "moesim/prefetch.hpp"
#include "moesim/simulator.hpp"
#include "moesim/synthetic.hpp"
#include "moesim/trace.hpp"
#include "moesim/trace_io.hpp"

namespace moesim::cli {

namespace {

// Options that name where results go, or how fast they are produced; they
// never change the content and stay out of the embedded spec.
const std::set<std::string> kNotInSpec = {"help", "help-all", "config", "out", "timeline", "cosine-out", "jobs"};

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? sep : "") + parts[i];
  return s;
}

/// The resolved option values of one subcommand, in declaration order.
KvDocument resolved_spec(const CLI::App& sub) {
  KvDocument spec("cli");
  spec.set("command", sub.get_name());
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (kNotInSpec.count(name)) continue;
    std::string value;
    if (opt->get_expected_max() == 0) {
      value = opt->count() > 0 ? "true" : "false";
    } else if (opt->count() > 0) {
      value = join(opt->results(), ",");
    } else {
      value = opt->get_default_str();
    }
    spec.set(name, value);
  }
  return spec;
}

std::vector<std::string> spec_lines(const KvDocument& spec) {
  std::vector<std::string> lines;
  for (const auto& [k, v] : spec.entries()) lines.push_back("spec." + k + " = " + v);
  return lines;
}

/// Puts "# spec.key = value" lines after the table's format line.
std::string csv_with_spec(const Table& table, const KvDocument& spec) {
  const std::string csv = table.to_csv();
  const auto nl = csv.find('\n');
  std::string out = csv.substr(0, nl + 1);
  for (const auto& line : spec_lines(spec)) out += "# " + line + "\n";
  out += csv.substr(nl + 1);
  return out;
}

std::string csv_with_spec(const std::vector<Table>& tables, const KvDocument& spec) {
  std::string out;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    if (i) out += '\n';
    out += csv_with_spec(tables[i], spec);
  }
  return out;
}

void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_text_file(path, text, "cli");
  }
}

std::size_t default_update_size(std::size_t num_experts, std::size_t capacity) {
  const std::size_t base = num_experts <= 8 ? 1 : 8;
  return std::min({base, capacity, num_experts - capacity});
}

std::size_t default_prefetch_size(std::size_t num_experts) { return num_experts <= 8 ? 1 : 4; }

CostModel load_cost_model(const std::string& path) {
  return path.empty() ? CostModel::default_3090() : CostModel::load(path);
}

/// Expands "--config FILE" into "--key=value" arguments for every key the
/// command line does not already set, placed before the user's own flags.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::optional<std::string> config_path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!config_path) return args;
  KvDocument doc;
  try {
    doc = KvDocument::load(*config_path, "cli");
  } catch (const InvalidInput& e) {
    throw ConfigError("cli", e.what());
  }
  std::set<std::string> given;
  for (const auto& a : rest) {
    if (a.rfind("--", 0) != 0) continue;
    given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
  }
  // rest[0] is the subcommand name.
  if (!rest.empty()) out.push_back(rest.front());
  for (const auto& [k, v] : doc.entries()) {
    if (!given.count(k)) out.push_back("--" + k + "=" + v);
  }
  out.insert(out.end(), rest.begin() + (rest.empty() ? 0 : 1), rest.end());
  return out;
}

// ---- shared simulation flags ----------------------------------------------

struct SimFlags {
  std::string cost_model;
  std::string residuals;
  std::string policy = "greedy";
  std::string prefetch = "none";
  long prefetch_size = -1;
  std::string cache = "none";
  double cache_ratio = 0.5;
  long capacity = 0;
  long w_size = 4;
  long u_size = -1;
  long gpu_capacity = 0;
  double overhead_ms = 0.0;
  double node_cost_ms = 0.0;
  double prefetch_gate_ms = 0.0;
  long exact_limit = static_cast<long>(kDefaultExactLimit);
  long group_size = 8;
  bool admit_prefetched = false;
  bool admit_demand = false;
  std::uint64_t seed = 0;
};

void add_sim_options(CLI::App* sub, SimFlags& f, bool with_policy = true) {
  sub->add_option("--cost-model", f.cost_model, "Cost model file (default: bundled 3090-like model)");
  sub->add_option("--residuals", f.residuals, "Calibration file from 'calibrate'");
  if (with_policy) {
    sub->add_option("--policy", f.policy,
                    "greedy | optimal | beam:W | all-cpu | all-gpu | static-threshold:T");
    sub->add_option("--prefetch", f.prefetch, "none | residual | feature | statistical | random");
    sub->add_option("--cache", f.cache, "none | workload | lru | score");
  }
  sub->add_option("--prefetch-size", f.prefetch_size, "Experts prefetched per layer (-1: model default)");
  sub->add_option("--cache-ratio", f.cache_ratio, "Cached experts per layer / N");
  sub->add_option("--capacity", f.capacity, "Cached experts per layer (0: use --cache-ratio)");
  sub->add_option("--w-size", f.w_size, "Replacement window in tokens");
  sub->add_option("--u-size", f.u_size, "Experts swapped per replacement (-1: model default)");
  sub->add_option("--gpu-capacity", f.gpu_capacity, "GPU slots for transferred experts per layer (0: unlimited)");
  sub->add_option("--overhead-ms", f.overhead_ms, "Planning cost charged per layer");
  sub->add_option("--node-cost-ms", f.node_cost_ms, "Cost per search node for beam/optimal");
  sub->add_option("--prefetch-gate-ms", f.prefetch_gate_ms, "Prediction gate cost per layer when prefetching");
  sub->add_option("--exact-limit", f.exact_limit, "Most active experts the exact solver accepts");
  sub->add_option("--group-size", f.group_size, "Tokens per hit-rate group");
  sub->add_flag("--admit-prefetched", f.admit_prefetched, "Insert used prefetched experts into the cache");
  sub->add_flag("--admit-demand", f.admit_demand, "Insert demand-fetched experts into the cache");
  sub->add_option("--seed", f.seed, "Seed for cache initialisation and the random predictor");
}

long require_nonnegative(long v, const char* name) {
  if (v < 0) throw ConfigError("cli", std::string("--") + name + " must be nonnegative");
  return v;
}

SimConfig build_sim_config(const SimFlags& f, const ModelConfig& model, const std::string& policy,
                           const std::string& prefetch, const std::string& cache, double cache_ratio,
                           std::uint64_t seed, long prefetch_size, long w_size, long u_size) {
  const std::size_t n = model.num_routed_experts;
  SimConfig cfg;
  cfg.assignment = AssignmentPolicy::parse(policy);
  cfg.cost_model = load_cost_model(f.cost_model);
  if (prefetch != "none") {
    cfg.prefetch_kind = parse_predictor_kind(prefetch);
    cfg.prefetch_size = prefetch_size < 0 ? default_prefetch_size(n) : static_cast<std::size_t>(prefetch_size);
  }
  if (cache != "none") {
    CacheConfig cc;
    cc.policy = parse_cache_policy(cache);
    cc.capacity = f.capacity > 0 ? static_cast<std::size_t>(f.capacity) : capacity_for_ratio(cache_ratio, n);
    cc.window_size = static_cast<std::size_t>(require_nonnegative(w_size, "w-size"));
    if (cc.capacity >= n) throw ConfigError("cli", "--capacity must be below the expert count");
    cc.update_size = u_size < 0 ? default_update_size(n, cc.capacity) : static_cast<std::size_t>(u_size);
    cc.admit_prefetched = f.admit_prefetched;
    cc.admit_demand = f.admit_demand;
    cfg.cache = cc;
  }
  if (f.gpu_capacity > 0) cfg.gpu_capacity = static_cast<std::size_t>(f.gpu_capacity);
  cfg.scheduling_overhead_ms = f.overhead_ms;
  cfg.solver_node_cost_ms = f.node_cost_ms;
  cfg.prefetch_gate_ms = f.prefetch_gate_ms;
  cfg.exact_limit = static_cast<std::size_t>(require_nonnegative(f.exact_limit, "exact-limit"));
  cfg.hit_group_size = static_cast<std::size_t>(require_nonnegative(f.group_size, "group-size"));
  cfg.seed = seed;
  cfg.validate(model);
  return cfg;
}

std::optional<Calibration> maybe_calibration(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_calibration(path);
}

// ---- subcommands ------------------------------------------------------------

struct GenFlags {
  std::string model = "deepseek-v2-lite";
  long layers = 0, experts = 0, shared = -1, top_k = 0, hidden = 128;
  long batch = 8, steps = 64, prompt_len = 1;
  double locality = 0.8, drift = 0.5, noise = 0.0, gate_scale = 1.0;
  std::string phase = "decode";
  bool no_eos = false;
  bool workload_only = false;
  std::uint64_t seed = 0;
  std::string out;
};

void gen_trace(const GenFlags& f, const KvDocument& spec, std::ostream& out) {
  if (f.out.empty()) throw ConfigError("cli", "gen-trace needs --out (traces always go to a file)");
  SyntheticTraceOptions o;
  o.config = ModelConfig::preset(f.model);
  if (f.layers > 0) o.config.num_layers = static_cast<std::size_t>(f.layers);
  if (f.experts > 0) o.config.num_routed_experts = static_cast<std::size_t>(f.experts);
  if (f.shared >= 0) o.config.num_shared_experts = static_cast<std::size_t>(f.shared);
  if (f.top_k > 0) o.config.top_k = static_cast<std::size_t>(f.top_k);
  if (f.hidden > 0) o.config.hidden_dim = static_cast<std::size_t>(f.hidden);
  if (f.batch < 1 || f.steps < 1 || f.prompt_len < 1) throw ConfigError("cli", "--batch, --steps and --prompt-len must be >= 1");
  o.batch_size = static_cast<std::size_t>(f.batch);
  o.num_steps = static_cast<std::size_t>(f.steps);
  o.prompt_len = static_cast<std::size_t>(f.prompt_len);
  o.locality = f.locality;
  o.drift_scale = f.drift;
  o.noise_scale = f.noise;
  o.gate_scale = f.gate_scale;
  o.phase = parse_phase(f.phase);
  o.mark_eos = !f.no_eos;
  o.seed = f.seed;
  Trace t = generate_synthetic_trace(o);
  if (f.workload_only) {
    t.gate.reset();
    t.has_features = false;
    for (auto& s : t.steps) s.hidden.clear();
  }
  save_trace(t, f.out, spec_lines(spec));
  out << "wrote " << f.out << " (" << t.steps.size() << " steps, " << t.config.num_layers << " layers)\n";
}

struct CalibrateFlags {
  std::string trace, out, cosine_out;
};

void calibrate_cmd(const CalibrateFlags& f, const KvDocument& spec, std::ostream& out) {
  if (f.out.empty()) throw ConfigError("cli", "calibrate needs --out");
  const Trace t = load_trace(f.trace);
  const Calibration cal = calibrate(t);
  save_calibration(cal, f.out, spec_lines(spec));
  if (!f.cosine_out.empty()) emit(f.cosine_out, csv_with_spec(cosine_table(cosine_similarity_report(t, cal.residuals)), spec), out);
  out << "wrote " << f.out << " (" << cal.residuals.layers.size() << " residual vectors)\n";
}

struct AssignFlags {
  std::string instance, workloads, resident, cost_model, policy = "greedy", out;
  long gpu_capacity = 0;
  long exact_limit = static_cast<long>(kDefaultExactLimit);
};

void assign_cmd(const AssignFlags& f, const KvDocument& spec, std::ostream& out) {
  AssignmentInstance inst;
  const CostModel cm = load_cost_model(f.cost_model);
  inst.cost_model = &cm;
  std::string workloads = f.workloads;
  std::string resident = f.resident;
  long gpu_capacity = f.gpu_capacity;
  if (!f.instance.empty()) {
    const KvDocument doc = KvDocument::load(f.instance, "assignment");
    if (workloads.empty()) workloads = doc.get("workloads");
    if (resident.empty()) resident = doc.get_or("resident", "");
    if (gpu_capacity == 0 && doc.has("gpu_capacity")) gpu_capacity = static_cast<long>(doc.get_int("gpu_capacity"));
  }
  if (workloads.empty()) throw ConfigError("cli", "assign needs --workloads or --instance");
  for (auto tok : split_list(workloads)) {
    const auto v = parse_int(tok, "assignment", "workloads");
    if (v < 0) throw InvalidInput("assignment", "negative workload " + std::to_string(v));
    inst.workloads.push_back(v);
  }
  inst.resident.assign(inst.workloads.size(), 0);
  if (!resident.empty()) {
    const auto r = split_list(resident);
    if (r.size() != inst.workloads.size()) throw InvalidInput("assignment", "resident list length differs from workloads");
    for (std::size_t i = 0; i < r.size(); ++i) inst.resident[i] = parse_int(r[i], "assignment", "resident") != 0;
  }
  if (gpu_capacity > 0) inst.gpu_capacity = static_cast<std::size_t>(gpu_capacity);

  const AssignmentPolicy p = AssignmentPolicy::parse(f.policy);
  Assignment a;
  std::uint64_t nodes = 0;
  switch (p.kind) {
    case PolicyKind::greedy: a = greedy_assign(inst); break;
    case PolicyKind::optimal: {
      auto r = optimal_assign(inst, static_cast<std::size_t>(f.exact_limit));
      a = r.assignment;
      nodes = r.stats.nodes;
      break;
    }
    case PolicyKind::beam: {
      SearchStats st;
      a = beam_assign(inst, p.beam_width, &st);
      nodes = st.nodes;
      break;
    }
    case PolicyKind::all_cpu: a = all_cpu_assign(inst); break;
    case PolicyKind::all_gpu: a = all_gpu_assign(inst); break;
    case PolicyKind::static_threshold: a = static_threshold_assign(inst, p.threshold); break;
  }
  const Makespan m = makespan(inst, a);
  KvDocument doc("assignment");
  doc.set("format", "moesim-assignment v1");
  for (const auto& [k, v] : spec.entries()) doc.set("spec." + k, v);
  std::vector<std::int64_t> cpu, gpu;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.cpu[i]) cpu.push_back(static_cast<std::int64_t>(i));
    if (a.gpu[i]) gpu.push_back(static_cast<std::int64_t>(i));
  }
  doc.set("policy", p.to_string());
  doc.set_list("cpu_experts", cpu);
  doc.set_list("gpu_experts", gpu);
  doc.set("cpu_ms", m.cpu);
  doc.set("gpu_ms", m.gpu);
  doc.set("makespan_ms", m.layer);
  doc.set("imbalance", imbalance_ratio(m.cpu, m.gpu));
  doc.set("search_nodes", static_cast<std::int64_t>(nodes));
  emit(f.out, doc.to_string(), out);
}

struct PrefetchEvalFlags {
  std::string trace, residuals, out;
  std::vector<std::string> predictors;
  std::vector<long> top_k = {1, 2};
  std::uint64_t seed = 0;
};

void prefetch_eval_cmd(const PrefetchEvalFlags& f, const KvDocument& spec, std::ostream& out) {
  const Trace t = load_trace(f.trace);
  const auto cal = maybe_calibration(f.residuals);
  std::vector<std::string> kinds = f.predictors;
  if (kinds.empty()) {
    kinds = cal ? std::vector<std::string>{"residual", "feature", "statistical", "random"}
                : std::vector<std::string>{"feature", "random"};
  }
  std::vector<AccuracyRow> rows;
  for (const auto& name : kinds) {
    Predictor p;
    switch (parse_predictor_kind(name)) {
      case PredictorKind::residual:
        if (!cal) throw ConfigError("cli", "the residual predictor needs --residuals");
        p = Predictor::residual(cal->residuals);
        break;
      case PredictorKind::statistical:
        if (!cal) throw ConfigError("cli", "the statistical predictor needs --residuals (calibration file)");
        p = Predictor::statistical(cal->frequency);
        break;
      case PredictorKind::feature: p = Predictor::feature(); break;
      case PredictorKind::random: p = Predictor::random(f.seed); break;
    }
    for (long k : f.top_k) {
      if (k < 1) throw ConfigError("cli", "--top-k values must be >= 1");
      rows.push_back(evaluate_prefetch(t, p, static_cast<std::size_t>(k)));
    }
  }
  emit(f.out, csv_with_spec(prefetch_eval_table(rows), spec), out);
}

struct CacheEvalFlags {
  std::string trace, cost_model, policy = "workload", out;
  double cache_ratio = 0.5;
  long capacity = 0, w_size = 4, u_size = -1, group_size = 8;
  bool admit_demand = false;
  std::uint64_t seed = 0;
};

void cache_eval_cmd(const CacheEvalFlags& f, const KvDocument& spec, std::ostream& out) {
  const Trace t = load_trace(f.trace);
  const std::size_t n = t.config.num_routed_experts;
  CacheConfig cc;
  cc.policy = parse_cache_policy(f.policy);
  cc.capacity = f.capacity > 0 ? static_cast<std::size_t>(f.capacity) : capacity_for_ratio(f.cache_ratio, n);
  if (cc.capacity >= n) throw ConfigError("cli", "--capacity must be below the expert count");
  cc.window_size = static_cast<std::size_t>(require_nonnegative(f.w_size, "w-size"));
  cc.update_size = f.u_size < 0 ? default_update_size(n, cc.capacity) : static_cast<std::size_t>(f.u_size);
  cc.admit_demand = f.admit_demand;
  if (f.group_size < 1) throw ConfigError("cli", "--group-size must be >= 1");
  const CostModel cm = load_cost_model(f.cost_model);
  const CacheReplay r = replay_cache(t, cc, cm, f.seed);

  Table table{"cache-hit-rate", {"scope", "index", "hits", "misses", "rate", "empty"}, {}, {}};
  auto rate_str = [](std::uint64_t h, std::uint64_t m) {
    return h + m == 0 ? std::string() : format_double(static_cast<double>(h) / static_cast<double>(h + m));
  };
  table.rows.push_back({"overall", "", std::to_string(r.counters.hits()), std::to_string(r.counters.misses()),
                        rate_str(r.counters.hits(), r.counters.misses()),
                        r.counters.hits() + r.counters.misses() == 0 ? "1" : "0"});
  for (std::size_t l = 0; l < t.config.num_layers; ++l) {
    const auto h = r.counters.layer_hits[l];
    const auto m = r.counters.layer_misses[l];
    table.rows.push_back({"layer", std::to_string(l), std::to_string(h), std::to_string(m), rate_str(h, m), h + m == 0 ? "1" : "0"});
  }
  const auto groups = hit_rate_by_group(r.counters, static_cast<std::size_t>(f.group_size));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    table.rows.push_back({"group", std::to_string(g), std::to_string(groups[g].hits), std::to_string(groups[g].misses),
                          groups[g].empty ? "" : format_double(groups[g].rate), groups[g].empty ? "1" : "0"});
  }
  table.note = "replacement_events=" + std::to_string(r.events.size());
  emit(f.out, csv_with_spec(table, spec), out);
}

struct SimulateFlags {
  std::string trace, out, timeline;
  SimFlags sim;
};

std::string timeline_csv(const RunReport& r, const KvDocument& spec) {
  Table t{"timeline", {"step", "layer", "kind", "purpose", "expert", "start_ms", "end_ms"}, {}, {}};
  for (const LayerTimeline& tl : r.layers) {
    const std::string s = std::to_string(tl.step), l = std::to_string(tl.layer);
    t.rows.push_back({s, l, "layer", "", "", format_double(tl.start), format_double(tl.start + tl.layer_latency)});
    for (const PcieInterval& iv : tl.pcie) {
      t.rows.push_back({s, l, "pcie", std::string(to_string(iv.purpose)), std::to_string(iv.expert),
                        format_double(tl.start + iv.start), format_double(tl.start + iv.end)});
    }
    for (const ComputeInterval& iv : tl.gpu) {
      t.rows.push_back({s, l, "gpu", "", std::to_string(iv.expert), format_double(tl.start + iv.start),
                        format_double(tl.start + iv.end)});
    }
    t.rows.push_back({s, l, "cpu", "", "", format_double(tl.start), format_double(tl.start + tl.cpu_busy)});
  }
  return csv_with_spec(t, spec);
}

void simulate_cmd(const SimulateFlags& f, const KvDocument& spec, std::ostream& out) {
  const Trace t = load_trace(f.trace);
  const SimFlags& s = f.sim;
  SimConfig cfg = build_sim_config(s, t.config, s.policy, s.prefetch, s.cache, s.cache_ratio, s.seed, s.prefetch_size,
                                   s.w_size, s.u_size);
  cfg.keep_timelines = !f.timeline.empty();
  const auto cal = maybe_calibration(s.residuals);
  const RunReport r = simulate_run(t, cfg, cal ? &*cal : nullptr);
  emit(f.out, r.to_kv(&spec).to_string(), out);
  if (!f.timeline.empty()) emit(f.timeline, timeline_csv(r, spec), out);
}

struct BreakdownFlags {
  std::string trace, out;
  SimFlags sim;
};

void breakdown_cmd(const BreakdownFlags& f, const KvDocument& spec, std::ostream& out) {
  const Trace t = load_trace(f.trace);
  const SimFlags& s = f.sim;
  const SimConfig full = build_sim_config(s, t.config, s.policy, s.prefetch, s.cache, s.cache_ratio, s.seed,
                                          s.prefetch_size, s.w_size, s.u_size);
  const auto cal = maybe_calibration(s.residuals);
  emit(f.out, csv_with_spec(breakdown_table(breakdown_experiment(t, full, cal ? &*cal : nullptr)), spec), out);
}

struct SweepFlags {
  std::vector<std::string> traces;
  std::vector<std::string> policies = {"greedy"};
  std::vector<std::string> prefetches = {"none"};
  std::vector<long> prefetch_sizes = {-1};
  std::vector<std::string> caches = {"none"};
  std::vector<double> cache_ratios = {0.5};
  std::vector<long> w_sizes = {4};
  std::vector<long> u_sizes = {-1};
  std::vector<std::uint64_t> seeds = {0};
  int jobs = 1;
  std::string out;
  SimFlags sim;
};

struct SweepCell {
  std::size_t trace = 0;
  std::string policy, prefetch, cache;
  long prefetch_size = -1, w_size = 4, u_size = -1;
  double cache_ratio = 0.5;
  std::uint64_t seed = 0;
};

void sweep_cmd(const SweepFlags& f, const KvDocument& spec, std::ostream& out) {
  if (f.traces.empty()) throw ConfigError("cli", "sweep needs at least one --trace");
  if (f.jobs < 1) throw ConfigError("cli", "--jobs must be >= 1");
  std::vector<Trace> traces;
  for (const auto& p : f.traces) traces.push_back(load_trace(p));
  std::optional<Calibration> cal = maybe_calibration(f.sim.residuals);

  std::vector<SweepCell> cells;
  for (std::size_t ti = 0; ti < traces.size(); ++ti)
    for (const auto& pol : f.policies)
      for (const auto& pf : f.prefetches)
        for (long ps : f.prefetch_sizes)
          for (const auto& ca : f.caches)
            for (double cr : f.cache_ratios)
              for (long w : f.w_sizes)
                for (long u : f.u_sizes)
                  for (std::uint64_t seed : f.seeds) cells.push_back({ti, pol, pf, ca, ps, w, u, cr, seed});

  // Build every config first so configuration errors surface before any run.
  std::vector<SimConfig> configs;
  for (const auto& c : cells) {
    configs.push_back(build_sim_config(f.sim, traces[c.trace].config, c.policy, c.prefetch, c.cache, c.cache_ratio,
                                       c.seed, c.prefetch_size, c.w_size, c.u_size));
  }

  std::vector<RunReport> reports(cells.size());
  std::vector<std::string> errors(cells.size());
  const Calibration* calp = cal ? &*cal : nullptr;
#pragma omp parallel for schedule(dynamic) num_threads(f.jobs)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(cells.size()); ++i) {
    try {
      reports[i] = simulate_run(traces[cells[i].trace], configs[i], calp);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!errors[i].empty()) throw Error("simulator", "sweep cell " + std::to_string(i) + ": " + errors[i]);
  }

  Table t{"sweep",
          {"trace", "policy", "prefetch", "prefetch_size", "cache", "cache_ratio", "w_size", "u_size", "seed",
           "tokens_per_second", "mean_token_latency_ms", "pcie_fraction", "hit_rate", "mean_prefetch_accuracy",
           "cpu_busy_ms", "gpu_busy_ms", "imbalance"},
          {},
          {}};
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const SweepCell& c = cells[i];
    const SimConfig& cfg = configs[i];
    const RunReport& r = reports[i];
    const double acc = r.prefetch_accuracy.empty()
                           ? std::nan("")
                           : std::accumulate(r.prefetch_accuracy.begin(), r.prefetch_accuracy.end(), 0.0) /
                                 static_cast<double>(r.prefetch_accuracy.size());
    t.rows.push_back({f.traces[c.trace], cfg.assignment.to_string(), c.prefetch, std::to_string(cfg.prefetch_size),
                      c.cache, cfg.cache ? format_double(static_cast<double>(cfg.cache->capacity) /
                                                         static_cast<double>(traces[c.trace].config.num_routed_experts))
                                         : "",
                      cfg.cache ? std::to_string(cfg.cache->window_size) : "",
                      cfg.cache ? std::to_string(cfg.cache->update_size) : "", std::to_string(c.seed),
                      format_double(r.tokens_per_second), format_double(r.mean_token_latency_ms),
                      format_double(r.pcie_fraction), r.has_hit_rate ? format_double(r.hit_rate) : "",
                      r.prefetch_accuracy.empty() ? "" : format_double(acc), format_double(r.cpu_busy_ms),
                      format_double(r.gpu_lane_ms), format_double(imbalance_ratio(r.cpu_busy_ms, r.gpu_lane_ms))});
  }
  emit(f.out, csv_with_spec(t, spec), out);
}

struct ReportFlags {
  std::vector<std::string> runs;
  std::vector<std::string> tables;
  std::string trace, out;
  long layer = 0;
  long top_m = 3;
};

void report_cmd(const ReportFlags& f, const KvDocument& spec, std::ostream& out) {
  std::vector<std::pair<std::string, RunReport>> runs;
  for (const auto& r : f.runs) {
    const auto eq = r.find('=');
    const std::string label = eq == std::string::npos ? std::filesystem::path(r).stem().string() : r.substr(0, eq);
    const std::string path = eq == std::string::npos ? r : r.substr(eq + 1);
    runs.emplace_back(label, RunReport::from_kv(KvDocument::load(path, "metrics")));
  }
  std::vector<std::string> names = f.tables;
  if (names.empty()) {
    if (!runs.empty()) names = {"breakdown", "hit-rate", "prefetch-accuracy", "pcie-fraction", "load-balance"};
    if (!f.trace.empty()) names.push_back("heatmap");
  }
  if (names.empty()) throw ConfigError("cli", "report needs --run files and/or --trace");
  std::vector<Table> tables;
  for (const auto& name : names) {
    if (name == "heatmap") {
      if (f.trace.empty()) throw ConfigError("cli", "the heatmap table needs --trace");
      if (f.layer < 0 || f.top_m < 1) throw ConfigError("cli", "--layer must be >= 0 and --top-m >= 1");
      tables.push_back(heatmap_table(locality_heatmap(load_trace(f.trace), static_cast<std::size_t>(f.layer),
                                                      static_cast<std::size_t>(f.top_m))));
      continue;
    }
    if (runs.empty()) throw ConfigError("cli", "table '" + name + "' needs --run files");
    if (name == "breakdown") {
      std::vector<BreakdownRow> rows;
      for (const auto& [label, r] : runs) {
        BreakdownRow row{label, r.tokens_per_second, r.mean_token_latency_ms, r.pcie_fraction, 1.0, 1.0};
        if (!rows.empty()) {
          row.speedup = r.tokens_per_second / rows.front().tokens_per_second;
          row.step_factor = r.tokens_per_second / rows.back().tokens_per_second;
        }
        rows.push_back(row);
      }
      tables.push_back(breakdown_table(rows));
    } else if (name == "hit-rate") {
      tables.push_back(hit_rate_table(runs));
    } else if (name == "prefetch-accuracy") {
      tables.push_back(prefetch_accuracy_table(runs));
    } else if (name == "pcie-fraction") {
      tables.push_back(pcie_fraction_table(runs));
    } else if (name == "load-balance") {
      tables.push_back(load_balance_csv(load_balance_table(runs)));
    } else {
      throw ConfigError("cli", "unknown table '" + name + "'");
    }
  }
  emit(f.out, csv_with_spec(tables, spec), out);
}

int fail(std::ostream& err, std::string_view module, std::string_view what, int code) {
  err << "moesim: [" << module << "] " << what << "\n";
  return code;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trace-driven simulator for hybrid CPU/GPU mixture-of-experts inference", "moesim"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  GenFlags gen;
  auto* g = app.add_subcommand("gen-trace", "Generate a synthetic routing trace");
  g->add_option("--model", gen.model, "Model shape preset")->check(CLI::IsMember(ModelConfig::preset_names()));
  g->add_option("--layers", gen.layers, "Override layer count");
  g->add_option("--experts", gen.experts, "Override routed expert count");
  g->add_option("--shared", gen.shared, "Override shared expert count");
  g->add_option("--top-k", gen.top_k, "Override experts per token");
  g->add_option("--hidden", gen.hidden, "Gate input width (0: the preset's full hidden size)");
  g->add_option("--batch", gen.batch, "Sequences per step");
  g->add_option("--steps", gen.steps, "Token steps");
  g->add_option("--prompt-len", gen.prompt_len, "Prompt tokens per sequence (prefill)");
  g->add_option("--locality", gen.locality, "Step-to-step hidden-state persistence in [0,1]");
  g->add_option("--drift", gen.drift, "Per-layer drift norm relative to the state norm");
  g->add_option("--noise", gen.noise, "Per-layer transition noise");
  g->add_option("--gate-scale", gen.gate_scale, "Gate logit scale");
  g->add_option("--phase", gen.phase, "decode | prefill")->check(CLI::IsMember({"decode", "prefill"}));
  g->add_flag("--no-eos", gen.no_eos, "Do not mark the last step as end of sequence");
  g->add_flag("--workload-only", gen.workload_only, "Drop hidden states and gate parameters");
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--out,-o", gen.out, "Trace path (gate sidecar is written next to it)");

  CalibrateFlags cal;
  auto* c = app.add_subcommand("calibrate", "Compute residual vectors and the frequency table");
  c->add_option("--trace", cal.trace, "Calibration trace")->required();
  c->add_option("--out,-o", cal.out, "Calibration file");
  c->add_option("--cosine-out", cal.cosine_out, "Also write the cosine-similarity table");

  AssignFlags asg;
  auto* a = app.add_subcommand("assign", "Solve one layer's CPU/GPU placement");
  a->add_option("--instance", asg.instance, "Instance file (workloads, resident, gpu_capacity)");
  a->add_option("--workloads", asg.workloads, "Comma-separated workloads");
  a->add_option("--resident", asg.resident, "Comma-separated 0/1 residency flags");
  a->add_option("--cost-model", asg.cost_model, "Cost model file");
  a->add_option("--policy", asg.policy, "greedy | optimal | beam:W | all-cpu | all-gpu | static-threshold:T");
  a->add_option("--gpu-capacity", asg.gpu_capacity, "GPU slots (0: unlimited)");
  a->add_option("--exact-limit", asg.exact_limit, "Most active experts the exact solver accepts");
  a->add_option("--out,-o", asg.out, "Output file");

  PrefetchEvalFlags pe;
  auto* p = app.add_subcommand("prefetch-eval", "Top-k accuracy of next-layer predictors");
  p->add_option("--trace", pe.trace, "Featureful trace")->required();
  p->add_option("--residuals", pe.residuals, "Calibration file");
  p->add_option("--predictors", pe.predictors, "residual,feature,statistical,random")->delimiter(',');
  p->add_option("--top-k", pe.top_k, "Comma-separated k values")->delimiter(',');
  p->add_option("--seed", pe.seed, "Random predictor seed");
  p->add_option("--out,-o", pe.out, "CSV output");

  CacheEvalFlags ce;
  auto* k = app.add_subcommand("cache-eval", "Replay a trace through the expert cache");
  k->add_option("--trace", ce.trace, "Trace")->required();
  k->add_option("--cost-model", ce.cost_model, "Cost model file");
  k->add_option("--policy", ce.policy, "workload | lru | score");
  k->add_option("--cache-ratio", ce.cache_ratio, "Cached experts per layer / N");
  k->add_option("--capacity", ce.capacity, "Cached experts per layer (0: use --cache-ratio)");
  k->add_option("--w-size", ce.w_size, "Replacement window in tokens");
  k->add_option("--u-size", ce.u_size, "Experts swapped per replacement (-1: model default)");
  k->add_option("--group-size", ce.group_size, "Tokens per hit-rate group");
  k->add_flag("--admit-demand", ce.admit_demand, "Insert demand-fetched experts");
  k->add_option("--seed", ce.seed, "Initial cache seed");
  k->add_option("--out,-o", ce.out, "CSV output");

  SimulateFlags sim;
  auto* s = app.add_subcommand("simulate", "Simulate a run and write a run report");
  s->add_option("--trace", sim.trace, "Trace")->required();
  add_sim_options(s, sim.sim);
  s->add_option("--out,-o", sim.out, "Run report");
  s->add_option("--timeline", sim.timeline, "Per-layer timeline CSV");

  SweepFlags sw;
  auto* w = app.add_subcommand("sweep", "Run a Cartesian product of simulation settings");
  w->add_option("--trace", sw.traces, "Traces")->delimiter(',')->required();
  w->add_option("--policy", sw.policies, "Assignment policies")->delimiter(',');
  w->add_option("--prefetch", sw.prefetches, "Predictors (or none)")->delimiter(',');
  w->add_option("--prefetch-size", sw.prefetch_sizes, "Prefetch sizes")->delimiter(',');
  w->add_option("--cache", sw.caches, "Cache policies (or none)")->delimiter(',');
  w->add_option("--cache-ratio", sw.cache_ratios, "Cache ratios")->delimiter(',');
  w->add_option("--w-size", sw.w_sizes, "Window sizes")->delimiter(',');
  w->add_option("--u-size", sw.u_sizes, "Update sizes")->delimiter(',');
  w->add_option("--seed", sw.seeds, "Seeds")->delimiter(',');
  w->add_option("--jobs,-j", sw.jobs, "Cells run concurrently");
  w->add_option("--cost-model", sw.sim.cost_model, "Cost model file");
  w->add_option("--residuals", sw.sim.residuals, "Calibration file");
  w->add_option("--capacity", sw.sim.capacity, "Cached experts per layer (0: use --cache-ratio)");
  w->add_option("--gpu-capacity", sw.sim.gpu_capacity, "GPU slots (0: unlimited)");
  w->add_option("--overhead-ms", sw.sim.overhead_ms, "Planning cost per layer");
  w->add_option("--node-cost-ms", sw.sim.node_cost_ms, "Cost per search node");
  w->add_option("--prefetch-gate-ms", sw.sim.prefetch_gate_ms, "Prediction gate cost per layer");
  w->add_option("--exact-limit", sw.sim.exact_limit, "Exact solver limit");
  w->add_option("--group-size", sw.sim.group_size, "Tokens per hit-rate group");
  w->add_option("--out,-o", sw.out, "CSV output");

  ReportFlags rep;
  auto* r = app.add_subcommand("report", "Turn run reports (and a trace) into tables");
  r->add_option("--run", rep.runs, "label=report-file (repeatable)");
  r->add_option("--table", rep.tables,
                "breakdown | hit-rate | prefetch-accuracy | pcie-fraction | load-balance | heatmap (repeatable)");
  r->add_option("--trace", rep.trace, "Trace for the heatmap table");
  r->add_option("--layer", rep.layer, "Heatmap layer");
  r->add_option("--top-m", rep.top_m, "Heatmap top set size");
  r->add_option("--out,-o", rep.out, "CSV output");

  BreakdownFlags bd;
  bd.sim.prefetch = "residual";
  bd.sim.cache = "workload";
  auto* b = app.add_subcommand("breakdown", "Naive, +assignment, +prefetch, +cache comparison");
  b->add_option("--trace", bd.trace, "Featureful trace")->required();
  add_sim_options(b, bd.sim);
  b->add_option("--out,-o", bd.out, "CSV output");

  for (CLI::App* sub : app.get_subcommands({})) sub->add_option("--config", "Key-value file of flag defaults");

  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  try {
    args = expand_config(args);
  } catch (const Error& e) {
    return fail(err, e.module(), e.what(), kExitUsage);
  }
  std::reverse(args.begin(), args.end());

  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    if (msg.empty()) msg = "invalid command line";
    return fail(err, "cli", msg + " (see --help)", kExitUsage);
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const KvDocument spec = resolved_spec(*sub);
    if (sub == g) gen_trace(gen, spec, out);
    else if (sub == c) calibrate_cmd(cal, spec, out);
    else if (sub == a) assign_cmd(asg, spec, out);
    else if (sub == p) prefetch_eval_cmd(pe, spec, out);
    else if (sub == k) cache_eval_cmd(ce, spec, out);
    else if (sub == s) simulate_cmd(sim, spec, out);
    else if (sub == w) sweep_cmd(sw, spec, out);
    else if (sub == r) report_cmd(rep, spec, out);
    else if (sub == b) breakdown_cmd(bd, spec, out);
  } catch (const ConfigError& e) {
    return fail(err, e.module(), e.what(), kExitUsage);
  } catch (const InvalidInput& e) {
    return fail(err, e.module(), e.what(), kExitInput);
  } catch (const Error& e) {
    return fail(err, e.module(), e.what(), kExitFailure);
  } catch (const std::exception& e) {
    return fail(err, "cli", e.what(), kExitFailure);
  }
  return kExitOk;
}

}  // namespace moesim::cli
