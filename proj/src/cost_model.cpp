#include "moesim/cost_model.hpp"

#include <algorithm>
#include <string>

#include "moesim/error.hpp"

namespace moesim {

namespace {

std::string describe(const CostSample& s) { return "(" + format_double(s.workload) + ", " + format_double(s.ms) + ")"; }

std::vector<CostSample> parse_samples(const KvDocument& doc, std::string_view key) {
  std::vector<CostSample> out;
  for (auto tok : split_list(doc.get(key))) {
    const auto colon = tok.find(':');
    if (colon == std::string_view::npos) {
      throw InvalidInput("cost_model", "sample '" + std::string(tok) + "' in '" + std::string(key) + "' is not 'workload:ms'");
    }
    const std::string ctx = "key '" + std::string(key) + "'";
    out.push_back({parse_double(tok.substr(0, colon), "cost_model", ctx), parse_double(tok.substr(colon + 1), "cost_model", ctx)});
  }
  return out;
}

std::string format_samples(const std::vector<CostSample>& samples) {
  std::string s;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i) s += ' ';
    s += format_double(samples[i].workload) + ":" + format_double(samples[i].ms);
  }
  return s;
}

}  // namespace

CostCurve CostCurve::fit(std::vector<CostSample> samples, std::string_view name) {
  const std::string label(name);
  if (samples.empty()) throw InvalidInput("cost_model", label + ": at least one sample is required");
  std::sort(samples.begin(), samples.end(),
            [](const CostSample& a, const CostSample& b) { return a.workload < b.workload; });
  CostCurve curve;
  curve.points_.push_back({0.0, 0.0});
  for (const CostSample& s : samples) {
    if (!(s.workload > 0.0)) throw InvalidInput("cost_model", label + ": sample " + describe(s) + " has a nonpositive workload");
    if (!(s.ms >= 0.0)) throw InvalidInput("cost_model", label + ": sample " + describe(s) + " has a negative latency");
    const CostSample& prev = curve.points_.back();
    if (s.workload == prev.workload) throw InvalidInput("cost_model", label + ": duplicate workload in " + describe(s));
    if (s.ms < prev.ms) {
      throw InvalidInput("cost_model", label + ": latency decreases between " + describe(prev) + " and " + describe(s));
    }
    curve.points_.push_back(s);
  }
  return curve;
}

double CostCurve::operator()(double workload) const {
  if (points_.size() < 2 || workload <= 0.0) return 0.0;
  // First point with workload >= w; beyond the table, reuse the last segment.
  auto it = std::lower_bound(points_.begin() + 1, points_.end(), workload,
                             [](const CostSample& p, double w) { return p.workload < w; });
  if (it == points_.end()) --it;
  const CostSample& hi = *it;
  const CostSample& lo = *(it - 1);
  if (workload == hi.workload) return hi.ms;
  const double slope = (hi.ms - lo.ms) / (hi.workload - lo.workload);
  return lo.ms + slope * (workload - lo.workload);
}

CostModel fit_cost_model(std::vector<CostSample> cpu_samples, std::vector<CostSample> gpu_samples, double trans_time,
                         double shared_expert_gpu_time, double non_moe_layer_time) {
  if (!(trans_time >= 0.0)) throw InvalidInput("cost_model", "trans_time must be nonnegative");
  if (!(shared_expert_gpu_time >= 0.0)) throw InvalidInput("cost_model", "shared_expert_gpu_time must be nonnegative");
  if (!(non_moe_layer_time >= 0.0)) throw InvalidInput("cost_model", "non_moe_layer_time must be nonnegative");
  CostModel m;
  m.cpu = CostCurve::fit(std::move(cpu_samples), "cpu curve");
  m.gpu_compute = CostCurve::fit(std::move(gpu_samples), "gpu compute curve");
  m.trans_time = trans_time;
  m.shared_expert_gpu_time = shared_expert_gpu_time;
  m.non_moe_layer_time = non_moe_layer_time;
  return m;
}

CostModel CostModel::default_3090() {
  // CPU: ~0.65 ms to stream one expert's weights plus 0.35 ms per token.
  // PCIe 4.0 x16: about 1 ms per expert. GPU compute nearly flat.
  // 0.6 ms of attention and norms per layer.
  return fit_cost_model({{1, 1.0}, {2, 1.35}, {4, 2.05}, {8, 3.45}, {16, 6.25}, {32, 11.85}, {64, 23.05}, {128, 45.45}, {256, 90.25}},
                        {{1, 0.05}, {8, 0.07}, {32, 0.12}, {128, 0.35}, {512, 1.3}}, 1.0, 0.05, 0.6);
}

CostModel CostModel::from_kv(const KvDocument& doc) {
  if (doc.has("format") && doc.get("format") != "moesim-cost v1") {
    throw InvalidInput("cost_model", "unsupported cost-model format '" + doc.get("format") + "'");
  }
  return fit_cost_model(parse_samples(doc, "cpu_samples"), parse_samples(doc, "gpu_samples"), doc.get_double("trans_time"),
                        doc.has("shared_expert_gpu_time") ? doc.get_double("shared_expert_gpu_time") : 0.0,
                        doc.has("non_moe_layer_time") ? doc.get_double("non_moe_layer_time") : 0.0);
}

KvDocument CostModel::to_kv() const {
  KvDocument doc("cost_model");
  doc.set("format", "moesim-cost v1");
  doc.set("cpu_samples", format_samples(cpu.samples()));
  doc.set("gpu_samples", format_samples(gpu_compute.samples()));
  doc.set("trans_time", trans_time);
  doc.set("shared_expert_gpu_time", shared_expert_gpu_time);
  doc.set("non_moe_layer_time", non_moe_layer_time);
  return doc;
}

CostModel CostModel::load(const std::filesystem::path& path) { return from_kv(KvDocument::load(path, "cost_model")); }

void CostModel::save(const std::filesystem::path& path) const { to_kv().save(path); }

}  // namespace moesim
