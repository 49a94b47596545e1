#pragma once

// Shared generators and oracles for the unit and acceptance tests.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "moesim/assignment.hpp"
#include "moesim/cli.hpp"
#include "moesim/cost_model.hpp"
#include "moesim/synthetic.hpp"

namespace moesim::testing {

/// Random literal cost table: `n` experts, some inactive, optional capacity.
inline CostTable random_table(std::mt19937_64& rng, std::size_t n, bool with_inactive, bool with_capacity) {
  std::uniform_real_distribution<double> cost(0.1, 10.0);
  std::bernoulli_distribution coin(0.2);
  CostTable t;
  t.cpu.resize(n);
  t.gpu.resize(n);
  t.active.assign(n, 1);
  t.uses_slot.assign(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    t.cpu[i] = cost(rng);
    t.gpu[i] = cost(rng);
    if (with_inactive && coin(rng)) {
      t.active[i] = 0;
      t.cpu[i] = 0.0;
      t.gpu[i] = 0.0;
    }
    if (coin(rng)) t.uses_slot[i] = 0;
  }
  if (with_capacity) t.gpu_capacity = std::uniform_int_distribution<std::size_t>(0, n)(rng);
  return t;
}

struct Enumerated {
  double layer = std::numeric_limits<double>::infinity();
  std::size_t feasible = 0;
};

/// Exhaustive search over every CPU/GPU split of the active experts. Lane
/// sums run in ascending index, the same order makespan() uses.
inline Enumerated enumerate_optimum(const CostTable& t) {
  std::vector<std::size_t> act;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.active[i]) act.push_back(i);
  }
  Enumerated best;
  const std::uint64_t count = std::uint64_t{1} << act.size();
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    std::vector<std::uint8_t> on_gpu(t.size(), 0);
    std::size_t slots = 0;
    for (std::size_t b = 0; b < act.size(); ++b) {
      if (mask >> b & 1U) {
        on_gpu[act[b]] = 1;
        slots += t.uses_slot[act[b]];
      }
    }
    if (t.gpu_capacity && slots > *t.gpu_capacity) continue;
    double c = 0.0;
    double g = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!t.active[i]) continue;
      if (on_gpu[i]) {
        g += t.gpu[i];
      } else {
        c += t.cpu[i];
      }
    }
    ++best.feasible;
    best.layer = std::min(best.layer, std::max(c, g));
  }
  return best;
}

/// Instance drawn from a cost model with Zipf-skewed routing: `active`
/// experts among `n`, `tokens` tokens with `top_k` routes each.
inline AssignmentInstance skewed_instance(std::mt19937_64& rng, const CostModel& cm, std::size_t n, std::size_t active,
                                          std::size_t tokens, std::size_t top_k, double skew) {
  AssignmentInstance inst;
  inst.workloads = generate_skewed_workloads(rng, n, active, tokens, top_k, skew);
  inst.resident.assign(n, 0);
  inst.cost_model = &cm;
  return inst;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("moesim-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

inline CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "moesim");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace moesim::testing
