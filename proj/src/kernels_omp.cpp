#include <string>
#include <vector>

#include "kernels_detail.hpp"
#include "moesim/error.hpp"
#include "moesim/kernels.hpp"

namespace moesim::kernels {

namespace {

// Below this many rows the fork/join cost outweighs the work.
constexpr std::ptrdiff_t kParallelRows = 64;

// Softmax probabilities for every row, computed in parallel.
Matrix row_probabilities(const Matrix& hidden, const Matrix& gate) {
  Matrix probs(hidden.rows, gate.cols);
  const auto rows = static_cast<std::ptrdiff_t>(hidden.rows);
#pragma omp parallel for schedule(static) if (rows >= kParallelRows)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    auto out = probs.row(static_cast<std::size_t>(r));
    gate_logits(hidden.row(static_cast<std::size_t>(r)), gate, out);
    softmax(out);
  }
  return probs;
}

}  // namespace

Workloads derive_workloads(const Matrix& hidden, const Matrix& gate, std::size_t k) {
  detail::check_gate_shape(hidden, gate, k);
  const Matrix probs = row_probabilities(hidden, gate);

  std::vector<std::size_t> chosen(hidden.rows * k);
  const auto rows = static_cast<std::ptrdiff_t>(hidden.rows);
#pragma omp parallel for schedule(static) if (rows >= kParallelRows)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto picks = top_k(probs.row(static_cast<std::size_t>(r)), k);
    std::copy(picks.begin(), picks.end(), chosen.begin() + r * static_cast<std::ptrdiff_t>(k));
  }

  Workloads counts(gate.cols, 0);
  for (std::size_t e : chosen) ++counts[e];
  return counts;
}

std::vector<double> gate_probability_sums(const Matrix& hidden, const Matrix& gate) {
  detail::check_gate_shape(hidden, gate, 1);
  const Matrix probs = row_probabilities(hidden, gate);
  std::vector<double> sums(gate.cols, 0.0);
  for (std::size_t r = 0; r < probs.rows; ++r) {
    const auto p = probs.row(r);
    for (std::size_t n = 0; n < probs.cols; ++n) sums[n] += p[n];
  }
  return sums;
}

std::vector<double> difference_sums(const Matrix& current, const Matrix& next) {
  detail::check_same_shape(current, next);
  std::vector<double> sums(current.cols, 0.0);
  // Parallel over components; each component still accumulates rows in order.
  const auto cols = static_cast<std::ptrdiff_t>(current.cols);
  const bool wide = current.rows * current.cols >= 4096;
#pragma omp parallel for schedule(static) if (wide)
  for (std::ptrdiff_t j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (std::size_t r = 0; r < current.rows; ++r) {
      acc += next(r, static_cast<std::size_t>(j)) - current(r, static_cast<std::size_t>(j));
    }
    sums[static_cast<std::size_t>(j)] = acc;
  }
  return sums;
}

std::vector<double> row_cosines(const Matrix& a, std::span<const double> shift, const Matrix& b) {
  detail::check_same_shape(a, b);
  if (!shift.empty() && shift.size() != a.cols) {
    throw InvalidInput("prefetch", "shift vector has " + std::to_string(shift.size()) +
                                       " entries, expected " + std::to_string(a.cols));
  }
  std::vector<double> out(a.rows);
  const auto rows = static_cast<std::ptrdiff_t>(a.rows);
#pragma omp parallel for schedule(static) if (rows >= kParallelRows)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto i = static_cast<std::size_t>(r);
    out[i] = detail::shifted_cosine(a.row(i), shift, b.row(i));
  }
  return out;
}

}  // namespace moesim::kernels
