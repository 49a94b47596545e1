// Serial reference kernels. Kept deliberately plain; the OpenMP versions in
// kernels_omp.cpp must match these bit for bit.

#include <string>
#include <vector>

#include "kernels_detail.hpp"
#include "moesim/error.hpp"
#include "moesim/kernels.hpp"

namespace moesim::kernels::reference {

Workloads derive_workloads(const Matrix& hidden, const Matrix& gate, std::size_t k) {
  detail::check_gate_shape(hidden, gate, k);
  Workloads counts(gate.cols, 0);
  std::vector<double> scores(gate.cols);
  for (std::size_t r = 0; r < hidden.rows; ++r) {
    gate_logits(hidden.row(r), gate, scores);
    softmax(scores);
    for (std::size_t e : top_k(scores, k)) ++counts[e];
  }
  return counts;
}

std::vector<double> gate_probability_sums(const Matrix& hidden, const Matrix& gate) {
  detail::check_gate_shape(hidden, gate, 1);
  std::vector<double> sums(gate.cols, 0.0);
  std::vector<double> scores(gate.cols);
  for (std::size_t r = 0; r < hidden.rows; ++r) {
    gate_logits(hidden.row(r), gate, scores);
    softmax(scores);
    for (std::size_t n = 0; n < gate.cols; ++n) sums[n] += scores[n];
  }
  return sums;
}

std::vector<double> difference_sums(const Matrix& current, const Matrix& next) {
  detail::check_same_shape(current, next);
  std::vector<double> sums(current.cols, 0.0);
  for (std::size_t r = 0; r < current.rows; ++r) {
    const auto a = current.row(r);
    const auto b = next.row(r);
    for (std::size_t j = 0; j < current.cols; ++j) sums[j] += b[j] - a[j];
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
  for (std::size_t r = 0; r < a.rows; ++r) out[r] = detail::shifted_cosine(a.row(r), shift, b.row(r));
  return out;
}

}  // namespace moesim::kernels::reference
