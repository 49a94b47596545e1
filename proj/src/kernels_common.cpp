#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "moesim/error.hpp"
#include "moesim/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace moesim::kernels {

void gate_logits(std::span<const double> x, const Matrix& gate, std::span<double> logits) {
  std::fill(logits.begin(), logits.end(), 0.0);
  for (std::size_t j = 0; j < gate.rows; ++j) {
    const double xj = x[j];
    const auto w = gate.row(j);
    for (std::size_t n = 0; n < gate.cols; ++n) logits[n] += xj * w[n];
  }
}

void softmax(std::span<double> values) {
  if (values.empty()) return;
  const double peak = *std::max_element(values.begin(), values.end());
  double total = 0.0;
  for (double& v : values) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : values) v /= total;
}

std::vector<std::size_t> top_k(std::span<const double> values, std::size_t k) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return values[a] > values[b] || (values[a] == values[b] && a < b);
                    });
  order.resize(k);
  return order;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace moesim::kernels

namespace moesim::kernels::detail {

void check_gate_shape(const Matrix& hidden, const Matrix& gate, std::size_t k) {
  if (hidden.cols != gate.rows) {
    throw InvalidInput("trace", "hidden dimension " + std::to_string(hidden.cols) +
                                    " does not match gate rows " + std::to_string(gate.rows));
  }
  if (k == 0 || k > gate.cols) {
    throw InvalidInput("trace", "top_k " + std::to_string(k) + " out of range for " +
                                    std::to_string(gate.cols) + " experts");
  }
}

void check_same_shape(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw InvalidInput("prefetch", "feature matrices differ in shape (" + std::to_string(a.rows) + "x" +
                                       std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                                       std::to_string(b.cols) + ")");
  }
}

}  // namespace moesim::kernels::detail
