#pragma once

#include <cmath>
#include <span>

#include "moesim/matrix.hpp"

namespace moesim::kernels::detail {

void check_gate_shape(const Matrix& hidden, const Matrix& gate, std::size_t k);
void check_same_shape(const Matrix& a, const Matrix& b);

inline double shifted_cosine(std::span<const double> a, std::span<const double> shift,
                             std::span<const double> b) {
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double x = shift.empty() ? a[j] : a[j] + shift[j];
    dot += x * b[j];
    na += x * x;
    nb += b[j] * b[j];
  }
  if (na == 0.0 || nb == 0.0) return std::nan("");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace moesim::kernels::detail
