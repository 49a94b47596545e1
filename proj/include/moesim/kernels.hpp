#pragma once

// Gate and feature kernels. The default namespace holds the OpenMP
// implementations; moesim::kernels::reference holds the serial versions they
// are tested against. Both produce bit-identical results: every floating
// point reduction runs in the same order in both paths.

#include <cstddef>
#include <span>
#include <vector>

#include "moesim/matrix.hpp"
#include "moesim/trace.hpp"

namespace moesim::kernels {

/// logits[n] = sum_j x[j] * gate(j, n), summed in ascending j.
void gate_logits(std::span<const double> x, const Matrix& gate, std::span<double> logits);

/// Numerically stable softmax in place.
void softmax(std::span<double> values);

/// Indices of the k largest values, largest first; ties go to the lower index.
std::vector<std::size_t> top_k(std::span<const double> values, std::size_t k);

/// Top-k routing counts over all token rows of `hidden` of softmax(x W).
/// Throws InvalidInput when hidden.cols != gate.rows or k is out of range.
Workloads derive_workloads(const Matrix& hidden, const Matrix& gate, std::size_t k);

/// Softmax gate probabilities summed over token rows, length gate.cols.
std::vector<double> gate_probability_sums(const Matrix& hidden, const Matrix& gate);

/// Per-component sum over rows of (next - current), in row order.
std::vector<double> difference_sums(const Matrix& current, const Matrix& next);

/// cos(a_r + shift, b_r) for every row r; rows with a zero vector yield NaN.
std::vector<double> row_cosines(const Matrix& a, std::span<const double> shift, const Matrix& b);

namespace reference {

Workloads derive_workloads(const Matrix& hidden, const Matrix& gate, std::size_t k);
std::vector<double> gate_probability_sums(const Matrix& hidden, const Matrix& gate);
std::vector<double> difference_sums(const Matrix& current, const Matrix& next);
std::vector<double> row_cosines(const Matrix& a, std::span<const double> shift, const Matrix& b);

}  // namespace reference

/// Threads the OpenMP kernels will use (1 when built without OpenMP).
int max_threads();

}  // namespace moesim::kernels
