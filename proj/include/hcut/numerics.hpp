#pragma once

#include <functional>
#include <span>

#include "hcut/matrix.hpp"

namespace hcut {

// Plain value-level linear algebra. These routines compute forward values
// only; the differentiation tape in tape.hpp wraps them with backward rules.

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a · bᵀ
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // aᵀ · b

// Row-wise masked softmax. Columns with mask 0 contribute nothing and come
// out exactly 0; valid entries are computed with per-row max subtraction.
// Every row must keep at least one valid column.
Matrix softmax_rows(const Matrix& m, const MaskFlags& col_mask);
Matrix softmax_rows(const Matrix& m);

// Zero-mean unit-variance transform of one vector, scaled by gain and
// shifted by bias. eps guards the variance denominator (fixed to 1e-5 by
// callers in the encoder).
std::vector<double> layer_norm(std::span<const double> v, std::span<const double> gain,
                               std::span<const double> bias, double eps);

double gelu(double x);       // tanh approximation
double gelu_grad(double x);  // derivative of the same approximation

constexpr double kLayerNormEps = 1e-5;
constexpr double kMaskedLogit = -1e30;

// Reverse-mode vs. central finite differences over a sampled subset of
// parameter coordinates.
//
//   loss_value     evaluates the scalar loss at the current parameter values
//   loss_gradients evaluates the same loss and returns reverse-mode
//                  gradients, one matrix per parameter, in `params` order
//
// At least min_coords coordinates are sampled (all of them when there are
// fewer). Returns the max relative error with denominator
// max(|g|, |fd|, 1e-8).
double grad_check(const std::function<double()>& loss_value,
                  const std::function<std::vector<Matrix>()>& loss_gradients,
                  std::span<Matrix* const> params, double eps, uint64_t sample_seed,
                  size_t min_coords = 200);

}  // namespace hcut
