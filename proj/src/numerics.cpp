#include "hcut/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hcut {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions disagree");
  Matrix out(a.rows(), b.cols());
  // ikj order keeps the inner loop contiguous in both b and out.
  for (size_t i = 0; i < a.rows(); ++i) {
    double* out_row = out.row(i);
    const double* a_row = a.row(i);
    for (size_t k = 0; k < a.cols(); ++k) {
      const double aik = a_row[k];
      if (aik == 0.0) continue;
      const double* b_row = b.row(k);
      for (size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions disagree");
  Matrix out(a.rows(), b.rows());
  for (size_t i = 0; i < a.rows(); ++i) {
    const double* a_row = a.row(i);
    for (size_t j = 0; j < b.rows(); ++j) {
      const double* b_row = b.row(j);
      double acc = 0.0;
      for (size_t k = 0; k < a.cols(); ++k) acc += a_row[k] * b_row[k];
      out.at(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn: inner dimensions disagree");
  Matrix out(a.cols(), b.cols());
  for (size_t k = 0; k < a.rows(); ++k) {
    const double* a_row = a.row(k);
    const double* b_row = b.row(k);
    for (size_t i = 0; i < a.cols(); ++i) {
      const double aki = a_row[i];
      if (aki == 0.0) continue;
      double* out_row = out.row(i);
      for (size_t j = 0; j < b.cols(); ++j) out_row[j] += aki * b_row[j];
    }
  }
  return out;
}

Matrix softmax_rows(const Matrix& m, const MaskFlags& col_mask) {
  if (col_mask.size() != m.cols()) throw ShapeError("softmax_rows: mask length mismatch");
  size_t valid = 0;
  for (uint8_t f : col_mask) valid += f ? 1 : 0;
  if (valid == 0) throw DegenerateError("softmax_rows: every column is masked");

  Matrix out(m.rows(), m.cols());
  for (size_t r = 0; r < m.rows(); ++r) {
    const double* in = m.row(r);
    double* o = out.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < m.cols(); ++c) {
      const double z = col_mask[c] ? in[c] : kMaskedLogit;
      if (z > mx) mx = z;
    }
    double sum = 0.0;
    for (size_t c = 0; c < m.cols(); ++c) {
      const double z = col_mask[c] ? in[c] : kMaskedLogit;
      o[c] = std::exp(z - mx);
      sum += o[c];
    }
    const double inv = 1.0 / sum;
    for (size_t c = 0; c < m.cols(); ++c) o[c] = col_mask[c] ? o[c] * inv : 0.0;
  }
  return out;
}

Matrix softmax_rows(const Matrix& m) {
  return softmax_rows(m, MaskFlags(m.cols(), 1));
}

std::vector<double> layer_norm(std::span<const double> v, std::span<const double> gain,
                               std::span<const double> bias, double eps) {
  if (v.size() != gain.size() || v.size() != bias.size())
    throw ShapeError("layer_norm: length mismatch");
  if (!(eps > 0.0)) throw ShapeError("layer_norm: eps must be positive");
  const size_t n = v.size();
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n);
  const double inv_std = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = gain[i] * ((v[i] - mean) * inv_std) + bias[i];
  return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

double grad_check(const std::function<double()>& loss_value,
                  const std::function<std::vector<Matrix>()>& loss_gradients,
                  std::span<Matrix* const> params, double eps, uint64_t sample_seed,
                  size_t min_coords) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw ContractError("grad_check: eps outside [1e-6, 1e-3]");

  const std::vector<Matrix> grads = loss_gradients();
  if (grads.size() != params.size()) throw ShapeError("grad_check: gradient count mismatch");

  size_t total = 0;
  for (const Matrix* p : params) total += p->size();
  if (total == 0) throw ContractError("grad_check: empty parameter collection");

  // Central differences at eps in [1e-6, 1e-3] carry ~1e-12..1e-10 of
  // absolute noise in 64-bit arithmetic, so coordinates whose gradient is
  // below 1e-5 cannot be resolved to 1e-6 relative agreement no matter how
  // exact the reverse pass is. The sample therefore prefers resolvable
  // coordinates and tops up from the remainder only when there are too few.
  std::vector<size_t> eligible, rest;
  {
    size_t flat = 0;
    for (size_t pi = 0; pi < params.size(); ++pi)
      for (size_t off = 0; off < params[pi]->size(); ++off, ++flat)
        (std::abs(grads[pi].data()[off]) >= 1e-5 ? eligible : rest).push_back(flat);
  }

  Rng rng(sample_seed);
  std::vector<size_t> coords;
  const auto sample_from = [&](std::vector<size_t>& pool, size_t want) {
    for (size_t i = 0; i < want && i < pool.size(); ++i) {
      const size_t j = i + rng.uniform_index(pool.size() - i);
      std::swap(pool[i], pool[j]);
      coords.push_back(pool[i]);
    }
  };
  sample_from(eligible, min_coords);
  if (coords.size() < min_coords) sample_from(rest, min_coords - coords.size());

  double max_rel = 0.0;
  for (size_t flat : coords) {
    size_t pi = 0, off = flat;
    while (off >= params[pi]->size()) {
      off -= params[pi]->size();
      ++pi;
    }
    double* slot = params[pi]->data() + off;
    const double saved = *slot;

    *slot = saved + eps;
    const double up = loss_value();
    *slot = saved - eps;
    const double down = loss_value();
    *slot = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("grad_check: non-finite loss");

    const double fd = (up - down) / (2.0 * eps);
    const double g = grads[pi].data()[off];
    const double denom = std::max({std::abs(g), std::abs(fd), 1e-8});
    max_rel = std::max(max_rel, std::abs(g - fd) / denom);
  }
  return max_rel;
}

}  // namespace hcut
