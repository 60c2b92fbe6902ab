#include "hcut/tape.hpp"

#include <cmath>

namespace hcut {

size_t Tape::push(Node&& n) {
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Matrix& Tape::grad_buf(size_t idx) {
  Node& n = nodes_[idx];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

double Tape::scalar(Var v) const {
  const Matrix& m = nodes_[v.idx].value;
  if (m.rows() != 1 || m.cols() != 1) throw ShapeError("scalar: node is not 1x1");
  return m.at(0, 0);
}

void Tape::clear() {
  nodes_.clear();
  param_leaves_.clear();
}

Var Tape::leaf(const Matrix& value, const Matrix* storage) {
  Node n;
  n.value = value;
  const size_t idx = push(std::move(n));
  if (storage) param_leaves_.emplace_back(storage, idx);
  return Var{idx};
}

Matrix Tape::grad_of_param(const Matrix* storage) const {
  for (const auto& [ptr, idx] : param_leaves_) {
    if (ptr == storage) {
      const Node& n = nodes_[idx];
      if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
      return n.grad;
    }
  }
  return Matrix(storage->rows(), storage->cols());
}

void Tape::backward(Var loss) {
  Node& top = nodes_[loss.idx];
  if (top.value.rows() != 1 || top.value.cols() != 1)
    throw ShapeError("backward: loss node must be 1x1");
  grad_buf(loss.idx).at(0, 0) = 1.0;
  for (size_t i = loss.idx + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, i);
  }
}

Var Tape::matmul(Var a, Var b) {
  Node n;
  n.value = hcut::matmul(value(a), value(b));
  n.parents = {a.idx, b.idx};
  n.backward = [a, b](Tape& t, size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    Matrix& ga = t.grad_buf(a.idx);
    Matrix& gb = t.grad_buf(b.idx);
    const Matrix da = hcut::matmul_nt(g, bv);  // g · bᵀ
    const Matrix db = hcut::matmul_tn(av, g);  // aᵀ · g
    for (size_t i = 0; i < ga.size(); ++i) ga.data()[i] += da.data()[i];
    for (size_t i = 0; i < gb.size(); ++i) gb.data()[i] += db.data()[i];
  };
  return Var{push(std::move(n))};
}

Var Tape::matmul_nt(Var a, Var b) {
  Node n;
  n.value = hcut::matmul_nt(value(a), value(b));
  n.parents = {a.idx, b.idx};
  n.backward = [a, b](Tape& t, size_t self) {
    const Matrix& g = t.nodes_[self].grad;  // rows(a) × rows(b)
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    Matrix& ga = t.grad_buf(a.idx);
    Matrix& gb = t.grad_buf(b.idx);
    const Matrix da = hcut::matmul(g, bv);     // g · b
    const Matrix db = hcut::matmul_tn(g, av);  // gᵀ · a
    for (size_t i = 0; i < ga.size(); ++i) ga.data()[i] += da.data()[i];
    for (size_t i = 0; i < gb.size(); ++i) gb.data()[i] += db.data()[i];
  };
  return Var{push(std::move(n))};
}

Var Tape::add(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (!av.same_shape(bv)) throw ShapeError("add: shape mismatch");
  Node n;
  n.value = av;
  for (size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] += bv.data()[i];
  n.parents = {a.idx, b.idx};
  n.backward = [a, b](Tape& t, size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix& ga = t.grad_buf(a.idx);
    Matrix& gb = t.grad_buf(b.idx);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.data()[i] += g.data()[i];
      gb.data()[i] += g.data()[i];
    }
  };
  return Var{push(std::move(n))};
}

Var Tape::add_row_broadcast(Var a, Var bias) {
  const Matrix& av = value(a);
  const Matrix& bv = value(bias);
  if (bv.rows() != 1 || bv.cols() != av.cols())
    throw ShapeError("add_row_broadcast: bias must be 1 x cols");
  Node n;
  n.value = av;
  for (size_t r = 0; r < av.rows(); ++r) {
    double* row = n.value.row(r);
    for (size_t c = 0; c < av.cols(); ++c) row[c] += bv.at(0, c);
  }
  n.parents = {a.idx, bias.idx};
  n.backward = [a, bias](Tape& t, size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix& ga = t.grad_buf(a.idx);
    Matrix& gb = t.grad_buf(bias.idx);
    for (size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i];
    for (size_t r = 0; r < g.rows(); ++r)
      for (size_t c = 0; c < g.cols(); ++c) gb.at(0, c) += g.at(r, c);
  };
  return Var{push(std::move(n))};
}

Var Tape::scale(Var a, double s) {
  Node n;
  n.value = value(a);
  for (size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] *= s;
  n.parents = {a.idx};
  n.backward = [a, s](Tape& t, size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix& ga = t.grad_buf(a.idx);
    for (size_t i = 0; i < g.size(); ++i) ga.data()[i] += s * g.data()[i];
  };
  return Var{push(std::move(n))};
}

Var Tape::gelu(Var a) {
  const Matrix& av = value(a);
  Node n;
  n.value = Matrix(av.rows(), av.cols());
  for (size_t i = 0; i < av.size(); ++i) n.value.data()[i] = hcut::gelu(av.data()[i]);
  n.parents = {a.idx};
  n.backward = [a](Tape& t, size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& av = t.value(a);
    Matrix& ga = t.grad_buf(a.idx);
    for (size_t i = 0; i < g.size(); ++i)
      ga.data()[i] += g.data()[i] * hcut::gelu_grad(av.data()[i]);
  };
  return Var{push(std::move(n))};
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias) {
  const Matrix& xv = value(x);
  const Matrix& gv = value(gain);
  const Matrix& bv = value(bias);
  if (gv.rows() != 1 || bv.rows() != 1 || gv.cols() != xv.cols() || bv.cols() != xv.cols())
    throw ShapeError("layer_norm_rows: gain/bias must be 1 x cols");
  Node n;
  n.value = Matrix(xv.rows(), xv.cols());
  for (size_t r = 0; r < xv.rows(); ++r) {
    const auto out = hcut::layer_norm({xv.row(r), xv.cols()}, {gv.row(0), gv.cols()},
                                      {bv.row(0), bv.cols()}, kLayerNormEps);
    for (size_t c = 0; c < xv.cols(); ++c) n.value.at(r, c) = out[c];
  }
  n.parents = {x.idx, gain.idx, bias.idx};
  n.backward = [x, gain, bias](Tape& t, size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& xv = t.value(x);
    const Matrix& gv = t.value(gain);
    Matrix& gx = t.grad_buf(x.idx);
    Matrix& gg = t.grad_buf(gain.idx);
    Matrix& gb = t.grad_buf(bias.idx);
    const size_t dim = xv.cols();
    std::vector<double> y(dim), dy(dim);
    for (size_t r = 0; r < xv.rows(); ++r) {
      double mean = 0.0;
      for (size_t c = 0; c < dim; ++c) mean += xv.at(r, c);
      mean /= static_cast<double>(dim);
      double var = 0.0;
      for (size_t c = 0; c < dim; ++c) var += (xv.at(r, c) - mean) * (xv.at(r, c) - mean);
      var /= static_cast<double>(dim);
      const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);

      double mean_dy = 0.0, mean_dyy = 0.0;
      for (size_t c = 0; c < dim; ++c) {
        y[c] = (xv.at(r, c) - mean) * inv_std;
        dy[c] = g.at(r, c) * gv.at(0, c);
        gg.at(0, c) += g.at(r, c) * y[c];
        gb.at(0, c) += g.at(r, c);
        mean_dy += dy[c];
        mean_dyy += dy[c] * y[c];
      }
      mean_dy /= static_cast<double>(dim);
      mean_dyy /= static_cast<double>(dim);
      for (size_t c = 0; c < dim; ++c)
        gx.at(r, c) += inv_std * (dy[c] - mean_dy - y[c] * mean_dyy);
    }
  };
  return Var{push(std::move(n))};
}

Var Tape::softmax_rows_masked(Var x, const MaskFlags& col_mask) {
  Node n;
  n.value = hcut::softmax_rows(value(x), col_mask);
  n.parents = {x.idx};
  MaskFlags mask = col_mask;
  n.backward = [x, mask](Tape& t, size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    const Matrix& y = t.nodes_[self].value;
    Matrix& gx = t.grad_buf(x.idx);
    for (size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (size_t c = 0; c < y.cols(); ++c)
        if (mask[c]) dot += g.at(r, c) * y.at(r, c);
      for (size_t c = 0; c < y.cols(); ++c)
        if (mask[c]) gx.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
    }
  };
  return Var{push(std::move(n))};
}

Var Tape::gather_rows(Var table, const std::vector<size_t>& ids) {
  const Matrix& tv = value(table);
  Node n;
  n.value = Matrix(ids.size(), tv.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) throw ShapeError("gather_rows: id out of range");
    for (size_t c = 0; c < tv.cols(); ++c) n.value.at(i, c) = tv.at(ids[i], c);
  }
  n.parents = {table.idx};
  std::vector<size_t> ids_copy = ids;
  n.backward = [table, ids_copy](Tape& t, size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix& gt = t.grad_buf(table.idx);
    for (size_t i = 0; i < ids_copy.size(); ++i)
      for (size_t c = 0; c < g.cols(); ++c) gt.at(ids_copy[i], c) += g.at(i, c);
  };
  return Var{push(std::move(n))};
}

Var Tape::slice_rows(Var x, size_t first, size_t count) {
  const Matrix& xv = value(x);
  if (first + count > xv.rows()) throw ShapeError("slice_rows: out of range");
  Node n;
  n.value = Matrix(count, xv.cols());
  for (size_t r = 0; r < count; ++r)
    for (size_t c = 0; c < xv.cols(); ++c) n.value.at(r, c) = xv.at(first + r, c);
  n.parents = {x.idx};
  n.backward = [x, first](Tape& t, size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix& gx = t.grad_buf(x.idx);
    for (size_t r = 0; r < g.rows(); ++r)
      for (size_t c = 0; c < g.cols(); ++c) gx.at(first + r, c) += g.at(r, c);
  };
  return Var{push(std::move(n))};
}

Var Tape::slice_cols(Var x, size_t first, size_t count) {
  const Matrix& xv = value(x);
  if (first + count > xv.cols()) throw ShapeError("slice_cols: out of range");
  Node n;
  n.value = Matrix(xv.rows(), count);
  for (size_t r = 0; r < xv.rows(); ++r)
    for (size_t c = 0; c < count; ++c) n.value.at(r, c) = xv.at(r, first + c);
  n.parents = {x.idx};
  n.backward = [x, first](Tape& t, size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix& gx = t.grad_buf(x.idx);
    for (size_t r = 0; r < g.rows(); ++r)
      for (size_t c = 0; c < g.cols(); ++c) gx.at(r, first + c) += g.at(r, c);
  };
  return Var{push(std::move(n))};
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const size_t rows = value(parts[0]).rows();
  size_t cols = 0;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += value(p).cols();
  }
  Node n;
  n.value = Matrix(rows, cols);
  size_t off = 0;
  for (Var p : parts) {
    const Matrix& pv = value(p);
    for (size_t r = 0; r < rows; ++r)
      for (size_t c = 0; c < pv.cols(); ++c) n.value.at(r, off + c) = pv.at(r, c);
    off += pv.cols();
  }
  std::vector<size_t> parent_ids;
  for (Var p : parts) parent_ids.push_back(p.idx);
  n.parents = parent_ids;
  n.backward = [parent_ids](Tape& t, size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    size_t off = 0;
    for (size_t pid : parent_ids) {
      Matrix& gp = t.grad_buf(pid);
      for (size_t r = 0; r < gp.rows(); ++r)
        for (size_t c = 0; c < gp.cols(); ++c) gp.at(r, c) += g.at(r, off + c);
      off += gp.cols();
    }
  };
  return Var{push(std::move(n))};
}

Var Tape::mul_mask(Var x, const Matrix& mask01) {
  const Matrix& xv = value(x);
  if (!xv.same_shape(mask01)) throw ShapeError("mul_mask: shape mismatch");
  Node n;
  n.value = Matrix(xv.rows(), xv.cols());
  for (size_t i = 0; i < xv.size(); ++i) n.value.data()[i] = xv.data()[i] * mask01.data()[i];
  n.parents = {x.idx};
  Matrix mask = mask01;
  n.backward = [x, mask](Tape& t, size_t self) {
    const Matrix& g = t.nodes_[self].grad;
    Matrix& gx = t.grad_buf(x.idx);
    for (size_t i = 0; i < g.size(); ++i) gx.data()[i] += g.data()[i] * mask.data()[i];
  };
  return Var{push(std::move(n))};
}

Var Tape::cross_entropy_logits(Var logits, size_t label) {
  const Matrix& z = value(logits);
  if (z.rows() != 1) throw ShapeError("cross_entropy_logits: logits must be 1 x C");
  if (label >= z.cols()) throw DataError("cross_entropy_logits: label out of range");
  double mx = z.at(0, 0);
  for (size_t c = 1; c < z.cols(); ++c) mx = std::max(mx, z.at(0, c));
  double sum = 0.0;
  for (size_t c = 0; c < z.cols(); ++c) sum += std::exp(z.at(0, c) - mx);
  const double loss = mx + std::log(sum) - z.at(0, label);

  Node n;
  n.value = Matrix(1, 1, loss);
  n.parents = {logits.idx};
  n.backward = [logits, label](Tape& t, size_t self) {
    const double g = t.nodes_[self].grad.at(0, 0);
    const Matrix& z = t.value(logits);
    Matrix& gz = t.grad_buf(logits.idx);
    double mx = z.at(0, 0);
    for (size_t c = 1; c < z.cols(); ++c) mx = std::max(mx, z.at(0, c));
    double sum = 0.0;
    for (size_t c = 0; c < z.cols(); ++c) sum += std::exp(z.at(0, c) - mx);
    for (size_t c = 0; c < z.cols(); ++c) {
      const double p = std::exp(z.at(0, c) - mx) / sum;
      gz.at(0, c) += g * (p - (c == label ? 1.0 : 0.0));
    }
  };
  return Var{push(std::move(n))};
}

Var Tape::kl_to_const(Var logits, const std::vector<double>& q) {
  const Matrix& z = value(logits);
  if (z.rows() != 1 || z.cols() != q.size())
    throw ShapeError("kl_to_const: support size mismatch");
  double mx = z.at(0, 0);
  for (size_t c = 1; c < z.cols(); ++c) mx = std::max(mx, z.at(0, c));
  double sum = 0.0;
  for (size_t c = 0; c < z.cols(); ++c) sum += std::exp(z.at(0, c) - mx);
  std::vector<double> p(z.cols());
  for (size_t c = 0; c < z.cols(); ++c) p[c] = std::exp(z.at(0, c) - mx) / sum;
  double kl = 0.0;
  for (size_t c = 0; c < z.cols(); ++c) {
    if (p[c] > 0.0) kl += p[c] * (std::log(std::max(p[c], 1e-12)) - std::log(std::max(q[c], 1e-12)));
  }

  Node n;
  n.value = Matrix(1, 1, kl);
  n.parents = {logits.idx};
  std::vector<double> qc = q;
  n.backward = [logits, qc, kl, p](Tape& t, size_t self) {
    const double g = t.nodes_[self].grad.at(0, 0);
    Matrix& gz = t.grad_buf(logits.idx);
    // dKL/dz_j = p_j · ((ln p_j − ln q_j) − KL)
    for (size_t c = 0; c < p.size(); ++c) {
      if (p[c] <= 0.0) continue;
      const double lr = std::log(std::max(p[c], 1e-12)) - std::log(std::max(qc[c], 1e-12));
      gz.at(0, c) += g * p[c] * (lr - kl);
    }
  };
  return Var{push(std::move(n))};
}

Var Tape::weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights) {
  if (scalars.size() != weights.size() || scalars.empty())
    throw ShapeError("weighted_sum: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < scalars.size(); ++i) acc += weights[i] * scalar(scalars[i]);
  Node n;
  n.value = Matrix(1, 1, acc);
  std::vector<size_t> parent_ids;
  for (Var v : scalars) parent_ids.push_back(v.idx);
  n.parents = parent_ids;
  std::vector<double> w = weights;
  n.backward = [parent_ids, w](Tape& t, size_t self) {
    const double g = t.nodes_[self].grad.at(0, 0);
    for (size_t i = 0; i < parent_ids.size(); ++i)
      t.grad_buf(parent_ids[i]).at(0, 0) += g * w[i];
  };
  return Var{push(std::move(n))};
}

}  // namespace hcut
