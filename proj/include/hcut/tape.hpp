#pragma once

#include <functional>
#include <vector>

#include "hcut/numerics.hpp"

namespace hcut {

class Tape;

/// Handle to a node on the differentiation tape.
struct Var {
  size_t idx = 0;
};

// Tape-style reverse-mode differentiation over Matrix values. Nodes are
// appended in evaluation order, which is a topological order by
// construction, so the backward pass is a single reverse sweep that visits
// each node exactly once. The tape is confined to one thread; values are
// immutable once created.
class Tape {
 public:
  struct Node {
    Matrix value;
    Matrix grad;  // allocated on demand during backward()
    std::vector<size_t> parents;
    std::function<void(Tape&, size_t)> backward;  // accumulates into parent grads
  };

  // Leaf holding a copy of a parameter (or constant). Parameter leaves keep
  // the storage pointer so gradients can be collected per parameter tensor.
  Var leaf(const Matrix& value, const Matrix* storage = nullptr);

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);                     // a · bᵀ
  Var add(Var a, Var b);                           // same shape
  Var add_row_broadcast(Var a, Var bias);          // bias is 1×cols
  Var scale(Var a, double s);
  Var gelu(Var a);
  Var layer_norm_rows(Var x, Var gain, Var bias);  // gain/bias are 1×cols
  Var softmax_rows_masked(Var x, const MaskFlags& col_mask);
  Var gather_rows(Var table, const std::vector<size_t>& ids);
  Var slice_rows(Var x, size_t first, size_t count);
  Var slice_cols(Var x, size_t first, size_t count);
  Var concat_cols(const std::vector<Var>& parts);
  Var mul_mask(Var x, const Matrix& mask01);       // elementwise constant mask

  // −log softmax(logits)[label] as a 1×1 node; logits is 1×C.
  Var cross_entropy_logits(Var logits, size_t label);
  // KL(softmax(logits) ‖ q) as a 1×1 node with q held constant; no gradient
  // flows into q.
  Var kl_to_const(Var logits, const std::vector<double>& q);
  // Σ weights[i]·scalars[i] as a 1×1 node.
  Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights);

  const Matrix& value(Var v) const { return nodes_[v.idx].value; }
  const Matrix& grad(Var v) const { return nodes_[v.idx].grad; }
  double scalar(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse creation order.
  void backward(Var loss);

  // Gradient of the most recent backward() with respect to the parameter
  // registered with the given storage pointer. Zero matrix if the parameter
  // never entered the graph.
  Matrix grad_of_param(const Matrix* storage) const;

  size_t size() const { return nodes_.size(); }
  void clear();

 private:
  size_t push(Node&& n);
  Matrix& grad_buf(size_t idx);

  std::vector<Node> nodes_;
  std::vector<std::pair<const Matrix*, size_t>> param_leaves_;
};

}  // namespace hcut
