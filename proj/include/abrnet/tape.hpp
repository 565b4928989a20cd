#pragma once

#include <functional>
#include <vector>

#include "abrnet/matrix.hpp"

namespace abrnet {

// Minimal reverse-mode tape over Matrix-valued nodes. Ops append nodes in
// evaluation order, so creation order is already a topological order;
// backward() seeds the loss node with 1 and walks the tape in reverse,
// accumulating d(loss)/d(node) into every node, leaves included. A leaf that
// the loss does not depend on keeps a zero gradient.
class Tape {
 public:
  using Id = int;

  Id leaf(Matrix value);

  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);  // elementwise
  Id scale(Id a, double c);
  Id matmul(Id a, Id b);
  Id transpose(Id a);
  Id leaky_relu(Id a, double slope);
  Id relu(Id a);  // hinge max(x,0); subgradient 0 at the kink
  Id sigmoid(Id a);
  Id softmax_rows(Id a);
  Id log(Id a);
  Id clamp(Id a, double lo, double hi);
  Id row_scale(Id a, Id v);      // out(i,j) = a(i,j) * v(i,0)
  Id tile_cols(Id v, int cols);  // out(i,j) = v(i,0)
  Id row(Id a, int r);           // 1 x cols slice
  Id col(Id a, int c);           // rows x 1 slice
  Id vstack(const std::vector<Id>& parts);
  Id hconcat(const std::vector<Id>& parts);
  Id sum_all(Id a);  // 1x1

  const Matrix& value(Id id) const { return nodes_[id].value; }
  const Matrix& grad(Id id) const { return nodes_[id].grad; }
  double scalar(Id id) const { return nodes_[id].value(0, 0); }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Gradients of a scalar (1x1) node w.r.t. every node. Resets all
  // gradients first, so repeated calls do not accumulate across losses.
  void backward(Id loss_id);

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, Id)> back;  // pulls grad(self) into parents
  };
  std::vector<Node> nodes_;

  Id push(Matrix value, std::function<void(Tape&, Id)> back);
  Matrix& grad_ref(Id id) { return nodes_[id].grad; }
};

}  // namespace abrnet
