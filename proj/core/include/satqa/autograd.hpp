#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "satqa/tensor.hpp"

namespace satqa::ag {

// A learnable tensor owned by a module. Graphs reference the value without
// copying it; gradients land in `grad` after Graph::accumulate().
struct Parameter {
  std::string name;
  std::shared_ptr<Tensor> value;
  Tensor grad;
  bool trainable = true;
  bool decay = true;  // weight decay applies (off for norms, biases, embeddings)

  void zero_grad() { grad = Tensor::zeros(value->shape()); }
};

class Graph;

// Lightweight handle to a node on a Graph tape.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  int dim(int i) const { return value().dim(i); }
  bool valid() const { return graph != nullptr; }
};

// Dynamic reverse-mode tape. One graph per forward pass; nodes are appended
// in evaluation order, so reverse iteration is a valid topological order.
//
// A graph built with record=false keeps values only (inference mode): no
// backward closures, no gradients, parameters are read as constants.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad);
  // Frozen parameters (trainable == false) enter as constants.
  Var param(Parameter& p);

  // Receives the node's own value and its accumulated gradient.
  using BackwardFn = std::function<void(Graph&, const Tensor& out, const Tensor& out_grad)>;
  Var emit(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var emit(Tensor value, const std::vector<Var>& parents, BackwardFn fn);

  const Tensor& value(Var v) const { return *nodes_[static_cast<std::size_t>(v.id)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  // Gradient buffer of v, allocated (zeroed) on first access.
  Tensor& grad(Var v);
  bool has_grad(Var v) const { return !nodes_[static_cast<std::size_t>(v.id)].grad.empty(); }

  // Seeds d(root)/d(root) = 1 for a single-element root and runs the tape.
  void backward(Var root);
  // Adds gradients of every parameter leaf into Parameter::grad.
  void accumulate();

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<const Tensor> value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  Var push(std::shared_ptr<const Tensor> value, bool requires_grad, BackwardFn fn);

  bool record_;
  std::deque<Node> nodes_;
  std::vector<std::pair<Parameter*, int>> params_;
};

// ---- elementwise / shape ops -------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
// x (m x n) + b, where b is (n), (1 x n) or (m x 1).
Var add_bcast(Var x, Var b);
// x (m x n) * g, where g is (1 x n) or (m x 1).
Var mul_bcast(Var x, Var g);
Var relu(Var a);
Var gelu(Var a);
Var sigmoid(Var a);
Var reshape(Var a, Shape shape);
Var transpose(Var a);  // rank-2
Var concat_rows(const std::vector<Var>& parts);  // along axis 0, any rank
Var concat_cols(const std::vector<Var>& parts);  // rank-2, along axis 1
Var slice_rows(Var a, int start, int len);       // along axis 0, any rank
Var slice_cols(Var a, int start, int len);       // rank-2

// ---- linear algebra ----------------------------------------------------
// a (m x k) * b (k x n), or a * b^T when trans_b (b is n x k).
Var matmul(Var a, Var b, bool trans_b = false);

// ---- reductions --------------------------------------------------------
Var sum(Var a);
Var mean(Var a);
Var mean_axis(Var a, int axis);  // rank-2; keeps the reduced axis at size 1
Var max_axis(Var a, int axis);   // rank-2; keeps the reduced axis at size 1

// ---- normalisation -----------------------------------------------------
Var softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-6);
Var group_norm(Var x, int groups, Var gamma, Var beta, double eps = 1e-5);  // C x H x W
// Batch statistics over N stacked C x H x W maps ((N*C) x H x W).
Var batch_norm_train(Var x, int batch, Var gamma, Var beta, double eps = 1e-5);
// y[c] = x[c] * scale[c] + shift[c] on a C x H x W map.
Var channel_affine(Var x, Var scale, Var shift);
Var l2_normalize_rows(Var a, double eps = 1e-12);

// ---- spatial ops on C x H x W maps ------------------------------------
struct Conv2dGeom {
  int stride = 1;
  int pad = 0;
  int groups = 1;
};
// weight: O x (C / groups) x k x k; bias optional (O).
Var conv2d(Var x, Var weight, Var bias, Conv2dGeom geom);
// Deformable convolution (no modulation). offsets: (2*k*k) x Ho x Wo with
// (dy, dx) pairs per kernel tap; bilinear sampling, zero outside the map.
Var deform_conv2d(Var x, Var offsets, Var weight, Var bias, int stride, int pad);
Var max_pool2d(Var x, int kernel, int stride, bool ceil_mode);
Var resize_nearest(Var x, int out_h, int out_w);
Var adaptive_avg_pool2d(Var x, int out_h, int out_w);

// ---- losses ------------------------------------------------------------
// Mean absolute error between preds (N values) and fixed targets.
Var l1_loss(Var preds, const std::vector<double>& targets);

}  // namespace satqa::ag
