#pragma once

#include <cstddef>
#include <vector>

#include "core/tensor.hpp"

namespace pistm {

// Direct dense ops, shared by the graph nodes and the public API.
Tensor matmul(const Tensor& a, const Tensor& b);
std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);
// Cross-correlation with zero padding. x: [N,C,H,W], kernel: [Co,C,kh,kw].
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t pad);
// Exact adjoint of conv2d with the same geometry; maps [N,Co,H',W'] back to [N,C,H,W].
Tensor conv2d_adjoint(const Tensor& y, const Tensor& kernel, std::size_t stride, std::size_t pad,
                      std::size_t out_h, std::size_t out_w);
Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& gy, std::size_t stride, std::size_t pad,
                          std::size_t kh, std::size_t kw);

using NodeId = int;

enum class OpKind {
  Input,
  Param,
  MatMul,
  Conv2d,
  ConvT2d,
  Add,
  Sub,
  AddBias,
  Tanh,
  Reshape,
  MeanSquare,
  Scale,
};

// Static computation graph over the fixed op set the two architectures need.
// Build once, then per training step: set_input(...), forward(), backward(loss),
// let the optimizer update param values in place. Nodes are stored in build
// order, which is by construction a valid topological order.
class Graph {
 public:
  int add_input(Tensor v);
  int add_param(Tensor v);

  int matmul(int a, int b);
  int conv2d(int x, int kernel, std::size_t stride, std::size_t pad);
  int conv2d_transpose(int y, int kernel, std::size_t stride, std::size_t pad, std::size_t out_h,
                       std::size_t out_w);
  int add(int a, int b);
  int sub(int a, int b);
  int add_bias(int a, int bias);
  int tanh(int x);
  int reshape(int x, Shape dims);
  int mean_square(int x);
  int scale(int x, double alpha);

  void set_input(int id, const Tensor& v);

  const Tensor& value(int id) const { return node(id).value; }
  Tensor& param_value(int id);
  const Tensor& grad(int id) const;

  // Re-evaluates every non-leaf node in topological order.
  void forward();
  // Reverse-mode gradients of a scalar loss into every param's grad buffer.
  void backward(int loss);

  std::vector<int> params() const;
  std::size_t node_count() const { return nodes_.size(); }
  // Checks every param feeds the given root; call once after building.
  void validate(int root) const;

 private:
  struct Node {
    OpKind kind;
    int a = -1;
    int b = -1;
    std::size_t stride = 1, pad = 0;
    std::size_t out_h = 0, out_w = 0;
    double alpha = 1.0;
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
  };

  Node& node(int id);
  const Node& node(int id) const;
  int push(Node n);
  void eval(Node& n);
  void accumulate(Node& n);

  std::vector<Node> nodes_;
};

}  // namespace pistm
