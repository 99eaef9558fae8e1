#include "core/graph.hpp"

#include <cmath>

#include "core/blas.hpp"

namespace pistm {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw ShapeError("matmul expects matrices, got " + shape_to_string(a.dims()) + " and " +
                     shape_to_string(b.dims()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul inner dimensions disagree: " + shape_to_string(a.dims()) + " * " +
                     shape_to_string(b.dims()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  blas::dgemm(false, false, a.dim(0), b.dim(1), a.dim(1), 1.0, a.data(), a.dim(1), b.data(),
              b.dim(1), 0.0, c.data(), c.dim(1));
  return c;
}

std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride < 1) throw ContractError("conv2d stride must be >= 1");
  const std::size_t padded = in + 2 * pad;
  if (padded < k) {
    throw ShapeError("conv2d kernel extent " + std::to_string(k) + " exceeds padded input " +
                     std::to_string(padded));
  }
  const std::size_t span = padded - k;
  if (span % stride != 0) {
    throw ShapeError("conv2d output extent is not integral (in=" + std::to_string(in) +
                     ", k=" + std::to_string(k) + ", stride=" + std::to_string(stride) +
                     ", pad=" + std::to_string(pad) + ")");
  }
  return span / stride + 1;
}

namespace {

void check_conv_args(const Tensor& x, const Tensor& kernel) {
  if (x.ndim() != 4 || kernel.ndim() != 4) {
    throw ShapeError("conv2d expects [N,C,H,W] input and [Co,C,kh,kw] kernel, got " +
                     shape_to_string(x.dims()) + " and " + shape_to_string(kernel.dims()));
  }
  if (x.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(x.dim(1)) +
                     ", kernel expects " + std::to_string(kernel.dim(1)));
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t pad) {
  check_conv_args(x, kernel);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const std::size_t oh = conv_output_extent(h, kh, stride, pad);
  const std::size_t ow = conv_output_extent(w, kw, stride, pad);
  Tensor y({n, co, oh, ow});
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t oc = 0; oc < co; ++oc) {
      for (std::size_t oi = 0; oi < oh; ++oi) {
        for (std::size_t oj = 0; oj < ow; ++oj) {
          double acc = 0.0;
          for (std::size_t ic = 0; ic < c; ++ic) {
            for (std::size_t a = 0; a < kh; ++a) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + a) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t b = 0; b < kw; ++b) {
                const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * stride + b) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                acc += x.at(in, ic, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)) *
                       kernel.at(oc, ic, a, b);
              }
            }
          }
          y.at(in, oc, oi, oj) = acc;
        }
      }
    }
  }
  return y;
}

Tensor conv2d_adjoint(const Tensor& y, const Tensor& kernel, std::size_t stride, std::size_t pad,
                      std::size_t out_h, std::size_t out_w) {
  if (y.ndim() != 4 || kernel.ndim() != 4) {
    throw ShapeError("conv2d_adjoint expects 4D tensors");
  }
  if (y.dim(1) != kernel.dim(0)) {
    throw ShapeError("conv2d_adjoint channel mismatch: input has " + std::to_string(y.dim(1)) +
                     ", kernel produces " + std::to_string(kernel.dim(0)));
  }
  const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);
  if (conv_output_extent(out_h, kh, stride, pad) != y.dim(2) ||
      conv_output_extent(out_w, kw, stride, pad) != y.dim(3)) {
    throw ShapeError("conv2d_adjoint output extents inconsistent with forward geometry");
  }
  const std::size_t n = y.dim(0), co = y.dim(1), oh = y.dim(2), ow = y.dim(3);
  const std::size_t c = kernel.dim(1);
  Tensor x({n, c, out_h, out_w});
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t oc = 0; oc < co; ++oc) {
      for (std::size_t oi = 0; oi < oh; ++oi) {
        for (std::size_t oj = 0; oj < ow; ++oj) {
          const double v = y.at(in, oc, oi, oj);
          if (v == 0.0) continue;
          for (std::size_t ic = 0; ic < c; ++ic) {
            for (std::size_t a = 0; a < kh; ++a) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + a) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(out_h)) continue;
              for (std::size_t b = 0; b < kw; ++b) {
                const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * stride + b) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(out_w)) continue;
                x.at(in, ic, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)) +=
                    v * kernel.at(oc, ic, a, b);
              }
            }
          }
        }
      }
    }
  }
  return x;
}

Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& gy, std::size_t stride, std::size_t pad,
                          std::size_t kh, std::size_t kw) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = gy.dim(1), oh = gy.dim(2), ow = gy.dim(3);
  Tensor gk({co, c, kh, kw});
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t oc = 0; oc < co; ++oc) {
      for (std::size_t oi = 0; oi < oh; ++oi) {
        for (std::size_t oj = 0; oj < ow; ++oj) {
          const double g = gy.at(in, oc, oi, oj);
          if (g == 0.0) continue;
          for (std::size_t ic = 0; ic < c; ++ic) {
            for (std::size_t a = 0; a < kh; ++a) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + a) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t b = 0; b < kw; ++b) {
                const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * stride + b) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                gk.at(oc, ic, a, b) +=
                    g * x.at(in, ic, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
              }
            }
          }
        }
      }
    }
  }
  return gk;
}

Graph::Node& Graph::node(int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw ContractError("invalid graph node id " + std::to_string(id));
  }
  return nodes_[static_cast<std::size_t>(id)];
}

const Graph::Node& Graph::node(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw ContractError("invalid graph node id " + std::to_string(id));
  }
  return nodes_[static_cast<std::size_t>(id)];
}

int Graph::push(Node n) {
  if (n.kind != OpKind::Input && n.kind != OpKind::Param) {
    n.needs_grad = (n.a >= 0 && node(n.a).needs_grad) || (n.b >= 0 && node(n.b).needs_grad);
  }
  if (n.needs_grad) n.grad = Tensor::zeros(n.value.dims());
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Graph::add_input(Tensor v) {
  Node n;
  n.kind = OpKind::Input;
  n.value = std::move(v);
  return push(std::move(n));
}

int Graph::add_param(Tensor v) {
  Node n;
  n.kind = OpKind::Param;
  n.needs_grad = true;
  n.value = std::move(v);
  return push(std::move(n));
}

int Graph::matmul(int a, int b) {
  Node n;
  n.kind = OpKind::MatMul;
  n.a = a;
  n.b = b;
  n.value = pistm::matmul(node(a).value, node(b).value);
  return push(std::move(n));
}

int Graph::conv2d(int x, int kernel, std::size_t stride, std::size_t pad) {
  Node n;
  n.kind = OpKind::Conv2d;
  n.a = x;
  n.b = kernel;
  n.stride = stride;
  n.pad = pad;
  n.value = pistm::conv2d(node(x).value, node(kernel).value, stride, pad);
  return push(std::move(n));
}

int Graph::conv2d_transpose(int y, int kernel, std::size_t stride, std::size_t pad,
                            std::size_t out_h, std::size_t out_w) {
  Node n;
  n.kind = OpKind::ConvT2d;
  n.a = y;
  n.b = kernel;
  n.stride = stride;
  n.pad = pad;
  n.out_h = out_h;
  n.out_w = out_w;
  n.value = pistm::conv2d_adjoint(node(y).value, node(kernel).value, stride, pad, out_h, out_w);
  return push(std::move(n));
}

int Graph::add(int a, int b) {
  if (!node(a).value.same_dims(node(b).value)) {
    throw ShapeError("add requires matching dims, got " + shape_to_string(node(a).value.dims()) +
                     " and " + shape_to_string(node(b).value.dims()));
  }
  Node n;
  n.kind = OpKind::Add;
  n.a = a;
  n.b = b;
  n.value = Tensor::zeros(node(a).value.dims());
  return push(std::move(n));
}

int Graph::sub(int a, int b) {
  if (!node(a).value.same_dims(node(b).value)) {
    throw ShapeError("sub requires matching dims, got " + shape_to_string(node(a).value.dims()) +
                     " and " + shape_to_string(node(b).value.dims()));
  }
  Node n;
  n.kind = OpKind::Sub;
  n.a = a;
  n.b = b;
  n.value = Tensor::zeros(node(a).value.dims());
  return push(std::move(n));
}

int Graph::add_bias(int a, int bias) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(bias).value;
  const bool row_bias = av.ndim() == 2 && bv.ndim() == 1 && bv.dim(0) == av.dim(1);
  const bool channel_bias = av.ndim() == 4 && bv.ndim() == 1 && bv.dim(0) == av.dim(1);
  if (!row_bias && !channel_bias) {
    throw ShapeError("add_bias cannot broadcast " + shape_to_string(bv.dims()) + " onto " +
                     shape_to_string(av.dims()));
  }
  Node n;
  n.kind = OpKind::AddBias;
  n.a = a;
  n.b = bias;
  n.value = Tensor::zeros(av.dims());
  return push(std::move(n));
}

int Graph::tanh(int x) {
  Node n;
  n.kind = OpKind::Tanh;
  n.a = x;
  n.value = Tensor::zeros(node(x).value.dims());
  return push(std::move(n));
}

int Graph::reshape(int x, Shape dims) {
  if (shape_numel(dims) != node(x).value.size()) {
    throw ShapeError("reshape " + shape_to_string(node(x).value.dims()) + " to " +
                     shape_to_string(dims));
  }
  Node n;
  n.kind = OpKind::Reshape;
  n.a = x;
  n.value = Tensor::zeros(dims);
  return push(std::move(n));
}

int Graph::mean_square(int x) {
  Node n;
  n.kind = OpKind::MeanSquare;
  n.a = x;
  n.value = Tensor::zeros({1});
  return push(std::move(n));
}

int Graph::scale(int x, double alpha) {
  Node n;
  n.kind = OpKind::Scale;
  n.a = x;
  n.alpha = alpha;
  n.value = Tensor::zeros(node(x).value.dims());
  return push(std::move(n));
}

void Graph::set_input(int id, const Tensor& v) {
  Node& n = node(id);
  if (n.kind != OpKind::Input) throw ContractError("set_input on a non-input node");
  if (!n.value.same_dims(v)) {
    throw ShapeError("set_input dims " + shape_to_string(v.dims()) + " do not match node dims " +
                     shape_to_string(n.value.dims()));
  }
  n.value = v;
}

Tensor& Graph::param_value(int id) {
  Node& n = node(id);
  if (n.kind != OpKind::Param) throw ContractError("param_value on a non-param node");
  return n.value;
}

const Tensor& Graph::grad(int id) const {
  const Node& n = node(id);
  if (!n.needs_grad) throw ContractError("grad requested for a node without gradient");
  return n.grad;
}

void Graph::eval(Node& n) {
  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Param:
      break;
    case OpKind::MatMul: {
      const Tensor& a = node(n.a).value;
      const Tensor& b = node(n.b).value;
      blas::dgemm(false, false, a.dim(0), b.dim(1), a.dim(1), 1.0, a.data(), a.dim(1), b.data(),
                  b.dim(1), 0.0, n.value.data(), b.dim(1));
      break;
    }
    case OpKind::Conv2d:
      n.value = pistm::conv2d(node(n.a).value, node(n.b).value, n.stride, n.pad);
      break;
    case OpKind::ConvT2d:
      n.value = pistm::conv2d_adjoint(node(n.a).value, node(n.b).value, n.stride, n.pad, n.out_h,
                                      n.out_w);
      break;
    case OpKind::Add: {
      const double* a = node(n.a).value.data();
      const double* b = node(n.b).value.data();
      double* out = n.value.data();
      for (std::size_t i = 0; i < n.value.size(); ++i) out[i] = a[i] + b[i];
      break;
    }
    case OpKind::Sub: {
      const double* a = node(n.a).value.data();
      const double* b = node(n.b).value.data();
      double* out = n.value.data();
      for (std::size_t i = 0; i < n.value.size(); ++i) out[i] = a[i] - b[i];
      break;
    }
    case OpKind::AddBias: {
      const Tensor& a = node(n.a).value;
      const Tensor& b = node(n.b).value;
      double* out = n.value.data();
      if (a.ndim() == 2) {
        const std::size_t rows = a.dim(0), cols = a.dim(1);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = a.data()[i * cols + j] + b[j];
        }
      } else {
        const std::size_t nn = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
        for (std::size_t in = 0; in < nn; ++in) {
          for (std::size_t ic = 0; ic < c; ++ic) {
            const std::size_t base = (in * c + ic) * hw;
            for (std::size_t p = 0; p < hw; ++p) out[base + p] = a.data()[base + p] + b[ic];
          }
        }
      }
      break;
    }
    case OpKind::Tanh: {
      const double* x = node(n.a).value.data();
      double* out = n.value.data();
      for (std::size_t i = 0; i < n.value.size(); ++i) out[i] = std::tanh(x[i]);
      break;
    }
    case OpKind::Reshape: {
      const Shape dims = n.value.dims();
      n.value = node(n.a).value.reshaped(dims);
      break;
    }
    case OpKind::MeanSquare: {
      const Tensor& x = node(n.a).value;
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * x[i];
      n.value[0] = s / static_cast<double>(x.size());
      break;
    }
    case OpKind::Scale: {
      const double* x = node(n.a).value.data();
      double* out = n.value.data();
      for (std::size_t i = 0; i < n.value.size(); ++i) out[i] = n.alpha * x[i];
      break;
    }
  }
}

void Graph::forward() {
  for (Node& n : nodes_) eval(n);
}

void Graph::accumulate(Node& n) {
  const bool ga = n.a >= 0 && node(n.a).needs_grad;
  const bool gb = n.b >= 0 && node(n.b).needs_grad;
  if (!ga && !gb) return;
  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Param:
      break;
    case OpKind::MatMul: {
      const Tensor& a = node(n.a).value;
      const Tensor& b = node(n.b).value;
      const std::size_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
      if (ga) {
        blas::dgemm(false, true, m, k, nn, 1.0, n.grad.data(), nn, b.data(), nn, 1.0,
                    node(n.a).grad.data(), k);
      }
      if (gb) {
        blas::dgemm(true, false, k, nn, m, 1.0, a.data(), k, n.grad.data(), nn, 1.0,
                    node(n.b).grad.data(), nn);
      }
      break;
    }
    case OpKind::Conv2d: {
      const Tensor& x = node(n.a).value;
      const Tensor& kk = node(n.b).value;
      if (ga) {
        Tensor gx = conv2d_adjoint(n.grad, kk, n.stride, n.pad, x.dim(2), x.dim(3));
        double* dst = node(n.a).grad.data();
        for (std::size_t i = 0; i < gx.size(); ++i) dst[i] += gx[i];
      }
      if (gb) {
        Tensor gk = conv2d_kernel_grad(x, n.grad, n.stride, n.pad, kk.dim(2), kk.dim(3));
        double* dst = node(n.b).grad.data();
        for (std::size_t i = 0; i < gk.size(); ++i) dst[i] += gk[i];
      }
      break;
    }
    case OpKind::ConvT2d: {
      const Tensor& y = node(n.a).value;
      const Tensor& kk = node(n.b).value;
      if (ga) {
        Tensor gy = pistm::conv2d(n.grad, kk, n.stride, n.pad);
        double* dst = node(n.a).grad.data();
        for (std::size_t i = 0; i < gy.size(); ++i) dst[i] += gy[i];
      }
      if (gb) {
        Tensor gk = conv2d_kernel_grad(n.grad, y, n.stride, n.pad, kk.dim(2), kk.dim(3));
        double* dst = node(n.b).grad.data();
        for (std::size_t i = 0; i < gk.size(); ++i) dst[i] += gk[i];
      }
      break;
    }
    case OpKind::Add: {
      if (ga) {
        double* dst = node(n.a).grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
      }
      if (gb) {
        double* dst = node(n.b).grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
      }
      break;
    }
    case OpKind::Sub: {
      if (ga) {
        double* dst = node(n.a).grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
      }
      if (gb) {
        double* dst = node(n.b).grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] -= n.grad[i];
      }
      break;
    }
    case OpKind::AddBias: {
      if (ga) {
        double* dst = node(n.a).grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
      }
      if (gb) {
        const Tensor& a = node(n.a).value;
        double* dst = node(n.b).grad.data();
        if (a.ndim() == 2) {
          const std::size_t rows = a.dim(0), cols = a.dim(1);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) dst[j] += n.grad[i * cols + j];
          }
        } else {
          const std::size_t nn = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
          for (std::size_t in = 0; in < nn; ++in) {
            for (std::size_t ic = 0; ic < c; ++ic) {
              const std::size_t base = (in * c + ic) * hw;
              double s = 0.0;
              for (std::size_t p = 0; p < hw; ++p) s += n.grad[base + p];
              dst[ic] += s;
            }
          }
        }
      }
      break;
    }
    case OpKind::Tanh: {
      if (ga) {
        double* dst = node(n.a).grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          const double y = n.value[i];
          dst[i] += n.grad[i] * (1.0 - y * y);
        }
      }
      break;
    }
    case OpKind::Reshape: {
      if (ga) {
        double* dst = node(n.a).grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
      }
      break;
    }
    case OpKind::MeanSquare: {
      if (ga) {
        const Tensor& x = node(n.a).value;
        const double g = 2.0 * n.grad[0] / static_cast<double>(x.size());
        double* dst = node(n.a).grad.data();
        for (std::size_t i = 0; i < x.size(); ++i) dst[i] += g * x[i];
      }
      break;
    }
    case OpKind::Scale: {
      if (ga) {
        double* dst = node(n.a).grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.alpha * n.grad[i];
      }
      break;
    }
  }
}

void Graph::backward(int loss) {
  Node& root = node(loss);
  if (root.value.size() != 1) {
    throw ContractError("backward requires a scalar loss node, got " +
                        shape_to_string(root.value.dims()));
  }
  if (!root.needs_grad) {
    throw ContractError("loss does not depend on any parameter");
  }
  for (Node& n : nodes_) {
    if (n.needs_grad) n.grad.fill(0.0);
  }
  root.grad[0] = 1.0;
  for (int id = loss; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) continue;
    accumulate(n);
  }
}

std::vector<int> Graph::params() const {
  std::vector<int> ids;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::Param) ids.push_back(static_cast<int>(i));
  }
  return ids;
}

void Graph::validate(int root) const {
  std::vector<bool> reach(nodes_.size(), false);
  reach[static_cast<std::size_t>(root)] = true;
  for (int id = root; id >= 0; --id) {
    if (!reach[static_cast<std::size_t>(id)]) continue;
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.a >= 0) reach[static_cast<std::size_t>(n.a)] = true;
    if (n.b >= 0) reach[static_cast<std::size_t>(n.b)] = true;
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::Param && !reach[i]) {
      throw ContractError("parameter node " + std::to_string(i) + " is not used by the loss");
    }
  }
}

}  // namespace pistm
