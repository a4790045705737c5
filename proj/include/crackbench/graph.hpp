#pragma once

// Reverse-mode differentiation over the kernels in kernels.hpp.
//
// A Graph records every value produced during one forward pass. Var is a light
// handle into it; the free functions below (conv2d, relu, ...) append nodes and
// remember how to push gradients back to their inputs. Values are never
// mutated after creation. One graph belongs to one thread.

#include "crackbench/kernels.hpp"
#include "crackbench/tensor.hpp"

#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

namespace crackbench {

template <typename Scalar>
class Graph;

template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  int id = -1;

  [[nodiscard]] const Tensor<Scalar>& value() const { return graph->value(*this); }
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] bool valid() const { return graph != nullptr && id >= 0; }
};

template <typename Scalar>
class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor<Scalar>& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// A value that never receives gradient.
  Var<Scalar> constant(Tensor<Scalar> value) { return push(std::move(value), false, {}, nullptr); }

  /// Binds a parameter. Frozen parameters enter the graph as constants.
  Var<Scalar> param(Parameter<Scalar>& p) {
    return push(p.value, p.learnable, {}, p.learnable ? &p : nullptr);
  }

  /// Appends an op result. `backward` is only kept when some input needs gradient.
  Var<Scalar> op(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& v : inputs) {
      check_owner(v);
      needs = needs || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{}, nullptr);
  }

  [[nodiscard]] const Tensor<Scalar>& value(Var<Scalar> v) const {
    check_owner(v);
    return nodes_[static_cast<std::size_t>(v.id)].value;
  }
  [[nodiscard]] bool requires_grad(Var<Scalar> v) const {
    check_owner(v);
    return nodes_[static_cast<std::size_t>(v.id)].requires_grad;
  }

  /// Gradient slot of `v`, allocated on first use. Op backward closures add into it.
  Tensor<Scalar>& grad(Var<Scalar> v) {
    check_owner(v);
    auto& node = nodes_[static_cast<std::size_t>(v.id)];
    if (node.grad.shape() != node.value.shape()) node.grad = Tensor<Scalar>::zeros(node.value.shape());
    return node.grad;
  }

  /// Back-propagates from a scalar node, seeding d(out)/d(out) = seed. Parameter
  /// gradients are accumulated (+=) into Parameter::grad.
  void backward(Var<Scalar> out, Scalar seed = Scalar(1)) {
    check_owner(out);
    if (value(out).size() != 1)
      throw ShapeError("backward: objective must be scalar, got " + value(out).shape().str());
    for (auto& n : nodes_) n.grad = Tensor<Scalar>();
    grad(out)[0] = seed;
    for (int i = out.id; i >= 0; --i) {
      auto& node = nodes_[static_cast<std::size_t>(i)];
      if (!node.requires_grad || node.grad.empty()) continue;
      if (node.backward) node.backward(*this, node.grad);
      if (node.param) node.param->grad.array() += node.grad.array();
    }
  }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    Backward backward;
    Parameter<Scalar>* param = nullptr;
  };

  Var<Scalar> push(Tensor<Scalar> value, bool requires_grad, Backward backward, Parameter<Scalar>* param) {
    nodes_.push_back(Node{std::move(value), Tensor<Scalar>(), requires_grad, std::move(backward), param});
    return Var<Scalar>{this, static_cast<int>(nodes_.size()) - 1};
  }

  void check_owner(Var<Scalar> v) const {
    if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw std::logic_error("Var does not belong to this graph");
  }

  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable ops

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, int stride = 1, int pad = 0) {
  Graph<Scalar>& g = *x.graph;
  auto out = kernels::conv2d(x.value(), weight.value(), bias.value(), stride, pad);
  return g.op(std::move(out), {x, weight, bias}, [x, weight, bias, stride, pad](Graph<Scalar>& g, const Tensor<Scalar>& og) {
    kernels::conv2d_backward(g.value(x), g.value(weight), og, stride, pad,
                             g.requires_grad(x) ? &g.grad(x) : nullptr,
                             g.requires_grad(weight) ? &g.grad(weight) : nullptr,
                             g.requires_grad(bias) ? &g.grad(bias) : nullptr);
  });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  Graph<Scalar>& g = *x.graph;
  return g.op(kernels::relu(x.value()), {x}, [x](Graph<Scalar>& g, const Tensor<Scalar>& og) {
    g.grad(x).array() += (g.value(x).array() > Scalar(0)).select(og.array(), Scalar(0));
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  Graph<Scalar>& g = *x.graph;
  auto out = kernels::sigmoid(x.value());
  auto s = std::make_shared<Tensor<Scalar>>(out);
  return g.op(std::move(out), {x}, [x, s](Graph<Scalar>& g, const Tensor<Scalar>& og) {
    g.grad(x).array() += og.array() * s->array() * (Scalar(1) - s->array());
  });
}

/// 2x2 max pooling. Odd extents are replication-padded to even first; the
/// padded copies route their gradient back to the replicated source pixel.
template <typename Scalar>
Var<Scalar> maxpool2(Var<Scalar> x) {
  Graph<Scalar>& g = *x.graph;
  const Shape in_shape = x.shape();
  const Tensor<Scalar> padded = kernels::pad_to_even(x.value());
  auto argmax = std::make_shared<std::vector<std::ptrdiff_t>>();
  auto out = kernels::maxpool2(padded, argmax.get());
  const Shape padded_shape = padded.shape();
  return g.op(std::move(out), {x}, [x, argmax, in_shape, padded_shape](Graph<Scalar>& g, const Tensor<Scalar>& og) {
    Tensor<Scalar>& ig = g.grad(x);
    for (std::ptrdiff_t o = 0; o < og.size(); ++o) {
      std::ptrdiff_t p = (*argmax)[static_cast<std::size_t>(o)];
      const int px = static_cast<int>(p % padded_shape.w);
      p /= padded_shape.w;
      const int py = static_cast<int>(p % padded_shape.h);
      p /= padded_shape.h;
      const int pc = static_cast<int>(p % padded_shape.c);
      const int pn = static_cast<int>(p / padded_shape.c);
      ig(pn, pc, std::min(py, in_shape.h - 1), std::min(px, in_shape.w - 1)) += og[o];
    }
  });
}

/// Frozen bilinear up-sampling by `factor`, cropped to out_h x out_w.
/// The kernel is a constant; no gradient is produced for it.
template <typename Scalar>
Var<Scalar> bilinear_upsample(Var<Scalar> x, const Tensor<Scalar>& kernel, int factor, int out_h, int out_w) {
  Graph<Scalar>& g = *x.graph;
  auto out = kernels::bilinear_upsample(x.value(), kernel, factor, out_h, out_w);
  auto ker = std::make_shared<Tensor<Scalar>>(kernel);
  return g.op(std::move(out), {x}, [x, ker, factor](Graph<Scalar>& g, const Tensor<Scalar>& og) {
    kernels::bilinear_upsample_backward(og, *ker, factor, g.grad(x));
  });
}

template <typename Scalar>
Var<Scalar> bilinear_upsample(Var<Scalar> x, int factor) {
  if (factor < 1) throw ShapeError("bilinear_upsample: factor must be >= 1, got " + std::to_string(factor));
  return bilinear_upsample(x, kernels::bilinear_kernel<Scalar>(factor), factor, x.shape().h * factor,
                           x.shape().w * factor);
}

template <typename Scalar>
Var<Scalar> concat_channels(Var<Scalar> a, Var<Scalar> b) {
  Graph<Scalar>& g = *a.graph;
  auto out = kernels::concat_channels(a.value(), b.value());
  return g.op(std::move(out), {a, b}, [a, b](Graph<Scalar>& g, const Tensor<Scalar>& og) {
    const Shape sa = g.value(a).shape(), sb = g.value(b).shape();
    const std::ptrdiff_t na = sa.c * sa.plane(), nb = sb.c * sb.plane();
    const bool ga = g.requires_grad(a), gb = g.requires_grad(b);
    for (int n = 0; n < sa.n; ++n) {
      const Scalar* src = og.data() + og.index(n, 0, 0, 0);
      if (ga && na > 0) g.grad(a).array().segment(n * na, na) += Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(src, na);
      if (gb && nb > 0) g.grad(b).array().segment(n * nb, nb) += Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(src + na, nb);
    }
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Graph<Scalar>& g = *a.graph;
  Tensor<Scalar> out(a.shape(), a.value().array() + b.value().array());
  return g.op(std::move(out), {a, b}, [a, b](Graph<Scalar>& g, const Tensor<Scalar>& og) {
    if (g.requires_grad(a)) g.grad(a).array() += og.array();
    if (g.requires_grad(b)) g.grad(b).array() += og.array();
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar s) {
  Graph<Scalar>& g = *x.graph;
  Tensor<Scalar> out(x.shape(), x.value().array() * s);
  return g.op(std::move(out), {x}, [x, s](Graph<Scalar>& g, const Tensor<Scalar>& og) {
    g.grad(x).array() += og.array() * s;
  });
}

/// Sum of all elements, as a scalar node.
template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  Graph<Scalar>& g = *x.graph;
  return g.op(Tensor<Scalar>::scalar(x.value().array().sum()), {x}, [x](Graph<Scalar>& g, const Tensor<Scalar>& og) {
    g.grad(x).array() += og[0];
  });
}

/// Elementwise product with a constant tensor of the same shape.
template <typename Scalar>
Var<Scalar> mul_const(Var<Scalar> x, const Tensor<Scalar>& c) {
  if (x.shape() != c.shape()) throw ShapeError("mul_const: shape mismatch " + x.shape().str() + " vs " + c.shape().str());
  Graph<Scalar>& g = *x.graph;
  auto k = std::make_shared<Tensor<Scalar>>(c);
  Tensor<Scalar> out(x.shape(), x.value().array() * c.array());
  return g.op(std::move(out), {x}, [x, k](Graph<Scalar>& g, const Tensor<Scalar>& og) {
    g.grad(x).array() += og.array() * k->array();
  });
}

}  // namespace crackbench
