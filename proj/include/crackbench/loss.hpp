#pragma once

// Class-balanced sigmoid cross-entropy, hierarchical boosting weights and the
// deeply supervised total objective.

#include "crackbench/graph.hpp"
#include "crackbench/kernels.hpp"
#include "crackbench/model.hpp"

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>

namespace crackbench {

/// Fraction of background pixels |Y-| / |Y|.
inline double class_balance_beta(const BinaryMap& gt) {
  if (gt.size() == 0) throw std::invalid_argument("class_balance_beta: empty mask");
  if (!is_binary(gt)) throw std::invalid_argument("class_balance_beta: mask is not binary");
  const auto positives = static_cast<double>((gt == std::uint8_t(1)).count());
  return (static_cast<double>(gt.size()) - positives) / static_cast<double>(gt.size());
}

template <typename Scalar>
struct CeResult {
  Scalar loss = 0;
  Tensor<Scalar> grad;  // d loss / d activation
};

namespace detail {

template <typename Scalar>
void check_loss_operands(const Shape& act, const BinaryMap& gt, const Tensor<Scalar>* weights) {
  if (act.n != 1 || act.c != 1 || act.h != gt.rows() || act.w != gt.cols())
    throw ShapeError("balanced_ce: activation " + act.str() + " does not match mask " +
                     std::to_string(gt.rows()) + "x" + std::to_string(gt.cols()));
  if (weights) {
    if (weights->shape() != act) throw ShapeError("balanced_ce: weight map " + weights->shape().str() + " vs " + act.str());
    if ((weights->array() < Scalar(0)).any()) throw std::invalid_argument("balanced_ce: negative pixel weight");
  }
}

}  // namespace detail

/// -beta * sum_{y=1} w log s(a) - (1 - beta) * sum_{y=0} w log(1 - s(a)),
/// with w = 1 when `weights` is null. Returns the loss and d loss / d a.
template <typename Scalar>
CeResult<Scalar> balanced_ce_loss(const Tensor<Scalar>& activation, const BinaryMap& gt,
                                  const Tensor<Scalar>* weights = nullptr) {
  detail::check_loss_operands(activation.shape(), gt, weights);
  const Scalar beta = static_cast<Scalar>(class_balance_beta(gt));
  CeResult<Scalar> r;
  r.grad = Tensor<Scalar>(activation.shape());
  const std::uint8_t* y = gt.data();
  for (std::ptrdiff_t i = 0; i < activation.size(); ++i) {
    const Scalar a = activation[i];
    const Scalar w = weights ? (*weights)[i] : Scalar(1);
    if (w == Scalar(0)) continue;
    if (y[i]) {
      r.loss += beta * w * kernels::softplus(-a);
      r.grad[i] = -beta * w * (Scalar(1) - kernels::sigmoid(a));
    } else {
      r.loss += (Scalar(1) - beta) * w * kernels::softplus(a);
      r.grad[i] = (Scalar(1) - beta) * w * kernels::sigmoid(a);
    }
  }
  return r;
}

/// Graph version. `weights`, when given, may itself require gradient.
template <typename Scalar>
Var<Scalar> balanced_ce(Var<Scalar> activation, const BinaryMap& gt, std::optional<Var<Scalar>> weights = std::nullopt) {
  Graph<Scalar>& g = *activation.graph;
  const Tensor<Scalar>* wt = weights ? &weights->value() : nullptr;
  auto r = balanced_ce_loss(activation.value(), gt, wt);
  auto grad = std::make_shared<Tensor<Scalar>>(std::move(r.grad));
  auto mask = std::make_shared<BinaryMap>(gt);
  const Scalar beta = static_cast<Scalar>(class_balance_beta(gt));
  auto backward = [activation, weights, grad, mask, beta](Graph<Scalar>& g, const Tensor<Scalar>& og) {
    if (g.requires_grad(activation)) g.grad(activation).array() += og[0] * grad->array();
    if (weights && g.requires_grad(*weights)) {
      const Tensor<Scalar>& a = g.value(activation);
      Tensor<Scalar>& wg = g.grad(*weights);
      for (std::ptrdiff_t i = 0; i < a.size(); ++i)
        wg[i] += og[0] * (mask->data()[i] ? beta * kernels::softplus(-a[i])
                                          : (Scalar(1) - beta) * kernels::softplus(a[i]));
    }
  };
  if (weights) return g.op(Tensor<Scalar>::scalar(r.loss), {activation, *weights}, backward);
  return g.op(Tensor<Scalar>::scalar(r.loss), {activation}, backward);
}

/// |upper_prob - gt| per pixel.
template <typename Scalar>
Tensor<Scalar> boosting_weights(const Tensor<Scalar>& upper_prob, const BinaryMap& gt) {
  const Shape& s = upper_prob.shape();
  if (s.n != 1 || s.c != 1 || s.h != gt.rows() || s.w != gt.cols())
    throw ShapeError("boosting_weights: probability map " + s.str() + " does not match mask");
  if ((upper_prob.array() < Scalar(0)).any() || (upper_prob.array() > Scalar(1)).any() ||
      !upper_prob.all_finite())
    throw std::invalid_argument("boosting_weights: probabilities must lie in [0, 1]");
  Tensor<Scalar> w(s);
  for (std::ptrdiff_t i = 0; i < w.size(); ++i)
    w[i] = std::abs(upper_prob[i] - static_cast<Scalar>(gt.data()[i]));
  return w;
}

/// Differentiable |sigmoid(a) - y|, used when boosting weights are not detached.
template <typename Scalar>
Var<Scalar> boosting_weights(Var<Scalar> upper_activation, const BinaryMap& gt) {
  Graph<Scalar>& g = *upper_activation.graph;
  auto p = std::make_shared<Tensor<Scalar>>(kernels::sigmoid(upper_activation.value()));
  auto mask = std::make_shared<BinaryMap>(gt);
  return g.op(boosting_weights(*p, gt), {upper_activation}, [upper_activation, p, mask](Graph<Scalar>& g, const Tensor<Scalar>& og) {
    Tensor<Scalar>& ig = g.grad(upper_activation);
    for (std::ptrdiff_t i = 0; i < ig.size(); ++i) {
      const Scalar pi = (*p)[i];
      const Scalar sign = pi > Scalar(mask->data()[i]) ? Scalar(1) : (pi < Scalar(mask->data()[i]) ? Scalar(-1) : Scalar(0));
      ig[i] += og[i] * sign * pi * (Scalar(1) - pi);
    }
  });
}

struct LossOptions {
  /// false sets every boosting weight to 1 (plain deep supervision).
  bool boosting = true;
  /// false lets side m's loss back-propagate into side m+1 through its weights.
  bool detach_weights = true;
  /// Rescale each weight map to mean 1 (sum-preserving); off by default.
  bool normalize_weights = false;
};

template <typename Scalar>
struct LossBreakdown {
  std::array<Scalar, kNumSides> side_losses{};
  Scalar fuse_loss = 0;
  Scalar total = 0;
  Scalar beta = 0;
};

template <typename Scalar>
struct LossGraph {
  std::array<Var<Scalar>, kNumSides> side;
  Var<Scalar> fuse;
  Var<Scalar> total;

  [[nodiscard]] LossBreakdown<Scalar> breakdown(const BinaryMap& gt) const {
    LossBreakdown<Scalar> b;
    for (std::size_t m = 0; m < kNumSides; ++m) b.side_losses[m] = side[m].value().item();
    b.fuse_loss = fuse.value().item();
    b.total = total.value().item();
    b.beta = static_cast<Scalar>(class_balance_beta(gt));
    return b;
  }
};

/// Side 5 uses plain class-balanced CE; side m < 5 is weighted by
/// |P^{m+1} - y| from side m+1's probability map; the fused map uses plain CE.
/// total = sum of side losses + fuse loss.
template <typename Scalar>
LossGraph<Scalar> total_loss(const std::array<Var<Scalar>, kNumSides>& side_activations, Var<Scalar> fused_activation,
                             const BinaryMap& gt, const LossOptions& opts = {}) {
  Graph<Scalar>& g = *fused_activation.graph;
  LossGraph<Scalar> lg;
  for (int m = kNumSides; m >= 1; --m) {
    const auto mi = static_cast<std::size_t>(m - 1);
    if (m == kNumSides || !opts.boosting) {
      lg.side[mi] = balanced_ce(side_activations[mi], gt);
      continue;
    }
    const Var<Scalar> upper = side_activations[mi + 1];
    Var<Scalar> w = opts.detach_weights ? g.constant(boosting_weights(kernels::sigmoid(upper.value()), gt))
                                        : boosting_weights(upper, gt);
    if (opts.normalize_weights) {
      const Scalar total = w.value().array().sum();
      if (total > Scalar(0)) w = scale(w, static_cast<Scalar>(w.value().size()) / total);
    }
    lg.side[mi] = balanced_ce(side_activations[mi], gt, std::optional<Var<Scalar>>(w));
  }
  lg.fuse = balanced_ce(fused_activation, gt);
  Var<Scalar> total = lg.side[0];
  for (std::size_t m = 1; m < kNumSides; ++m) total = add(total, lg.side[m]);
  lg.total = add(total, lg.fuse);
  return lg;
}

template <typename Scalar>
LossGraph<Scalar> total_loss(const ForwardResult<Scalar>& r, const BinaryMap& gt, const LossOptions& opts = {}) {
  return total_loss(r.side_activations, r.fused_activation, gt, opts);
}

/// Loss values for an already computed PredictionSet.
template <typename Scalar>
LossBreakdown<Scalar> total_loss(const PredictionSet<Scalar>& preds, const BinaryMap& gt, const LossOptions& opts = {}) {
  Graph<Scalar> g;
  std::array<Var<Scalar>, kNumSides> sides;
  for (std::size_t m = 0; m < kNumSides; ++m) sides[m] = g.constant(preds.side_activations[m]);
  return total_loss(sides, g.constant(preds.fused_activation), gt, opts).breakdown(gt);
}

}  // namespace crackbench
