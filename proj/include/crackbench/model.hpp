#pragma once

// Feature-pyramid / hierarchical-boosting crack network.
//
//   stage1 .. stage5   VGG-style bottom-up convolution stages, 2x2 max pooling between
//   level5 = stage5, level_m = merge(level_{m+1}, stage_m) for m = 4..1 (top-down pyramid)
//   side_m = upsample_{2^(m-1)}(conv1x1(level_m))   one activation map per level
//   fused  = conv1x1(concat(side_1 .. side_5))

#include "crackbench/graph.hpp"
#include "crackbench/kernels.hpp"
#include "crackbench/tensor.hpp"

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

namespace crackbench {

inline constexpr int kNumSides = 5;

enum class ScalePreset { tiny, paper };

struct ModelConfig {
  std::array<int, 5> stage_channels{8, 8, 16, 16, 16};
  std::array<int, 5> convs_per_stage{2, 2, 2, 2, 2};
  /// Output channels of the merge units at levels 4, 3, 2, 1.
  std::array<int, 4> merge_channels{16, 16, 8, 8};
  int input_channels = 1;
  ScalePreset preset = ScalePreset::tiny;
  /// false drops the top-down pathway: side m reads stage m directly.
  bool pyramid = true;
  /// Std of the Gaussian used for merge filters, and for backbone filters unless he_backbone.
  double init_std = 0.01;
  /// Backbone filters ~ N(0, 2 / fan_in) instead. The tiny preset trains from
  /// scratch, where N(0, 0.01) leaves the signal too small to learn from.
  bool he_backbone = true;
  /// Subtracted from every input intensity before the first convolution.
  double input_mean = 0.5;

  static ModelConfig tiny() { return ModelConfig{}; }

  static ModelConfig paper() {
    ModelConfig c;
    c.stage_channels = {64, 128, 256, 512, 512};
    c.convs_per_stage = {2, 2, 3, 3, 3};
    c.merge_channels = {512, 256, 128, 64};
    c.input_channels = 3;
    c.preset = ScalePreset::paper;
    c.he_backbone = false;
    c.input_mean = 0.46;  // VGG mean pixel averaged over channels, in [0, 1] units
    return c;
  }

  void validate() const {
    for (int v : stage_channels)
      if (v < 1) throw std::invalid_argument("ModelConfig: stage channel counts must be >= 1");
    for (int v : convs_per_stage)
      if (v < 1) throw std::invalid_argument("ModelConfig: convs_per_stage must be >= 1");
    for (int v : merge_channels)
      if (v < 1) throw std::invalid_argument("ModelConfig: merge channel counts must be >= 1");
    if (input_channels != 1 && input_channels != 3)
      throw std::invalid_argument("ModelConfig: input_channels must be 1 or 3");
    if (!(init_std > 0)) throw std::invalid_argument("ModelConfig: init_std must be positive");
  }

  /// Channels of pyramid level m (1-based) as seen by side network m.
  [[nodiscard]] int level_channels(int m) const {
    if (m == 5 || !pyramid) return stage_channels[static_cast<std::size_t>(m - 1)];
    return merge_channels[static_cast<std::size_t>(4 - m)];
  }
};

template <typename Scalar>
struct ConvLayer {
  Parameter<Scalar> weight;
  Parameter<Scalar> bias;
};

/// Every weight of the network. Side classifiers and fusion each emit one
/// channel; the four bilinear kernels (factors 2, 4, 8, 16) are frozen.
template <typename Scalar>
struct ModelParams {
  ModelConfig config;
  std::array<std::vector<ConvLayer<Scalar>>, 5> backbone;
  /// Merge 1x1 convolutions for levels 4, 3, 2, 1 (empty when pyramid is off).
  std::vector<ConvLayer<Scalar>> pyramid;
  std::array<ConvLayer<Scalar>, kNumSides> side;
  ConvLayer<Scalar> fusion;
  std::array<Parameter<Scalar>, 4> upsample;

  /// All parameters in a fixed order (backbone, pyramid, side, fusion, upsample).
  std::vector<Parameter<Scalar>*> all() {
    std::vector<Parameter<Scalar>*> out;
    auto push = [&](ConvLayer<Scalar>& l) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    };
    for (auto& stage : backbone)
      for (auto& l : stage) push(l);
    for (auto& l : pyramid) push(l);
    for (auto& l : side) push(l);
    push(fusion);
    for (auto& p : upsample) out.push_back(&p);
    return out;
  }
  std::vector<const Parameter<Scalar>*> all() const {
    auto ptrs = const_cast<ModelParams*>(this)->all();
    return {ptrs.begin(), ptrs.end()};
  }

  Parameter<Scalar>* find(const std::string& name) {
    for (auto* p : all())
      if (p->name == name) return p;
    return nullptr;
  }

  void zero_grad() {
    for (auto* p : all()) p->zero_grad();
  }

  [[nodiscard]] const Tensor<Scalar>& upsample_kernel(int factor) const {
    switch (factor) {
      case 2: return upsample[0].value;
      case 4: return upsample[1].value;
      case 8: return upsample[2].value;
      case 16: return upsample[3].value;
      default: throw ShapeError("no bilinear kernel for factor " + std::to_string(factor));
    }
  }

  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out;
    out.config = config;
    auto conv = [](const ConvLayer<Scalar>& l) {
      return ConvLayer<Other>{
          Parameter<Other>(l.weight.name, l.weight.value.template cast<Other>(), l.weight.learnable),
          Parameter<Other>(l.bias.name, l.bias.value.template cast<Other>(), l.bias.learnable)};
    };
    for (std::size_t s = 0; s < 5; ++s)
      for (const auto& l : backbone[s]) out.backbone[s].push_back(conv(l));
    for (const auto& l : pyramid) out.pyramid.push_back(conv(l));
    for (std::size_t m = 0; m < kNumSides; ++m) out.side[m] = conv(side[m]);
    out.fusion = conv(fusion);
    for (std::size_t i = 0; i < 4; ++i)
      out.upsample[i] = Parameter<Other>(upsample[i].name, upsample[i].value.template cast<Other>(), false);
    return out;
  }
};

/// Builds a parameter set. Merge filters ~ N(0, init_std), backbone filters the
/// same or He-scaled, biases 0, side classifiers 0, fusion weights 0.2, bilinear
/// kernels fixed.
template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams<Scalar> p;
  p.config = config;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, config.init_std);

  auto gaussian_conv = [&](const std::string& name, int cout, int cin, int k, double scale = 1.0) {
    Tensor<Scalar> w(Shape{cout, cin, k, k});
    for (std::ptrdiff_t i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(scale * gauss(rng));
    return ConvLayer<Scalar>{Parameter<Scalar>(name + ".weight", std::move(w)),
                             Parameter<Scalar>(name + ".bias", Tensor<Scalar>::zeros(Shape{1, 1, 1, cout}))};
  };
  auto constant_conv = [](const std::string& name, int cout, int cin, Scalar v) {
    return ConvLayer<Scalar>{Parameter<Scalar>(name + ".weight", Tensor<Scalar>::constant(Shape{cout, cin, 1, 1}, v)),
                             Parameter<Scalar>(name + ".bias", Tensor<Scalar>::zeros(Shape{1, 1, 1, cout}))};
  };

  int cin = config.input_channels;
  for (int s = 0; s < 5; ++s) {
    const int cout = config.stage_channels[static_cast<std::size_t>(s)];
    for (int k = 0; k < config.convs_per_stage[static_cast<std::size_t>(s)]; ++k) {
      const double scale = config.he_backbone ? std::sqrt(2.0 / (9.0 * cin)) / config.init_std : 1.0;
      p.backbone[static_cast<std::size_t>(s)].push_back(
          gaussian_conv("conv" + std::to_string(s + 1) + "_" + std::to_string(k + 1), cout, cin, 3, scale));
      cin = cout;
    }
  }
  if (config.pyramid) {
    int higher = config.stage_channels[4];
    for (int level = 4; level >= 1; --level) {
      const int lower = config.stage_channels[static_cast<std::size_t>(level - 1)];
      const int cout = config.merge_channels[static_cast<std::size_t>(4 - level)];
      p.pyramid.push_back(gaussian_conv("merge" + std::to_string(level), cout, higher + lower, 1));
      higher = cout;
    }
  }
  for (int m = 1; m <= kNumSides; ++m)
    p.side[static_cast<std::size_t>(m - 1)] =
        constant_conv("side" + std::to_string(m), 1, config.level_channels(m), Scalar(0));
  p.fusion = constant_conv("fuse", 1, kNumSides, Scalar(0.2));
  const std::array<int, 4> factors{2, 4, 8, 16};
  for (std::size_t i = 0; i < 4; ++i)
    p.upsample[i] = Parameter<Scalar>("upsample" + std::to_string(factors[i]) + ".kernel",
                                      kernels::bilinear_kernel<Scalar>(factors[i]), false);
  return p;
}

/// Graph handles produced by one forward pass.
template <typename Scalar>
struct ForwardResult {
  std::array<Var<Scalar>, 5> stages;
  /// Features feeding each side network (pyramid outputs; level 5 is stage 5).
  std::array<Var<Scalar>, 5> levels;
  std::array<Var<Scalar>, kNumSides> side_activations;
  Var<Scalar> fused_activation;
};

/// Values of one forward pass at input resolution.
template <typename Scalar>
struct PredictionSet {
  std::array<Tensor<Scalar>, kNumSides> side_activations;
  std::array<Tensor<Scalar>, kNumSides> side_probs;
  Tensor<Scalar> fused_activation;
  Tensor<Scalar> fused_prob;

  /// Builds the probability maps from activations.
  static PredictionSet from_activations(std::array<Tensor<Scalar>, kNumSides> sides, Tensor<Scalar> fused) {
    PredictionSet p;
    p.side_activations = std::move(sides);
    for (std::size_t m = 0; m < kNumSides; ++m) p.side_probs[m] = kernels::sigmoid(p.side_activations[m]);
    p.fused_activation = std::move(fused);
    p.fused_prob = kernels::sigmoid(p.fused_activation);
    return p;
  }
};

namespace detail {

template <typename Scalar, typename P>
Var<Scalar> bind(Graph<Scalar>& g, P& p) {
  if constexpr (std::is_const_v<P>)
    return g.constant(p.value);
  else
    return g.param(p);
}

}  // namespace detail

inline void check_input_extent(int h, int w) {
  if (h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0) {
    const int ph = (16 - h % 16) % 16, pw = (16 - w % 16) % 16;
    throw ShapeError("input " + std::to_string(h) + "x" + std::to_string(w) +
                     " must be divisible by 16; pad by " + std::to_string(ph) + " rows and " +
                     std::to_string(pw) + " columns");
  }
}

/// Runs conv stages 1..5 and returns their feature maps (stage m at H/2^(m-1)).
template <typename Scalar, typename Params>
std::array<Var<Scalar>, 5> build_backbone(Graph<Scalar>& g, Params& params, Var<Scalar> image) {
  const auto& cfg = params.config;
  const Shape s = image.shape();
  check_input_extent(s.h, s.w);
  if (s.c != cfg.input_channels)
    throw ShapeError("image has " + std::to_string(s.c) + " channels, model expects " +
                     std::to_string(cfg.input_channels));
  std::array<Var<Scalar>, 5> stages;
  Var<Scalar> x = image;
  for (std::size_t st = 0; st < 5; ++st) {
    if (st > 0) x = maxpool2(x);
    for (auto& layer : params.backbone[st])
      x = relu(conv2d(x, detail::bind(g, layer.weight), detail::bind(g, layer.bias), 1, 1));
    stages[st] = x;
  }
  return stages;
}

/// Feature merging unit: 2x bilinear upsample of `higher`, channel concat with
/// `lower`, 1x1 convolution.
template <typename Scalar, typename Layer>
Var<Scalar> merge_features(Graph<Scalar>& g, Var<Scalar> higher, Var<Scalar> lower, Layer& layer,
                           const Tensor<Scalar>& kernel2) {
  const Shape hs = higher.shape(), ls = lower.shape();
  if (hs.h * 2 != ls.h || hs.w * 2 != ls.w)
    throw ShapeError("merge_features: higher " + hs.str() + " must be half the extent of lower " + ls.str());
  Var<Scalar> up = bilinear_upsample(higher, kernel2, 2, ls.h, ls.w);
  return conv2d(concat_channels(up, lower), detail::bind(g, layer.weight), detail::bind(g, layer.bias));
}

/// Full forward pass. With a non-const `params`, learnable weights are bound so
/// that Graph::backward accumulates into Parameter::grad.
template <typename Scalar, typename Params>
ForwardResult<Scalar> forward(Graph<Scalar>& g, Params& params, const Tensor<Scalar>& image) {
  ForwardResult<Scalar> r;
  const auto& cfg = params.config;
  Tensor<Scalar> centred = image;
  centred.array() -= static_cast<Scalar>(cfg.input_mean);
  Var<Scalar> x = g.constant(std::move(centred));
  const int h = image.shape().h, w = image.shape().w;
  r.stages = build_backbone(g, params, x);

  r.levels[4] = r.stages[4];
  for (int level = 4; level >= 1; --level) {
    const auto li = static_cast<std::size_t>(level - 1);
    if (cfg.pyramid)
      r.levels[li] = merge_features(g, r.levels[li + 1], r.stages[li], params.pyramid[static_cast<std::size_t>(4 - level)],
                                    params.upsample_kernel(2));
    else
      r.levels[li] = r.stages[li];
  }

  for (int m = 1; m <= kNumSides; ++m) {
    const auto mi = static_cast<std::size_t>(m - 1);
    auto& cls = params.side[mi];
    Var<Scalar> a = conv2d(r.levels[mi], detail::bind(g, cls.weight), detail::bind(g, cls.bias));
    const int factor = 1 << (m - 1);
    r.side_activations[mi] =
        factor == 1 ? a : bilinear_upsample(a, params.upsample_kernel(factor), factor, h, w);
  }

  Var<Scalar> stacked = r.side_activations[0];
  for (std::size_t m = 1; m < kNumSides; ++m) stacked = concat_channels(stacked, r.side_activations[m]);
  r.fused_activation = conv2d(stacked, detail::bind(g, params.fusion.weight), detail::bind(g, params.fusion.bias));
  return r;
}

template <typename Scalar>
PredictionSet<Scalar> to_prediction_set(const ForwardResult<Scalar>& r) {
  std::array<Tensor<Scalar>, kNumSides> sides;
  for (std::size_t m = 0; m < kNumSides; ++m) sides[m] = r.side_activations[m].value();
  return PredictionSet<Scalar>::from_activations(std::move(sides), r.fused_activation.value());
}

/// Inference on one image whose extents are multiples of 16.
template <typename Scalar>
PredictionSet<Scalar> predict(const ModelParams<Scalar>& params, const Tensor<Scalar>& image) {
  Graph<Scalar> g;
  return to_prediction_set(forward(g, params, image));
}

}  // namespace crackbench
