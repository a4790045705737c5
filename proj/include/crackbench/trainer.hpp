#pragma once

#include "crackbench/data_io.hpp"
#include "crackbench/loss.hpp"
#include "crackbench/model.hpp"
#include "crackbench/serialize.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace crackbench {

struct TrainConfig {
  int batch_size = 10;
  double lr = 1e-8;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  int total_iters = 40000;
  int lr_drop_every = 10000;
  double lr_drop_factor = 10.0;
  int snapshot_every = 4000;
  std::uint64_t seed = 0;

  static TrainConfig paper() { return TrainConfig{}; }
  /// Desk-scale recipe used for the synthetic overfit runs.
  static TrainConfig tiny() {
    TrainConfig c;
    c.batch_size = 1;
    c.lr = 5e-5;
    c.total_iters = 500;
    c.lr_drop_every = 300;
    c.snapshot_every = 100;
    return c;
  }

  void validate() const;
  /// Learning rate in effect at 1-based iteration `iter`.
  [[nodiscard]] double lr_at(int iter) const;
};

/// Momentum buffers, one per parameter, created lazily.
template <typename Scalar>
struct SgdState {
  std::vector<Tensor<Scalar>> velocity;
};

/// v <- momentum * v + grad + weight_decay * w;  w <- w - lr * v.
/// Frozen parameters are skipped entirely. Non-finite gradients throw before any
/// parameter is modified.
template <typename Scalar>
void sgd_step(const std::vector<Parameter<Scalar>*>& params, SgdState<Scalar>& state, double lr, double momentum,
              double weight_decay) {
  for (const auto* p : params)
    if (p->learnable && !p->grad.all_finite())
      throw std::runtime_error("non-finite gradient in parameter '" + p->name + "'");
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto* p : params) state.velocity.push_back(Tensor<Scalar>::zeros(p->value.shape()));
  }
  const auto mu = static_cast<Scalar>(momentum), wd = static_cast<Scalar>(weight_decay), eta = static_cast<Scalar>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<Scalar>& p = *params[i];
    if (!p.learnable) continue;
    auto& v = state.velocity[i].array();
    v = mu * v + p.grad.array() + wd * p.value.array();
    p.value.array() -= eta * v;
  }
}

struct LossTraceRow {
  int iteration = 0;
  double lr = 0;
  LossBreakdown<double> loss;  // batch mean
};

void write_loss_trace_csv(std::ostream& os, const std::vector<LossTraceRow>& trace);

struct TrainResult {
  std::vector<Snapshot> snapshots;
  std::vector<LossTraceRow> trace;
  int skipped_samples = 0;
};

/// Thrown when the total loss turns non-finite. Carries the newest snapshot
/// taken before the failure (if any) and the trace so far.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, int iteration, std::optional<Snapshot> last_good,
                   std::vector<LossTraceRow> trace)
      : std::runtime_error(what), iteration(iteration), last_good(std::move(last_good)), trace(std::move(trace)) {}
  int iteration;
  std::optional<Snapshot> last_good;
  std::vector<LossTraceRow> trace;
};

struct TrainHooks {
  /// Called after every iteration with the batch-mean trace row.
  std::function<void(const LossTraceRow&)> on_iteration;
  std::function<void(const Snapshot&)> on_snapshot;
};

/// Mini-batch SGD over `dataset`; gradients are averaged over the batch.
/// Samples without crack pixels are dropped first. Snapshots are taken every
/// `snapshot_every` iterations and after the last one.
TrainResult train(ModelParams<float> params, const std::vector<CrackSample>& dataset, const TrainConfig& config,
                  const LossOptions& loss_options = {}, const TrainHooks& hooks = {});

/// Mean AIU of the fused map over a dataset.
double dataset_aiu(const ModelParams<float>& params, const std::vector<CrackSample>& samples);

struct Selection {
  std::size_t index = 0;
  std::vector<std::pair<int, double>> aiu_curve;  // (iteration, validation AIU)
};

/// Picks the snapshot with the highest validation AIU (ties -> later
/// iteration) and fills each snapshot's val_aiu.
Selection select_best_model(std::vector<Snapshot>& snapshots, const std::vector<CrackSample>& val);

/// Same selection rule over precomputed AIU values.
std::size_t argmax_late_tie(const std::vector<double>& values);

/// Replicate-pads an image to multiples of 16.
Tensorf pad_to_multiple(const Tensorf& image, int multiple = 16);

/// Fused probability map (and side maps) at the image's original extent.
struct ImagePrediction {
  ProbMap fused;
  std::array<ProbMap, kNumSides> sides;
  bool padded = false;
};
ImagePrediction predict_image(const ModelParams<float>& params, const Tensorf& image);

}  // namespace crackbench
