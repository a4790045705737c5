#include "crackbench/trainer.hpp"

#include "crackbench/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <random>

namespace crackbench {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(lr >= 0) || !std::isfinite(lr)) throw std::invalid_argument("train: lr must be finite and >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("train: momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (total_iters < 0) throw std::invalid_argument("train: total_iters must be >= 0");
  if (lr_drop_every < 1) throw std::invalid_argument("train: lr_drop_every must be >= 1");
  if (!(lr_drop_factor >= 1)) throw std::invalid_argument("train: lr_drop_factor must be >= 1");
  if (snapshot_every < 1) throw std::invalid_argument("train: snapshot_every must be >= 1");
}

double TrainConfig::lr_at(int iter) const {
  const int drops = (iter - 1) / lr_drop_every;
  return lr / std::pow(lr_drop_factor, drops);
}

void write_loss_trace_csv(std::ostream& os, const std::vector<LossTraceRow>& trace) {
  os << "iteration,lr,side1,side2,side3,side4,side5,fuse,total\n";
  os.precision(9);
  for (const auto& r : trace) {
    os << r.iteration << ',' << r.lr;
    for (double s : r.loss.side_losses) os << ',' << s;
    os << ',' << r.loss.fuse_loss << ',' << r.loss.total << '\n';
  }
}

namespace {

ProbMap plane_to_map(const Tensorf& t, int h, int w) {
  return t.plane(0, 0).topLeftCorner(h, w).cast<double>().array();
}

}  // namespace

TrainResult train(ModelParams<float> params, const std::vector<CrackSample>& dataset, const TrainConfig& config,
                  const LossOptions& loss_options, const TrainHooks& hooks) {
  config.validate();
  TrainResult result;
  std::vector<const CrackSample*> pool;
  for (const auto& s : dataset) {
    if (s.crack_pixels() == 0) {
      ++result.skipped_samples;
      continue;
    }
    check_input_extent(s.height(), s.width());
    pool.push_back(&s);
  }
  if (pool.empty()) throw std::invalid_argument("train: dataset has no samples with crack pixels");

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  const auto all = params.all();
  SgdState<float> state;
  std::optional<Snapshot> last_good;

  for (int it = 1; it <= config.total_iters; ++it) {
    params.zero_grad();
    LossBreakdown<double> mean{};
    const float seed = 1.0f / static_cast<float>(config.batch_size);
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const CrackSample& s = *pool[order[cursor++]];
      Graph<float> g;
      auto fr = forward(g, params, s.image);
      if (!fr.fused_activation.value().all_finite())
        throw TrainingDiverged("training diverged at iteration " + std::to_string(it) + " (non-finite activations)",
                               it, last_good, result.trace);
      auto lg = total_loss(fr, s.mask, loss_options);
      const auto br = lg.breakdown(s.mask);
      for (std::size_t m = 0; m < kNumSides; ++m) mean.side_losses[m] += br.side_losses[m] / config.batch_size;
      mean.fuse_loss += br.fuse_loss / config.batch_size;
      mean.total += br.total / config.batch_size;
      mean.beta += br.beta / config.batch_size;
      if (!std::isfinite(br.total)) break;
      g.backward(lg.total, seed);
    }
    const double lr = config.lr_at(it);
    LossTraceRow row{it, lr, mean};
    if (!std::isfinite(mean.total))
      throw TrainingDiverged("training diverged at iteration " + std::to_string(it) + " (total loss is not finite)", it,
                             last_good, result.trace);
    result.trace.push_back(row);
    if (hooks.on_iteration) hooks.on_iteration(row);

    try {
      sgd_step(all, state, lr, config.momentum, config.weight_decay);
    } catch (const std::runtime_error& e) {
      throw TrainingDiverged(std::string("iteration ") + std::to_string(it) + ": " + e.what(), it, last_good,
                             result.trace);
    }

    if (it % config.snapshot_every == 0 || it == config.total_iters) {
      Snapshot snap{it, params, std::nullopt};
      for (auto* p : snap.params.all()) p->zero_grad();
      if (hooks.on_snapshot) hooks.on_snapshot(snap);
      last_good = snap;
      result.snapshots.push_back(std::move(snap));
    }
  }
  return result;
}

double dataset_aiu(const ModelParams<float>& params, const std::vector<CrackSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("dataset_aiu: empty dataset");
  double sum = 0;
  for (const auto& s : samples) sum += metrics::aiu(predict_image(params, s.image).fused, s.mask);
  return sum / double(samples.size());
}

std::size_t argmax_late_tie(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("argmax_late_tie: no values");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] >= values[best]) best = i;
  return best;
}

Selection select_best_model(std::vector<Snapshot>& snapshots, const std::vector<CrackSample>& val) {
  if (snapshots.empty()) throw std::invalid_argument("select_best_model: no snapshots");
  if (val.empty()) throw std::invalid_argument("select_best_model: empty validation set");
  Selection sel;
  std::vector<double> aius;
  for (auto& s : snapshots) {
    s.val_aiu = dataset_aiu(s.params, val);
    aius.push_back(*s.val_aiu);
    sel.aiu_curve.emplace_back(s.iteration, *s.val_aiu);
  }
  sel.index = argmax_late_tie(aius);
  return sel;
}

Tensorf pad_to_multiple(const Tensorf& image, int multiple) {
  const Shape& s = image.shape();
  const int h = (s.h + multiple - 1) / multiple * multiple, w = (s.w + multiple - 1) / multiple * multiple;
  if (h == s.h && w == s.w) return image;
  Tensorf out(Shape{s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(n, c, y, x) = image(n, c, std::min(y, s.h - 1), std::min(x, s.w - 1));
  return out;
}

ImagePrediction predict_image(const ModelParams<float>& params, const Tensorf& image) {
  const int h = image.shape().h, w = image.shape().w;
  const Tensorf padded = pad_to_multiple(image);
  const auto ps = predict(params, padded);
  ImagePrediction out;
  out.padded = padded.shape() != image.shape();
  out.fused = plane_to_map(ps.fused_prob, h, w);
  for (std::size_t m = 0; m < kNumSides; ++m) out.sides[m] = plane_to_map(ps.side_probs[m], h, w);
  return out;
}

}  // namespace crackbench
