#pragma once

// Crack-map evaluation: AIU over a threshold sweep, IU / PR curves, and the
// ODS / OIS F-measures computed on thinned maps with tolerance matching.

#include "crackbench/tensor.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace crackbench::metrics {

inline constexpr int kNumThresholds = 99;

/// Threshold k of the sweep, k = 0..98 -> 0.01..0.99.
inline double threshold(int k) { return (k + 1) / 100.0; }

/// pred >= t, as a binary map.
BinaryMap binarize(const ProbMap& pred, double t);

/// N_pg / (N_p + N_g - N_pg) after binarizing pred at t. Empty union -> 1.
double iu_at_threshold(const ProbMap& pred, const BinaryMap& gt, double t);

/// IU at each of the 99 thresholds.
std::array<double, kNumThresholds> iu_curve(const ProbMap& pred, const BinaryMap& gt);

/// Mean IU over the 99 thresholds.
double aiu(const ProbMap& pred, const BinaryMap& gt);

/// Orientation-based non-maximum suppression. Ridge orientation comes from the
/// Hessian of the sigma = 1 Gaussian-smoothed map (Sobel derivatives); a pixel is
/// zeroed when either interpolated neighbour across the ridge is strictly larger.
ProbMap nms(const ProbMap& pred);

/// Topology-preserving thinning to unit width (8-connected curves). Endpoints and
/// isolated pixels are kept; already thin curves are returned unchanged.
BinaryMap skeletonize(BinaryMap map);

/// NMS, binarize at t, then skeletonize.
BinaryMap nms_thin(const ProbMap& pred, double t);

/// Foreground pixels per skeleton pixel; 1 for maps that are already thin.
double measured_width(const BinaryMap& map);

/// Ground truth is thinned only when its measured width exceeds 1.
BinaryMap thin_ground_truth(const BinaryMap& gt);

enum class ToleranceMode { diagonal, absolute };

struct Tolerance {
  double value = 0.0075;
  ToleranceMode mode = ToleranceMode::diagonal;

  /// Match radius in pixels for an h x w image.
  [[nodiscard]] double radius(int h, int w) const;
};

struct MatchCounts {
  double threshold = 0;
  long tp = 0, fp = 0, fn = 0;

  [[nodiscard]] double precision() const { return tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp); }
  [[nodiscard]] double recall() const { return tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn); }
  [[nodiscard]] double f() const;
};

/// F = 2PR / (P + R), 0 when P + R = 0.
double f_measure(double p, double r);

/// One-to-one matching of prediction pixels to ground-truth pixels within
/// `radius` (Euclidean); tp is the size of a maximum matching.
MatchCounts correspond(const BinaryMap& pred_thin, const BinaryMap& gt_thin, double radius);

/// Match counts at all 99 thresholds for one image.
std::vector<MatchCounts> match_curve(const ProbMap& pred, const BinaryMap& gt, const Tolerance& tol = {});

struct OdsOis {
  double ods = 0;
  double ods_threshold = 0;
  double ois = 0;
};

/// ODS from counts pooled over images at each threshold; OIS as the mean of
/// each image's best F. per_image[i][k] is image i at threshold k.
OdsOis ods_ois(const std::vector<std::vector<MatchCounts>>& per_image);

struct MeanStd {
  double mean = 0;
  double std = 0;
};

/// Arithmetic mean and sample standard deviation (n - 1). Needs >= 2 values.
MeanStd cross_dataset_stats(std::span<const double> values);

struct ImageEval {
  std::string id;
  double aiu = 0;
  std::array<double, kNumThresholds> iu{};
  std::vector<MatchCounts> counts;
};

ImageEval evaluate_image(const std::string& id, const ProbMap& pred, const BinaryMap& gt,
                         const Tolerance& tol = {});

struct CurvePoint {
  double threshold = 0;
  double precision = 0;
  double recall = 0;
  double f = 0;
  double iu = 0;
};

struct MetricReport {
  std::string dataset;
  double aiu = 0;
  std::vector<CurvePoint> curve;  // IU and pooled PR at each threshold
  double ods = 0;
  double ods_threshold = 0;
  double ois = 0;
  int n_images = 0;
  long tp_at_ods = 0, fp_at_ods = 0, fn_at_ods = 0;
};

MetricReport aggregate(const std::string& dataset, const std::vector<ImageEval>& images);

/// `threshold,precision,recall,f,iu` with one row per threshold.
void write_curve_csv(std::ostream& os, const MetricReport& report);

std::string report_json(const MetricReport& report, int indent = 2);

}  // namespace crackbench::metrics
