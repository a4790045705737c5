#include "crackbench/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <tuple>

namespace crackbench::metrics {

namespace {

void check_same_extent(const ProbMap& pred, const BinaryMap& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw std::invalid_argument("prediction " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                                " does not match ground truth " + std::to_string(gt.rows()) + "x" +
                                std::to_string(gt.cols()));
}

double clamped(const ProbMap& m, long y, long x) {
  y = std::clamp<long>(y, 0, m.rows() - 1);
  x = std::clamp<long>(x, 0, m.cols() - 1);
  return m(y, x);
}

ProbMap gaussian_smooth(const ProbMap& in, double sigma) {
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  for (int i = -r; i <= r; ++i) k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double norm = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= norm;

  ProbMap tmp(in.rows(), in.cols()), out(in.rows(), in.cols());
  for (long y = 0; y < in.rows(); ++y)
    for (long x = 0; x < in.cols(); ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * clamped(in, y, x + i);
      tmp(y, x) = s;
    }
  for (long y = 0; y < in.rows(); ++y)
    for (long x = 0; x < in.cols(); ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * clamped(tmp, y + i, x);
      out(y, x) = s;
    }
  return out;
}

// Sobel derivatives with replicated borders, scaled to unit-gradient response.
void sobel(const ProbMap& in, ProbMap& dx, ProbMap& dy) {
  dx.resize(in.rows(), in.cols());
  dy.resize(in.rows(), in.cols());
  for (long y = 0; y < in.rows(); ++y)
    for (long x = 0; x < in.cols(); ++x) {
      const double a = clamped(in, y - 1, x - 1), b = clamped(in, y - 1, x), c = clamped(in, y - 1, x + 1);
      const double d = clamped(in, y, x - 1), f = clamped(in, y, x + 1);
      const double g = clamped(in, y + 1, x - 1), h = clamped(in, y + 1, x), i = clamped(in, y + 1, x + 1);
      dx(y, x) = ((c + 2 * f + i) - (a + 2 * d + g)) / 8.0;
      dy(y, x) = ((g + 2 * h + i) - (a + 2 * b + c)) / 8.0;
    }
}

double interp(const ProbMap& m, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const double ty = y - fy, tx = x - fx;
  const auto iy = static_cast<long>(fy), ix = static_cast<long>(fx);
  return (1 - ty) * ((1 - tx) * clamped(m, iy, ix) + tx * clamped(m, iy, ix + 1)) +
         ty * ((1 - tx) * clamped(m, iy + 1, ix) + tx * clamped(m, iy + 1, ix + 1));
}

// Neighbour offsets in counter-clockwise order starting east: (dy, dx).
constexpr std::array<std::array<int, 2>, 8> kRing{{{0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}}};

std::array<int, 8> ring(const BinaryMap& m, long y, long x) {
  std::array<int, 8> v{};
  for (std::size_t k = 0; k < 8; ++k) {
    const long yy = y + kRing[k][0], xx = x + kRing[k][1];
    v[k] = (yy >= 0 && yy < m.rows() && xx >= 0 && xx < m.cols() && m(yy, xx)) ? 1 : 0;
  }
  return v;
}

// Yokoi 8-connectivity number; a foreground pixel with value 1 is simple.
int connectivity8(const std::array<int, 8>& v) {
  int n = 0;
  for (std::size_t k = 0; k < 8; k += 2) {
    const int a = 1 - v[k], b = 1 - v[(k + 1) % 8], c = 1 - v[(k + 2) % 8];
    n += a - a * b * c;
  }
  return n;
}

// Hopcroft-Karp maximum-cardinality matching; left vertices are indices of adj.
long max_matching(const std::vector<std::vector<int>>& adj, int n_right) {
  const int n_left = static_cast<int>(adj.size());
  constexpr int kFree = -1;
  std::vector<int> match_l(static_cast<std::size_t>(n_left), kFree), match_r(static_cast<std::size_t>(n_right), kFree);
  std::vector<int> dist(static_cast<std::size_t>(n_left)), queue;
  std::vector<std::size_t> next(static_cast<std::size_t>(n_left));
  long size = 0;
  while (true) {
    // BFS layering from free left vertices.
    queue.clear();
    for (int u = 0; u < n_left; ++u) {
      dist[std::size_t(u)] = match_l[std::size_t(u)] == kFree ? 0 : -1;
      if (dist[std::size_t(u)] == 0) queue.push_back(u);
    }
    bool found = false;
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      const int u = queue[qi];
      for (int v : adj[std::size_t(u)]) {
        const int w = match_r[std::size_t(v)];
        if (w == kFree)
          found = true;
        else if (dist[std::size_t(w)] < 0) {
          dist[std::size_t(w)] = dist[std::size_t(u)] + 1;
          queue.push_back(w);
        }
      }
    }
    if (!found) break;
    // Iterative DFS along the layers.
    std::fill(next.begin(), next.end(), 0);
    std::vector<int> stack;
    for (int root = 0; root < n_left; ++root) {
      if (match_l[std::size_t(root)] != kFree) continue;
      stack.assign(1, root);
      while (!stack.empty()) {
        const int u = stack.back();
        auto& it = next[std::size_t(u)];
        if (it == adj[std::size_t(u)].size()) {
          dist[std::size_t(u)] = -1;  // dead end
          stack.pop_back();
          continue;
        }
        const int v = adj[std::size_t(u)][it++];
        const int w = match_r[std::size_t(v)];
        if (w == kFree) {
          // Augment along the stack: each stack vertex takes the edge it just tried.
          for (std::size_t k = stack.size(); k-- > 0;) {
            const int a = stack[k];
            const int b = adj[std::size_t(a)][next[std::size_t(a)] - 1];
            match_r[std::size_t(b)] = a;
            match_l[std::size_t(a)] = b;
          }
          ++size;
          stack.clear();
        } else if (dist[std::size_t(w)] == dist[std::size_t(u)] + 1) {
          stack.push_back(w);
        }
      }
    }
  }
  return size;
}

}  // namespace

BinaryMap binarize(const ProbMap& pred, double t) { return (pred >= t).cast<std::uint8_t>(); }

double iu_at_threshold(const ProbMap& pred, const BinaryMap& gt, double t) {
  check_same_extent(pred, gt);
  long inter = 0, np = 0, ng = 0;
  const double* p = pred.data();
  const std::uint8_t* g = gt.data();
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const bool on = p[i] >= t;
    np += on;
    ng += g[i] != 0;
    inter += on && g[i];
  }
  const long uni = np + ng - inter;
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

std::array<double, kNumThresholds> iu_curve(const ProbMap& pred, const BinaryMap& gt) {
  std::array<double, kNumThresholds> out{};
  for (int k = 0; k < kNumThresholds; ++k) out[static_cast<std::size_t>(k)] = iu_at_threshold(pred, gt, threshold(k));
  return out;
}

double aiu(const ProbMap& pred, const BinaryMap& gt) {
  const auto c = iu_curve(pred, gt);
  return std::accumulate(c.begin(), c.end(), 0.0) / kNumThresholds;
}

ProbMap nms(const ProbMap& pred) {
  ProbMap smooth = gaussian_smooth(pred, 1.0);
  ProbMap gx, gy, gxx, gxy, gyx, gyy;
  sobel(smooth, gx, gy);
  sobel(gx, gxx, gxy);
  sobel(gy, gyx, gyy);
  ProbMap out = pred;
  for (long y = 0; y < pred.rows(); ++y)
    for (long x = 0; x < pred.cols(); ++x) {
      const double e = pred(y, x);
      if (e <= 0) continue;
      const double hxy = 0.5 * (gxy(y, x) + gyx(y, x));
      // Across-ridge direction: eigenvector of the smaller Hessian eigenvalue.
      const double theta = 0.5 * std::atan2(2 * hxy, gxx(y, x) - gyy(y, x)) + M_PI / 2;
      const double cx = std::cos(theta), cy = std::sin(theta);
      const double e0 = interp(pred, y + cy, x + cx);
      const double e1 = interp(pred, y - cy, x - cx);
      if (e < e0 || e < e1) out(y, x) = 0;
    }
  return out;
}

BinaryMap skeletonize(BinaryMap map) {
  if (!is_binary(map)) throw std::invalid_argument("skeletonize: map is not binary");
  // Directional sub-passes: north, south, east, west border pixels.
  constexpr std::array<std::array<int, 2>, 4> kBorder{{{-1, 0}, {1, 0}, {0, 1}, {0, -1}}};
  std::vector<std::pair<long, long>> candidates;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& dir : kBorder) {
      candidates.clear();
      for (long y = 0; y < map.rows(); ++y)
        for (long x = 0; x < map.cols(); ++x) {
          if (!map(y, x)) continue;
          const long ny = y + dir[0], nx = x + dir[1];
          const bool border = ny < 0 || ny >= map.rows() || nx < 0 || nx >= map.cols() || !map(ny, nx);
          if (border) candidates.emplace_back(y, x);
        }
      for (const auto& [y, x] : candidates) {
        const auto v = ring(map, y, x);
        const int neighbours = std::accumulate(v.begin(), v.end(), 0);
        if (neighbours < 2) continue;  // endpoint or isolated
        if (connectivity8(v) != 1) continue;
        map(y, x) = 0;
        changed = true;
      }
    }
  }
  return map;
}

BinaryMap nms_thin(const ProbMap& pred, double t) { return skeletonize(binarize(nms(pred), t)); }

double measured_width(const BinaryMap& map) {
  const long n = (map != 0).count();
  if (n == 0) return 0;
  const long s = (skeletonize(map) != 0).count();
  return double(n) / double(std::max(s, 1L));
}

BinaryMap thin_ground_truth(const BinaryMap& gt) {
  if (measured_width(gt) > 1.0) return skeletonize(gt);
  return gt;
}

double Tolerance::radius(int h, int w) const {
  if (value < 0) throw std::invalid_argument("tolerance must be non-negative");
  if (mode == ToleranceMode::absolute) return value;
  return value * std::sqrt(double(h) * h + double(w) * w);
}

double f_measure(double p, double r) { return p + r == 0 ? 0.0 : 2 * p * r / (p + r); }

double MatchCounts::f() const { return f_measure(precision(), recall()); }

MatchCounts correspond(const BinaryMap& pred_thin, const BinaryMap& gt_thin, double radius) {
  if (pred_thin.rows() != gt_thin.rows() || pred_thin.cols() != gt_thin.cols())
    throw std::invalid_argument("correspond: map extents differ");
  const long h = pred_thin.rows(), w = pred_thin.cols();
  const long reach = static_cast<long>(std::floor(radius));
  const double r2 = radius * radius;

  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gt_index(h, w);
  gt_index.setConstant(-1);
  int n_gt = 0, n_pred = 0;
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      if (gt_thin(y, x)) gt_index(y, x) = n_gt++;

  // Candidate gt pixels per prediction pixel, nearest first.
  std::vector<std::vector<int>> adj;
  std::vector<std::pair<long, int>> near;
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      if (!pred_thin(y, x)) continue;
      ++n_pred;
      near.clear();
      for (long dy = -reach; dy <= reach; ++dy) {
        const long yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (long dx = -reach; dx <= reach; ++dx) {
          const long xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          const long d2 = dy * dy + dx * dx;
          if (double(d2) > r2) continue;
          const int gid = gt_index(yy, xx);
          if (gid >= 0) near.emplace_back(d2, gid);
        }
      }
      std::sort(near.begin(), near.end());
      auto& list = adj.emplace_back();
      for (const auto& [d2, gid] : near) list.push_back(gid);
    }
  const long tp = max_matching(adj, n_gt);
  MatchCounts c;
  c.tp = tp;
  c.fp = n_pred - tp;
  c.fn = n_gt - tp;
  return c;
}

std::vector<MatchCounts> match_curve(const ProbMap& pred, const BinaryMap& gt, const Tolerance& tol) {
  check_same_extent(pred, gt);
  const BinaryMap gt_thin = thin_ground_truth(gt);
  const ProbMap suppressed = nms(pred);
  const double radius = tol.radius(static_cast<int>(pred.rows()), static_cast<int>(pred.cols()));
  std::vector<MatchCounts> out;
  out.reserve(kNumThresholds);
  for (int k = 0; k < kNumThresholds; ++k) {
    const double t = threshold(k);
    MatchCounts c = correspond(skeletonize(binarize(suppressed, t)), gt_thin, radius);
    c.threshold = t;
    out.push_back(c);
  }
  return out;
}

OdsOis ods_ois(const std::vector<std::vector<MatchCounts>>& per_image) {
  if (per_image.empty()) throw std::invalid_argument("ods_ois: empty dataset");
  const std::size_t nt = per_image.front().size();
  if (nt == 0) throw std::invalid_argument("ods_ois: no thresholds");
  for (const auto& img : per_image)
    if (img.size() != nt) throw std::invalid_argument("ods_ois: images have different threshold counts");

  OdsOis r;
  r.ods = -1;
  for (std::size_t k = 0; k < nt; ++k) {
    MatchCounts pooled;
    for (const auto& img : per_image) {
      pooled.tp += img[k].tp;
      pooled.fp += img[k].fp;
      pooled.fn += img[k].fn;
    }
    const double f = pooled.f();
    if (f > r.ods) {
      r.ods = f;
      r.ods_threshold = per_image.front()[k].threshold;
    }
  }
  double sum = 0;
  for (const auto& img : per_image) {
    double best = 0;
    for (const auto& c : img) best = std::max(best, c.f());
    sum += best;
  }
  r.ois = sum / double(per_image.size());
  return r;
}

MeanStd cross_dataset_stats(std::span<const double> values) {
  if (values.size() < 2) throw std::invalid_argument("cross_dataset_stats: need at least 2 datasets for a std");
  const double n = double(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1))};
}

ImageEval evaluate_image(const std::string& id, const ProbMap& pred, const BinaryMap& gt, const Tolerance& tol) {
  ImageEval e;
  e.id = id;
  e.iu = iu_curve(pred, gt);
  e.aiu = std::accumulate(e.iu.begin(), e.iu.end(), 0.0) / kNumThresholds;
  e.counts = match_curve(pred, gt, tol);
  return e;
}

MetricReport aggregate(const std::string& dataset, const std::vector<ImageEval>& images) {
  if (images.empty()) throw std::invalid_argument("aggregate: no images for dataset '" + dataset + "'");
  MetricReport r;
  r.dataset = dataset;
  r.n_images = static_cast<int>(images.size());
  std::vector<std::vector<MatchCounts>> counts;
  for (const auto& img : images) {
    r.aiu += img.aiu;
    counts.push_back(img.counts);
  }
  r.aiu /= double(images.size());

  for (int k = 0; k < kNumThresholds; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    MatchCounts pooled;
    double iu = 0;
    for (const auto& img : images) {
      pooled.tp += img.counts[ks].tp;
      pooled.fp += img.counts[ks].fp;
      pooled.fn += img.counts[ks].fn;
      iu += img.iu[ks];
    }
    r.curve.push_back({threshold(k), pooled.precision(), pooled.recall(), pooled.f(), iu / double(images.size())});
  }
  const OdsOis oo = ods_ois(counts);
  r.ods = oo.ods;
  r.ods_threshold = oo.ods_threshold;
  r.ois = oo.ois;
  const auto k = static_cast<std::size_t>(std::lround(oo.ods_threshold * 100) - 1);
  for (const auto& img : images) {
    r.tp_at_ods += img.counts[k].tp;
    r.fp_at_ods += img.counts[k].fp;
    r.fn_at_ods += img.counts[k].fn;
  }
  return r;
}

void write_curve_csv(std::ostream& os, const MetricReport& report) {
  os << "threshold,precision,recall,f,iu\n";
  os.precision(17);
  for (const auto& p : report.curve)
    os << p.threshold << ',' << p.precision << ',' << p.recall << ',' << p.f << ',' << p.iu << '\n';
}

std::string report_json(const MetricReport& r, int indent) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset;
  j["n_images"] = r.n_images;
  j["aiu"] = r.aiu;
  j["ods"] = r.ods;
  j["ods_threshold"] = r.ods_threshold;
  j["ois"] = r.ois;
  j["counts_at_ods"] = {{"tp", r.tp_at_ods}, {"fp", r.fp_at_ods}, {"fn", r.fn_at_ods}};
  auto iu = nlohmann::ordered_json::array();
  auto pr = nlohmann::ordered_json::array();
  for (const auto& p : r.curve) {
    iu.push_back({p.threshold, p.iu});
    pr.push_back({p.threshold, p.precision, p.recall});
  }
  j["iu_curve"] = std::move(iu);
  j["pr_curve"] = std::move(pr);
  return j.dump(indent);
}

}  // namespace crackbench::metrics
