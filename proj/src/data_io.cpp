#include "crackbench/data_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

namespace crackbench {

namespace fs = std::filesystem;

BinaryMap binarize_mask(const Image8& mask) {
  BinaryMap m(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      // Colour masks count as crack when any channel exceeds 127.
      bool on = false;
      for (int c = 0; c < mask.channels; ++c)
        on = on || mask.pixels[(static_cast<std::size_t>(y) * mask.width + x) * mask.channels + c] > 127;
      m(y, x) = on ? 1 : 0;
    }
  return m;
}

Image8 to_image8(const Tensorf& image) {
  const Shape& s = image.shape();
  Image8 img{s.h, s.w, s.c, std::vector<std::uint8_t>(static_cast<std::size_t>(s.h) * s.w * s.c)};
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < s.c; ++c)
        img.pixels[(static_cast<std::size_t>(y) * s.w + x) * s.c + c] =
            static_cast<std::uint8_t>(std::lround(std::clamp(image(0, c, y, x), 0.0f, 1.0f) * 255.0f));
  return img;
}

Image8 mask_to_image8(const BinaryMap& mask) {
  Image8 img{static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), 1, {}};
  img.pixels.resize(static_cast<std::size_t>(mask.size()));
  for (Eigen::Index i = 0; i < mask.size(); ++i) img.pixels[static_cast<std::size_t>(i)] = mask.data()[i] ? 255 : 0;
  return img;
}

Image8 prob_to_image8(const ProbMap& prob) {
  Image8 img{static_cast<int>(prob.rows()), static_cast<int>(prob.cols()), 1, {}};
  img.pixels.resize(static_cast<std::size_t>(prob.size()));
  for (Eigen::Index i = 0; i < prob.size(); ++i)
    img.pixels[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(prob.data()[i], 0.0, 1.0)));
  return img;
}

ProbMap image8_to_prob(const Image8& img) {
  if (img.channels != 1) throw std::invalid_argument("probability maps must be single-channel");
  ProbMap p(img.height, img.width);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = img.pixels[static_cast<std::size_t>(i)] / 255.0;
  return p;
}

void write_pfm(const fs::path& path, const ProbMap& prob) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "Pf\n" << prob.cols() << ' ' << prob.rows() << "\n-1.0\n";
  for (Eigen::Index y = prob.rows() - 1; y >= 0; --y)
    for (Eigen::Index x = 0; x < prob.cols(); ++x) {
      const auto v = static_cast<float>(prob(y, x));
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      const char le[4] = {char(bits & 0xff), char(bits >> 8 & 0xff), char(bits >> 16 & 0xff), char(bits >> 24)};
      out.write(le, 4);
    }
}

ProbMap read_pfm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string magic;
  long w = 0, h = 0;
  double scale = 0;
  in >> magic >> w >> h >> scale;
  in.get();  // single whitespace before the raster
  if (!in || magic != "Pf" || w < 1 || h < 1)
    throw std::runtime_error("'" + path.string() + "' is not a grayscale PFM file");
  if (scale >= 0) throw std::runtime_error("'" + path.string() + "': big-endian PFM is not supported");
  ProbMap p(h, w);
  for (long y = h - 1; y >= 0; --y)
    for (long x = 0; x < w; ++x) {
      unsigned char le[4];
      if (!in.read(reinterpret_cast<char*>(le), 4)) throw std::runtime_error("'" + path.string() + "' is truncated");
      const std::uint32_t bits = le[0] | le[1] << 8 | le[2] << 16 | std::uint32_t(le[3]) << 24;
      float v;
      std::memcpy(&v, &bits, 4);
      p(y, x) = v;
    }
  return p;
}

Tensorf image8_to_tensor(const Image8& img) {
  Tensorf t(Shape{1, img.channels, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        t(0, c, y, x) = img.pixels[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] / 255.0f;
  return t;
}

CrackSample load_sample(const fs::path& image_path, const fs::path& mask_path) {
  const Image8 img = read_png(image_path);
  const Image8 mask = read_png(mask_path);
  if (img.height != mask.height || img.width != mask.width)
    throw std::runtime_error("image '" + image_path.string() + "' is " + std::to_string(img.width) + "x" +
                             std::to_string(img.height) + " but mask '" + mask_path.string() + "' is " +
                             std::to_string(mask.width) + "x" + std::to_string(mask.height));
  CrackSample s;
  s.id = image_path.stem().string();
  s.image = image8_to_tensor(img);
  s.mask = binarize_mask(mask);
  return s;
}

void save_sample(const CrackSample& sample, const fs::path& image_path, const fs::path& mask_path) {
  write_png(image_path, to_image8(sample.image));
  write_png(mask_path, mask_to_image8(sample.mask));
}

CrackSample crop(const CrackSample& sample, int y0, int x0, int height, int width, std::string id) {
  const Shape& s = sample.image.shape();
  if (y0 < 0 || x0 < 0 || y0 + height > s.h || x0 + width > s.w)
    throw ShapeError("crop window outside image " + s.str());
  CrackSample out;
  out.id = std::move(id);
  out.image = Tensorf(Shape{1, s.c, height, width});
  for (int c = 0; c < s.c; ++c) out.image.plane(0, c) = sample.image.plane(0, c).block(y0, x0, height, width);
  out.mask = sample.mask.block(y0, x0, height, width);
  return out;
}

std::vector<CropRegion> grid_regions(const CrackSample& sample, const CropGrid& grid) {
  if (grid.rows < 1 || grid.cols < 1) throw std::invalid_argument("crop grid must be at least 1x1");
  const int ch = sample.height() / grid.rows, cw = sample.width() / grid.cols;
  if (ch == 0 || cw == 0) throw std::invalid_argument("crop grid finer than the image");
  std::vector<CropRegion> out;
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) {
      CropRegion reg{r, c, r * ch, c * cw, ch, cw, 0, false};
      reg.crack_pixels = static_cast<long>((sample.mask.block(reg.y0, reg.x0, ch, cw) != 0).count());
      reg.kept = reg.crack_pixels > grid.min_crack_pixels;
      out.push_back(reg);
    }
  return out;
}

std::vector<CrackSample> crop_regions(const CrackSample& sample, const CropGrid& grid) {
  std::vector<CrackSample> out;
  for (const auto& reg : grid_regions(sample, grid))
    if (reg.kept)
      out.push_back(crop(sample, reg.y0, reg.x0, reg.height, reg.width,
                         sample.id + "_r" + std::to_string(reg.row) + "c" + std::to_string(reg.col)));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic cracks

void SynthParams::validate(int size) const {
  if (size < 32) throw std::invalid_argument("synth_crack: size must be >= 32, got " + std::to_string(size));
  if (!(width > 0) || width > size / 2.0) throw std::invalid_argument("synth_crack: width must be in (0, size/2]");
  if (!(curvature >= 0) || curvature > 1.5) throw std::invalid_argument("synth_crack: curvature must be in [0, 1.5]");
  if (!(contrast >= 0) || contrast > 1) throw std::invalid_argument("synth_crack: contrast must be in [0, 1]");
  if (!(noise >= 0) || noise > 1) throw std::invalid_argument("synth_crack: noise must be in [0, 1]");
  if (!(shadow >= 0) || shadow >= 1) throw std::invalid_argument("synth_crack: shadow must be in [0, 1)");
  if (!(texture >= 0) || texture > 0.5) throw std::invalid_argument("synth_crack: texture must be in [0, 0.5]");
}

double SyntheticCrack::path_length() const {
  double len = 0;
  for (std::size_t i = 1; i < path.size(); ++i) len += std::hypot(path[i].x - path[i - 1].x, path[i].y - path[i - 1].y);
  return len;
}

namespace {

constexpr double kBackground = 0.6;

double segment_distance(Point2 p, Point2 a, Point2 b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

SyntheticCrack render(std::mt19937_64& rng, int size, std::vector<Point2> path, const SynthParams& params) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  // Smooth value-noise texture on an 8-pixel lattice.
  const int cell = 8, lattice = size / cell + 2;
  std::vector<double> grid(static_cast<std::size_t>(lattice * lattice));
  for (double& g : grid) g = uni(rng) * 2 - 1;
  // Shadow: darken one side of a random line.
  const double sx = uni(rng) * size, sy = uni(rng) * size, sa = uni(rng) * 2 * M_PI;

  const double half = params.width / 2;
  SyntheticCrack out;
  out.path = std::move(path);
  CrackSample& s = out.sample;
  s.image = Tensorf(Shape{1, 1, size, size});
  s.mask = BinaryMap::Zero(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double gx = double(x) / cell, gy = double(y) / cell;
      const int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
      const double tx = gx - ix, ty = gy - iy;
      auto at = [&](int yy, int xx) { return grid[static_cast<std::size_t>(yy * lattice + xx)]; };
      const double tex = (1 - ty) * ((1 - tx) * at(iy, ix) + tx * at(iy, ix + 1)) +
                         ty * ((1 - tx) * at(iy + 1, ix) + tx * at(iy + 1, ix + 1));
      double v = kBackground + params.texture * tex;
      if (params.shadow > 0 && (x - sx) * std::cos(sa) + (y - sy) * std::sin(sa) > 0) v *= 1 - params.shadow;

      double dist = 1e300;
      const Point2 p{x + 0.0, y + 0.0};
      for (std::size_t i = 1; i < out.path.size(); ++i)
        dist = std::min(dist, segment_distance(p, out.path[i - 1], out.path[i]));
      if (out.path.size() == 1) dist = std::hypot(p.x - out.path[0].x, p.y - out.path[0].y);
      if (dist <= half) {
        s.mask(y, x) = 1;
        v -= params.contrast * (1.0 - 0.5 * dist / half);
      }
      s.image(0, 0, y, x) = static_cast<float>(v);
    }
  if (params.noise > 0)
    for (std::ptrdiff_t i = 0; i < s.image.size(); ++i) s.image[i] += static_cast<float>(params.noise * gauss(rng));
  s.image.array() = s.image.array().max(0.0f).min(1.0f);
  return out;
}

}  // namespace

SyntheticCrack synth_crack(std::uint64_t seed, int size, const SynthParams& params) {
  params.validate(size);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Enter from the left or top edge, head roughly across the image.
  const bool horizontal = uni(rng) < 0.5;
  const double margin = 0.2 * size;
  Point2 p = horizontal ? Point2{0.0, margin + uni(rng) * (size - 2 * margin)}
                        : Point2{margin + uni(rng) * (size - 2 * margin), 0.0};
  const double main_heading = horizontal ? 0.0 : M_PI / 2;
  double heading = main_heading + (uni(rng) - 0.5) * 0.8;
  const double step = 2.0;
  std::vector<Point2> path{p};
  for (int i = 0; i < 4 * size; ++i) {
    heading += params.curvature * gauss(rng) * 0.5;
    heading += 0.15 * (main_heading - heading);
    p = Point2{p.x + step * std::cos(heading), p.y + step * std::sin(heading)};
    path.push_back(p);
    if (p.x < -params.width || p.y < -params.width || p.x > size + params.width || p.y > size + params.width) break;
  }
  auto out = render(rng, size, std::move(path), params);
  out.sample.id = "synth_" + std::to_string(seed);
  return out;
}

SyntheticCrack synth_straight_crack(std::uint64_t seed, int size, Point2 from, Point2 to, const SynthParams& params) {
  params.validate(size);
  std::mt19937_64 rng(seed);
  auto out = render(rng, size, {from, to}, params);
  out.sample.id = "straight_" + std::to_string(seed);
  return out;
}

// ---------------------------------------------------------------------------
// Manifests

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "' (expected train, val or test)");
}

std::vector<ManifestEntry> DatasetManifest::split(Split s) const {
  std::vector<ManifestEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out), [s](const auto& e) { return e.split == s; });
  return out;
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("manifest '" + path.string() + "': " + e.what());
  }
  DatasetManifest m;
  const nlohmann::json* entries = &j;
  if (j.is_object()) {
    m.provenance = j.value("provenance", "");
    if (!j.contains("entries")) throw std::runtime_error("manifest '" + path.string() + "': missing field 'entries'");
    entries = &j.at("entries");
  }
  if (!entries->is_array()) throw std::runtime_error("manifest '" + path.string() + "': entries must be an array");
  const fs::path base = path.parent_path();
  std::map<fs::path, Split> seen;
  for (std::size_t i = 0; i < entries->size(); ++i) {
    const auto& e = (*entries)[i];
    for (const char* key : {"image", "mask", "split"})
      if (!e.contains(key))
        throw std::runtime_error("manifest '" + path.string() + "' entry " + std::to_string(i) + ": missing field '" + key + "'");
    ManifestEntry me;
    me.image = e.at("image").get<std::string>();
    me.mask = e.at("mask").get<std::string>();
    if (me.image.is_relative()) me.image = base / me.image;
    if (me.mask.is_relative()) me.mask = base / me.mask;
    me.split = parse_split(e.at("split").get<std::string>());
    for (const auto& p : {me.image, me.mask})
      if (!fs::exists(p)) throw std::runtime_error("manifest '" + path.string() + "': file '" + p.string() + "' does not exist");
    const fs::path key = fs::weakly_canonical(me.image);
    if (auto it = seen.find(key); it != seen.end() && it->second != me.split)
      throw std::runtime_error("manifest '" + path.string() + "': image '" + me.image.string() + "' is in both " +
                               to_string(it->second) + " and " + to_string(me.split));
    seen.emplace(key, me.split);
    m.entries.push_back(std::move(me));
  }
  return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
  nlohmann::ordered_json j;
  j["provenance"] = manifest.provenance;
  auto arr = nlohmann::ordered_json::array();
  const fs::path base = fs::absolute(path).parent_path();
  for (const auto& e : manifest.entries)
    arr.push_back({{"image", fs::relative(fs::absolute(e.image), base).string()},
                   {"mask", fs::relative(fs::absolute(e.mask), base).string()},
                   {"split", to_string(e.split)}});
  j["entries"] = std::move(arr);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

std::vector<CrackSample> load_split(const DatasetManifest& manifest, Split s) {
  std::vector<CrackSample> out;
  for (const auto& e : manifest.split(s)) out.push_back(load_sample(e.image, e.mask));
  return out;
}

}  // namespace crackbench
