#include <doctest.h>

#include "crackbench/data_io.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <random>

using namespace crackbench;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("crackbench_test_data_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Image8 gray(int h, int w, std::uint8_t v) { return Image8{h, w, 1, std::vector<std::uint8_t>(std::size_t(h * w), v)}; }

// Disk of radius r stamped along a Bresenham line.
BinaryMap bresenham_disk(int size, int x0, int y0, int x1, int y1, double r) {
  BinaryMap m = BinaryMap::Zero(size, size);
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0), sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy, x = x0, y = y0;
  const int ri = int(std::ceil(r));
  while (true) {
    for (int oy = -ri; oy <= ri; ++oy)
      for (int ox = -ri; ox <= ri; ++ox)
        if (ox * ox + oy * oy <= r * r && y + oy >= 0 && y + oy < size && x + ox >= 0 && x + ox < size) m(y + oy, x + ox) = 1;
    if (x == x1 && y == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) err += dy, x += sx;
    if (e2 <= dx) err += dx, y += sy;
  }
  return m;
}

CrackSample blank(int h, int w) {
  CrackSample s;
  s.image = Tensorf(Shape{1, 1, h, w});
  s.mask = BinaryMap::Zero(h, w);
  s.id = "blank";
  return s;
}

}  // namespace

TEST_CASE("mask binarization") {
  Image8 m = gray(1, 3, 0);
  m.pixels = {0, 128, 255};
  const auto b = binarize_mask(m);
  CHECK(b(0, 0) == 0);
  CHECK(b(0, 1) == 1);
  CHECK(b(0, 2) == 1);
  CHECK((binarize_mask(gray(4, 4, 255)).array() == 1).all());
  m.pixels = {127, 0, 0};
  CHECK(binarize_mask(m)(0, 0) == 0);
}

TEST_CASE("PNG round trips and errors") {
  const auto dir = scratch("png");
  auto syn = synth_crack(3, 48);
  save_sample(syn.sample, dir / "img.png", dir / "mask.png");
  const auto back = load_sample(dir / "img.png", dir / "mask.png");
  CHECK((back.mask == syn.sample.mask).all());
  CHECK((back.image.array() - syn.sample.image.array()).abs().maxCoeff() <= 0.5f / 255 + 1e-6f);
  CHECK(back.id == "img");

  // RGB images keep their three channels.
  Image8 rgb{4, 5, 3, std::vector<std::uint8_t>(60)};
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = std::uint8_t(i * 4);
  write_png(dir / "rgb.png", rgb);
  const auto r = read_png(dir / "rgb.png");
  CHECK(r.channels == 3);
  CHECK(r.pixels == rgb.pixels);
  write_png(dir / "m45.png", gray(4, 5, 255));
  const auto s = load_sample(dir / "rgb.png", dir / "m45.png");
  CHECK(s.image.shape() == Shape{1, 3, 4, 5});
  CHECK(s.image(0, 1, 0, 0) == doctest::Approx(4.0 / 255));

  write_png(dir / "m46.png", gray(4, 6, 0));
  CHECK_THROWS_AS(load_sample(dir / "rgb.png", dir / "m46.png"), std::runtime_error);
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(read_png(dir / "junk.png"), std::runtime_error);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), std::runtime_error);
}

TEST_CASE("probability maps: 8-bit quantisation and exact PFM sidecar") {
  ProbMap p(2, 3);
  p << 0.0, 0.5, 1.0, 0.25, 0.123456789, 0.999;
  const auto img = prob_to_image8(p);
  CHECK(img.pixels[0] == 0);
  CHECK(img.pixels[1] == 128);
  CHECK(img.pixels[2] == 255);
  CHECK(image8_to_prob(img)(0, 2) == 1.0);

  const auto dir = scratch("pfm");
  write_pfm(dir / "p.pfm", p);
  const auto q = read_pfm(dir / "p.pfm");
  REQUIRE(q.rows() == 2);
  REQUIRE(q.cols() == 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) CHECK(q.data()[i] == double(float(p.data()[i])));
  std::ifstream in(dir / "p.pfm", std::ios::binary);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0;
  in >> magic >> w >> h >> scale;
  CHECK(magic == "Pf");
  CHECK(w == 3);
  CHECK(h == 2);
  CHECK(scale < 0);
  std::ofstream(dir / "bad.pfm") << "PF\n1 1\n-1\n";
  CHECK_THROWS_AS(read_pfm(dir / "bad.pfm"), std::runtime_error);
}

TEST_CASE("crop grid: 4x4 cells, strict threshold, remainder dropped") {
  auto s = blank(1500, 2000);
  const auto regions = grid_regions(s, CropGrid::crack500());
  REQUIRE(regions.size() == 16);
  for (const auto& r : regions) {
    CHECK(r.height == 375);
    CHECK(r.width == 500);
    CHECK(r.y0 == r.row * 375);
    CHECK(r.x0 == r.col * 500);
  }
  // Exactly 1000 crack pixels is not enough; 1001 is.
  s.mask.block(0, 0, 10, 100).setOnes();
  CHECK(crop_regions(s, CropGrid::crack500()).empty());
  s.mask(20, 0) = 1;
  auto kept = crop_regions(s, CropGrid::crack500());
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].height() == 375);
  CHECK(kept[0].width() == 500);
  CHECK(kept[0].crack_pixels() == 1001);

  // Cracks split across cells are counted per cell.
  s.mask.setZero();
  s.mask.block(370, 0, 10, 200).setOnes();  // 1000 above and 1000 below the row boundary
  CHECK(crop_regions(s, CropGrid::crack500()).empty());

  // Remainder rows and columns are not in any cell.
  auto odd = blank(1503, 2003);
  odd.mask.block(1500, 0, 3, 2003).setOnes();
  const auto rr = grid_regions(odd, CropGrid::crack500());
  CHECK(rr.back().y0 + rr.back().height == 1500);
  for (const auto& r : rr) CHECK(r.crack_pixels == 0);
}

TEST_CASE("crop grid: 2x3 for wide images") {
  const auto regions = grid_regions(blank(1080, 1920), CropGrid::gaps384());
  REQUIRE(regions.size() == 6);
  for (const auto& r : regions) {
    CHECK(r.height == 540);
    CHECK(r.width == 640);
  }
  CHECK_THROWS(crop(blank(10, 10), 5, 5, 10, 10, "x"));
}

TEST_CASE("synthetic cracks") {
  SUBCASE("deterministic in the seed") {
    const auto a = synth_crack(9, 64), b = synth_crack(9, 64), c = synth_crack(10, 64);
    CHECK((a.sample.image.array() == b.sample.image.array()).all());
    CHECK((a.sample.mask == b.sample.mask).all());
    CHECK_FALSE((a.sample.mask == c.sample.mask).all());
    CHECK(a.sample.crack_pixels() > 0);
  }
  SUBCASE("clean render: the mask is exactly the darkened support") {
    SynthParams p;
    p.noise = p.texture = p.shadow = 0;
    p.contrast = 0.4;
    const auto s = synth_crack(4, 64, p).sample;
    for (Eigen::Index y = 0; y < 64; ++y)
      for (Eigen::Index x = 0; x < 64; ++x) CHECK((s.image(0, 0, y, x) < 0.6f) == bool(s.mask(y, x)));
    p.contrast = 0;
    const auto flat = synth_crack(4, 64, p).sample;
    CHECK((flat.image.array() == 0.6f).all());
    CHECK((flat.mask == s.mask).all());
  }
  SUBCASE("straight crack of width 5 against a Bresenham disk oracle") {
    SynthParams p;
    p.width = 5;
    const Point2 from{10, 12}, to{80, 70};
    const auto s = synth_straight_crack(1, 96, from, to, p);
    const double len = s.path_length();
    CHECK(len == doctest::Approx(std::hypot(70.0, 58.0)));
    const double count = double(s.sample.crack_pixels());
    CHECK(count >= 0.8 * 5 * len);
    CHECK(count <= 1.2 * 5 * len + M_PI * 6.25);
    const auto oracle = bresenham_disk(96, 10, 12, 80, 70, 2.5);
    const double agree = double(((s.sample.mask != 0) == (oracle != 0)).count()) / double(96 * 96);
    CHECK(agree > 0.99);
  }
  SUBCASE("invalid parameters") {
    SynthParams p;
    p.width = 0;
    CHECK_THROWS_AS(synth_crack(1, 64, p), std::invalid_argument);
    p = {};
    p.shadow = 1.0;
    CHECK_THROWS_AS(synth_crack(1, 64, p), std::invalid_argument);
    CHECK_THROWS_AS(synth_crack(1, 16), std::invalid_argument);
  }
}

TEST_CASE("manifests") {
  const auto dir = scratch("manifest");
  fs::create_directories(dir / "data");
  for (int i = 0; i < 3; ++i) {
    const auto s = synth_crack(std::uint64_t(i), 32).sample;
    save_sample(s, dir / "data" / ("i" + std::to_string(i) + ".png"), dir / "data" / ("m" + std::to_string(i) + ".png"));
  }
  auto write = [&](const nlohmann::json& j) {
    std::ofstream(dir / "m.json") << j.dump();
    return dir / "m.json";
  };

  SUBCASE("array form with relative paths") {
    const auto m = load_manifest(write(nlohmann::json::array({
        {{"image", "data/i0.png"}, {"mask", "data/m0.png"}, {"split", "train"}},
        {{"image", "data/i1.png"}, {"mask", "data/m1.png"}, {"split", "val"}},
    })));
    CHECK(m.entries.size() == 2);
    CHECK(m.split(Split::val).size() == 1);
    CHECK(m.entries[0].image == dir / "data/i0.png");
    const auto samples = load_split(m, Split::train);
    REQUIRE(samples.size() == 1);
    CHECK(samples[0].id == "i0");
  }
  SUBCASE("object form, save and reload") {
    const auto m = load_manifest(write({{"provenance", "synthetic"},
                                        {"entries", {{{"image", "data/i2.png"}, {"mask", "data/m2.png"}, {"split", "test"}}}}}));
    CHECK(m.provenance == "synthetic");
    fs::create_directories(dir / "elsewhere");
    save_manifest(dir / "elsewhere" / "copy.json", m);
    const auto back = load_manifest(dir / "elsewhere" / "copy.json");
    REQUIRE(back.entries.size() == 1);
    CHECK(fs::equivalent(back.entries[0].image, dir / "data/i2.png"));
    CHECK(back.entries[0].split == Split::test);
  }
  SUBCASE("errors") {
    CHECK_THROWS_WITH(load_manifest(write(nlohmann::json::array({{{"image", "data/nope.png"}, {"mask", "data/m0.png"}, {"split", "train"}}}))),
                      doctest::Contains("does not exist"));
    CHECK_THROWS_WITH(load_manifest(write(nlohmann::json::array({
                          {{"image", "data/i0.png"}, {"mask", "data/m0.png"}, {"split", "train"}},
                          {{"image", "data/i0.png"}, {"mask", "data/m0.png"}, {"split", "test"}},
                      }))),
                      doctest::Contains("both train and test"));
    CHECK_THROWS_WITH(load_manifest(write(nlohmann::json::array({{{"image", "data/i0.png"}, {"split", "train"}}}))),
                      doctest::Contains("'mask'"));
    CHECK_THROWS_AS(load_manifest(write(nlohmann::json::array({{{"image", "data/i0.png"}, {"mask", "data/m0.png"}, {"split", "dev"}}}))),
                    std::invalid_argument);
    CHECK_THROWS_AS(load_manifest(dir / "absent.json"), std::runtime_error);
  }
}
