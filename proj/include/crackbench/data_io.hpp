#pragma once

#include "crackbench/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace crackbench {

/// An 8-bit image: H x W x channels, interleaved.
struct Image8 {
  int height = 0, width = 0, channels = 1;
  std::vector<std::uint8_t> pixels;
};

Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

/// Image (1, C, H, W) in [0, 1] paired with a binary mask of the same extent.
struct CrackSample {
  Tensorf image;
  BinaryMap mask;
  std::string id;

  [[nodiscard]] int height() const { return image.shape().h; }
  [[nodiscard]] int width() const { return image.shape().w; }
  [[nodiscard]] long crack_pixels() const { return static_cast<long>((mask != 0).count()); }
};

/// Reads an 8-bit grayscale/RGB image and an 8-bit mask; intensities are
/// scaled to [0, 1] and the mask is binarized at > 127.
CrackSample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& mask_path);

/// Writes the image (rounded to 8 bits) and the mask as 0/255 PNGs.
void save_sample(const CrackSample& sample, const std::filesystem::path& image_path,
                 const std::filesystem::path& mask_path);

BinaryMap binarize_mask(const Image8& mask);
Image8 to_image8(const Tensorf& image);
/// (1, C, H, W) tensor with intensities scaled to [0, 1].
Tensorf image8_to_tensor(const Image8& img);
Image8 mask_to_image8(const BinaryMap& mask);
/// Probability map -> 8-bit gray, value = round(255 p).
Image8 prob_to_image8(const ProbMap& prob);
ProbMap image8_to_prob(const Image8& img);

/// Lossless float sidecar for probability maps: little-endian grayscale PFM
/// ("Pf", scale -1, rows stored bottom to top). Values round-trip as float32.
void write_pfm(const std::filesystem::path& path, const ProbMap& prob);
ProbMap read_pfm(const std::filesystem::path& path);

struct CropGrid {
  int rows = 4, cols = 4;
  long min_crack_pixels = 1000;

  static CropGrid crack500() { return {4, 4, 1000}; }
  static CropGrid gaps384() { return {2, 3, 1000}; }
};

struct CropRegion {
  int row = 0, col = 0;
  int y0 = 0, x0 = 0, height = 0, width = 0;
  long crack_pixels = 0;
  bool kept = false;
};

/// All grid cells with their crack counts; remainder pixels on the right and
/// bottom edges are not part of any cell.
std::vector<CropRegion> grid_regions(const CrackSample& sample, const CropGrid& grid);

/// Non-overlapping grid cells whose mask holds strictly more than
/// grid.min_crack_pixels crack pixels.
std::vector<CrackSample> crop_regions(const CrackSample& sample, const CropGrid& grid);

CrackSample crop(const CrackSample& sample, int y0, int x0, int height, int width, std::string id);

struct SynthParams {
  double width = 3.0;      // crack width in pixels
  double curvature = 0.3;  // heading random-walk step (radians per segment)
  double contrast = 0.5;   // darkening at the crack centre
  double noise = 0.03;     // std of additive Gaussian noise
  double shadow = 0.0;     // darkening of a random half-plane, in [0, 1)
  double texture = 0.08;   // amplitude of the smooth background texture

  void validate(int size) const;
};

struct Point2 {
  double x = 0, y = 0;
};

struct SyntheticCrack {
  CrackSample sample;
  std::vector<Point2> path;  // polyline centre line
  [[nodiscard]] double path_length() const;
};

/// Renders a random crack polyline over a textured background. The mask is the
/// set of pixels within width/2 of the polyline; deterministic in `seed`.
SyntheticCrack synth_crack(std::uint64_t seed, int size, const SynthParams& params = {});

/// Straight crack from (x0, y0) to (x1, y1); used by geometry tests.
SyntheticCrack synth_straight_crack(std::uint64_t seed, int size, Point2 from, Point2 to, const SynthParams& params);

enum class Split { train, val, test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path mask;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::string provenance;

  [[nodiscard]] std::vector<ManifestEntry> split(Split s) const;
};

/// Accepts either a JSON array of {image, mask, split} or an object
/// {"provenance": ..., "entries": [...]}. Relative paths resolve against the
/// manifest's directory. Checks that files exist and that no image appears in two splits.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Loads every entry of a split, ids taken from the image file stem.
std::vector<CrackSample> load_split(const DatasetManifest& manifest, Split s);

}  // namespace crackbench
