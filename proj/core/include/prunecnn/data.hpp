#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prunecnn/net.hpp"
#include "prunecnn/tensor.hpp"

namespace prunecnn {

/// 2-D grayscale image, intensities in [0, 1], row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }

  /// Mirror-padded access; coordinates may lie outside the image.
  double mirrored(long y, long x) const;
};

struct LabeledImage {
  Image image;
  std::vector<std::uint8_t> labels;  // 1 = membrane pixel

  std::uint8_t label_at(std::size_t y, std::size_t x) const {
    return labels[y * image.width + x];
  }
};

struct PatchDataset {
  Tensor patches;           // N x 1 x n x n
  std::vector<int> labels;  // 1 = membrane-centered
  std::string split;        // "train" or "val"
  bool mirrored = true;     // border patches used mirror padding
};

/// perClass membrane-centered and perClass non-membrane-centered n x n
/// patches, sampled uniformly without replacement, deterministic per seed.
/// Windows that overhang the image border are mirror-padded.
PatchDataset extract_patches(const LabeledImage& img, std::size_t n,
                             std::size_t per_class, std::uint64_t seed,
                             const std::string& split = "train");

/// Synthetic stand-in for annotated electron micrographs: dark curvilinear
/// strokes of varying thickness on a textured bright background with
/// additive Gaussian noise. The label mask marks stroke pixels.
LabeledImage synth_membranes(std::size_t width, std::size_t height,
                             std::size_t curve_count, double thickness_min,
                             double thickness_max, double noise_sigma,
                             std::uint64_t seed);

/// Binary portable graymap (P5), 8 or 16 bit; intensities normalized to
/// [0, 1] on load.
Image load_pgm(const std::string& path);
void save_pgm(const Image& img, const std::string& path, int bits = 16);

void save_mask_pgm(const std::vector<std::uint8_t>& mask, std::size_t width,
                   std::size_t height, const std::string& path);
std::vector<std::uint8_t> image_to_mask(const Image& img);

struct ManifestEntry {
  std::string image_path;
  std::string mask_path;
  std::string split;
  std::uint64_t seed = 0;
};

std::vector<ManifestEntry> load_manifest(const std::string& path);
void save_manifest(const std::vector<ManifestEntry>& entries,
                   const std::string& path);

}  // namespace prunecnn
