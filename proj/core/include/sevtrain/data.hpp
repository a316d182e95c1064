#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sevtrain/rng.hpp"
#include "sevtrain/taxonomy.hpp"

namespace sevtrain {

// Channel-planar image, intensities in [0, 1].
struct Image {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // size channels*height*width, plane-major

  std::size_t size() const { return pixels.size(); }
  float& at(int c, int y, int x) {
    return pixels[(static_cast<std::size_t>(c) * static_cast<std::size_t>(height) + static_cast<std::size_t>(y)) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
  }
  float at(int c, int y, int x) const {
    return pixels[(static_cast<std::size_t>(c) * static_cast<std::size_t>(height) + static_cast<std::size_t>(y)) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
  }
};

struct Sample {
  Image image;
  int fine_label = 0;
  int coarse_label = 0;
};

enum class Split { kTrain, kTest };

struct Provenance {
  std::string source;           // human-readable origin descriptor
  std::string corruption_kind;  // empty when not a corrupted set
  int corruption_severity = 0;  // 0 when not a corrupted set
};

struct Dataset {
  std::vector<Sample> samples;
  Split split = Split::kTrain;
  Provenance provenance;

  std::size_t size() const { return samples.size(); }
};

struct AugmentationConfig {
  int crop_padding = 4;
  double hflip_probability = 0.5;
};

// --- CIFAR-100 binary format -----------------------------------------------
// Record: byte 0 coarse label, byte 1 fine label, then 3072 pixel bytes
// (channel-planar R,G,B; each plane row-major 32x32). 3074 bytes per record.

inline constexpr int kCifarImageSize = 32;
inline constexpr std::size_t kCifarRecordBytes = 2 + 3ull * 32 * 32;

Dataset parse_cifar100_binary(std::span<const std::uint8_t> bytes, Split split,
                              int fine_count = 100, int coarse_count = 20);
std::vector<std::uint8_t> serialize_cifar100_binary(const Dataset& ds);

// --- Synthetic fixture ------------------------------------------------------

struct SyntheticSpec {
  int num_classes = 20;
  int images_per_class = 25;
  int image_size = 32;
  std::uint64_t seed = 1;
};

// Deterministic dataset whose classes group into a balanced taxonomy
// (5 fine classes per coarse group). Classes in the same group share a base
// color and vertical shading; each class has its own radial ring frequency,
// so visual similarity tracks tree distance.
struct SyntheticData {
  Dataset dataset;
  ClassTaxonomy taxonomy;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec, Split split = Split::kTrain);

// The balanced taxonomy the generator uses, exposed so evaluation code can
// rebuild it without regenerating images.
ClassTaxonomy synthetic_taxonomy(int num_classes);

// --- Augmentation and batching ----------------------------------------------

// Mirrors the image left-right. Involution.
Image flip_horizontal(const Image& img);

// Crop window offsets for a given padding, uniform over {0..2*pad}^2.
std::pair<int, int> draw_crop_offsets(Rng& rng, int pad);

// Zero-pad by crop_padding, crop a random HxW window, then flip with
// hflip_probability. Label unchanged.
Sample augment(const Sample& sample, const AugmentationConfig& cfg, Rng& rng);

// Seeded permutation of [0, n) split into batches; the final short batch is
// kept. Iteration order is reproducible across runs and platforms.
std::vector<std::vector<std::uint32_t>> batches(std::size_t n, std::size_t batch_size,
                                                std::uint64_t shuffle_seed);

// --- Tensor-file persistence (JSON manifest + flat little-endian f32) --------

void save_dataset(const Dataset& ds, const std::filesystem::path& manifest_path);
Dataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace sevtrain
