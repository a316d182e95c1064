#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sevtrain/data.hpp"
#include "sevtrain/taxonomy.hpp"

namespace sevtrain {

enum class CorruptionKind {
  kGaussianNoise,
  kImpulseNoise,
  kGaussianBlur,
  kBrightness,
  kContrast,
  kSaturation,
  kPixelate,
};

inline constexpr int kNumCorruptionKinds = 7;
inline constexpr int kNumSeverities = 5;

const char* corruption_kind_name(CorruptionKind kind);
CorruptionKind corruption_kind_from_string(const std::string& s);
const std::array<CorruptionKind, kNumCorruptionKinds>& all_corruption_kinds();

// Noise kinds consume the seed; the remaining kinds ignore it entirely.
bool corruption_uses_seed(CorruptionKind kind);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kGaussianNoise;
  int severity = 1;  // 1..5
  std::uint64_t seed = 0;
};

// Severity parameter tables, one value per severity level 1..5, strictly
// monotone per kind. Defaults were calibrated so severity 5 roughly halves
// DeskNet clean accuracy on the synthetic fixture; the same values ship as
// repo configuration data.
struct CorruptionTables {
  std::array<double, 5> gaussian_noise_sigma;
  std::array<double, 5> impulse_noise_fraction;
  std::array<double, 5> gaussian_blur_sigma;
  std::array<double, 5> brightness_delta;
  std::array<double, 5> contrast_factor;    // decreasing: stronger contrast loss
  std::array<double, 5> saturation_factor;  // decreasing: stronger desaturation
  std::array<double, 5> pixelate_block;     // integer-valued block sizes

  double value(CorruptionKind kind, int severity) const;

  static CorruptionTables defaults();
  static CorruptionTables load(const std::filesystem::path& json_path);
  void save(const std::filesystem::path& json_path) const;
};

// Applies one corruption kernel; the result stays in [0,1] and keeps the
// input shape. Deterministic given spec.seed.
Image apply_corruption(const Image& image, const CorruptionSpec& spec,
                       const CorruptionTables& tables);

// Corrupts every image of an evaluation set (per-image seeds derived from
// spec.seed and the sample index). Labels preserved; provenance records the
// kind and severity.
Dataset build_corrupted_set(const Dataset& ds, const CorruptionSpec& spec,
                            const CorruptionTables& tables);

// Loads a precomputed corrupted dataset (JSON manifest + raw tensor file,
// u8 or f32). A manifest with "severity_blocks": true holds five
// severity-ordered blocks of count/5 samples each and yields five datasets;
// otherwise one dataset at the declared severity. Coarse labels come from
// the taxonomy.
std::vector<Dataset> load_precomputed_corruption_set(const std::filesystem::path& manifest_path,
                                                     const ClassTaxonomy& taxonomy);

// Standalone blur used by tests (sigma may be arbitrarily small).
Image gaussian_blur(const Image& image, double sigma);

}  // namespace sevtrain
