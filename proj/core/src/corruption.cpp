#include "sevtrain/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "sevtrain/rng.hpp"
#include "sevtrain/util.hpp"

namespace sevtrain {

using nlohmann::json;

const char* corruption_kind_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::kGaussianNoise: return "gaussian_noise";
    case CorruptionKind::kImpulseNoise: return "impulse_noise";
    case CorruptionKind::kGaussianBlur: return "gaussian_blur";
    case CorruptionKind::kBrightness: return "brightness";
    case CorruptionKind::kContrast: return "contrast";
    case CorruptionKind::kSaturation: return "saturation";
    case CorruptionKind::kPixelate: return "pixelate";
  }
  return "unknown";
}

CorruptionKind corruption_kind_from_string(const std::string& s) {
  for (CorruptionKind k : all_corruption_kinds()) {
    if (s == corruption_kind_name(k)) return k;
  }
  throw std::runtime_error("unknown corruption kind '" + s + "'");
}

const std::array<CorruptionKind, kNumCorruptionKinds>& all_corruption_kinds() {
  static const std::array<CorruptionKind, kNumCorruptionKinds> kinds = {
      CorruptionKind::kGaussianNoise, CorruptionKind::kImpulseNoise,
      CorruptionKind::kGaussianBlur,  CorruptionKind::kBrightness,
      CorruptionKind::kContrast,      CorruptionKind::kSaturation,
      CorruptionKind::kPixelate,
  };
  return kinds;
}

bool corruption_uses_seed(CorruptionKind kind) {
  return kind == CorruptionKind::kGaussianNoise || kind == CorruptionKind::kImpulseNoise;
}

double CorruptionTables::value(CorruptionKind kind, int severity) const {
  if (severity < 1 || severity > kNumSeverities) {
    throw std::runtime_error("corruption: severity " + std::to_string(severity) +
                             " out of range 1..5");
  }
  const std::size_t s = static_cast<std::size_t>(severity - 1);
  switch (kind) {
    case CorruptionKind::kGaussianNoise: return gaussian_noise_sigma[s];
    case CorruptionKind::kImpulseNoise: return impulse_noise_fraction[s];
    case CorruptionKind::kGaussianBlur: return gaussian_blur_sigma[s];
    case CorruptionKind::kBrightness: return brightness_delta[s];
    case CorruptionKind::kContrast: return contrast_factor[s];
    case CorruptionKind::kSaturation: return saturation_factor[s];
    case CorruptionKind::kPixelate: return pixelate_block[s];
  }
  throw std::runtime_error("corruption: unknown kind");
}

CorruptionTables CorruptionTables::defaults() {
  CorruptionTables t;
  t.gaussian_noise_sigma = {0.04, 0.08, 0.13, 0.19, 0.26};
  t.impulse_noise_fraction = {0.02, 0.05, 0.09, 0.15, 0.22};
  t.gaussian_blur_sigma = {0.5, 0.8, 1.2, 1.8, 2.6};
  t.brightness_delta = {0.08, 0.16, 0.24, 0.33, 0.45};
  t.contrast_factor = {0.80, 0.65, 0.50, 0.35, 0.22};
  t.saturation_factor = {0.75, 0.58, 0.42, 0.28, 0.15};
  t.pixelate_block = {2, 3, 4, 6, 8};
  return t;
}

namespace {

std::array<double, 5> array_from_json(const json& j, const std::string& key) {
  const auto& a = j.at(key);
  if (a.size() != 5) throw std::runtime_error("corruption params: '" + key + "' needs 5 values");
  std::array<double, 5> out{};
  for (std::size_t i = 0; i < 5; ++i) out[i] = a[i].get<double>();
  return out;
}

json array_to_json(const std::array<double, 5>& a) {
  json out = json::array();
  for (double v : a) out.push_back(v);
  return out;
}

}  // namespace

CorruptionTables CorruptionTables::load(const std::filesystem::path& json_path) {
  json j;
  try {
    j = json::parse(read_text_file(json_path));
  } catch (const json::exception& e) {
    throw std::runtime_error("corruption params: " + json_path.string() + ": " + e.what());
  }
  CorruptionTables t;
  t.gaussian_noise_sigma = array_from_json(j, "gaussian_noise_sigma");
  t.impulse_noise_fraction = array_from_json(j, "impulse_noise_fraction");
  t.gaussian_blur_sigma = array_from_json(j, "gaussian_blur_sigma");
  t.brightness_delta = array_from_json(j, "brightness_delta");
  t.contrast_factor = array_from_json(j, "contrast_factor");
  t.saturation_factor = array_from_json(j, "saturation_factor");
  t.pixelate_block = array_from_json(j, "pixelate_block");
  return t;
}

void CorruptionTables::save(const std::filesystem::path& json_path) const {
  json j = {
      {"gaussian_noise_sigma", array_to_json(gaussian_noise_sigma)},
      {"impulse_noise_fraction", array_to_json(impulse_noise_fraction)},
      {"gaussian_blur_sigma", array_to_json(gaussian_blur_sigma)},
      {"brightness_delta", array_to_json(brightness_delta)},
      {"contrast_factor", array_to_json(contrast_factor)},
      {"saturation_factor", array_to_json(saturation_factor)},
      {"pixelate_block", array_to_json(pixelate_block)},
  };
  write_text_file(json_path, j.dump(2) + "\n");
}

namespace {

void clamp_image(Image& img) {
  for (float& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

Image add_gaussian_noise(const Image& in, double sigma, std::uint64_t seed) {
  Image out = in;
  Rng rng(seed);
  for (float& v : out.pixels) v += static_cast<float>(sigma * rng.normal());
  clamp_image(out);
  return out;
}

Image add_impulse_noise(const Image& in, double fraction, std::uint64_t seed) {
  Image out = in;
  Rng rng(seed);
  for (float& v : out.pixels) {
    if (rng.bernoulli(fraction)) v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
  }
  return out;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  // Reflect without repeating the border sample: -1 -> 1, n -> n-2.
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

Image adjust_brightness(const Image& in, double delta) {
  Image out = in;
  for (float& v : out.pixels) v += static_cast<float>(delta);
  clamp_image(out);
  return out;
}

Image adjust_contrast(const Image& in, double factor) {
  Image out = in;
  double mean = 0.0;
  for (float v : in.pixels) mean += v;
  mean /= static_cast<double>(in.pixels.size());
  for (float& v : out.pixels) {
    v = static_cast<float>(mean + factor * (static_cast<double>(v) - mean));
  }
  clamp_image(out);
  return out;
}

Image adjust_saturation(const Image& in, double factor) {
  if (in.channels != 3) throw std::runtime_error("saturation: needs a 3-channel image");
  Image out = in;
  const std::size_t plane = static_cast<std::size_t>(in.height) * static_cast<std::size_t>(in.width);
  for (std::size_t p = 0; p < plane; ++p) {
    const double r = in.pixels[p];
    const double g = in.pixels[plane + p];
    const double b = in.pixels[2 * plane + p];
    const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
    out.pixels[p] = static_cast<float>(luma + factor * (r - luma));
    out.pixels[plane + p] = static_cast<float>(luma + factor * (g - luma));
    out.pixels[2 * plane + p] = static_cast<float>(luma + factor * (b - luma));
  }
  clamp_image(out);
  return out;
}

Image pixelate(const Image& in, int block) {
  if (block < 1) throw std::runtime_error("pixelate: block must be >= 1");
  Image out = in;
  for (int c = 0; c < in.channels; ++c) {
    for (int by = 0; by < in.height; by += block) {
      const int y1 = std::min(in.height, by + block);
      for (int bx = 0; bx < in.width; bx += block) {
        const int x1 = std::min(in.width, bx + block);
        double sum = 0.0;
        for (int y = by; y < y1; ++y) {
          for (int x = bx; x < x1; ++x) sum += in.at(c, y, x);
        }
        const float avg = static_cast<float>(sum / static_cast<double>((y1 - by) * (x1 - bx)));
        for (int y = by; y < y1; ++y) {
          for (int x = bx; x < x1; ++x) out.at(c, y, x) = avg;
        }
      }
    }
  }
  return out;
}

}  // namespace

Image gaussian_blur(const Image& in, double sigma) {
  if (sigma <= 0.0) return in;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : kernel) v /= sum;

  // Separable convolution with reflect padding.
  Image tmp = in;
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 in.at(c, y, reflect_index(x + i, in.width));
        }
        tmp.at(c, y, x) = static_cast<float>(acc);
      }
    }
  }
  Image out = in;
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 tmp.at(c, reflect_index(y + i, in.height), x);
        }
        out.at(c, y, x) = static_cast<float>(acc);
      }
    }
  }
  clamp_image(out);
  return out;
}

Image apply_corruption(const Image& image, const CorruptionSpec& spec,
                       const CorruptionTables& tables) {
  const double p = tables.value(spec.kind, spec.severity);
  switch (spec.kind) {
    case CorruptionKind::kGaussianNoise: return add_gaussian_noise(image, p, spec.seed);
    case CorruptionKind::kImpulseNoise: return add_impulse_noise(image, p, spec.seed);
    case CorruptionKind::kGaussianBlur: return gaussian_blur(image, p);
    case CorruptionKind::kBrightness: return adjust_brightness(image, p);
    case CorruptionKind::kContrast: return adjust_contrast(image, p);
    case CorruptionKind::kSaturation: return adjust_saturation(image, p);
    case CorruptionKind::kPixelate: return pixelate(image, static_cast<int>(p));
  }
  throw std::runtime_error("corruption: unknown kind");
}

Dataset build_corrupted_set(const Dataset& ds, const CorruptionSpec& spec,
                            const CorruptionTables& tables) {
  Dataset out;
  out.split = ds.split;
  out.provenance.source = "corrupted(" + ds.provenance.source + ")";
  out.provenance.corruption_kind = corruption_kind_name(spec.kind);
  out.provenance.corruption_severity = spec.severity;
  out.samples.resize(ds.size());
  parallel_chunks(ds.size(), 32, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      CorruptionSpec per_image = spec;
      per_image.seed = splitmix64(spec.seed ^ (0x9E3779B97F4A7C15ull * (i + 1)));
      auto& s = out.samples[i];
      s.fine_label = ds.samples[i].fine_label;
      s.coarse_label = ds.samples[i].coarse_label;
      s.image = apply_corruption(ds.samples[i].image, per_image, tables);
    }
  });
  return out;
}

std::vector<Dataset> load_precomputed_corruption_set(const std::filesystem::path& manifest_path,
                                                     const ClassTaxonomy& taxonomy) {
  json m;
  try {
    m = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw std::runtime_error("corruption manifest: " + manifest_path.string() + ": " + e.what());
  }
  const std::string kind = m.at("kind").get<std::string>();
  const std::size_t count = m.at("count").get<std::size_t>();
  const std::string dtype = m.at("dtype").get<std::string>();
  const int image_size = m.value("image_size", 32);
  const int channels = m.value("channels", 3);
  const bool blocks = m.value("severity_blocks", false);
  const int severity = blocks ? 0 : m.at("severity").get<int>();
  if (!blocks && (severity < 1 || severity > kNumSeverities)) {
    throw std::runtime_error("corruption manifest: severity out of range 1..5");
  }
  if (blocks && count % kNumSeverities != 0) {
    throw std::runtime_error("corruption manifest: severity_blocks requires count divisible by 5");
  }

  const std::size_t per_image = static_cast<std::size_t>(channels) *
                                static_cast<std::size_t>(image_size) *
                                static_cast<std::size_t>(image_size);
  const auto dir = manifest_path.parent_path();
  std::vector<float> pixels;
  if (dtype == "u8") {
    const auto raw = read_binary_file(dir / m.at("tensor_file").get<std::string>());
    if (raw.size() != count * per_image) {
      throw std::runtime_error("corruption manifest: tensor file holds " +
                               std::to_string(raw.size() / per_image) + " samples, manifest says " +
                               std::to_string(count));
    }
    pixels.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) pixels[i] = static_cast<float>(raw[i]) / 255.0f;
  } else if (dtype == "f32") {
    pixels = read_f32_file(dir / m.at("tensor_file").get<std::string>());
    if (pixels.size() != count * per_image) {
      throw std::runtime_error("corruption manifest: tensor file holds " +
                               std::to_string(pixels.size() / per_image) +
                               " samples, manifest says " + std::to_string(count));
    }
    for (float v : pixels) {
      if (v < 0.0f || v > 1.0f) {
        throw std::runtime_error("corruption manifest: pixel value out of declared [0,1] range");
      }
    }
  } else {
    throw std::runtime_error("corruption manifest: unsupported dtype '" + dtype + "'");
  }

  const auto label_bytes = read_binary_file(dir / m.at("label_file").get<std::string>());
  if (label_bytes.size() != count) {
    throw std::runtime_error("corruption manifest: label file holds " +
                             std::to_string(label_bytes.size()) + " labels, manifest says " +
                             std::to_string(count));
  }

  auto slice = [&](std::size_t lo, std::size_t hi, int sev) {
    Dataset ds;
    ds.split = Split::kTest;
    ds.provenance.source = "precomputed(" + manifest_path.filename().string() + ")";
    ds.provenance.corruption_kind = kind;
    ds.provenance.corruption_severity = sev;
    ds.samples.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
      Sample s;
      const int fine = label_bytes[i];
      if (fine >= taxonomy.num_fine()) {
        throw std::runtime_error("corruption manifest: fine label " + std::to_string(fine) +
                                 " out of range for the taxonomy");
      }
      s.fine_label = fine;
      s.coarse_label = taxonomy.coarse_of(fine);
      s.image.channels = channels;
      s.image.height = image_size;
      s.image.width = image_size;
      s.image.pixels.assign(pixels.begin() + static_cast<std::ptrdiff_t>(i * per_image),
                            pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * per_image));
      ds.samples.push_back(std::move(s));
    }
    return ds;
  };

  std::vector<Dataset> out;
  if (blocks) {
    const std::size_t block = count / kNumSeverities;
    for (int s = 0; s < kNumSeverities; ++s) {
      out.push_back(slice(static_cast<std::size_t>(s) * block,
                          static_cast<std::size_t>(s + 1) * block, s + 1));
    }
  } else {
    out.push_back(slice(0, count, severity));
  }
  return out;
}

}  // namespace sevtrain
