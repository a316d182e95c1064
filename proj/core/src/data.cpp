#include "sevtrain/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "sevtrain/util.hpp"

namespace sevtrain {

using nlohmann::json;

Dataset parse_cifar100_binary(std::span<const std::uint8_t> bytes, Split split,
                              int fine_count, int coarse_count) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw std::runtime_error("cifar: truncated stream (" + std::to_string(bytes.size()) +
                             " bytes is not a multiple of " + std::to_string(kCifarRecordBytes) + ")");
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  Dataset ds;
  ds.split = split;
  ds.provenance.source = "cifar100-binary";
  ds.samples.reserve(n);
  constexpr float kScale = 1.0f / 255.0f;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecordBytes;
    const int coarse = rec[0];
    const int fine = rec[1];
    if (coarse >= coarse_count) {
      throw std::runtime_error("cifar: record " + std::to_string(i) + " coarse label " +
                               std::to_string(coarse) + " out of range");
    }
    if (fine >= fine_count) {
      throw std::runtime_error("cifar: record " + std::to_string(i) + " fine label " +
                               std::to_string(fine) + " out of range");
    }
    Sample s;
    s.fine_label = fine;
    s.coarse_label = coarse;
    s.image.channels = 3;
    s.image.height = kCifarImageSize;
    s.image.width = kCifarImageSize;
    s.image.pixels.resize(3ull * kCifarImageSize * kCifarImageSize);
    for (std::size_t p = 0; p < s.image.pixels.size(); ++p) {
      s.image.pixels[p] = static_cast<float>(rec[2 + p]) * kScale;
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<std::uint8_t> serialize_cifar100_binary(const Dataset& ds) {
  std::vector<std::uint8_t> out;
  out.reserve(ds.size() * kCifarRecordBytes);
  for (const auto& s : ds.samples) {
    if (s.image.channels != 3 || s.image.height != kCifarImageSize ||
        s.image.width != kCifarImageSize) {
      throw std::runtime_error("cifar: serialize requires 3x32x32 images");
    }
    out.push_back(static_cast<std::uint8_t>(s.coarse_label));
    out.push_back(static_cast<std::uint8_t>(s.fine_label));
    for (float p : s.image.pixels) {
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0f)));
    }
  }
  return out;
}

ClassTaxonomy synthetic_taxonomy(int num_classes) {
  if (num_classes < 2) throw std::runtime_error("synthetic: need at least 2 classes");
  constexpr int kGroupSize = 5;
  const int num_groups = (num_classes + kGroupSize - 1) / kGroupSize;
  std::vector<ClassTaxonomy::Node> nodes;
  nodes.push_back({"root", -1});
  for (int g = 0; g < num_groups; ++g) {
    char name[32];
    std::snprintf(name, sizeof(name), "group_%02d", g);
    nodes.push_back({name, 0});
  }
  std::vector<std::pair<std::string, int>> classes;
  std::vector<std::string> coarse_names;
  for (int g = 0; g < num_groups; ++g) {
    coarse_names.push_back(nodes[static_cast<std::size_t>(1 + g)].name);
  }
  for (int c = 0; c < num_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%02d", c);
    const int g = c / kGroupSize;
    nodes.push_back({name, 1 + g});
    classes.emplace_back(name, g);
  }
  return ClassTaxonomy(std::move(nodes), std::move(classes), std::move(coarse_names));
}

namespace {

// Per-class hue on a wheel where each coarse group occupies an arc: members
// of one group sit close together, and the boundary members of adjacent
// groups are nearer to each other than to far groups. Visual similarity then
// correlates with tree distance without making cross-group confusion
// impossible.
std::array<float, 3> class_color(int fine, int num_groups) {
  const int group = fine / 5;
  const int member = fine % 5;
  const double hue = (static_cast<double>(group) + 0.2 * member) /
                     static_cast<double>(std::max(1, num_groups));
  const double h = 6.0 * hue;
  const double s = 0.5, v = 0.75;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r, g, b;
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec, Split split) {
  if (spec.num_classes < 2) throw std::runtime_error("synthetic: need at least 2 classes");
  if (spec.images_per_class < 1) throw std::runtime_error("synthetic: images_per_class must be >= 1");
  if (spec.image_size < 4) throw std::runtime_error("synthetic: image_size must be >= 4");

  ClassTaxonomy tax = synthetic_taxonomy(spec.num_classes);
  const int num_groups = tax.num_coarse();
  const int s = spec.image_size;

  Dataset ds;
  ds.split = split;
  ds.provenance.source = "synthetic(classes=" + std::to_string(spec.num_classes) +
                         ",per_class=" + std::to_string(spec.images_per_class) +
                         ",size=" + std::to_string(s) + ",seed=" + std::to_string(spec.seed) + ")";
  ds.samples.reserve(static_cast<std::size_t>(spec.num_classes) *
                     static_cast<std::size_t>(spec.images_per_class));

  Rng rng(derive_seed(spec.seed, split == Split::kTrain ? "synthetic-train" : "synthetic-test"));
  constexpr float kNoiseSigma = 0.04f;
  constexpr float kRingAmp = 0.28f;
  const float cx = static_cast<float>(s - 1) / 2.0f;

  for (int y = 0; y < spec.num_classes; ++y) {
    const auto color = class_color(y, num_groups);
    const float freq = 2.0f + static_cast<float>(y % 5);
    for (int k = 0; k < spec.images_per_class; ++k) {
      Sample sample;
      sample.fine_label = y;
      sample.coarse_label = tax.coarse_of(y);
      sample.image.channels = 3;
      sample.image.height = s;
      sample.image.width = s;
      sample.image.pixels.resize(3ull * static_cast<std::size_t>(s) * static_cast<std::size_t>(s));
      for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < s; ++i) {
          const float shade = 0.55f + 0.45f * static_cast<float>(i) / static_cast<float>(s - 1);
          for (int jx = 0; jx < s; ++jx) {
            const float dy = static_cast<float>(i) - cx;
            const float dx = static_cast<float>(jx) - cx;
            const float r = std::sqrt(dx * dx + dy * dy);
            const float ring = kRingAmp * std::sin(6.2831853f * freq * r / static_cast<float>(s));
            const float noise = kNoiseSigma * static_cast<float>(rng.normal());
            sample.image.at(c, i, jx) = std::clamp(color[static_cast<std::size_t>(c)] * shade + ring + noise, 0.0f, 1.0f);
          }
        }
      }
      ds.samples.push_back(std::move(sample));
    }
  }
  return {std::move(ds), std::move(tax)};
}

Image flip_horizontal(const Image& img) {
  Image out = img;
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
      }
    }
  }
  return out;
}

std::pair<int, int> draw_crop_offsets(Rng& rng, int pad) {
  const int range = 2 * pad + 1;
  const int oy = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(range)));
  const int ox = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(range)));
  return {oy, ox};
}

Sample augment(const Sample& sample, const AugmentationConfig& cfg, Rng& rng) {
  if (cfg.crop_padding < 0) throw std::runtime_error("augment: crop_padding must be >= 0");
  if (cfg.hflip_probability < 0.0 || cfg.hflip_probability > 1.0) {
    throw std::runtime_error("augment: hflip_probability must be in [0,1]");
  }
  Sample out = sample;
  const Image& src = sample.image;
  if (cfg.crop_padding > 0) {
    const auto [oy, ox] = draw_crop_offsets(rng, cfg.crop_padding);
    Image cropped;
    cropped.channels = src.channels;
    cropped.height = src.height;
    cropped.width = src.width;
    cropped.pixels.assign(src.pixels.size(), 0.0f);
    const int pad = cfg.crop_padding;
    for (int c = 0; c < src.channels; ++c) {
      for (int y = 0; y < src.height; ++y) {
        const int sy = y + oy - pad;  // source row in the unpadded image
        if (sy < 0 || sy >= src.height) continue;
        for (int x = 0; x < src.width; ++x) {
          const int sx = x + ox - pad;
          if (sx < 0 || sx >= src.width) continue;
          cropped.at(c, y, x) = src.at(c, sy, sx);
        }
      }
    }
    out.image = std::move(cropped);
  }
  if (cfg.hflip_probability > 0.0 && rng.bernoulli(cfg.hflip_probability)) {
    out.image = flip_horizontal(out.image);
  }
  return out;
}

std::vector<std::vector<std::uint32_t>> batches(std::size_t n, std::size_t batch_size,
                                                std::uint64_t shuffle_seed) {
  if (batch_size < 1) throw std::runtime_error("batches: batch_size must be >= 1");
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  Rng rng(shuffle_seed);
  rng.shuffle(perm);
  std::vector<std::vector<std::uint32_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    const std::size_t end = std::min(n, i + batch_size);
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                     perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& manifest_path) {
  if (ds.samples.empty()) throw std::runtime_error("save_dataset: empty dataset");
  const auto& first = ds.samples.front().image;
  json fine = json::array(), coarse = json::array();
  std::vector<float> tensor;
  tensor.reserve(ds.size() * first.size());
  for (const auto& s : ds.samples) {
    if (s.image.channels != first.channels || s.image.height != first.height ||
        s.image.width != first.width) {
      throw std::runtime_error("save_dataset: samples have inconsistent shapes");
    }
    fine.push_back(s.fine_label);
    coarse.push_back(s.coarse_label);
    tensor.insert(tensor.end(), s.image.pixels.begin(), s.image.pixels.end());
  }
  const std::string tensor_name = manifest_path.stem().string() + ".f32";
  json manifest = {
      {"count", ds.size()},
      {"channels", first.channels},
      {"height", first.height},
      {"width", first.width},
      {"dtype", "f32"},
      {"tensor_file", tensor_name},
      {"split", ds.split == Split::kTrain ? "train" : "test"},
      {"source", ds.provenance.source},
      {"fine_labels", fine},
      {"coarse_labels", coarse},
  };
  if (!ds.provenance.corruption_kind.empty()) {
    manifest["corruption_kind"] = ds.provenance.corruption_kind;
    manifest["corruption_severity"] = ds.provenance.corruption_severity;
  }
  write_text_file(manifest_path, manifest.dump(2) + "\n");
  write_f32_file(manifest_path.parent_path() / tensor_name, tensor);
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  json m;
  try {
    m = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw std::runtime_error("dataset manifest: " + manifest_path.string() + ": " + e.what());
  }
  const std::size_t count = m.at("count").get<std::size_t>();
  const int channels = m.at("channels").get<int>();
  const int height = m.at("height").get<int>();
  const int width = m.at("width").get<int>();
  if (m.at("dtype").get<std::string>() != "f32") {
    throw std::runtime_error("dataset manifest: unsupported dtype");
  }
  const auto tensor = read_f32_file(manifest_path.parent_path() /
                                    m.at("tensor_file").get<std::string>());
  const std::size_t per_image = static_cast<std::size_t>(channels) *
                                static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  if (tensor.size() != count * per_image) {
    throw std::runtime_error("dataset manifest: tensor size mismatch (expected " +
                             std::to_string(count * per_image) + " floats, got " +
                             std::to_string(tensor.size()) + ")");
  }
  const auto& fine = m.at("fine_labels");
  const auto& coarse = m.at("coarse_labels");
  if (fine.size() != count || coarse.size() != count) {
    throw std::runtime_error("dataset manifest: label count mismatch");
  }
  Dataset ds;
  ds.split = m.at("split").get<std::string>() == "train" ? Split::kTrain : Split::kTest;
  ds.provenance.source = m.value("source", std::string("tensor-file"));
  ds.provenance.corruption_kind = m.value("corruption_kind", std::string());
  ds.provenance.corruption_severity = m.value("corruption_severity", 0);
  ds.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& s = ds.samples[i];
    s.fine_label = fine[i].get<int>();
    s.coarse_label = coarse[i].get<int>();
    s.image.channels = channels;
    s.image.height = height;
    s.image.width = width;
    s.image.pixels.assign(tensor.begin() + static_cast<std::ptrdiff_t>(i * per_image),
                          tensor.begin() + static_cast<std::ptrdiff_t>((i + 1) * per_image));
    for (float p : s.image.pixels) {
      if (p < 0.0f || p > 1.0f) {
        throw std::runtime_error("dataset manifest: pixel value out of [0,1] in sample " +
                                 std::to_string(i));
      }
    }
  }
  return ds;
}

}  // namespace sevtrain
