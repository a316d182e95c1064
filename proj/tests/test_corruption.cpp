#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "sevtrain/corruption.hpp"
#include "sevtrain/util.hpp"

using namespace sevtrain;

TEST_SUITE_BEGIN("corruption");

namespace {

double mean_l2_distortion(const Dataset& clean, const Dataset& corrupted) {
  double total = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    double sq = 0.0;
    const auto& a = clean.samples[i].image.pixels;
    const auto& b = corrupted.samples[i].image.pixels;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double diff = a[k] - b[k];
      sq += diff * diff;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(clean.size());
}

Dataset synthetic_test_set(int n_classes, int per_class, int size, std::uint64_t seed) {
  auto out = generate_synthetic(SyntheticSpec{n_classes, per_class, size, seed}, Split::kTest);
  return std::move(out.dataset);
}

}  // namespace

TEST_CASE("parameter tables") {
  const auto t = CorruptionTables::defaults();
  SUBCASE("strictly monotone per kind") {
    for (CorruptionKind k : all_corruption_kinds()) {
      for (int s = 1; s < 5; ++s) {
        const double a = t.value(k, s), b = t.value(k, s + 1);
        if (k == CorruptionKind::kContrast || k == CorruptionKind::kSaturation) {
          CHECK(b < a);  // smaller factor = stronger corruption
        } else {
          CHECK(b > a);
        }
      }
    }
  }
  SUBCASE("severity bounds enforced") {
    CHECK_THROWS_WITH_AS(t.value(CorruptionKind::kBrightness, 0), doctest::Contains("severity"),
                         std::runtime_error);
    CHECK_THROWS(t.value(CorruptionKind::kBrightness, 6));
  }
  SUBCASE("repo config file matches the built-in defaults") {
    const auto from_file =
        CorruptionTables::load(std::filesystem::path(SEVTRAIN_REPO_DATA_DIR) / "corruption_params.json");
    for (CorruptionKind k : all_corruption_kinds()) {
      for (int s = 1; s <= 5; ++s) CHECK(from_file.value(k, s) == t.value(k, s));
    }
  }
  SUBCASE("save/load round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "sevtrain_corr_params";
    std::filesystem::create_directories(dir);
    t.save(dir / "p.json");
    const auto back = CorruptionTables::load(dir / "p.json");
    CHECK(back.gaussian_noise_sigma == t.gaussian_noise_sigma);
    CHECK(back.pixelate_block == t.pixelate_block);
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("kernel edge behavior") {
  const auto tables = CorruptionTables::defaults();

  SUBCASE("brightness saturates on an all-white image") {
    Image white{3, 8, 8, std::vector<float>(3 * 8 * 8, 1.0f)};
    const auto out = apply_corruption(white, {CorruptionKind::kBrightness, 5, 0}, tables);
    CHECK(out.pixels == white.pixels);
  }
  SUBCASE("blur with sigma -> 0 is the identity within 1e-6") {
    const auto ds = synthetic_test_set(2, 1, 10, 3);
    const auto& img = ds.samples[0].image;
    const auto out = gaussian_blur(img, 1e-4);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      CHECK(std::abs(out.pixels[i] - img.pixels[i]) < 1e-6f);
    }
  }
  SUBCASE("pixelate with block 1 is the identity") {
    const auto ds = synthetic_test_set(2, 1, 9, 4);
    const auto& img = ds.samples[0].image;
    CorruptionTables t1 = tables;
    t1.pixelate_block = {1, 2, 3, 4, 5};
    const auto out = apply_corruption(img, {CorruptionKind::kPixelate, 1, 0}, t1);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      CHECK(out.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-6));
    }
  }
  SUBCASE("unknown severity rejected through apply") {
    const auto ds = synthetic_test_set(2, 1, 8, 5);
    CHECK_THROWS(apply_corruption(ds.samples[0].image, {CorruptionKind::kContrast, 9, 0}, tables));
  }
}

TEST_CASE("all kernels preserve shape and range") {
  const auto tables = CorruptionTables::defaults();
  const auto ds = synthetic_test_set(4, 3, 16, 17);
  for (CorruptionKind k : all_corruption_kinds()) {
    for (int s = 1; s <= 5; ++s) {
      for (const auto& sample : ds.samples) {
        const auto out = apply_corruption(sample.image, {k, s, 99}, tables);
        CHECK(out.channels == sample.image.channels);
        CHECK(out.height == sample.image.height);
        CHECK(out.width == sample.image.width);
        for (float p : out.pixels) {
          CHECK(p >= 0.0f);
          CHECK(p <= 1.0f);
        }
      }
    }
  }
}

TEST_CASE("noise severity 5 distorts more than severity 1 (pinned seed)") {
  const auto tables = CorruptionTables::defaults();
  const auto ds = synthetic_test_set(10, 10, 16, 2001);  // 100 images
  const auto low = build_corrupted_set(ds, {CorruptionKind::kGaussianNoise, 1, 11}, tables);
  const auto high = build_corrupted_set(ds, {CorruptionKind::kGaussianNoise, 5, 11}, tables);
  CHECK(mean_l2_distortion(ds, high) > mean_l2_distortion(ds, low));
}

TEST_CASE("severity monotonicity of mean distortion, every kind") {
  const auto tables = CorruptionTables::defaults();
  const auto ds = synthetic_test_set(10, 10, 16, 2002);
  for (CorruptionKind k : all_corruption_kinds()) {
    double prev = -1.0;
    for (int s = 1; s <= 5; ++s) {
      const auto corrupted = build_corrupted_set(ds, {k, s, 31}, tables);
      const double d = mean_l2_distortion(ds, corrupted);
      INFO(corruption_kind_name(k), " severity ", s, " distortion ", d);
      CHECK(d > prev);
      prev = d;
    }
  }
}

TEST_CASE("build_corrupted_set bookkeeping") {
  const auto tables = CorruptionTables::defaults();
  const auto ds = synthetic_test_set(3, 4, 12, 7);
  const CorruptionSpec spec{CorruptionKind::kImpulseNoise, 3, 55};
  const auto a = build_corrupted_set(ds, spec, tables);
  CHECK(a.size() == ds.size());
  CHECK(a.provenance.corruption_kind == "impulse_noise");
  CHECK(a.provenance.corruption_severity == 3);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(a.samples[i].fine_label == ds.samples[i].fine_label);
    CHECK(a.samples[i].coarse_label == ds.samples[i].coarse_label);
  }
  SUBCASE("same seed is bit-identical, different seed differs") {
    const auto b = build_corrupted_set(ds, spec, tables);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(a.samples[i].image.pixels == b.samples[i].image.pixels);
    }
    CorruptionSpec other = spec;
    other.seed = 56;
    const auto c = build_corrupted_set(ds, other, tables);
    bool any_diff = false;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      any_diff |= (a.samples[i].image.pixels != c.samples[i].image.pixels);
    }
    CHECK(any_diff);
  }
  SUBCASE("deterministic kinds ignore the seed entirely") {
    for (CorruptionKind k : {CorruptionKind::kGaussianBlur, CorruptionKind::kBrightness,
                             CorruptionKind::kContrast, CorruptionKind::kSaturation,
                             CorruptionKind::kPixelate}) {
      CHECK_FALSE(corruption_uses_seed(k));
      const auto x = build_corrupted_set(ds, {k, 2, 1}, tables);
      const auto y = build_corrupted_set(ds, {k, 2, 999}, tables);
      for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(x.samples[i].image.pixels == y.samples[i].image.pixels);
      }
    }
    CHECK(corruption_uses_seed(CorruptionKind::kGaussianNoise));
    CHECK(corruption_uses_seed(CorruptionKind::kImpulseNoise));
  }
}

TEST_CASE("precomputed corruption sets") {
  const auto tax = synthetic_taxonomy(6);
  const auto dir = std::filesystem::temp_directory_path() / "sevtrain_precomp";
  std::filesystem::create_directories(dir);
  const int size = 8;
  const std::size_t per_image = 3ull * size * size;

  SUBCASE("u8 tensor with a single severity") {
    const std::size_t n = 10;
    std::vector<std::uint8_t> tensor(n * per_image);
    Rng rng(3);
    for (auto& b : tensor) b = static_cast<std::uint8_t>(rng.uniform_index(256));
    std::vector<std::uint8_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint8_t>(i % 6);
    write_binary_file(dir / "t.u8", tensor.data(), tensor.size());
    write_binary_file(dir / "l.u8", labels.data(), labels.size());
    write_text_file(dir / "m.json", R"({
      "kind": "fog", "severity": 2, "count": 10, "dtype": "u8",
      "tensor_file": "t.u8", "label_file": "l.u8", "image_size": 8, "channels": 3
    })");
    const auto sets = load_precomputed_corruption_set(dir / "m.json", tax);
    REQUIRE(sets.size() == 1);
    CHECK(sets[0].size() == 10);
    CHECK(sets[0].provenance.corruption_kind == "fog");
    CHECK(sets[0].provenance.corruption_severity == 2);
    CHECK(sets[0].samples[3].fine_label == 3);
    CHECK(sets[0].samples[3].coarse_label == tax.coarse_of(3));
    CHECK(sets[0].samples[0].image.at(0, 0, 0) ==
          doctest::Approx(tensor[0] / 255.0f).epsilon(1e-6));
  }

  SUBCASE("count mismatch is an error") {
    std::vector<std::uint8_t> tensor(3 * per_image, 0);
    std::vector<std::uint8_t> labels(4, 0);
    write_binary_file(dir / "bad.u8", tensor.data(), tensor.size());
    write_binary_file(dir / "badl.u8", labels.data(), labels.size());
    write_text_file(dir / "bad.json", R"({
      "kind": "fog", "severity": 1, "count": 4, "dtype": "u8",
      "tensor_file": "bad.u8", "label_file": "badl.u8", "image_size": 8, "channels": 3
    })");
    CHECK_THROWS_WITH_AS(load_precomputed_corruption_set(dir / "bad.json", tax),
                         doctest::Contains("manifest says"), std::runtime_error);
  }

  SUBCASE("severity-ordered blocks slice into five datasets") {
    const std::size_t per_sev = 4, n = per_sev * 5;
    std::vector<float> tensor(n * per_image);
    for (std::size_t i = 0; i < n; ++i) {
      // block index encoded in the first pixel for verification
      tensor[i * per_image] = static_cast<float>(i / per_sev) / 8.0f;
    }
    std::vector<std::uint8_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint8_t>(i % 6);
    write_f32_file(dir / "b.f32", tensor);
    write_binary_file(dir / "bl.u8", labels.data(), labels.size());
    write_text_file(dir / "blocks.json", R"({
      "kind": "elastic", "severity_blocks": true, "count": 20, "dtype": "f32",
      "tensor_file": "b.f32", "label_file": "bl.u8", "image_size": 8, "channels": 3
    })");
    const auto sets = load_precomputed_corruption_set(dir / "blocks.json", tax);
    REQUIRE(sets.size() == 5);
    for (int s = 0; s < 5; ++s) {
      CHECK(sets[static_cast<std::size_t>(s)].size() == per_sev);
      CHECK(sets[static_cast<std::size_t>(s)].provenance.corruption_severity == s + 1);
      CHECK(sets[static_cast<std::size_t>(s)].samples[0].image.pixels[0] ==
            doctest::Approx(s / 8.0).epsilon(1e-6));
    }
  }

  SUBCASE("f32 pixels outside [0,1] are rejected") {
    std::vector<float> tensor(per_image, 1.5f);
    std::vector<std::uint8_t> labels(1, 0);
    write_f32_file(dir / "r.f32", tensor);
    write_binary_file(dir / "rl.u8", labels.data(), labels.size());
    write_text_file(dir / "r.json", R"({
      "kind": "x", "severity": 1, "count": 1, "dtype": "f32",
      "tensor_file": "r.f32", "label_file": "rl.u8", "image_size": 8, "channels": 3
    })");
    CHECK_THROWS_WITH_AS(load_precomputed_corruption_set(dir / "r.json", tax),
                         doctest::Contains("out of declared"), std::runtime_error);
  }
  std::filesystem::remove_all(dir);
}

TEST_SUITE_END();
