#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "sevtrain/data.hpp"

using namespace sevtrain;

TEST_SUITE_BEGIN("data");

namespace {

std::vector<std::uint8_t> make_cifar_record(std::uint8_t coarse, std::uint8_t fine,
                                            std::uint8_t fill) {
  std::vector<std::uint8_t> rec(kCifarRecordBytes, fill);
  rec[0] = coarse;
  rec[1] = fine;
  return rec;
}

}  // namespace

TEST_CASE("cifar record arithmetic and scaling") {
  CHECK(kCifarRecordBytes == 3074);  // 2 label bytes + 3*32*32 pixels

  auto rec = make_cifar_record(3, 42, 0);
  rec[2] = 255;  // first pixel of the red plane
  const auto ds = parse_cifar100_binary(rec, Split::kTest);
  REQUIRE(ds.size() == 1);
  CHECK(ds.samples[0].coarse_label == 3);
  CHECK(ds.samples[0].fine_label == 42);
  CHECK(ds.samples[0].image.at(0, 0, 0) == doctest::Approx(1.0));
  CHECK(ds.samples[0].image.at(0, 0, 1) == doctest::Approx(0.0));
  CHECK(ds.samples[0].image.pixels.size() == 3072);
}

TEST_CASE("cifar parser rejects bad input") {
  SUBCASE("truncated stream") {
    std::vector<std::uint8_t> bytes(3073, 0);
    CHECK_THROWS_WITH_AS(parse_cifar100_binary(bytes, Split::kTrain),
                         doctest::Contains("truncated"), std::runtime_error);
  }
  SUBCASE("fine label out of range") {
    auto rec = make_cifar_record(0, 120, 7);
    CHECK_THROWS_WITH_AS(parse_cifar100_binary(rec, Split::kTrain),
                         doctest::Contains("fine label 120"), std::runtime_error);
  }
  SUBCASE("coarse label out of range") {
    auto rec = make_cifar_record(21, 3, 7);
    CHECK_THROWS_WITH_AS(parse_cifar100_binary(rec, Split::kTrain),
                         doctest::Contains("coarse label 21"), std::runtime_error);
  }
}

TEST_CASE("cifar parse/serialize round-trip is byte exact") {
  Rng rng(404);
  std::vector<std::uint8_t> bytes;
  for (int r = 0; r < 5; ++r) {
    auto rec = make_cifar_record(static_cast<std::uint8_t>(r % 20),
                                 static_cast<std::uint8_t>(r * 17 % 100), 0);
    for (std::size_t i = 2; i < rec.size(); ++i) {
      rec[i] = static_cast<std::uint8_t>(rng.uniform_index(256));
    }
    bytes.insert(bytes.end(), rec.begin(), rec.end());
  }
  const auto ds = parse_cifar100_binary(bytes, Split::kTrain);
  CHECK(serialize_cifar100_binary(ds) == bytes);
}

TEST_CASE("synthetic generation is deterministic and counted") {
  SyntheticSpec spec{4, 10, 16, 123};
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  REQUIRE(a.dataset.size() == 40);
  CHECK(a.taxonomy.num_fine() == 4);
  CHECK(a.taxonomy.num_coarse() == 1);
  for (std::size_t i = 0; i < a.dataset.size(); ++i) {
    CHECK(a.dataset.samples[i].image.pixels == b.dataset.samples[i].image.pixels);
    CHECK(a.dataset.samples[i].fine_label == b.dataset.samples[i].fine_label);
  }
  // different seeds differ
  SyntheticSpec other = spec;
  other.seed = 124;
  const auto c = generate_synthetic(other);
  CHECK(c.dataset.samples[0].image.pixels != a.dataset.samples[0].image.pixels);

  CHECK_THROWS(generate_synthetic(SyntheticSpec{1, 10, 16, 1}));
  CHECK_THROWS(generate_synthetic(SyntheticSpec{4, 0, 16, 1}));
}

TEST_CASE("synthetic classes separate under a nearest-centroid oracle") {
  SyntheticSpec spec{20, 20, 32, 5};
  const auto train = generate_synthetic(spec, Split::kTrain);
  SyntheticSpec test_spec = spec;
  test_spec.images_per_class = 5;
  const auto test = generate_synthetic(test_spec, Split::kTest);

  const std::size_t d = train.dataset.samples[0].image.pixels.size();
  std::vector<std::vector<double>> centroids(20, std::vector<double>(d, 0.0));
  std::vector<int> counts(20, 0);
  for (const auto& s : train.dataset.samples) {
    auto& c = centroids[static_cast<std::size_t>(s.fine_label)];
    for (std::size_t i = 0; i < d; ++i) c[i] += s.image.pixels[i];
    ++counts[static_cast<std::size_t>(s.fine_label)];
  }
  for (int y = 0; y < 20; ++y) {
    for (auto& v : centroids[static_cast<std::size_t>(y)]) {
      v /= counts[static_cast<std::size_t>(y)];
    }
  }
  int correct = 0;
  for (const auto& s : test.dataset.samples) {
    double best = 1e300;
    int arg = -1;
    for (int y = 0; y < 20; ++y) {
      double dist = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double diff = s.image.pixels[i] - centroids[static_cast<std::size_t>(y)][i];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        arg = y;
      }
    }
    if (arg == s.fine_label) ++correct;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(test.dataset.size());
  CHECK(acc > 0.90);
}

TEST_CASE("synthetic pixel range and label consistency") {
  SyntheticSpec spec{7, 6, 20, 9};
  const auto out = generate_synthetic(spec);
  for (const auto& s : out.dataset.samples) {
    CHECK(s.coarse_label == out.taxonomy.coarse_of(s.fine_label));
    for (float p : s.image.pixels) {
      CHECK(p >= 0.0f);
      CHECK(p <= 1.0f);
    }
  }
}

TEST_CASE("augment") {
  SyntheticSpec spec{2, 1, 12, 3};
  const auto data = generate_synthetic(spec);
  const Sample& s = data.dataset.samples[0];

  SUBCASE("no padding, no flip is the identity") {
    Rng rng(1);
    const auto out = augment(s, AugmentationConfig{0, 0.0}, rng);
    CHECK(out.image.pixels == s.image.pixels);
    CHECK(out.fine_label == s.fine_label);
  }
  SUBCASE("flip is an involution") {
    CHECK(flip_horizontal(flip_horizontal(s.image)).pixels == s.image.pixels);
  }
  SUBCASE("crop offsets stay in {0..2*pad}^2") {
    Rng rng(2);
    for (int i = 0; i < 500; ++i) {
      const auto [oy, ox] = draw_crop_offsets(rng, 4);
      CHECK(oy >= 0);
      CHECK(oy <= 8);
      CHECK(ox >= 0);
      CHECK(ox <= 8);
    }
  }
  SUBCASE("intensities stay in range and labels never change") {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
      const auto out = augment(s, AugmentationConfig{4, 0.5}, rng);
      CHECK(out.fine_label == s.fine_label);
      CHECK(out.coarse_label == s.coarse_label);
      CHECK(out.image.pixels.size() == s.image.pixels.size());
      for (float p : out.image.pixels) {
        CHECK(p >= 0.0f);
        CHECK(p <= 1.0f);
      }
    }
  }
}

TEST_CASE("batches partition a seeded permutation") {
  const auto b = batches(250, 100, 42);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 100);
  CHECK(b[1].size() == 100);
  CHECK(b[2].size() == 50);

  const auto b2 = batches(250, 100, 42);
  CHECK(b == b2);
  const auto b3 = batches(250, 100, 43);
  CHECK(b != b3);

  std::set<std::uint32_t> seen;
  for (const auto& batch : b) {
    for (auto idx : batch) CHECK(seen.insert(idx).second);
  }
  CHECK(seen.size() == 250);
  CHECK(*seen.rbegin() == 249);

  CHECK_THROWS(batches(10, 0, 1));
}

TEST_CASE("dataset tensor-file round trip") {
  SyntheticSpec spec{3, 4, 8, 11};
  auto data = generate_synthetic(spec);
  const auto dir = std::filesystem::temp_directory_path() / "sevtrain_data_test";
  std::filesystem::create_directories(dir);
  save_dataset(data.dataset, dir / "set.json");
  const auto loaded = load_dataset(dir / "set.json");
  REQUIRE(loaded.size() == data.dataset.size());
  CHECK(loaded.split == data.dataset.split);
  CHECK(loaded.provenance.source == data.dataset.provenance.source);
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded.samples[i].image.pixels == data.dataset.samples[i].image.pixels);
    CHECK(loaded.samples[i].fine_label == data.dataset.samples[i].fine_label);
    CHECK(loaded.samples[i].coarse_label == data.dataset.samples[i].coarse_label);
  }
  std::filesystem::remove_all(dir);
}

TEST_SUITE_END();
