#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "ssvd/backbone.hpp"
#include "ssvd/checkpoint.hpp"
#include "ssvd/errors.hpp"

using namespace ssvd;

namespace {

Tensor random_frame(std::uint64_t seed, int h, int w) {
  Rng rng(seed);
  return oracle::random_tensor(rng, 1, 3, h, w, 0.0, 1.0);
}

BackboneConfig small_config() { return {3, 8}; }

}  // namespace

TEST_CASE("pyramid level sizes") {
  const BackboneWeights w = init_backbone_weights(0, small_config());
  SUBCASE("448 input") {
    const FeaturePyramid p = extract_pyramid(random_frame(1, 448, 448), w);
    CHECK(p.level(3).shape() == Shape{1, 8, 56, 56});
    CHECK(p.level(4).shape() == Shape{1, 8, 28, 28});
    CHECK(p.level(5).shape() == Shape{1, 8, 14, 14});
    CHECK(p.level(6).shape() == Shape{1, 8, 7, 7});
  }
  SUBCASE("64 input and rectangular inputs") {
    const FeaturePyramid p = extract_pyramid(random_frame(1, 64, 64), w);
    for (int level : kPyramidLevels) {
      CHECK(p.level(level).height() == 64 >> level);
    }
    const FeaturePyramid r = extract_pyramid(random_frame(2, 128, 192), w);
    for (int level : kPyramidLevels) {
      const int s = level_stride(level);
      CHECK(r.level(level).height() == (128 + s - 1) / s);
      CHECK(r.level(level).width() == (192 + s - 1) / s);
    }
  }
  SUBCASE("indivisible input is a configuration error") {
    CHECK_THROWS_AS(extract_pyramid(random_frame(1, 100, 128), w), ConfigError);
    CHECK_THROWS_AS(extract_pyramid(random_frame(1, 32, 64), w), ConfigError);
  }
}

TEST_CASE("backbone determinism and seeds") {
  const BackboneWeights a = init_backbone_weights(0, small_config());
  const BackboneWeights b = init_backbone_weights(0, small_config());
  const BackboneWeights c = init_backbone_weights(1, small_config());
  CHECK(a.stem.weight.identical(b.stem.weight));
  CHECK_FALSE(a.stem.weight.identical(c.stem.weight));
  const Tensor f = random_frame(3, 64, 128);
  const FeaturePyramid pa = extract_pyramid(f, a);
  CHECK(pa.identical(extract_pyramid(f, b)));
  CHECK_FALSE(pa.identical(extract_pyramid(f, c)));
  for (const Tensor& t : pa.levels) CHECK(t.all_finite());

  const auto [m, s] = dual_pyramids(f, a, c);
  CHECK(m.identical(pa));
  CHECK(s.identical(extract_pyramid(f, c)));
  const auto [m2, s2] = dual_pyramids(f, a, a);
  CHECK(m2.identical(s2));
}

TEST_CASE("checkpoint round trip preserves every output bit") {
  const BackboneWeights w = init_backbone_weights(7, small_config());
  NamedTensors nt;
  w.save(nt, "motion.backbone");
  const auto path = std::filesystem::temp_directory_path() / "ssvd_test_backbone.wgts";
  save_checkpoint(path.string(), nt);
  const NamedTensors loaded = load_checkpoint(path.string());
  const BackboneWeights w2 = BackboneWeights::load(loaded, "motion.backbone", small_config());
  const Tensor f = random_frame(4, 64, 64);
  CHECK(extract_pyramid(f, w).identical(extract_pyramid(f, w2)));

  SUBCASE("missing entry names it") {
    try {
      BackboneWeights::load(loaded, "sampling.backbone", small_config());
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("sampling.backbone") != std::string::npos);
    }
  }
  SUBCASE("shape mismatch rejected") {
    CHECK_THROWS_AS(BackboneWeights::load(loaded, "motion.backbone", {3, 16}), IoError);
  }
  SUBCASE("truncated file rejected") {
    std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
    CHECK_THROWS_AS(load_checkpoint(path.string()), IoError);
  }
  std::filesystem::remove(path);
}
