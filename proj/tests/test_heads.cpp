#include <cmath>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "ssvd/errors.hpp"
#include "ssvd/heads.hpp"

using namespace ssvd;

TEST_CASE("anchor generation") {
  const AnchorConfig cfg;
  CHECK(cfg.anchors_per_location() == 9);
  const auto anchors = generate_anchors(cfg, 448, 448);
  CHECK(anchors.size() == 37485u);
  CHECK(anchors.size() == (56u * 56 + 28 * 28 + 14 * 14 + 7 * 7) * 9);
  for (int side : {64, 128, 192, 320}) {
    std::size_t cells = 0;
    for (int level : kPyramidLevels) {
      const int s = level_stride(level);
      cells += static_cast<std::size_t>((side + s - 1) / s) * ((side + s - 1) / s);
    }
    CHECK(generate_anchors(cfg, side, side).size() == cells * 9);
  }

  // First P3 location, ratio 1:1 (index 1), factor 1 (index 0) -> slot 3.
  const Anchor& sq = anchors[3];
  CHECK(sq.level == 3);
  CHECK(sq.slot == 3);
  CHECK(sq.box.width() == doctest::Approx(32.0));
  CHECK(sq.box.height() == doctest::Approx(32.0));
  CHECK(sq.box.center_x() == doctest::Approx(4.0));
  CHECK(sq.box.center_y() == doctest::Approx(4.0));

  const Anchor& tall = anchors[0];  // ratio 1:2, factor 1
  CHECK(tall.box.width() == doctest::Approx(32.0 / std::sqrt(2.0)));
  CHECK(tall.box.height() == doctest::Approx(32.0 * std::sqrt(2.0)));
  CHECK(std::fabs(tall.box.width() * tall.box.height() - 1024.0) < 1e-4);

  // Ordering (level, y, x, slot).
  CHECK(anchors[9].x == 1);
  CHECK(anchors[9 * 56].y == 1);
  CHECK(anchors[56 * 56 * 9].level == 4);
  CHECK(anchors.back().level == 6);
  CHECK(anchors.back().box.center_x() == doctest::Approx(64.0 * 6.5));
  CHECK(anchors[56 * 56 * 9 + 3].box.width() == doctest::Approx(64.0));

  CHECK_THROWS_AS(generate_anchors(cfg, 100, 448), ConfigError);

  std::stringstream csv;
  write_anchor_csv(csv, generate_anchors(cfg, 64, 64));
  std::string header;
  std::getline(csv, header);
  CHECK(header == "level,y,x,slot,x1,y1,x2,y2");
}

TEST_CASE("head outputs") {
  HeadConfig hc{8, 3, 9};
  FeaturePyramid p;
  Rng rng(3);
  for (int level : kPyramidLevels) {
    const int side = 448 >> level;
    p.level(level) = oracle::random_tensor(rng, 1, 8, side, side);
  }
  const HeadOutputs zero = head_forward(p, HeadWeights::zeros(hc));
  CHECK(zero.logits[0].shape() == Shape{1, 27, 56, 56});
  CHECK(zero.deltas[0].shape() == Shape{1, 36, 56, 56});
  CHECK(zero.logits[3].shape() == Shape{1, 27, 7, 7});
  for (float v : zero.logits[2].data()) CHECK(v == 0.0f);
  CHECK(zero.anchor_count() == 37485u);

  const HeadWeights w = init_head_weights(5, hc);
  const HeadOutputs a = head_forward(p, w);
  const HeadOutputs b = head_forward(p, w);
  for (int i = 0; i < kLevelCount; ++i) {
    CHECK(a.logits[i].identical(b.logits[i]));
    CHECK(a.deltas[i].identical(b.deltas[i]));
  }
  CHECK(a.flat_logits().size() == 37485u * 3);
  CHECK(a.flat_deltas().size() == 37485u * 4);
  // Flat order is anchor-major then class.
  CHECK(a.flat_logits()[(5 * 9 + 2) * 3 + 1] == a.logits[0].at(0, 2 * 3 + 1, 0, 5));

  for (const auto [k, na] : {std::pair{1, 1}, std::pair{5, 9}, std::pair{2, 6}}) {
    const HeadOutputs o = head_forward(p, HeadWeights::zeros({8, k, na}));
    CHECK(o.logits[1].channels() == k * na);
    CHECK(o.deltas[1].channels() == 4 * na);
  }
  CHECK_THROWS_AS(head_forward(p, HeadWeights::zeros({16, 3, 9})), DimensionError);
}

TEST_CASE("box encoding") {
  const Box a{10, 20, 50, 60};
  const Deltas z = encode_box(a, a);
  for (double v : z) CHECK(v == 0.0);
  const Box doubled{-10, 0, 70, 80};
  const Deltas d = encode_box(a, doubled);
  CHECK(d[0] == doctest::Approx(0.0));
  CHECK(d[2] == doctest::Approx(std::log(2.0)));
  CHECK(d[3] == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(encode_box(a, Box{0, 0, 0, 5}), ValidationError);
  CHECK_THROWS_AS(decode_box(Box{0, 0, 5, -1}, z), ValidationError);

  Rng rng(12);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    auto rb = [&] {
      const double x = rng.uniform(-50, 500);
      const double y = rng.uniform(-50, 500);
      return Box{x, y, x + rng.uniform(1, 300), y + rng.uniform(1, 300)};
    };
    const Box an = rb();
    const Box gt = rb();
    const Box back = decode_box(an, encode_box(an, gt));
    worst = std::max({worst, std::fabs(back.x1 - gt.x1), std::fabs(back.y1 - gt.y1),
                      std::fabs(back.x2 - gt.x2), std::fabs(back.y2 - gt.y2)});
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("anchor matching") {
  const std::vector<Anchor> anchors{
      {{0, 0, 10, 10}, 3, 0, 0, 0},
      {{0, 0, 10, 4.5}, 3, 0, 0, 1},
      {{50, 50, 60, 60}, 3, 0, 0, 2},
      {{0, 0, 10, 6}, 3, 0, 0, 3},
  };
  const std::vector<LabeledBox> gts{{{0, 0, 10, 10}, 2, 0}};
  const auto m = match_anchors(anchors, gts);
  CHECK(m[0].kind == MatchKind::foreground);
  CHECK(m[0].class_id == 2);
  CHECK(iou(anchors[1].box, gts[0].box) == doctest::Approx(0.45));
  CHECK(m[1].kind == MatchKind::ignore);
  CHECK(m[2].kind == MatchKind::background);
  CHECK(m[3].kind == MatchKind::foreground);
  CHECK(count_foreground(m) == 2);

  SUBCASE("no ground truth means all background") {
    for (const auto& a : match_anchors(anchors, {})) CHECK(a.kind == MatchKind::background);
  }
  SUBCASE("low-overlap ground truth still claims its best anchor") {
    const std::vector<LabeledBox> far{{{40, 40, 62, 62}, 1, 0}};
    const auto mm = match_anchors(anchors, far);
    CHECK(mm[2].kind == MatchKind::foreground);
    CHECK(count_foreground(mm) == 1);
  }
  SUBCASE("every ground truth gets a foreground anchor") {
    Rng rng(2);
    const auto real = generate_anchors(AnchorConfig{}, 128, 128);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<LabeledBox> g;
      for (int i = 0; i < 4; ++i) {
        const double x = rng.uniform(0, 100);
        const double y = rng.uniform(0, 100);
        g.push_back({{x, y, x + rng.uniform(8, 60), y + rng.uniform(8, 60)}, i % 3, i});
      }
      const auto mm = match_anchors(real, g);
      for (int gi = 0; gi < 4; ++gi) {
        CHECK(std::any_of(mm.begin(), mm.end(), [&](const Assignment& a) {
          return a.kind == MatchKind::foreground && a.gt_index == gi;
        }));
      }
    }
  }
}
