#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "ssvd/losses.hpp"

using namespace ssvd;

TEST_CASE("focal loss values") {
  CHECK(focal_loss(0.5, true, 0.25, 2.0) == doctest::Approx(0.25 * 0.25 * std::log(2.0)));
  CHECK(focal_loss(0.5, true, 0.25, 2.0) == doctest::Approx(0.043322).epsilon(1e-5));
  for (double p : {0.1, 0.3, 0.7, 0.95}) {
    CHECK(focal_loss(p, true, 0.5, 0.0) == doctest::Approx(0.5 * -std::log(p)));
    CHECK(focal_loss(p, false, 0.5, 0.0) == doctest::Approx(0.5 * -std::log(1 - p)));
  }
  CHECK(focal_loss(0.0, true, 0.25, 2.0) == doctest::Approx(0.25 * -std::log(1e-7)));
  CHECK(std::isfinite(focal_loss(1.0, false, 0.25, 2.0)));
}

TEST_CASE("focal loss monotonicity") {
  double prev_pos = focal_loss(0.001, true, 0.25, 2.0);
  double prev_neg = focal_loss(0.001, false, 0.25, 2.0);
  for (int i = 2; i < 1000; ++i) {
    const double p = i / 1000.0;
    const double pos = focal_loss(p, true, 0.25, 2.0);
    const double neg = focal_loss(p, false, 0.25, 2.0);
    CHECK(pos >= 0.0);
    CHECK(neg >= 0.0);
    CHECK(pos < prev_pos);
    CHECK(neg > prev_neg);
    prev_pos = pos;
    prev_neg = neg;
    double prev_gamma = focal_loss(p, true, 0.25, 0.0);
    for (double g : {0.5, 1.0, 2.0, 5.0}) {
      const double v = focal_loss(p, true, 0.25, g);
      CHECK(v <= prev_gamma);
      prev_gamma = v;
    }
  }
  CHECK(focal_loss(1.0 - 1e-9, true, 0.25, 2.0) < 1e-15);
}

TEST_CASE("smooth L1") {
  const Deltas t{0.1, -0.2, 0.3, 0.4};
  CHECK(smooth_l1(t, t) == 0.0);
  CHECK(smooth_l1(Deltas{0.5, 0, 0, 0}, Deltas{0, 0, 0, 0}) == doctest::Approx(0.125));
  CHECK(smooth_l1(Deltas{0, 3, 0, 0}, Deltas{0, 0, 0, 0}) == doctest::Approx(2.5));
  CHECK(smooth_l1(1.0) == doctest::Approx(0.5));
  const double h = 1e-7;
  CHECK((smooth_l1(1.0) - smooth_l1(1.0 - h)) / h == doctest::Approx(1.0).epsilon(1e-6));
  CHECK((smooth_l1(1.0 + h) - smooth_l1(1.0)) / h == doctest::Approx(1.0).epsilon(1e-6));
}

namespace {

struct Fixture {
  std::vector<Anchor> anchors;
  LossTargets targets;
  FlatOutputs motion;
  FlatOutputs sampling;
};

Fixture make_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture f;
  f.anchors = generate_anchors(AnchorConfig{}, 64, 64);
  std::vector<LabeledBox> gts;
  for (int i = 0; i < 4; ++i) {
    const double x = rng.uniform(0, 30);
    const double y = rng.uniform(0, 30);
    gts.push_back({{x, y, x + rng.uniform(16, 34), y + rng.uniform(16, 34)}, i % 3, i});
  }
  f.targets = make_targets(f.anchors, gts, 3);
  auto fill = [&](FlatOutputs& o) {
    o.logits.resize(f.anchors.size() * 3);
    o.deltas.resize(f.anchors.size() * 4);
    for (double& v : o.logits) v = rng.uniform(-3, 3);
    for (std::size_t a = 0; a < f.anchors.size(); ++a)
      for (int j = 0; j < 4; ++j) {
        // keep clear of the smooth-L1 kink at |d| = 1
        double d;
        do {
          d = rng.uniform(-2.5, 2.5);
        } while (std::fabs(std::fabs(d) - 1.0) < 1e-3 || std::fabs(d) < 0.05);
        o.deltas[a * 4 + j] = f.targets.box_targets[a][j] + d;
      }
  };
  fill(f.motion);
  fill(f.sampling);
  return f;
}

}  // namespace

TEST_CASE("total loss structure") {
  const Fixture f = make_fixture(1);
  const LossBreakdown b = total_loss(&f.motion, &f.sampling, f.targets);
  CHECK(b.n_fg == f.targets.foreground());
  CHECK(b.n_fg > 0);
  CHECK(b.total == doctest::Approx((b.focal_motion + b.focal_sampling + b.loc_motion +
                                    b.loc_sampling) / b.n_fg));
  const LossBreakdown swapped = total_loss(&f.sampling, &f.motion, f.targets);
  CHECK(swapped.total == b.total);
  CHECK(swapped.focal_motion == b.focal_sampling);

  const LossBreakdown same = total_loss(&f.motion, &f.motion, f.targets);
  CHECK(same.focal_motion == same.focal_sampling);
  CHECK(same.loc_motion == same.loc_sampling);

  const LossBreakdown one = total_loss(&f.motion, nullptr, f.targets);
  CHECK(one.focal_sampling == 0.0);
  CHECK(one.loc_sampling == 0.0);
  CHECK(one.focal_motion == b.focal_motion);
}

TEST_CASE("empty foreground clamps the divisor") {
  const auto anchors = generate_anchors(AnchorConfig{}, 64, 64);
  const LossTargets t = make_targets(anchors, {}, 3);
  FlatOutputs o{std::vector<double>(anchors.size() * 3, -2.0),
                std::vector<double>(anchors.size() * 4, 0.7)};
  const LossBreakdown b = total_loss(&o, &o, t);
  CHECK(b.n_fg == 0);
  CHECK(b.loc_motion == 0.0);
  CHECK(b.total == doctest::Approx(b.focal_motion + b.focal_sampling));
}

TEST_CASE("perfect single foreground anchor") {
  const std::vector<Anchor> anchors{{{0, 0, 10, 10}, 3, 0, 0, 0},
                                    {{40, 40, 50, 50}, 3, 0, 0, 1},
                                    {{20, 0, 30, 10}, 3, 0, 0, 2}};
  const LossTargets t = make_targets(anchors, {{{0, 0, 10, 10}, 1, 0}}, 2);
  CHECK(t.foreground() == 1);
  const double hot = std::log((1 - 1e-7) / 1e-7);
  FlatOutputs o{{-hot, hot, -1.0, 0.5, 0.2, -0.3}, std::vector<double>(12, 0.0)};
  const double bg = focal_loss(sigmoid(-1.0), false, 0.25, 2) +
                    focal_loss(sigmoid(0.5), false, 0.25, 2) +
                    focal_loss(sigmoid(0.2), false, 0.25, 2) +
                    focal_loss(sigmoid(-0.3), false, 0.25, 2);
  const LossBreakdown b = total_loss(&o, nullptr, t);
  CHECK(b.total == doctest::Approx(bg).epsilon(1e-6));
  const LossGradients g = loss_gradients(&o, nullptr, t);
  CHECK(std::fabs(g.motion.logits[1]) < 1e-6);
}

TEST_CASE("analytic gradients match central differences") {
  const Fixture f = make_fixture(2);
  const LossGradients g = loss_gradients(&f.motion, &f.sampling, f.targets);
  const double h = 1e-4;
  int checked = 0;
  double worst = 0.0;
  Rng pick(5);
  auto check_coord = [&](bool motion, bool logit, std::size_t i) {
    FlatOutputs m = f.motion;
    FlatOutputs s = f.sampling;
    std::vector<double>& v = motion ? (logit ? m.logits : m.deltas) : (logit ? s.logits : s.deltas);
    const double analytic = motion ? (logit ? g.motion.logits[i] : g.motion.deltas[i])
                                   : (logit ? g.sampling.logits[i] : g.sampling.deltas[i]);
    const double x = v[i];
    v[i] = x + h;
    const double up = total_loss(&m, &s, f.targets).total;
    v[i] = x - h;
    const double down = total_loss(&m, &s, f.targets).total;
    const double numeric = (up - down) / (2 * h);
    const std::size_t anchor = logit ? i / 3 : i / 4;
    if (f.targets.assignments[anchor].kind == MatchKind::ignore ||
        (!logit && f.targets.assignments[anchor].kind != MatchKind::foreground)) {
      CHECK(analytic == 0.0);
      CHECK(std::fabs(numeric) < 1e-9);
      return;
    }
    const double rel = std::fabs(analytic - numeric) / std::max(std::fabs(analytic), std::fabs(numeric));
    worst = std::max(worst, rel);
    ++checked;
  };
  for (std::size_t a = 0; a < f.anchors.size(); ++a) {
    if (f.targets.assignments[a].kind != MatchKind::foreground) continue;
    for (int j = 0; j < 4; ++j) check_coord(true, false, a * 4 + j);
    for (int c = 0; c < 3; ++c) check_coord(false, true, a * 3 + c);
  }
  while (checked < 1200) {
    const bool motion = pick.index(2) == 0;
    check_coord(motion, true, pick.index(f.motion.logits.size()));
  }
  CHECK(checked >= 1000);
  CHECK(worst < 1e-4);
}
