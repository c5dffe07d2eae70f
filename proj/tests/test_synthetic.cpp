#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "ssvd/errors.hpp"
#include "ssvd/kernels.hpp"
#include "ssvd/synthetic.hpp"

using namespace ssvd;
namespace fs = std::filesystem;

namespace {

SceneSpec one_object(ShapeKind shape, double vx, double vy, int size = 448) {
  SceneSpec s;
  s.width = size;
  s.height = size;
  s.frames = 25;
  s.seed = 5;
  s.objects.push_back({shape, shape_class(shape), 40, 40, 60, 200, vx, vy, 17});
  return s;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ssvd_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("linear kinematics") {
  const SceneTruth t = scene_truth(one_object(ShapeKind::disc, 8, 0));
  for (int f = 1; f < 25; ++f) {
    CHECK(t.boxes[f][0].box.x1 - t.boxes[f - 1][0].box.x1 == doctest::Approx(8.0));
    CHECK(t.boxes[f][0].box.y1 == t.boxes[0][0].box.y1);
  }
  const SceneTruth still = scene_truth(one_object(ShapeKind::rectangle, 0, 0));
  for (int f = 0; f < 25; ++f) {
    CHECK(still.boxes[f][0].box == still.boxes[0][0].box);
    CHECK(still.speed[f][0] == Speed::slow);
  }
}

TEST_CASE("walls reflect motion") {
  SceneSpec s = one_object(ShapeKind::disc, 30, 0, 256);
  s.frames = 40;
  const SceneTruth t = scene_truth(s);
  for (const auto& frame : t.boxes) {
    CHECK(frame[0].box.x1 >= 0.0);
    CHECK(frame[0].box.x2 <= 256.0);
  }
}

TEST_CASE("rendering is deterministic") {
  SceneSpec s = scenario_suite(SuiteKind::blur, {2, 128, 10, 1000})[1];
  const RenderedScene a = render_scene(s);
  const RenderedScene b = render_scene(s);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t f = 0; f < a.frames.size(); ++f) {
    CHECK(std::ranges::equal(a.frames[f].data(), b.frames[f].data()));
    for (float v : a.frames[f].data()) CHECK(std::fabs(v * 255.0f - std::round(v * 255.0f)) < 1e-3f);
  }
}

TEST_CASE("truth flow") {
  const SceneSpec s = one_object(ShapeKind::rectangle, 8, 0);
  const SceneTruth truth = scene_truth(s);
  const FlowField zero = truth_flow(truth, 3, 0);
  for (float v : zero.level(3).data()) CHECK(v == 0.0f);

  const FlowField fwd = truth_flow(truth, 3, 1);
  const FlowField back = truth_flow(truth, 3, -1);
  const Box b = truth.boxes[3][0].box;
  int inside = 0;
  const Tensor& l3 = fwd.level(3);
  for (int y = 0; y < l3.height(); ++y)
    for (int x = 0; x < l3.width(); ++x) {
      if (x * 8 >= b.x1 && (x + 1) * 8 <= b.x2 && y * 8 >= b.y1 && (y + 1) * 8 <= b.y2) {
        CHECK(l3.at(0, 0, y, x) == doctest::Approx(1.0));
        CHECK(l3.at(0, 1, y, x) == doctest::Approx(0.0));
        ++inside;
      }
      CHECK(back.level(3).at(0, 0, y, x) == doctest::Approx(-l3.at(0, 0, y, x)));
    }
  CHECK(inside >= 9);
  CHECK_THROWS_AS(truth_flow_full(s, 24, 1), ValidationError);
  CHECK_THROWS_AS(truth_flow_full(s, -1, 1), ValidationError);
}

TEST_CASE("boxes are tight around the rendered mask") {
  for (ShapeKind k : {ShapeKind::disc, ShapeKind::rectangle, ShapeKind::triangle}) {
    SceneSpec s = one_object(k, 3.3, -1.7, 256);
    s.noise_sigma = 0.0;
    s.objects[0].y0 = 120;
    const RenderedScene r = render_scene(s);
    for (int f = 0; f < s.frames; f += 6) {
      const Box b = r.truth.boxes[f][0].box;
      int lx = 1 << 20, ly = 1 << 20, hx = -1, hy = -1;
      const Tensor& img = r.frames[f];
      for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
          const float c = img.at(0, shape_class(k), y, x);
          const float o = img.at(0, (shape_class(k) + 1) % 3, y, x);
          if (c - o < 0.3f) continue;
          lx = std::min(lx, x);
          ly = std::min(ly, y);
          hx = std::max(hx, x + 1);
          hy = std::max(hy, y + 1);
        }
      // mask pixels are decided at their centres
      CHECK(lx + 0.5 >= b.x1);
      CHECK(ly + 0.5 >= b.y1);
      CHECK(hx - 0.5 <= b.x2);
      CHECK(hy - 0.5 <= b.y2);
      CHECK(b.x1 >= lx - 1.0);
      CHECK(b.y1 >= ly - 1.0);
      CHECK(b.x2 <= hx + 1.0);
      CHECK(b.y2 <= hy + 1.0);
    }
  }
}

TEST_CASE("truth flow warps the next frame onto the current one") {
  SceneSpec s = one_object(ShapeKind::rectangle, 2.5, -1.5, 192);
  s.noise_sigma = 0.0;
  s.objects[0].y0 = 100;
  const RenderedScene r = render_scene(s);
  for (int t = 0; t + 1 < s.frames; t += 4) {
    const Tensor flow = truth_flow_full(s, t, 1);
    const Tensor warped = warp(r.frames[t + 1], flow);
    const Box b = r.truth.boxes[t][0].box;
    int n = 0;
    for (int y = 0; y < 192; ++y)
      for (int x = 0; x < 192; ++x) {
        if (x + 0.5 < b.x1 + 2 || x + 0.5 > b.x2 - 2 || y + 0.5 < b.y1 + 2 || y + 0.5 > b.y2 - 2)
          continue;
        for (int c = 0; c < 3; ++c)
          CHECK(std::fabs(warped.at(0, c, y, x) - r.frames[t].at(0, c, y, x)) < 0.05);
        ++n;
      }
    CHECK(n > 500);
  }
}

TEST_CASE("scenario suites") {
  const auto clean = scenario_suite(SuiteKind::clean);
  CHECK(clean.size() >= 20);
  for (const auto& s : clean) CHECK(!s.degraded());
  CHECK(spec_to_json(scenario_suite(SuiteKind::clean)[7]) == spec_to_json(clean[7]));

  for (const auto& s : scenario_suite(SuiteKind::fast)) {
    const SceneTruth t = scene_truth(s);
    for (const auto& row : t.speed)
      for (Speed sp : row) CHECK(sp == Speed::fast);
    CHECK(t.speed == speed_stratify(t.boxes));
  }
  for (const auto& s : scenario_suite(SuiteKind::blur)) {
    CHECK(!s.blur.empty());
    for (const BlurEvent& b : s.blur) {
      CHECK(b.length >= 9);
      CHECK(b.length <= 21);
    }
  }
  for (const auto& s : scenario_suite(SuiteKind::occlusion)) {
    CHECK(!s.occluders.empty());
    for (const OccluderSpec& o : s.occluders) {
      CHECK(o.end - o.start >= 3);
      CHECK(o.end - o.start <= 8);
      CHECK(o.coverage >= 0.3);
      CHECK(o.coverage <= 0.6);
    }
  }
  CHECK_THROWS_AS(parse_suite("rain"), Error);
}

TEST_CASE("spec validation") {
  SceneSpec s = one_object(ShapeKind::disc, 1, 1, 128);
  s.objects[0].y0 = 60;
  CHECK_NOTHROW(validate_spec(s));
  SceneSpec tiny = s;
  tiny.objects[0].width = 4;
  CHECK_THROWS_AS(validate_spec(tiny), ValidationError);
  SceneSpec off = s;
  off.objects[0].x0 = -500;
  CHECK_THROWS_AS(render_scene(off), ValidationError);
  SceneSpec nan = s;
  nan.objects[0].vx = std::nan("");
  CHECK_THROWS_AS(validate_spec(nan), ValidationError);
  SceneSpec late = s;
  late.blur.push_back({40, 9, 0.0});
  CHECK_THROWS_AS(validate_spec(late), ValidationError);
  CHECK(spec_from_json(spec_to_json(s)).objects[0].texture_seed == 17);
}

TEST_CASE("scene directory round trip") {
  SceneSpec s = scenario_suite(SuiteKind::occlusion, {1, 64, 4, 1000})[0];
  const RenderedScene r = render_scene(s);
  const fs::path dir = temp_dir("scene");
  write_scene_dir(dir.string(), r);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "flow" / "000_001.flo"));
  const LoadedScene back = load_scene_dir(dir.string());
  CHECK(back.has_spec);
  REQUIRE(back.frames.size() == r.frames.size());
  for (std::size_t f = 0; f < r.frames.size(); ++f)
    CHECK(std::ranges::equal(back.frames[f].data(), r.frames[f].data()));
  REQUIRE(back.truth.size() == r.truth.boxes.size());
  for (std::size_t f = 0; f < back.truth.size(); ++f)
    for (std::size_t i = 0; i < back.truth[f].size(); ++i) {
      CHECK(back.truth[f][i].box.x1 == doctest::Approx(r.truth.boxes[f][i].box.x1));
      CHECK(back.truth[f][i].track_id == r.truth.boxes[f][i].track_id);
    }
  CHECK_THROWS_AS(read_ppm((dir / "missing.ppm").string()), IoError);
  fs::remove_all(dir);
}
