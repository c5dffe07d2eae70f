#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "doctest.h"
#include "ssvd/errors.hpp"
#include "ssvd/pipeline.hpp"

using namespace ssvd;

namespace {

SceneSpec small_scene(int frames, double vx) {
  SceneSpec s;
  s.width = 128;
  s.height = 128;
  s.frames = frames;
  s.seed = 11;
  s.objects.push_back({ShapeKind::disc, 0, 40, 40, 40, 44, vx, 0.5, 3});
  s.objects.push_back({ShapeKind::rectangle, 1, 36, 28, 88, 90, -vx, 0.0, 4});
  return s;
}

// Class, box and score, ignoring the stream tag.
std::multiset<std::tuple<int, double, double, double, double, double>> content(
    const DetectionSet& d) {
  std::multiset<std::tuple<int, double, double, double, double, double>> out;
  for (const Detection& x : d) {
    out.insert({x.class_id, x.score, x.box.x1, x.box.y1, x.box.x2, x.box.y2});
  }
  return out;
}

// Same detections up to float rounding in the aggregation mean.
bool close(const DetectionSet& a, const DetectionSet& b, double tol) {
  const auto ca = content(a);
  const auto cb = content(b);
  if (ca.size() != cb.size()) return false;
  return std::ranges::equal(ca, cb, [&](const auto& x, const auto& y) {
    return std::get<0>(x) == std::get<0>(y) &&
           std::abs(std::get<1>(x) - std::get<1>(y)) < tol &&
           std::abs(std::get<2>(x) - std::get<2>(y)) < 1e3 * tol &&
           std::abs(std::get<3>(x) - std::get<3>(y)) < 1e3 * tol &&
           std::abs(std::get<4>(x) - std::get<4>(y)) < 1e3 * tol &&
           std::abs(std::get<5>(x) - std::get<5>(y)) < 1e3 * tol;
  });
}

bool same(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::ranges::equal(a.data(), b.data());
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config json round trip and defaults") {
  PipelineConfig c;
  c.seed = 99;
  c.nms_iou = 0.4;
  c.seq_nms = true;
  c.seq.rescore = Rescore::max;
  c.flow = "block";
  c.aggregation.supports = 4;
  c.designed.band = 0.5;
  const nlohmann::json j = config_to_json(c);
  const PipelineConfig back = config_from_json(j);
  CHECK(config_to_json(back) == j);
  CHECK(back.seed == 99);
  CHECK(back.seq.rescore == Rescore::max);
  CHECK(config_to_json(config_from_json(nlohmann::json::object())) ==
        config_to_json(PipelineConfig{}));
}

TEST_CASE("config rejects unknown keys, bad types and inconsistent values") {
  CHECK_THROWS_AS(config_from_json({{"sed", 1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"aggregation", {{"rang", 12}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"nms_iou", "high"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"aggregation", {{"buffer_capacity", 24}}}}),
                  ConfigError);
  CHECK_THROWS_AS(config_from_json({{"aggregation", {{"supports", 5}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"aggregation", {{"train_supports", 3}}}}),
                  ConfigError);
  CHECK_THROWS_AS(config_from_json({{"flow", {{"provider", "pwc"}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"seq_nms", {{"rescore", "median"}}}}), ConfigError);
  try {
    config_from_json({{"loss", {{"alpha", 0.25}, {"beta", 1}}}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("loss.beta") != std::string::npos);
  }
}

TEST_CASE("load_config reads a file") {
  const auto dir = temp_dir("ssvd_cfg_test");
  const auto path = (dir / "c.json").string();
  std::ofstream(path) << R"({"seed": 5, "streams": {"sampling": false}})";
  const PipelineConfig c = load_config(path);
  CHECK(c.seed == 5);
  CHECK(c.motion_stream);
  CHECK_FALSE(c.sampling_stream);
  std::ofstream(path) << "{not json";
  CHECK_THROWS_AS(load_config(path), ConfigError);
  CHECK_THROWS_AS(load_config((dir / "missing.json").string()), ConfigError);
}

TEST_CASE("support selection is symmetric and uniform") {
  AggregationConfig a;
  CHECK(select_supports(12, 25, a) == std::vector<int>{-12, -8, -4, 4, 8, 12});
  CHECK(select_supports(0, 25, a) == std::vector<int>{4, 8, 12});
  CHECK(select_supports(24, 25, a) == std::vector<int>{-12, -8, -4});
  CHECK(select_supports(5, 25, a) == std::vector<int>{-4, 4, 8, 12});
  CHECK(select_supports(0, 1, a).empty());
  a.supports = 2;
  CHECK(select_supports(12, 25, a) == std::vector<int>{-12, 12});
  a.supports = 0;
  CHECK(select_supports(12, 25, a).empty());
  a.supports = 24;
  const auto all = select_supports(12, 25, a);
  CHECK(all.size() == 24);
  CHECK(std::ranges::find(all, 0) == all.end());
}

TEST_CASE("set_streams toggles") {
  PipelineConfig c;
  set_streams(c, "none");
  CHECK_FALSE(c.motion_stream);
  CHECK_FALSE(c.sampling_stream);
  set_streams(c, "sampling");
  CHECK_FALSE(c.motion_stream);
  CHECK(c.sampling_stream);
  CHECK_THROWS_AS(set_streams(c, "all"), ConfigError);
}

TEST_CASE("sliding buffer matches per-frame recomputation") {
  const SceneSpec spec = small_scene(16, 2.0);
  const RenderedScene r = render_scene(spec);
  const ExactSyntheticProvider flow(spec);
  for (const char* streams : {"motion", "sampling", "both"}) {
    PipelineConfig c;
    set_streams(c, streams);
    const Model m = build_model(c);
    const VideoResult v = infer_video(r.frames, flow, m);
    REQUIRE(v.detections.size() == 16);
    for (int t : {0, 3, 8, 12, 15}) {
      CHECK(v.detections[t] == infer_frame(r.frames, t, flow, m));
    }
  }
}

TEST_CASE("both streams off equals the single-frame pipeline") {
  const SceneSpec spec = small_scene(4, 1.0);
  const RenderedScene r = render_scene(spec);
  const ExactSyntheticProvider flow(spec);
  PipelineConfig c;
  set_streams(c, "none");
  const Model m = build_model(c);
  const VideoResult v = infer_video(r.frames, flow, m);
  const auto anchors = generate_anchors(c.anchors, 128, 128);
  for (int t = 0; t < 4; ++t) {
    const HeadOutputs out =
        head_forward(extract_pyramid(r.frames[t], m.motion_backbone), m.motion_head);
    const DetectionSet expect =
        nms(decode_detections(out, anchors, 128, 128, c.decode, t, StreamTag::single),
            c.nms_iou);
    CHECK(v.detections[t] == expect);
    CHECK(v.motion[t].empty());
    CHECK(v.sampling[t].empty());
  }
}

TEST_CASE("one-frame video reduces to single-frame detection") {
  const SceneSpec spec = small_scene(1, 0.0);
  const RenderedScene r = render_scene(spec);
  const ExactSyntheticProvider flow(spec);
  PipelineConfig base;
  set_streams(base, "none");
  const DetectionSet single = infer_video(r.frames, flow, build_model(base)).detections[0];
  REQUIRE_FALSE(single.empty());
  for (const char* streams : {"motion", "sampling", "both"}) {
    PipelineConfig c;
    set_streams(c, streams);
    const VideoResult v = infer_video(r.frames, flow, build_model(c));
    CHECK(content(v.detections[0]) == content(single));
  }
}

TEST_CASE("static clone video aggregates to the single frame") {
  const SceneSpec spec = small_scene(1, 0.0);
  const RenderedScene r = render_scene(spec);
  SceneSpec long_spec = spec;
  long_spec.frames = 13;
  for (auto& o : long_spec.objects) o.vx = o.vy = 0.0;
  const std::vector<Tensor> frames(13, r.frames[0]);
  const ExactSyntheticProvider flow(long_spec);
  PipelineConfig base;
  set_streams(base, "none");
  const Model single = build_model(base);
  PipelineConfig c;
  const Model both = build_model(c);
  CHECK(close(infer_video(frames, flow, both).detections[6],
              infer_video(frames, flow, single).detections[6], 1e-6));
}

TEST_CASE("infer_video validates its inputs") {
  const SceneSpec spec = small_scene(3, 1.0);
  const RenderedScene r = render_scene(spec);
  const ExactSyntheticProvider flow(spec);
  const Model m = build_model(PipelineConfig{});
  CHECK_THROWS_AS(infer_video({}, flow, m), ValidationError);
  std::vector<Tensor> odd = r.frames;
  odd[1] = Tensor(1, 3, 64, 128);
  CHECK_THROWS_AS(infer_video(odd, flow, m), DimensionError);
  CHECK_THROWS_AS(infer_frame(r.frames, 3, flow, m), ValidationError);
  Model bad = m;
  bad.config.aggregation.buffer_capacity = 3;
  CHECK_THROWS_AS(infer_video(r.frames, flow, bad), ConfigError);
}

TEST_CASE("seq-nms option rescoring runs after all frames") {
  const SceneSpec spec = small_scene(6, 1.0);
  const RenderedScene r = render_scene(spec);
  const ExactSyntheticProvider flow(spec);
  PipelineConfig c;
  c.seq_nms = true;
  const VideoResult v = infer_video(r.frames, flow, build_model(c));
  CHECK_FALSE(v.tubelets.empty());
  for (const Tubelet& t : v.tubelets) CHECK(t.members.size() == t.source_index.size());
}

TEST_CASE("train step draws two seeded supports") {
  const SceneSpec spec = small_scene(25, 1.5);
  const RenderedScene r = render_scene(spec);
  const ExactSyntheticProvider flow(spec);
  const Model m = build_model(PipelineConfig{});
  const TrainStep a = train_step_forward(r.frames, r.truth.boxes[12], 12, flow, m, 42);
  const TrainStep b = train_step_forward(r.frames, r.truth.boxes[12], 12, flow, m, 42);
  CHECK(a.supports == b.supports);
  CHECK(a.loss.total == b.loss.total);
  CHECK(a.loss.n_fg > 0);
  REQUIRE(a.supports.size() == 2);
  std::set<std::vector<int>> seen;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const TrainStep s = train_step_forward(r.frames, r.truth.boxes[2], 2, flow, m, seed);
    REQUIRE(s.supports.size() == 2);
    CHECK(s.supports[0] < s.supports[1]);
    for (int tau : s.supports) {
      CHECK(tau != 0);
      CHECK(std::abs(tau) <= 12);
      CHECK(2 + tau >= 0);
    }
    seen.insert(s.supports);
  }
  CHECK(seen.size() > 10);
  const std::vector<int> bad{-13};
  CHECK_THROWS_AS(train_step_forward(r.frames, r.truth.boxes[20], 20, flow, m, 1, &bad),
                  ValidationError);
}

TEST_CASE("train step on clone supports equals the single-frame loss") {
  const SceneSpec spec = small_scene(1, 0.0);
  const RenderedScene r = render_scene(spec);
  SceneSpec long_spec = spec;
  long_spec.frames = 25;
  for (auto& o : long_spec.objects) o.vx = o.vy = 0.0;
  const std::vector<Tensor> frames(25, r.frames[0]);
  const ExactSyntheticProvider flow(long_spec);
  const std::vector<int> forced{-5, 7};
  for (const char* streams : {"motion", "sampling", "both", "none"}) {
    PipelineConfig c;
    c.weights = "random";
    set_streams(c, streams);
    const Model m = build_model(c);
    const TrainStep s = train_step_forward(frames, r.truth.boxes[0], 10, flow, m, 3, &forced);
    const LossBreakdown ref = single_frame_loss(r.frames[0], r.truth.boxes[0], m);
    CHECK(s.supports == forced);
    CHECK(s.loss.total == doctest::Approx(ref.total).epsilon(1e-4));
    CHECK(s.loss.n_fg == ref.n_fg);
  }
}

TEST_CASE("disabling a stream removes its loss terms") {
  const SceneSpec spec = small_scene(25, 1.0);
  const RenderedScene r = render_scene(spec);
  const ExactSyntheticProvider flow(spec);
  PipelineConfig c;
  c.weights = "random";
  const LossBreakdown both =
      train_step_forward(r.frames, r.truth.boxes[9], 9, flow, build_model(c), 8).loss;
  CHECK(both.focal_motion > 0.0);
  CHECK(both.focal_sampling > 0.0);
  set_streams(c, "motion");
  const LossBreakdown motion =
      train_step_forward(r.frames, r.truth.boxes[9], 9, flow, build_model(c), 8).loss;
  CHECK(motion.focal_sampling == 0.0);
  CHECK(motion.loc_sampling == 0.0);
  CHECK(motion.focal_motion == doctest::Approx(both.focal_motion));
}

TEST_CASE("checkpoint save, reload and corruption") {
  const auto dir = temp_dir("ssvd_ckpt_test");
  const auto path = (dir / "model.wgts").string();
  PipelineConfig c;
  const Model m = build_model(c);
  save_model(path, m);
  c.weights = path;
  const Model back = build_model(c);
  const SceneSpec spec = small_scene(3, 1.0);
  const RenderedScene r = render_scene(spec);
  const ExactSyntheticProvider flow(spec);
  CHECK(infer_video(r.frames, flow, back).detections ==
        infer_video(r.frames, flow, m).detections);

  NamedTensors t = m.to_tensors();
  NamedTensors broken;
  for (const auto& [name, tensor] : t.entries()) {
    Tensor x = tensor;
    if (name == "head.sampling.cls_out.weight") x.data()[0] = std::nanf("");
    broken.add(name, x);
  }
  save_checkpoint(path, broken);
  try {
    build_model(c);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("head.sampling") != std::string::npos);
  }

  NamedTensors partial;
  for (const auto& [name, tensor] : t.entries()) {
    if (name.rfind("predictor", 0) != 0) partial.add(name, tensor);
  }
  save_checkpoint(path, partial);
  try {
    build_model(c);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).rfind("predictor", 0) == 0);
  }

  std::ofstream(path, std::ios::binary) << "garbage";
  CHECK_THROWS_AS(build_model(c), IoError);
}

TEST_CASE("bench reports one entry per support count") {
  const SceneSpec spec = small_scene(13, 1.0);
  const RenderedScene r = render_scene(spec);
  const ExactSyntheticProvider flow(spec);
  const auto entries = bench(r.frames, flow, build_model(PipelineConfig{}), {0, 2}, 2);
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].supports == 0);
  CHECK(entries[1].runs == 2);
  CHECK(entries[1].median_ms > 0.0);
  CHECK(entries[0].stages.flow == 0.0);
  CHECK(entries[1].stages.flow > 0.0);
  const nlohmann::json j = bench_json(entries);
  CHECK(j.size() == 2);
  CHECK(j[1].contains("stages_ms"));
  CHECK_THROWS_AS(bench(r.frames, flow, build_model(PipelineConfig{}), {3}), ConfigError);
}

TEST_CASE("visualize draws detections and dashed ground truth") {
  const std::vector<Tensor> frames(3, Tensor(1, 3, 64, 64, 0.2f));
  const auto plain = visualize(frames, {}, {});
  REQUIRE(plain.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(same(plain[i], frames[i]));

  Detection d;
  d.box = {10, 12, 30, 40};
  d.class_id = 1;
  d.score = 0.87;
  d.frame = 1;
  const auto out = visualize(frames, {d}, {});
  REQUIRE(out.size() == 3);
  CHECK(same(out[0], frames[0]));
  CHECK(same(out[2], frames[2]));
  const Tensor& f = out[1];
  auto is_cyan = [&](int y, int x) {
    return f.at(0, 0, y, x) == 0.0f && f.at(0, 1, y, x) == 1.0f && f.at(0, 2, y, x) == 1.0f;
  };
  CHECK(is_cyan(12, 10));
  CHECK(is_cyan(39, 29));
  CHECK(is_cyan(25, 10));
  CHECK(f.at(0, 0, 25, 20) == 0.2f);

  std::vector<std::vector<LabeledBox>> truth(3);
  truth[0].push_back({{0, 0, 32, 32}, 0, 0});
  const auto g = visualize(frames, {}, truth);
  CHECK(g[0].at(0, 0, 0, 2) == 1.0f);
  CHECK(g[0].at(0, 0, 0, 5) == 0.2f);
  CHECK(same(g[1], frames[1]));

  const Tensor legend = legend_image(3);
  CHECK(legend.height() == 34);
  CHECK(legend.at(0, 0, 4, 4) == 1.0f);
}

TEST_CASE("designed weights find each shape with its class") {
  const Model m = build_model(PipelineConfig{});
  for (ShapeKind shape : {ShapeKind::disc, ShapeKind::rectangle, ShapeKind::triangle}) {
    SceneSpec s;
    s.width = s.height = 128;
    s.frames = 1;
    s.seed = 5;
    s.objects.push_back({shape, shape_class(shape), 44, 40, 60, 66, 0, 0, 2});
    const RenderedScene r = render_scene(s);
    const DetectionSet d = infer_video(r.frames, ExactSyntheticProvider(s), m).detections[0];
    REQUIRE_FALSE(d.empty());
    const auto top = std::ranges::max_element(
        d, [](const Detection& a, const Detection& b) { return a.score < b.score; });
    CHECK(top->class_id == shape_class(shape));
    CHECK(iou(top->box, r.truth.boxes[0][0].box) > 0.7);
  }
}

TEST_CASE("designed weights reject incompatible configs") {
  BackboneConfig b;
  b.in_channels = 1;
  CHECK_THROWS_AS(designed_backbone(b), ConfigError);
  HeadConfig h;
  h.channels = 16;
  CHECK_THROWS_AS(designed_head(h, AnchorConfig{}), ConfigError);
  h.channels = 32;
  h.anchors = 3;
  CHECK_THROWS_AS(designed_head(h, AnchorConfig{}), ConfigError);
}

TEST_CASE("static scene aggregation equals the single-frame pyramid") {
  SceneSpec s = small_scene(9, 0.0);
  for (auto& o : s.objects) o.vx = o.vy = 0.0;
  s.noise_sigma = 0.0;
  const RenderedScene r = render_scene(s);
  const ExactSyntheticProvider flow(s);
  const Model m = build_model(PipelineConfig{});
  const FeaturePyramid ref = extract_pyramid(r.frames[4], m.motion_backbone);
  std::vector<FeaturePyramid> warped;
  warped.reserve(8);
  std::vector<Contribution> terms{{0, &ref}};
  for (int tau : {-4, -2, 1, 4}) {
    warped.push_back(calibrate_pyramid(extract_pyramid(r.frames[4 + tau], m.motion_backbone),
                                       flow.flow(4, 4 + tau)));
    terms.push_back({tau, &warped.back()});
  }
  const FeaturePyramid agg = aggregate_motion(terms);
  for (int level : kPyramidLevels)
    for (std::size_t i = 0; i < ref.level(level).size(); ++i)
      CHECK(std::abs(agg.level(level).data()[i] - ref.level(level).data()[i]) < 1e-5);
}

namespace {

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (a[i] - ma) * (b[i] - mb);
    aa += (a[i] - ma) * (a[i] - ma);
    bb += (b[i] - mb) * (b[i] - mb);
  }
  return ab / std::sqrt(aa * bb + 1e-30);
}

}  // namespace

TEST_CASE("flow alignment beats naive averaging on translating objects") {
  const Model m = build_model(PipelineConfig{});
  auto specs = scenario_suite(SuiteKind::clean, {20, 128, 13, 2000});
  Rng rng(77);
  int wins = 0;
  double sum_aligned = 0.0;
  double sum_naive = 0.0;
  for (SceneSpec& s : specs) {
    for (ObjectSpec& o : s.objects) {
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      o.vx = 4.0 * std::cos(angle);
      o.vy = 4.0 * std::sin(angle);
    }
    const RenderedScene r = render_scene(s);
    const ExactSyntheticProvider flow(s);
    const int t = 6;
    const FeaturePyramid ref = extract_pyramid(r.frames[t], m.motion_backbone);
    std::vector<FeaturePyramid> raw;
    std::vector<FeaturePyramid> warped;
    raw.reserve(3);
    warped.reserve(3);
    std::vector<Contribution> aligned_terms{{0, &ref}};
    std::vector<Contribution> naive_terms{{0, &ref}};
    for (int tau : {-4, 2, 5}) {
      raw.push_back(extract_pyramid(r.frames[t + tau], m.motion_backbone));
      warped.push_back(calibrate_pyramid(raw.back(), flow.flow(t, t + tau)));
      aligned_terms.push_back({tau, &warped.back()});
      naive_terms.push_back({tau, &raw.back()});
    }
    const FeaturePyramid aligned = aggregate_motion(aligned_terms);
    const FeaturePyramid naive = aggregate_motion(naive_terms);
    std::vector<double> a, n, c;
    const Tensor& p3 = ref.level(3);
    for (const LabeledBox& lb : r.truth.boxes[t]) {
      for (int y = static_cast<int>(lb.box.y1 / 8); y < static_cast<int>(lb.box.y2 / 8); ++y)
        for (int x = static_cast<int>(lb.box.x1 / 8); x < static_cast<int>(lb.box.x2 / 8); ++x)
          for (int ch = 0; ch < 3; ++ch) {
            c.push_back(p3.at(0, ch, y, x));
            a.push_back(aligned.level(3).at(0, ch, y, x));
            n.push_back(naive.level(3).at(0, ch, y, x));
          }
    }
    const double ca = correlation(a, c);
    const double cn = correlation(n, c);
    sum_aligned += ca;
    sum_naive += cn;
    wins += ca > cn;
  }
  CHECK(wins >= 18);
  CHECK(sum_aligned > sum_naive);
}

TEST_CASE("late fusion keeps the better stream's true positives") {
  auto specs = scenario_suite(SuiteKind::fast, {20, 128, 13, 3000});
  PipelineConfig c;
  const Model m = build_model(c);
  auto true_positives = [](const DetectionSet& dets, const std::vector<LabeledBox>& truth) {
    std::vector<GtRef> gts;
    std::vector<DetRef> refs;
    int count = 0;
    for (int cls = 0; cls < 3; ++cls) {
      gts.clear();
      refs.clear();
      for (const LabeledBox& lb : truth)
        if (lb.class_id == cls) gts.push_back({0, lb.box});
      for (const Detection& d : dets)
        if (d.class_id == cls) refs.push_back({0, d.box, d.score});
      for (int g : match_detections(refs, gts, 0.5)) count += g >= 0;
    }
    return count;
  };
  int frames = 0;
  for (const SceneSpec& s : specs) {
    const RenderedScene r = render_scene(s);
    const VideoResult v = infer_video(r.frames, ExactSyntheticProvider(s), m);
    for (std::size_t t = 0; t < v.detections.size(); ++t) {
      const int fused = true_positives(v.detections[t], r.truth.boxes[t]);
      const int best = std::max(true_positives(v.motion[t], r.truth.boxes[t]),
                                true_positives(v.sampling[t], r.truth.boxes[t]));
      CHECK(fused >= best);
      ++frames;
    }
  }
  CHECK(frames == 20 * 13);
}
