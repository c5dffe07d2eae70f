#include "checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fmt/format.h>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "ssvd/checkpoint.hpp"
#include "ssvd/errors.hpp"
#include "ssvd/evaluation.hpp"
#include "ssvd/losses.hpp"
#include "ssvd/pipeline.hpp"
#include "ssvd/sampling.hpp"
#include "ssvd/synthetic.hpp"

namespace ssvd::checks {
namespace {

class Tally {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    if (failures_ == 0) first_ = what;
    ++failures_;
  }
  Outcome done(const std::string& summary) const {
    if (failures_ == 0) return {true, summary};
    return {false, fmt::format("{} failure(s), first: {}", failures_, first_)};
  }

 private:
  int failures_ = 0;
  std::string first_;
};

Detection det(double x1, double y1, double x2, double y2, double score, int cls,
              int frame = 0) {
  return {{x1, y1, x2, y2}, cls, score, frame, StreamTag::single};
}

DetectionSet random_set(Rng& rng, int n, int classes) {
  DetectionSet out;
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(0, 40);
    const double y = rng.uniform(0, 40);
    out.push_back(det(x, y, x + rng.uniform(10, 30), y + rng.uniform(10, 30),
                      std::round(rng.uniform(0.05, 1.0) * 1000) / 1000,
                      static_cast<int>(rng.index(classes))));
  }
  return out;
}

SceneSpec small_scene(int frames) {
  SceneSpec s;
  s.width = 128;
  s.height = 128;
  s.frames = frames;
  s.seed = 11;
  s.objects.push_back({ShapeKind::disc, 0, 40, 40, 40, 44, 2.0, 0.5, 3});
  s.objects.push_back({ShapeKind::rectangle, 1, 36, 28, 88, 90, -2.0, 0.0, 4});
  return s;
}

std::filesystem::path scratch_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() /
                   fmt::format("ssvd_check_{}_{}", tag, std::chrono::steady_clock::now()
                                                            .time_since_epoch()
                                                            .count());
  std::filesystem::create_directories(dir);
  return dir;
}

Outcome conv_direct() {
  Rng rng(1);
  Tally t;
  float worst = 0.0f;
  for (int i = 0; i < 30; ++i) {
    const int k = 1 + 2 * static_cast<int>(rng.index(3));
    const int stride = 1 + static_cast<int>(rng.index(2));
    const int dil = 1 + static_cast<int>(rng.index(2));
    const Tensor in = oracle::random_tensor(rng, 1, 3, 9, 10);
    const ConvSpec s = oracle::random_conv(rng, 4, 3, k, stride, -1, dil);
    const float d = max_abs_diff(conv2d(in, s), oracle::naive_conv(in, s));
    worst = std::max(worst, d);
    t.expect(d < 1e-5f, fmt::format("case {} differs by {}", i, d));
  }
  return t.done(fmt::format("max abs {:.2e} over 30 cases", worst));
}

Outcome deform_random_offsets() {
  Rng rng(2);
  Tally t;
  float worst = 0.0f;
  for (int i = 0; i < 20; ++i) {
    const Tensor in = oracle::random_tensor(rng, 1, 4, 7, 8);
    const ConvSpec s = oracle::random_conv(rng, 3, 4, 3);
    const Tensor off = oracle::random_tensor(rng, 1, deform_offset_channels(3, 3, 2), 7, 8,
                                             -2.5, 2.5);
    const float d = max_abs_diff(deform_conv(in, off, s, 2), oracle::naive_deform(in, off, s, 2));
    worst = std::max(worst, d);
    t.expect(d < 1e-4f, fmt::format("case {} differs by {}", i, d));
  }
  return t.done(fmt::format("max abs {:.2e} over 20 cases", worst));
}

Outcome warp_integer_shift() {
  Rng rng(3);
  const Tensor f = oracle::random_tensor(rng, 1, 2, 6, 7);
  Tensor flow(1, 2, 6, 7);
  for (float& v : flow.plane(0, 0)) v = 2.0f;
  for (float& v : flow.plane(0, 1)) v = -1.0f;
  const Tensor g = warp(f, flow);
  Tally t;
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 7; ++x) {
        const int sy = y - 1;
        const int sx = x + 2;
        const float want = sy >= 0 && sx < 7 ? f.at(0, c, sy, sx) : 0.0f;
        t.expect(g.at(0, c, y, x) == want, fmt::format("pixel ({}, {})", y, x));
      }
  return t.done("shift (2, -1) with zero border");
}

Outcome pyramid_geometry() {
  const FeaturePyramid p =
      extract_pyramid(Tensor(1, 3, 448, 448, 0.5f), init_backbone_weights(1, {}));
  Tally t;
  for (int level : kPyramidLevels) {
    const int side = 448 >> level;
    t.expect(p.level(level).shape() == Shape{1, 32, side, side},
             fmt::format("P{} is {}", level, to_string(p.level(level).shape())));
  }
  bool rejected = false;
  try {
    check_input_size(450, 448);
  } catch (const ConfigError&) {
    rejected = true;
  }
  t.expect(rejected, "450 px input accepted");
  return t.done("56/28/14/7 at 448");
}

Outcome backbone_determinism() {
  Rng rng(4);
  const Tensor frame = oracle::random_tensor(rng, 1, 3, 64, 64, 0.0, 1.0);
  const FeaturePyramid a = extract_pyramid(frame, init_backbone_weights(9, {}));
  const FeaturePyramid b = extract_pyramid(frame, init_backbone_weights(9, {}));
  const FeaturePyramid c = extract_pyramid(frame, init_backbone_weights(10, {}));
  Tally t;
  t.expect(a.identical(b), "same seed differs");
  t.expect(!a.identical(c), "different seeds agree");
  return t.done("seeded weights reproduce bit-exactly");
}

Outcome checkpoint_round_trip() {
  const auto dir = scratch_dir("ckpt");
  const Model m = build_model(PipelineConfig{});
  const std::string path = (dir / "w.wgts").string();
  save_model(path, m);
  PipelineConfig c;
  c.weights = path;
  const Model back = build_model(c);
  const NamedTensors a = m.to_tensors();
  const NamedTensors b = back.to_tensors();
  Tally t;
  t.expect(a.entries().size() == b.entries().size(), "entry count");
  for (std::size_t i = 0; i < std::min(a.entries().size(), b.entries().size()); ++i)
    t.expect(a.entries()[i].second.identical(b.entries()[i].second), a.entries()[i].first);
  std::filesystem::remove_all(dir);
  return t.done(fmt::format("{} tensors", a.entries().size()));
}

Outcome box_codec() {
  Rng rng(5);
  Tally t;
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(0, 100);
    const double y = rng.uniform(0, 100);
    const Box anchor{x, y, x + rng.uniform(8, 80), y + rng.uniform(8, 80)};
    const Box gt{x + rng.uniform(-10, 10), y + rng.uniform(-10, 10), x + rng.uniform(20, 90),
                 y + rng.uniform(20, 90)};
    const Box back = decode_box(anchor, encode_box(anchor, gt));
    t.expect(std::fabs(back.x1 - gt.x1) < 1e-9 && std::fabs(back.y2 - gt.y2) < 1e-9,
             fmt::format("round trip {}", i));
  }
  return t.done("decode(encode(g)) = g over 200 boxes");
}

Outcome head_shapes() {
  const FeaturePyramid p =
      extract_pyramid(Tensor(1, 3, 128, 128, 0.3f), init_backbone_weights(1, {}));
  const HeadOutputs h = head_forward(p, init_head_weights(2, {}));
  Tally t;
  for (int i = 0; i < kLevelCount; ++i) {
    t.expect(h.logits[i].channels() == 27, "logit channels");
    t.expect(h.deltas[i].channels() == 36, "delta channels");
  }
  t.expect(h.anchor_count() == generate_anchors({}, 128, 128).size(), "anchor count");
  return t.done("27 logits and 36 deltas per location");
}

Outcome flow_downscale() {
  Tensor full(1, 2, 64, 64);
  for (float& v : full.plane(0, 0)) v = 16.0f;
  for (float& v : full.plane(0, 1)) v = -8.0f;
  const FlowField f = downscale_flow(full, 0, 1);
  Tally t;
  for (int level : kPyramidLevels) {
    const double s = level_stride(level);
    t.expect(f.level(level).height() == 64 / s, fmt::format("P{} size", level));
    t.expect(f.level(level).at(0, 0, 0, 0) == static_cast<float>(16.0 / s) &&
                 f.level(level).at(0, 1, 0, 0) == static_cast<float>(-8.0 / s),
             fmt::format("P{} scale", level));
  }
  return t.done("displacements divided by the level stride");
}

Outcome flo_round_trip() {
  Rng rng(6);
  const Tensor flow = oracle::random_tensor(rng, 1, 2, 5, 9, -20, 20);
  const auto dir = scratch_dir("flo");
  const std::string path = (dir / "a.flo").string();
  write_flo(path, flow);
  const bool same = read_flo(path).identical(flow);
  std::filesystem::remove_all(dir);
  return same ? Outcome{true, "bit-exact"} : Outcome{false, "flow changed"};
}

Outcome static_aggregation() {
  SceneSpec s = small_scene(5);
  for (ObjectSpec& o : s.objects) o.vx = o.vy = 0.0;
  s.noise_sigma = 0.0;
  const RenderedScene r = render_scene(s);
  const ExactSyntheticProvider flow(s);
  const BackboneWeights w = init_backbone_weights(3, {});
  const FeaturePyramid ref = extract_pyramid(r.frames[2], w);
  std::vector<FeaturePyramid> warped;
  warped.reserve(4);
  std::vector<Contribution> terms{{0, &ref}};
  for (int tau : {-2, -1, 1, 2}) {
    warped.push_back(calibrate_pyramid(extract_pyramid(r.frames[2 + tau], w), flow.flow(2, 2 + tau)));
    terms.push_back({tau, &warped.back()});
  }
  const FeaturePyramid agg = aggregate_motion(terms);
  float worst = 0.0f;
  for (int level : kPyramidLevels)
    worst = std::max(worst, max_abs_diff(agg.level(level), ref.level(level)));
  return {worst < 1e-5f, fmt::format("max abs {:.2e}", worst)};
}

Outcome zero_offset_hallucination() {
  Rng rng(7);
  const Tensor f = oracle::random_tensor(rng, 1, 8, 6, 6);
  const Tensor off(1, deform_offset_channels(3, 3, kDeformGroups), 6, 6);
  const float d = max_abs_diff(hallucinate(f, off, identity_sampler(8)), f);
  return {d == 0.0f, fmt::format("max abs {:.2e}", d)};
}

Outcome flow_guided_translation() {
  Rng rng(8);
  const Tensor f = oracle::random_tensor(rng, 1, 8, 8, 8);
  Tensor flow(1, 2, 8, 8);
  for (float& v : flow.plane(0, 0)) v = 1.0f;
  const Tensor a = hallucinate(f, flow_guided_offsets(flow, kDeformGroups, 12.0f),
                               identity_sampler(8));
  const Tensor b = calibrate(f, flow);
  Tally t;
  for (int c = 0; c < 8; ++c)
    for (int y = 1; y < 7; ++y)
      for (int x = 1; x < 6; ++x)
        t.expect(std::fabs(a.at(0, c, y, x) - b.at(0, c, y, x)) < 1e-6f,
                 fmt::format("({}, {}, {})", c, y, x));
  return t.done("identity sampler follows the warp");
}

Outcome focal_values() {
  Tally t;
  t.expect(std::fabs(focal_loss(0.5, true, 0.25, 2.0) - 0.25 * 0.25 * std::log(2.0)) < 1e-12,
           "p = 0.5");
  t.expect(std::fabs(focal_loss(0.3, true, 0.5, 0.0) + 0.5 * std::log(0.3)) < 1e-12,
           "gamma = 0 reduces to weighted CE");
  t.expect(std::isfinite(focal_loss(1.0, false, 0.25, 2.0)), "clamp at p = 1");
  t.expect(smooth_l1(0.5) == 0.125 && smooth_l1(3.0) == 2.5, "smooth L1 branches");
  return t.done("closed forms");
}

Outcome empty_foreground() {
  const auto anchors = generate_anchors({}, 64, 64);
  const LossTargets targets = make_targets(anchors, {}, 3);
  FlatOutputs o;
  o.logits.assign(anchors.size() * 3, -2.0);
  o.deltas.assign(anchors.size() * 4, 0.3);
  const LossBreakdown b = total_loss(&o, nullptr, targets);
  Tally t;
  t.expect(b.n_fg == 0, "foreground found");
  t.expect(b.loc_motion == 0.0, "localization without foreground");
  t.expect(std::fabs(b.total - b.focal_motion) < 1e-12, "divisor not clamped to 1");
  return t.done("divisor max(n_fg, 1)");
}

Outcome late_fuse_symmetry() {
  Rng rng(9);
  Tally t;
  for (int trial = 0; trial < 20; ++trial) {
    DetectionSet a = random_set(rng, 5, 2);
    DetectionSet b = random_set(rng, 5, 2);
    for (std::size_t i = 0; i < b.size(); ++i) b[i].score += 1e-4 * (i + 1) + 1e-6;
    DetectionSet ab = late_fuse(a, b);
    DetectionSet ba = late_fuse(b, a);
    auto key = [](const Detection& d) { return std::tuple(d.score, d.box.x1, d.box.y1); };
    std::ranges::sort(ab, {}, key);
    std::ranges::sort(ba, {}, key);
    t.expect(ab == ba, fmt::format("trial {}", trial));
  }
  return t.done("20 trials");
}

Outcome jsonl_round_trip() {
  Rng rng(10);
  DetectionSet d = random_set(rng, 9, 3);
  d[1].stream = StreamTag::motion;
  d[2].stream = StreamTag::sampling;
  d[3].score = 0.1 + 0.2;
  std::stringstream ss;
  write_detections_jsonl(ss, d);
  return {read_detections_jsonl(ss) == d, "9 detections"};
}

Outcome render_determinism() {
  const auto specs = scenario_suite(SuiteKind::blur, {2, 128, 6, 50});
  Tally t;
  for (const SceneSpec& s : specs) {
    const RenderedScene a = render_scene(s);
    const RenderedScene b = render_scene(s);
    for (std::size_t f = 0; f < a.frames.size(); ++f)
      t.expect(a.frames[f].identical(b.frames[f]), fmt::format("scene {} frame {}", s.seed, f));
  }
  return t.done("2 blur scenes rendered twice");
}

Outcome suite_strata() {
  Tally t;
  for (SuiteKind kind : {SuiteKind::clean, SuiteKind::fast}) {
    for (const SceneSpec& s : scenario_suite(kind, {3, 128, 12, 70})) {
      const SceneTruth truth = scene_truth(s);
      t.expect(speed_stratify(truth.boxes) == truth.speed, "generator strata differ");
      if (kind == SuiteKind::fast)
        for (const auto& row : truth.speed)
          for (Speed sp : row) t.expect(sp == Speed::fast, "slow object in the fast suite");
    }
  }
  return t.done("clean and fast suites");
}

Outcome support_rule() {
  AggregationConfig a;
  Tally t;
  t.expect(select_supports(12, 25, a) == std::vector<int>{-12, -8, -4, 4, 8, 12}, "centre frame");
  t.expect(select_supports(0, 25, a) == std::vector<int>{4, 8, 12}, "first frame");
  t.expect(select_supports(0, 1, a).empty(), "single frame");
  return t.done("{-12, -8, -4, 4, 8, 12}");
}

Outcome sliding_buffer() {
  const SceneSpec spec = small_scene(8);
  const RenderedScene r = render_scene(spec);
  const ExactSyntheticProvider flow(spec);
  PipelineConfig c;
  c.aggregation.range = 3;
  c.aggregation.buffer_capacity = 7;
  c.aggregation.supports = 2;
  const Model m = build_model(c);
  const VideoResult v = infer_video(r.frames, flow, m);
  Tally t;
  for (int f = 0; f < 8; ++f)
    t.expect(v.detections[f] == infer_frame(r.frames, f, flow, m), fmt::format("frame {}", f));
  return t.done("8 frames, both streams");
}

Outcome streams_off() {
  const SceneSpec spec = small_scene(3);
  const RenderedScene r = render_scene(spec);
  const ExactSyntheticProvider flow(spec);
  PipelineConfig c;
  set_streams(c, "none");
  const Model m = build_model(c);
  const VideoResult v = infer_video(r.frames, flow, m);
  const auto anchors = generate_anchors(c.anchors, 128, 128);
  Tally t;
  for (int f = 0; f < 3; ++f) {
    const HeadOutputs out = head_forward(extract_pyramid(r.frames[f], m.motion_backbone), m.motion_head);
    const DetectionSet want =
        nms(decode_detections(out, anchors, 128, 128, c.decode, f, StreamTag::single), c.nms_iou);
    t.expect(v.detections[f] == want, fmt::format("frame {}", f));
  }
  return t.done("detection for detection");
}

Outcome config_round_trip() {
  PipelineConfig c;
  c.seed = 99;
  c.nms_iou = 0.3;
  set_streams(c, "sampling");
  const PipelineConfig back = config_from_json(config_to_json(c));
  Tally t;
  t.expect(config_to_json(back) == config_to_json(c), "json differs");
  bool rejected = false;
  try {
    config_from_json(nlohmann::json{{"no_such_key", 1}});
  } catch (const ConfigError&) {
    rejected = true;
  }
  t.expect(rejected, "unknown key accepted");
  return t.done("json round trip, unknown keys rejected");
}

Outcome designed_detects() {
  SceneSpec s;
  s.width = s.height = 128;
  s.frames = 1;
  s.objects.push_back({ShapeKind::disc, 0, 44, 44, 60, 66, 0, 0, 2});
  const RenderedScene r = render_scene(s);
  const DetectionSet d =
      infer_video(r.frames, ExactSyntheticProvider(s), build_model(PipelineConfig{})).detections[0];
  if (d.empty()) return {false, "no detections"};
  const auto top = std::ranges::max_element(d, {}, &Detection::score);
  const double overlap = iou(top->box, r.truth.boxes[0][0].box);
  return {top->class_id == 0 && overlap > 0.7,
          fmt::format("class {}, IoU {:.3f}", top->class_id, overlap)};
}

Outcome load_weights(const std::string& path) {
  PipelineConfig c;
  c.weights = path;
  try {
    const Model m = build_model(c);
    for (const auto& [name, tensor] : m.to_tensors().entries())
      if (!tensor.all_finite()) return {false, name + ": non-finite values"};
  } catch (const Error& e) {
    return {false, e.what()};
  }
  return {true, path};
}

}  // namespace

Outcome deform_zero_offsets(int cases) {
  Rng rng(11);
  Tally t;
  float worst = 0.0f;
  for (int i = 0; i < cases; ++i) {
    const int k = 1 + 2 * static_cast<int>(rng.index(3));
    const int stride = 1 + static_cast<int>(rng.index(2));
    const int groups = 1 + static_cast<int>(rng.index(2));
    const int cin = 2 * (1 + static_cast<int>(rng.index(3)));
    const int h = 5 + static_cast<int>(rng.index(6));
    const int w = 5 + static_cast<int>(rng.index(6));
    const Tensor in = oracle::random_tensor(rng, 1, cin, h, w);
    const ConvSpec s = oracle::random_conv(rng, 3, cin, k, stride);
    const Tensor ref = conv2d(in, s);
    const Tensor off(1, deform_offset_channels(k, k, groups), ref.height(), ref.width());
    const float d = max_abs_diff(deform_conv(in, off, s, groups), ref);
    worst = std::max(worst, d);
    t.expect(d < 1e-5f, fmt::format("case {} differs by {}", i, d));
  }
  return t.done(fmt::format("max abs {:.2e} over {} cases", worst, cases));
}

Outcome warp_zero_identity() {
  Rng rng(12);
  Tally t;
  for (int i = 0; i < 20; ++i) {
    const int h = 1 + static_cast<int>(rng.index(12));
    const int w = 1 + static_cast<int>(rng.index(12));
    const Tensor f = oracle::random_tensor(rng, 1, 4, h, w, -100, 100);
    t.expect(warp(f, Tensor(1, 2, h, w)).identical(f), fmt::format("case {}", i));
  }
  return t.done("bit-exact over 20 maps");
}

Outcome bilinear_fixture() {
  Tensor m(1, 1, 2, 2);
  m.at(0, 0, 0, 1) = 1;
  m.at(0, 0, 1, 0) = 2;
  m.at(0, 0, 1, 1) = 3;
  const std::vector<Point2> pts{{0.5f, 0.5f}, {1.0f, 1.0f}, {-5.0f, -5.0f}, {1.0f, 0.0f},
                                {0.25f, 0.0f}};
  const std::vector<float> v = bilinear_sample(m, pts);
  const std::vector<float> want{1.5f, 3.0f, 0.0f, 1.0f, 0.25f};
  return {v == want, "exact corner, centre and outside values"};
}

Outcome gradient_check(int min_coordinates) {
  Rng rng(13);
  const auto anchors = generate_anchors(AnchorConfig{}, 64, 64);
  std::vector<LabeledBox> gts;
  for (int i = 0; i < 4; ++i) {
    const double x = rng.uniform(0, 30);
    const double y = rng.uniform(0, 30);
    gts.push_back({{x, y, x + rng.uniform(16, 34), y + rng.uniform(16, 34)}, i % 3, i});
  }
  const LossTargets targets = make_targets(anchors, gts, 3);
  auto fill = [&](FlatOutputs& o) {
    o.logits.resize(anchors.size() * 3);
    o.deltas.resize(anchors.size() * 4);
    for (double& v : o.logits) v = rng.uniform(-3, 3);
    for (std::size_t a = 0; a < anchors.size(); ++a)
      for (int j = 0; j < 4; ++j) {
        double d;
        do {
          d = rng.uniform(-2.5, 2.5);
        } while (std::fabs(std::fabs(d) - 1.0) < 1e-3 || std::fabs(d) < 0.05);
        o.deltas[a * 4 + j] = targets.box_targets[a][j] + d;
      }
  };
  FlatOutputs motion, sampling;
  fill(motion);
  fill(sampling);
  const LossGradients g = loss_gradients(&motion, &sampling, targets);
  const double h = 1e-4;
  int checked = 0;
  double worst = 0.0;
  Tally t;
  auto check = [&](bool is_motion, bool logit, std::size_t i) {
    FlatOutputs m = motion;
    FlatOutputs s = sampling;
    std::vector<double>& v = is_motion ? (logit ? m.logits : m.deltas) : (logit ? s.logits : s.deltas);
    const StreamGradients& sg = is_motion ? g.motion : g.sampling;
    const double analytic = logit ? sg.logits[i] : sg.deltas[i];
    const double x = v[i];
    v[i] = x + h;
    const double up = total_loss(&m, &s, targets).total;
    v[i] = x - h;
    const double down = total_loss(&m, &s, targets).total;
    const double numeric = (up - down) / (2 * h);
    const MatchKind kind = targets.assignments[logit ? i / 3 : i / 4].kind;
    if (kind == MatchKind::ignore || (!logit && kind != MatchKind::foreground)) {
      t.expect(analytic == 0.0 && std::fabs(numeric) < 1e-9, "gradient on an inert anchor");
      return;
    }
    const double rel =
        std::fabs(analytic - numeric) / std::max(std::fabs(analytic), std::fabs(numeric));
    worst = std::max(worst, rel);
    ++checked;
  };
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (targets.assignments[a].kind != MatchKind::foreground) continue;
    for (int j = 0; j < 4; ++j) {
      check(true, false, a * 4 + j);
      check(false, false, a * 4 + j);
    }
    for (int c = 0; c < 3; ++c) check(false, true, a * 3 + c);
  }
  while (checked < min_coordinates) check(rng.index(2) == 0, true, rng.index(motion.logits.size()));
  t.expect(worst < 1e-4, fmt::format("max relative error {:.2e}", worst));
  return t.done(fmt::format("max relative error {:.2e} over {} coordinates", worst, checked));
}

Outcome nms_enumeration(int trials) {
  Rng rng(14);
  Tally t;
  for (int trial = 0; trial < trials; ++trial) {
    const int n = 1 + static_cast<int>(rng.index(8));
    const DetectionSet in = random_set(rng, n, 2);
    const std::vector<int> want = oracle::nms_by_enumeration(in, 0.45);
    const DetectionSet got = nms(in, 0.45);
    std::multiset<std::pair<double, double>> a, b;
    for (int i : want)
      if (i >= 0) a.insert({in[i].score, in[i].box.x1});
    for (const Detection& d : got) b.insert({d.score, d.box.x1});
    t.expect(want != std::vector<int>{-1} && a == b, fmt::format("trial {} (n = {})", trial, n));
  }
  return t.done(fmt::format("{} trials, up to 8 boxes", trials));
}

Outcome seq_nms_exhaustive(int trials) {
  Rng rng(15);
  Tally t;
  int paths = 0;
  for (int trial = 0; trial < trials; ++trial) {
    const int nf = 2 + static_cast<int>(rng.index(4));
    std::vector<DetectionSet> frames;
    for (int f = 0; f < nf; ++f) {
      DetectionSet s;
      const int n = static_cast<int>(rng.index(5));
      for (int i = 0; i < n; ++i) {
        const double cx = 20.0 * static_cast<double>(rng.index(3)) + rng.uniform(-3, 3);
        const double cy = rng.uniform(-3, 3);
        s.push_back(det(cx, cy, cx + 20, cy + 20, rng.uniform(0.05, 1.0),
                        static_cast<int>(rng.index(2)), f));
      }
      frames.push_back(s);
    }
    const SeqNmsResult r = seq_nms(frames);
    for (int cls = 0; cls < 2; ++cls) {
      std::vector<std::vector<char>> active(nf);
      for (int f = 0; f < nf; ++f) {
        active[f].resize(frames[f].size());
        for (std::size_t i = 0; i < frames[f].size(); ++i) active[f][i] = frames[f][i].class_id == cls;
      }
      for (const Tubelet& tube : r.tubelets) {
        if (tube.class_id != cls) continue;
        double sum = 0.0;
        for (std::size_t k = 0; k < tube.members.size(); ++k)
          sum += frames[tube.members[k].frame][tube.source_index[k]].score;
        const double best = oracle::best_path_score(frames, active, cls, 0.5);
        t.expect(std::fabs(sum - best) < 1e-9, fmt::format("trial {} path {} vs {}", trial, sum, best));
        ++paths;
        for (std::size_t k = 0; k < tube.members.size(); ++k) {
          const int f = tube.members[k].frame;
          const int i = tube.source_index[k];
          active[f][i] = 0;
          for (std::size_t j = 0; j < frames[f].size(); ++j)
            if (active[f][j] && iou(frames[f][j].box, frames[f][i].box) > 0.45) active[f][j] = 0;
        }
      }
      for (int f = 0; f + 1 < nf; ++f)
        for (std::size_t i = 0; i < frames[f].size(); ++i)
          for (std::size_t j = 0; j < frames[f + 1].size(); ++j)
            if (active[f][i] && active[f + 1][j])
              t.expect(iou(frames[f][i].box, frames[f + 1][j].box) < 0.5,
                       fmt::format("trial {} left a link", trial));
    }
  }
  return t.done(fmt::format("{} trials, {} optimal paths", trials, paths));
}

Outcome ap_fixture() {
  const std::vector<GtRef> gts{{0, {0, 0, 10, 10}}, {1, {0, 0, 10, 10}}};
  const std::vector<DetRef> dets{{0, {0, 0, 10, 10}, 0.9},
                                 {0, {50, 50, 60, 60}, 0.8},
                                 {1, {0, 0, 10, 11}, 0.7}};
  const double ap = average_precision(dets, gts);
  return {ap == 5.0 / 6.0, fmt::format("AP = {:.17g}", ap)};
}

Outcome speed_fixture() {
  // a neighbour shifted by x along a 10 px square has IoU (10 - x) / (10 + x)
  auto shifted = [](double m) {
    const double x = 10.0 * (1 - m) / (1 + m);
    return Box{x, 0, x + 10, 10};
  };
  const Box base{0, 0, 10, 10};
  std::vector<std::vector<LabeledBox>> frames(2);
  frames[0] = {{base, 0, 0}, {base, 0, 1}, {base, 0, 2}};
  frames[1] = {{shifted(0.95), 0, 0}, {shifted(0.8), 0, 1}, {shifted(0.5), 0, 2}};
  const auto s = speed_stratify(frames);
  Tally t;
  for (int f = 0; f < 2; ++f) {
    t.expect(s[f][0] == Speed::slow, "track 0 not slow");
    t.expect(s[f][1] == Speed::medium, "track 1 not medium");
    t.expect(s[f][2] == Speed::fast, "track 2 not fast");
  }
  t.expect(classify_speed(0.9) == Speed::medium && classify_speed(0.7) == Speed::medium &&
               classify_speed(0.9000001) == Speed::slow && classify_speed(0.6999999) == Speed::fast,
           "threshold edges");
  return t.done("slow / medium / fast tracks");
}

Outcome anchor_geometry() {
  const auto anchors = generate_anchors(AnchorConfig{}, 448, 448);
  return {anchors.size() == 37485, fmt::format("{} anchors at 448", anchors.size())};
}

Outcome offset_channels() {
  const OffsetPredictorWeights w = init_offset_predictor(1, {});
  Rng rng(16);
  const Tensor a = oracle::random_tensor(rng, 1, 32, 7, 7);
  const Tensor o = predict_offsets(a, a, w);
  return {w.config.offset_channels() == 72 && o.channels() == 72,
          fmt::format("{} channels", o.channels())};
}

std::vector<Check> selfcheck_suite(const std::string& weights) {
  std::vector<Check> out{
      {"tensor-kernels", "conv2d_direct_definition", conv_direct},
      {"tensor-kernels", "deform_zero_offsets_equals_conv", [] { return deform_zero_offsets(); }},
      {"tensor-kernels", "deform_random_offsets_oracle", deform_random_offsets},
      {"tensor-kernels", "warp_zero_flow_identity", warp_zero_identity},
      {"tensor-kernels", "warp_integer_shift", warp_integer_shift},
      {"tensor-kernels", "bilinear_fixture", bilinear_fixture},
      {"pyramid-backbone", "level_sizes_448", pyramid_geometry},
      {"pyramid-backbone", "seeded_determinism", backbone_determinism},
      {"pyramid-backbone", "checkpoint_round_trip", checkpoint_round_trip},
      {"detection-heads", "anchor_count_448", anchor_geometry},
      {"detection-heads", "box_codec_round_trip", box_codec},
      {"detection-heads", "head_output_channels", head_shapes},
      {"motion-stream", "flow_downscale", flow_downscale},
      {"motion-stream", "flo_round_trip", flo_round_trip},
      {"motion-stream", "static_scene_aggregation", static_aggregation},
      {"sampling-stream", "offset_channels_72", offset_channels},
      {"sampling-stream", "zero_offsets_identity", zero_offset_hallucination},
      {"sampling-stream", "flow_guided_translation", flow_guided_translation},
      {"losses", "focal_closed_forms", focal_values},
      {"losses", "gradient_check", [] { return gradient_check(); }},
      {"losses", "empty_foreground", empty_foreground},
      {"postprocessing", "nms_enumeration", [] { return nms_enumeration(); }},
      {"postprocessing", "seq_nms_exhaustive", [] { return seq_nms_exhaustive(); }},
      {"postprocessing", "late_fuse_symmetry", late_fuse_symmetry},
      {"postprocessing", "detections_jsonl_round_trip", jsonl_round_trip},
      {"evaluation", "ap_fixture", ap_fixture},
      {"evaluation", "speed_fixture", speed_fixture},
      {"synthetic-data", "render_determinism", render_determinism},
      {"synthetic-data", "suite_strata", suite_strata},
      {"pipeline-cli", "support_rule", support_rule},
      {"pipeline-cli", "sliding_buffer", sliding_buffer},
      {"pipeline-cli", "streams_off_single_frame", streams_off},
      {"pipeline-cli", "config_round_trip", config_round_trip},
      {"pipeline-cli", "designed_weights_detect", designed_detects},
  };
  if (!weights.empty())
    out.push_back({"pipeline-cli", "weights_file", [weights] { return load_weights(weights); }});
  return out;
}

std::vector<CheckResult> run_checks(const std::vector<Check>& checks) {
  std::vector<CheckResult> out;
  for (const Check& c : checks) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    out.push_back({c.module, c.name, o, dt.count()});
  }
  return out;
}

}  // namespace ssvd::checks
