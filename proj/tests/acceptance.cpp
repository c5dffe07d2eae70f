// Acceptance runner: one PASS/FAIL line per criterion, exit 1 on any FAIL.
// usage: acceptance PATH_TO_SSVD
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <string>
#include <vector>

#include "checks.hpp"
#include "ssvd/backbone.hpp"
#include "ssvd/evaluation.hpp"
#include "ssvd/pipeline.hpp"
#include "ssvd/synthetic.hpp"

using namespace ssvd;
namespace fs = std::filesystem;

namespace {

// Runtime limits, seconds.
constexpr double kKernelLimit = 10.0;
constexpr double kGradientLimit = 30.0;
constexpr double kNmsLimit = 60.0;
constexpr double kOrderingLimit = 600.0;

constexpr int kKernelCases = 100;
constexpr int kGradientCoordinates = 1000;
constexpr int kNmsTrials = 100;
constexpr int kBenchRuns = 9;

constexpr double kFusionSlack = 0.01;   // both >= max(single) - slack
constexpr double kStreamMargin = 0.03;  // single >= baseline + margin
constexpr int kSuiteScenes = 20;
constexpr std::uint64_t kSuiteSeed = 1000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Line {
  bool pass;
  std::string detail;
};

double suite_map(const std::vector<SceneSpec>& specs, const std::string& streams,
                 int supports = 6) {
  PipelineConfig c;
  set_streams(c, streams);
  c.aggregation.supports = supports;
  const Model m = build_model(c);
  std::vector<EvalSequence> seqs;
  for (const SceneSpec& s : specs) {
    const RenderedScene r = render_scene(s);
    seqs.push_back({r.truth.boxes, infer_video(r.frames, ExactSyntheticProvider(s), m).flattened()});
  }
  return evaluate(seqs).map;
}

std::vector<SceneSpec> suite(SuiteKind kind) {
  return scenario_suite(kind, {kSuiteScenes, 256, 25, kSuiteSeed});
}

Line kernel_oracles() {
  const auto start = Clock::now();
  const checks::Outcome deform = checks::deform_zero_offsets(kKernelCases);
  const checks::Outcome warp = checks::warp_zero_identity();
  const checks::Outcome bilinear = checks::bilinear_fixture();
  const double dt = seconds_since(start);
  return {deform.pass && warp.pass && bilinear.pass && dt < kKernelLimit,
          fmt::format("deform: {}; warp: {}; bilinear: {}; {:.2f} s", deform.detail, warp.detail,
                      bilinear.detail, dt)};
}

Line gradient() {
  const auto start = Clock::now();
  const checks::Outcome o = checks::gradient_check(kGradientCoordinates);
  const double dt = seconds_since(start);
  return {o.pass && dt < kGradientLimit, fmt::format("{}; {:.2f} s", o.detail, dt)};
}

Line nms_equivalence() {
  const auto start = Clock::now();
  const checks::Outcome a = checks::nms_enumeration(kNmsTrials);
  const checks::Outcome b = checks::seq_nms_exhaustive(kNmsTrials);
  const double dt = seconds_since(start);
  return {a.pass && b.pass && dt < kNmsLimit,
          fmt::format("nms: {}; seq-nms: {}; {:.2f} s", a.detail, b.detail, dt)};
}

Line evaluator() {
  const checks::Outcome ap = checks::ap_fixture();
  const checks::Outcome speed = checks::speed_fixture();
  return {ap.pass && speed.pass, fmt::format("{}; {}", ap.detail, speed.detail)};
}

Line geometry() {
  const checks::Outcome anchors = checks::anchor_geometry();
  const FeaturePyramid p =
      extract_pyramid(Tensor(1, 3, 448, 448, 0.5f), init_backbone_weights(1, {}));
  bool sizes = true;
  std::string text;
  for (int level : kPyramidLevels) {
    sizes = sizes && p.level(level).height() == (448 >> level) &&
            p.level(level).width() == (448 >> level);
    text += fmt::format("{}{}", text.empty() ? "" : "/", p.level(level).height());
  }
  const checks::Outcome offsets = checks::offset_channels();
  return {anchors.pass && sizes && offsets.pass,
          fmt::format("{}; levels {}; offsets {}", anchors.detail, text, offsets.detail)};
}

Line stream_ordering() {
  const auto start = Clock::now();
  std::vector<SceneSpec> degraded = suite(SuiteKind::blur);
  const auto occl = suite(SuiteKind::occlusion);
  degraded.insert(degraded.end(), occl.begin(), occl.end());
  const double base = suite_map(degraded, "none");
  const double motion = suite_map(degraded, "motion");
  const double sampling = suite_map(degraded, "sampling");
  const double both = suite_map(degraded, "both");
  const auto fast = suite(SuiteKind::fast);
  const double fast_motion = suite_map(fast, "motion");
  const double fast_sampling = suite_map(fast, "sampling");
  const double dt = seconds_since(start);
  const bool ok = both >= std::max(motion, sampling) - kFusionSlack &&
                  motion >= base + kStreamMargin && sampling >= base + kStreamMargin &&
                  fast_motion >= fast_sampling && dt < kOrderingLimit;
  return {ok, fmt::format("blur+occlusion mAP single {:.4f} motion {:.4f} sampling {:.4f} "
                          "both {:.4f}; fast motion {:.4f} sampling {:.4f}; {:.1f} s",
                          base, motion, sampling, both, fast_motion, fast_sampling, dt)};
}

Line support_trend() {
  const SceneSpec spec = scenario_suite(SuiteKind::blur, {1, 256, 25, kSuiteSeed})[0];
  const RenderedScene r = render_scene(spec);
  const auto entries =
      bench(r.frames, ExactSyntheticProvider(spec), build_model(PipelineConfig{}), {0, 2, 6}, kBenchRuns);
  bool increasing = true;
  std::string times;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i > 0) increasing = increasing && entries[i].median_ms > entries[i - 1].median_ms;
    times += fmt::format("{}{}: {:.0f} ms", i ? ", " : "", entries[i].supports, entries[i].median_ms);
  }
  const auto blur = suite(SuiteKind::blur);
  const double map2 = suite_map(blur, "both", 2);
  const double map6 = suite_map(blur, "both", 6);
  return {increasing && map6 >= map2,
          fmt::format("{}; blur mAP 2 supports {:.4f}, 6 supports {:.4f}", times, map2, map6)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Line determinism(const std::string& ssvd) {
  const fs::path dir = fs::temp_directory_path() / "ssvd_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const SceneSpec spec = scenario_suite(SuiteKind::occlusion, {1, 256, 25, kSuiteSeed})[0];
  write_scene_dir((dir / "scene").string(), render_scene(spec));
  std::vector<std::string> outputs;
  for (const char* name : {"a.jsonl", "b.jsonl"}) {
    const std::string cmd =
        fmt::format("\"{}\" detect --scene \"{}\" --streams both --seqnms --out \"{}\"", ssvd,
                    (dir / "scene").string(), (dir / name).string());
    if (std::system(cmd.c_str()) != 0) return {false, "ssvd detect failed: " + cmd};
    outputs.push_back(slurp(dir / name));
  }
  const bool same = !outputs[0].empty() && outputs[0] == outputs[1];
  const std::size_t lines = std::ranges::count(outputs[0], '\n');
  fs::remove_all(dir);
  return {same, fmt::format("{} detections, {} bytes", lines, outputs[0].size())};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance PATH_TO_SSVD\n";
    return 2;
  }
  const std::string ssvd = argv[1];
  const std::vector<std::pair<std::string, std::function<Line()>>> criteria{
      {"kernel_oracles", kernel_oracles},
      {"gradient_check", gradient},
      {"nms_bruteforce_equivalence", nms_equivalence},
      {"evaluator_fixture", evaluator},
      {"geometry", geometry},
      {"degraded_suite_stream_ordering", stream_ordering},
      {"support_count_trend", support_trend},
      {"detect_determinism", [&] { return determinism(ssvd); }},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Line l;
    try {
      l = run();
    } catch (const std::exception& e) {
      l = {false, std::string("exception: ") + e.what()};
    }
    std::cout << fmt::format("{} {}: {}", l.pass ? "PASS" : "FAIL", name, l.detail) << std::endl;
    failed += !l.pass;
  }
  return failed == 0 ? 0 : 1;
}
