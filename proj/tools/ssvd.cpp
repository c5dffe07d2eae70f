#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "checks.hpp"
#include "json.hpp"
#include "ssvd/errors.hpp"
#include "ssvd/evaluation.hpp"
#include "ssvd/pipeline.hpp"
#include "ssvd/synthetic.hpp"

using namespace ssvd;
namespace fs = std::filesystem;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

PipelineConfig config_or_default(const std::string& path) {
  return path.empty() ? PipelineConfig{} : load_config(path);
}

DetectionSet read_dets(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_detections_jsonl(in);
}

std::ofstream open_out(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

int cmd_synth(const std::string& suite, const std::string& out_dir, SuiteOptions opts) {
  const auto specs = scenario_suite(parse_suite(suite), opts);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const fs::path dir = fs::path(out_dir) / fmt::format("scene_{:03}", i);
    write_scene_dir(dir.string(), render_scene(specs[i]));
  }
  std::cout << fmt::format("wrote {} {} scenes to {}\n", specs.size(), suite, out_dir);
  return 0;
}

int cmd_detect(const std::string& scene_dir, const std::string& config_path,
               const std::string& streams, bool seqnms, const std::string& out_path,
               const std::string& tubelets_path) {
  PipelineConfig config = config_or_default(config_path);
  if (!streams.empty()) set_streams(config, streams);
  if (seqnms) config.seq_nms = true;
  config.validate();
  const LoadedScene scene = load_scene_dir(scene_dir);
  const Model model = build_model(config);
  const auto flow = make_flow_provider(config, scene_dir, scene);
  const VideoResult r = infer_video(scene.frames, *flow, model);
  std::ofstream out = open_out(out_path);
  write_detections_jsonl(out, r.flattened());
  if (!tubelets_path.empty()) {
    std::ofstream tout = open_out(tubelets_path);
    write_tubelets_jsonl(tout, r.tubelets);
  }
  return 0;
}

int cmd_eval(const std::vector<std::string>& dets, const std::vector<std::string>& truth,
             const std::string& report_path, double min_map) {
  if (dets.size() != truth.size())
    throw ConfigError("--dets and --truth must be given the same number of times");
  std::vector<EvalSequence> seqs;
  for (std::size_t i = 0; i < dets.size(); ++i)
    seqs.push_back({load_scene_dir(truth[i]).truth, read_dets(dets[i])});
  const EvalReport report = evaluate(seqs);
  const std::string text = report_json(report);
  if (report_path.empty()) {
    std::cout << text << '\n';
  } else {
    open_out(report_path) << text << '\n';
  }
  if (report.map < min_map) {
    std::cerr << fmt::format("mAP {:.4f} below required {:.4f}\n", report.map, min_map);
    return kExitFailure;
  }
  return 0;
}

int cmd_train_step(const std::string& scene_dir, const std::string& config_path, int frame,
                   std::uint64_t seed) {
  const PipelineConfig config = config_or_default(config_path);
  const LoadedScene scene = load_scene_dir(scene_dir);
  if (frame < 0 || frame >= static_cast<int>(scene.frames.size()))
    throw ConfigError(fmt::format("frame {} outside the scene", frame));
  const Model model = build_model(config);
  const auto flow = make_flow_provider(config, scene_dir, scene);
  const TrainStep step = train_step_forward(scene.frames, scene.truth[frame], frame, *flow,
                                            model, seed);
  const nlohmann::json j{{"frame", frame},
                         {"seed", seed},
                         {"supports", step.supports},
                         {"focal_motion", step.loss.focal_motion},
                         {"focal_sampling", step.loss.focal_sampling},
                         {"loc_motion", step.loss.loc_motion},
                         {"loc_sampling", step.loss.loc_sampling},
                         {"total", step.loss.total},
                         {"n_fg", step.loss.n_fg}};
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_selfcheck(const std::string& weights) {
  const auto results = checks::run_checks(checks::selfcheck_suite(weights));
  int failed = 0;
  for (const auto& r : results) {
    std::cout << fmt::format("{} {}/{} ({:.2f} s) {}\n", r.outcome.pass ? "PASS" : "FAIL",
                             r.module, r.name, r.seconds, r.outcome.detail);
    failed += !r.outcome.pass;
  }
  std::cout << fmt::format("{} checks, {} failed\n", results.size(), failed);
  return failed == 0 ? 0 : kExitFailure;
}

int cmd_bench(const std::string& config_path, const std::string& scene_dir,
              const std::vector<int>& supports, int runs, const std::string& out_path) {
  const PipelineConfig config = config_or_default(config_path);
  LoadedScene scene;
  std::unique_ptr<FlowProvider> flow;
  if (scene_dir.empty()) {
    const SceneSpec spec = scenario_suite(SuiteKind::blur, {1, 256, 25, 1000})[0];
    scene.spec = spec;
    scene.has_spec = true;
    scene.frames = render_scene(spec).frames;
    flow = std::make_unique<ExactSyntheticProvider>(spec);
  } else {
    scene = load_scene_dir(scene_dir);
    flow = make_flow_provider(config, scene_dir, scene);
  }
  const Model model = build_model(config);
  const std::string text = bench_json(bench(scene.frames, *flow, model, supports, runs)).dump(2);
  if (out_path.empty()) {
    std::cout << text << '\n';
  } else {
    open_out(out_path) << text << '\n';
  }
  return 0;
}

int cmd_viz(const std::string& scene_dir, const std::string& dets_path, const std::string& out_dir) {
  const LoadedScene scene = load_scene_dir(scene_dir);
  const DetectionSet dets = read_dets(dets_path);
  const auto frames = visualize(scene.frames, dets, scene.truth);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < frames.size(); ++i)
    write_ppm((fs::path(out_dir) / fmt::format("{:03}.ppm", i)).string(), frames[i]);
  write_ppm((fs::path(out_dir) / "legend.ppm").string(), legend_image(3));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stream video object detection on synthetic scenes"};
  app.require_subcommand(1);

  std::string suite = "clean", out, scene, config_path, streams, dets_path, report, tubelets,
              weights, bench_scene;
  std::vector<std::string> dets_list, truth_list;
  SuiteOptions synth_opts;
  bool seqnms = false;
  int frame = 0;
  std::uint64_t seed = 0;
  double min_map = 0.0;
  std::vector<int> supports{0, 2, 6};
  int runs = 5;

  auto* synth = app.add_subcommand("synth", "Render a synthetic scenario suite");
  synth->add_option("--suite", suite)->check(CLI::IsMember({"clean", "blur", "occlusion", "fast"}));
  synth->add_option("--out", out)->required();
  synth->add_option("--scenes", synth_opts.scenes)->check(CLI::PositiveNumber);
  synth->add_option("--resolution", synth_opts.resolution);
  synth->add_option("--frames", synth_opts.frames)->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_opts.base_seed);

  auto* detect = app.add_subcommand("detect", "Run two-stream detection on a scene directory");
  detect->add_option("--scene", scene)->required();
  detect->add_option("--config", config_path);
  detect->add_option("--streams", streams)
      ->check(CLI::IsMember({"motion", "sampling", "both", "none"}));
  detect->add_flag("--seqnms", seqnms);
  detect->add_option("--out", out)->required();
  detect->add_option("--tubelets", tubelets);

  auto* eval = app.add_subcommand("eval", "Score detections against scene ground truth");
  eval->add_option("--dets", dets_list)->required();
  eval->add_option("--truth", truth_list)->required();
  eval->add_option("--report", report);
  eval->add_option("--min-map", min_map);

  auto* train = app.add_subcommand("train-step", "Loss of one training forward pass");
  train->add_option("--scene", scene)->required();
  train->add_option("--frame", frame)->required();
  train->add_option("--seed", seed)->required();
  train->add_option("--config", config_path);

  auto* selfcheck = app.add_subcommand("selfcheck", "Run every module's invariant checks");
  selfcheck->add_option("--weights", weights, "also verify this checkpoint");

  auto* benchcmd = app.add_subcommand("bench", "Per-stage wall time against support count");
  benchcmd->add_option("--config", config_path);
  benchcmd->add_option("--scene", bench_scene);
  benchcmd->add_option("--supports", supports)->delimiter(',');
  benchcmd->add_option("--runs", runs)->check(CLI::PositiveNumber);
  benchcmd->add_option("--out", out);

  auto* viz = app.add_subcommand("viz", "Draw detections and ground truth as PPM frames");
  viz->add_option("--scene", scene)->required();
  viz->add_option("--dets", dets_path)->required();
  viz->add_option("--out", out)->required();

  auto* print = app.add_subcommand("print-config", "Print the configuration with every default");
  print->add_option("--config", config_path);

  auto* init = app.add_subcommand("init-weights", "Write the configured weights as a checkpoint");
  init->add_option("--config", config_path);
  init->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(suite, out, synth_opts);
    if (*detect) return cmd_detect(scene, config_path, streams, seqnms, out, tubelets);
    if (*eval) return cmd_eval(dets_list, truth_list, report, min_map);
    if (*train) return cmd_train_step(scene, config_path, frame, seed);
    if (*selfcheck) return cmd_selfcheck(weights);
    if (*benchcmd) return cmd_bench(config_path, bench_scene, supports, runs, out);
    if (*viz) return cmd_viz(scene, dets_path, out);
    if (*print) {
      std::cout << config_to_json(config_or_default(config_path)).dump(2) << '\n';
      return 0;
    }
    if (*init) {
      save_model(out, build_model(config_or_default(config_path)));
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
