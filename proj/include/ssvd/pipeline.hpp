#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssvd/backbone.hpp"
#include "ssvd/designed.hpp"
#include "ssvd/heads.hpp"
#include "ssvd/losses.hpp"
#include "ssvd/motion.hpp"
#include "ssvd/postprocess.hpp"
#include "ssvd/sampling.hpp"
#include "ssvd/synthetic.hpp"

namespace ssvd {

struct AggregationConfig {
  int range = 12;            // K
  int buffer_capacity = 25;  // 2K + 1
  int supports = 6;          // at inference, even
  int train_supports = 2;

  /// Throws ConfigError when the fields are inconsistent.
  void validate() const;
};

/// Temporal offsets of the inference supports of frame t: +-round(K*i/h)
/// for i = 1..h with h = supports/2, minus those that leave the video.
std::vector<int> select_supports(int t, int frames,
                                 const AggregationConfig& config);

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::string weights = "designed";  // designed | random | checkpoint path
  BackboneConfig backbone;
  AnchorConfig anchors;
  HeadConfig head;
  OffsetPredictorConfig predictor;
  DesignedParams designed;
  FocalParams focal;
  MatchConfig match;
  DecodeConfig decode;
  double nms_iou = 0.45;
  bool seq_nms = false;
  SeqNmsConfig seq;
  std::string flow = "exact";  // exact | flo | block
  BlockMatcherParams block;
  bool motion_stream = true;
  bool sampling_stream = true;
  std::string offsets = "flow";  // flow | predictor
  double offset_reach = 12.0;    // level pixels, flow-guided offsets only
  std::string sampler = "identity";  // identity | smoothing
  AggregationConfig aggregation;

  void validate() const;
};

nlohmann::json config_to_json(const PipelineConfig& config);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::string& path);

/// "motion", "sampling", "both" or "none".
void set_streams(PipelineConfig& config, const std::string& streams);

struct Model {
  PipelineConfig config;
  BackboneWeights motion_backbone;
  BackboneWeights sampling_backbone;
  HeadWeights motion_head;
  HeadWeights sampling_head;
  OffsetPredictorWeights predictor;
  ConvSpec sampler;

  NamedTensors to_tensors() const;
};

/// Weights from config.weights. Checkpoint errors name the failing module.
Model build_model(const PipelineConfig& config);
void save_model(const std::string& path, const Model& model);

/// Builds the configured provider for a loaded scene directory.
std::unique_ptr<FlowProvider> make_flow_provider(const PipelineConfig& config,
                                                 const std::string& scene_dir,
                                                 const LoadedScene& scene);

/// Wall time per stage in milliseconds.
struct StageTimes {
  double pyramid = 0.0;
  double flow = 0.0;
  double motion = 0.0;
  double sampling = 0.0;
  double heads = 0.0;
  double postprocess = 0.0;

  double total() const {
    return pyramid + flow + motion + sampling + heads + postprocess;
  }
};

struct VideoResult {
  std::vector<DetectionSet> motion;    // per frame, empty when disabled
  std::vector<DetectionSet> sampling;
  std::vector<DetectionSet> detections;  // final, after fusion / Seq-NMS
  std::vector<Tubelet> tubelets;
  StageTimes times;

  DetectionSet flattened() const;
};

/// Sliding-buffer inference over a whole video.
VideoResult infer_video(const std::vector<Tensor>& frames,
                        const FlowProvider& flow, const Model& model);

/// Detections of frame t (before Seq-NMS) recomputed from scratch.
DetectionSet infer_frame(const std::vector<Tensor>& frames, int t,
                         const FlowProvider& flow, const Model& model);

struct TrainStep {
  std::vector<int> supports;  // temporal offsets used
  LossBreakdown loss;
};

/// Forward pass of one training step on reference frame t: draws
/// train_supports offsets from the in-range +-K window (seeded, without
/// replacement) unless `forced` gives them, aggregates exactly those
/// supports per enabled stream and evaluates the loss.
TrainStep train_step_forward(const std::vector<Tensor>& frames,
                             const std::vector<LabeledBox>& truth, int t,
                             const FlowProvider& flow, const Model& model,
                             std::uint64_t seed,
                             const std::vector<int>* forced = nullptr);

/// Loss of the enabled streams fed with the reference's own features only.
LossBreakdown single_frame_loss(const Tensor& frame,
                                const std::vector<LabeledBox>& truth,
                                const Model& model);

struct BenchEntry {
  int supports = 0;
  int runs = 0;
  double median_ms = 0.0;  // whole video
  double spread = 0.0;     // (max - min) / median over runs
  StageTimes stages;       // median per stage
};

/// One warm-up pass per support count, then `runs` rounds of timed passes
/// that cycle through the counts.
std::vector<BenchEntry> bench(const std::vector<Tensor>& frames,
                              const FlowProvider& flow, const Model& model,
                              const std::vector<int>& support_counts,
                              int runs = 5);
nlohmann::json bench_json(const std::vector<BenchEntry>& entries);

/// Frames with detections (class colour, label "class score") and optional
/// dashed ground truth drawn on top.
std::vector<Tensor> visualize(const std::vector<Tensor>& frames,
                              const DetectionSet& detections,
                              const std::vector<std::vector<LabeledBox>>& truth);
/// Colour key for `num_classes` classes.
Tensor legend_image(int num_classes);

}  // namespace ssvd
