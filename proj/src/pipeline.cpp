#include "ssvd/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "ssvd/errors.hpp"

namespace ssvd {

void AggregationConfig::validate() const {
  if (range < 1) throw ConfigError("aggregation.range must be >= 1");
  if (buffer_capacity != 2 * range + 1) {
    throw ConfigError("aggregation.buffer_capacity must equal 2 * range + 1 (" +
                      std::to_string(2 * range + 1) + ")");
  }
  if (supports < 0 || supports % 2 != 0 || supports > 2 * range) {
    throw ConfigError("aggregation.supports must be even and in [0, 2 * range]");
  }
  if (train_supports != 2) {
    throw ConfigError("aggregation.train_supports must be 2");
  }
}

std::vector<int> select_supports(int t, int frames,
                                 const AggregationConfig& config) {
  const int half = config.supports / 2;
  std::vector<int> out;
  for (int i = half; i >= 1; --i) {
    const int tau = static_cast<int>(std::lround(
        static_cast<double>(config.range) * i / half));
    if (t - tau >= 0) out.push_back(-tau);
  }
  for (int i = 1; i <= half; ++i) {
    const int tau = static_cast<int>(std::lround(
        static_cast<double>(config.range) * i / half));
    if (t + tau < frames) out.push_back(tau);
  }
  return out;
}

void PipelineConfig::validate() const {
  aggregation.validate();
  if (backbone.channels != head.channels ||
      backbone.channels != predictor.feature_channels) {
    throw ConfigError("backbone, head and offset predictor channel counts differ");
  }
  if (head.anchors != anchors.anchors_per_location()) {
    throw ConfigError("head.anchors does not match the anchor config");
  }
  if (predictor.groups < 1 || backbone.channels % predictor.groups != 0) {
    throw ConfigError("deformable groups must divide the feature channels");
  }
  static const std::set<std::string> flows{"exact", "flo", "block"};
  if (!flows.contains(flow)) throw ConfigError("unknown flow provider '" + flow + "'");
  if (offsets != "flow" && offsets != "predictor") {
    throw ConfigError("sampling.offsets must be 'flow' or 'predictor'");
  }
  if (sampler != "identity" && sampler != "smoothing") {
    throw ConfigError("sampling.sampler must be 'identity' or 'smoothing'");
  }
  if (!(offset_reach >= 0.0)) throw ConfigError("sampling.reach must be >= 0");
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("nms_iou must be in (0, 1]");
  if (decode.topk_per_level < 1) throw ConfigError("decode.topk_per_level must be >= 1");
  if (!(match.background_iou <= match.foreground_iou)) {
    throw ConfigError("match.background_iou exceeds match.foreground_iou");
  }
}

nlohmann::json config_to_json(const PipelineConfig& c) {
  using nlohmann::json;
  return json{
      {"seed", c.seed},
      {"weights", c.weights},
      {"backbone", {{"channels", c.backbone.channels}}},
      {"anchors",
       {{"base_sizes", c.anchors.base_sizes},
        {"aspect_ratios", c.anchors.aspect_ratios},
        {"size_factors", c.anchors.size_factors}}},
      {"head", {{"num_classes", c.head.num_classes}}},
      {"predictor",
       {{"hidden_channels", c.predictor.hidden_channels},
        {"groups", c.predictor.groups}}},
      {"designed",
       {{"brightness", c.designed.brightness},
        {"class_gain", c.designed.class_gain},
        {"threshold", c.designed.threshold},
        {"surround", c.designed.surround},
        {"band", c.designed.band}}},
      {"loss", {{"alpha", c.focal.alpha}, {"gamma", c.focal.gamma}}},
      {"match",
       {{"foreground_iou", c.match.foreground_iou},
        {"background_iou", c.match.background_iou}}},
      {"decode",
       {{"score_threshold", c.decode.score_threshold},
        {"topk_per_level", c.decode.topk_per_level}}},
      {"nms_iou", c.nms_iou},
      {"seq_nms",
       {{"enabled", c.seq_nms},
        {"link_iou", c.seq.link_iou},
        {"suppress_iou", c.seq.suppress_iou},
        {"rescore", c.seq.rescore == Rescore::mean ? "mean" : "max"}}},
      {"flow",
       {{"provider", c.flow},
        {"patch_radius", c.block.patch_radius},
        {"search_radius", c.block.search_radius}}},
      {"streams", {{"motion", c.motion_stream}, {"sampling", c.sampling_stream}}},
      {"sampling",
       {{"offsets", c.offsets}, {"reach", c.offset_reach}, {"sampler", c.sampler}}},
      {"aggregation",
       {{"range", c.aggregation.range},
        {"buffer_capacity", c.aggregation.buffer_capacity},
        {"supports", c.aggregation.supports},
        {"train_supports", c.aggregation.train_supports}}},
  };
}

namespace {

// Reads the known keys of one object and rejects the rest.
class Section {
 public:
  Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + " must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) {
        throw ConfigError("unknown config key '" + prefix() + key + "'");
      }
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + prefix() + key + "' has the wrong type");
    }
  }

  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string prefix() const { return name_.empty() ? "" : name_ + "."; }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  {
    Section root(j, "");
    root.get("seed", c.seed);
    root.get("weights", c.weights);
    root.get("nms_iou", c.nms_iou);
    if (auto* s = root.child("backbone")) {
      Section b(*s, "backbone");
      b.get("channels", c.backbone.channels);
    }
    if (auto* s = root.child("anchors")) {
      Section a(*s, "anchors");
      a.get("base_sizes", c.anchors.base_sizes);
      a.get("aspect_ratios", c.anchors.aspect_ratios);
      a.get("size_factors", c.anchors.size_factors);
    }
    if (auto* s = root.child("head")) {
      Section h(*s, "head");
      h.get("num_classes", c.head.num_classes);
    }
    if (auto* s = root.child("predictor")) {
      Section p(*s, "predictor");
      p.get("hidden_channels", c.predictor.hidden_channels);
      p.get("groups", c.predictor.groups);
    }
    if (auto* s = root.child("designed")) {
      Section d(*s, "designed");
      d.get("brightness", c.designed.brightness);
      d.get("class_gain", c.designed.class_gain);
      d.get("threshold", c.designed.threshold);
      d.get("surround", c.designed.surround);
      d.get("band", c.designed.band);
    }
    if (auto* s = root.child("loss")) {
      Section l(*s, "loss");
      l.get("alpha", c.focal.alpha);
      l.get("gamma", c.focal.gamma);
    }
    if (auto* s = root.child("match")) {
      Section m(*s, "match");
      m.get("foreground_iou", c.match.foreground_iou);
      m.get("background_iou", c.match.background_iou);
    }
    if (auto* s = root.child("decode")) {
      Section d(*s, "decode");
      d.get("score_threshold", c.decode.score_threshold);
      d.get("topk_per_level", c.decode.topk_per_level);
    }
    if (auto* s = root.child("seq_nms")) {
      Section q(*s, "seq_nms");
      q.get("enabled", c.seq_nms);
      q.get("link_iou", c.seq.link_iou);
      q.get("suppress_iou", c.seq.suppress_iou);
      std::string rescore = "mean";
      q.get("rescore", rescore);
      if (rescore != "mean" && rescore != "max") {
        throw ConfigError("seq_nms.rescore must be 'mean' or 'max'");
      }
      c.seq.rescore = rescore == "mean" ? Rescore::mean : Rescore::max;
    }
    if (auto* s = root.child("flow")) {
      Section f(*s, "flow");
      f.get("provider", c.flow);
      f.get("patch_radius", c.block.patch_radius);
      f.get("search_radius", c.block.search_radius);
    }
    if (auto* s = root.child("streams")) {
      Section st(*s, "streams");
      st.get("motion", c.motion_stream);
      st.get("sampling", c.sampling_stream);
    }
    if (auto* s = root.child("sampling")) {
      Section sp(*s, "sampling");
      sp.get("offsets", c.offsets);
      sp.get("reach", c.offset_reach);
      sp.get("sampler", c.sampler);
    }
    if (auto* s = root.child("aggregation")) {
      Section a(*s, "aggregation");
      a.get("range", c.aggregation.range);
      a.get("buffer_capacity", c.aggregation.buffer_capacity);
      a.get("supports", c.aggregation.supports);
      a.get("train_supports", c.aggregation.train_supports);
    }
  }
  c.head.channels = c.backbone.channels;
  c.predictor.feature_channels = c.backbone.channels;
  c.head.anchors = c.anchors.anchors_per_location();
  c.validate();
  return c;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

void set_streams(PipelineConfig& config, const std::string& streams) {
  if (streams == "motion") {
    config.motion_stream = true;
    config.sampling_stream = false;
  } else if (streams == "sampling") {
    config.motion_stream = false;
    config.sampling_stream = true;
  } else if (streams == "both") {
    config.motion_stream = config.sampling_stream = true;
  } else if (streams == "none") {
    config.motion_stream = config.sampling_stream = false;
  } else {
    throw ConfigError("streams must be motion, sampling, both or none");
  }
}

NamedTensors Model::to_tensors() const {
  NamedTensors t;
  motion_backbone.save(t, "backbone.motion");
  sampling_backbone.save(t, "backbone.sampling");
  motion_head.save(t, "head.motion");
  sampling_head.save(t, "head.sampling");
  predictor.save(t, "predictor");
  t.add_conv("sampler", sampler);
  return t;
}

namespace {

ConvSpec make_sampler(const PipelineConfig& c) {
  return c.sampler == "identity" ? identity_sampler(c.backbone.channels)
                                 : smoothing_sampler(c.backbone.channels);
}

void check_finite(const ConvSpec& conv, const std::string& module) {
  bool ok = conv.weight.all_finite();
  for (float b : conv.bias) ok = ok && std::isfinite(b);
  if (!ok) throw IoError(module + ": non-finite weights");
}

template <typename Fn>
auto load_module(const std::string& module, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw IoError(module + ": " + e.what());
  }
}

}  // namespace

Model build_model(const PipelineConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  m.sampler = make_sampler(config);
  if (config.weights == "designed") {
    m.motion_backbone = designed_backbone(config.backbone, config.designed);
    m.sampling_backbone = m.motion_backbone;
    m.motion_head = designed_head(config.head, config.anchors, config.designed);
    m.sampling_head = m.motion_head;
    m.predictor = init_offset_predictor(config.seed + 4, config.predictor);
  } else if (config.weights == "random") {
    m.motion_backbone = init_backbone_weights(config.seed, config.backbone);
    m.sampling_backbone = init_backbone_weights(config.seed + 1, config.backbone);
    m.motion_head = init_head_weights(config.seed + 2, config.head);
    m.sampling_head = init_head_weights(config.seed + 3, config.head);
    m.predictor = init_offset_predictor(config.seed + 4, config.predictor);
  } else {
    const NamedTensors t = load_module("checkpoint", [&] { return load_checkpoint(config.weights); });
    m.motion_backbone = load_module("backbone.motion", [&] {
      return BackboneWeights::load(t, "backbone.motion", config.backbone);
    });
    m.sampling_backbone = load_module("backbone.sampling", [&] {
      return BackboneWeights::load(t, "backbone.sampling", config.backbone);
    });
    m.motion_head = load_module("head.motion", [&] {
      return HeadWeights::load(t, "head.motion", config.head);
    });
    m.sampling_head = load_module("head.sampling", [&] {
      return HeadWeights::load(t, "head.sampling", config.head);
    });
    m.predictor = load_module("predictor", [&] {
      return OffsetPredictorWeights::load(t, "predictor", config.predictor);
    });
    if (t.contains("sampler.weight")) {
      load_module("sampler", [&] {
        t.read_conv("sampler", m.sampler);
        return 0;
      });
    }
    NamedTensors check = m.to_tensors();
    for (const auto& [name, tensor] : check.entries()) {
      if (!tensor.all_finite()) {
        throw IoError(name.substr(0, name.rfind('.')) + ": non-finite weights in " + name);
      }
    }
  }
  check_finite(m.sampler, "sampler");
  return m;
}

void save_model(const std::string& path, const Model& model) {
  save_checkpoint(path, model.to_tensors());
}

std::unique_ptr<FlowProvider> make_flow_provider(const PipelineConfig& config,
                                                 const std::string& scene_dir,
                                                 const LoadedScene& scene) {
  if (scene.frames.empty()) throw ValidationError("scene has no frames");
  const int h = scene.frames[0].height();
  const int w = scene.frames[0].width();
  if (config.flow == "exact") {
    if (!scene.has_spec) {
      throw ConfigError("exact flow needs a scene manifest with its spec");
    }
    return std::make_unique<ExactSyntheticProvider>(scene.spec);
  }
  if (config.flow == "flo") {
    return std::make_unique<FloFileProvider>(
        (std::filesystem::path(scene_dir) / "flow").string(), h, w);
  }
  const std::vector<Tensor>* frames = &scene.frames;
  return std::make_unique<BlockMatcherProvider>(
      [frames](int t) -> const Tensor& { return frames->at(static_cast<std::size_t>(t)); },
      h, w, config.block);
}

DetectionSet VideoResult::flattened() const {
  DetectionSet out;
  for (const DetectionSet& d : detections) out.insert(out.end(), d.begin(), d.end());
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

class Stopwatch {
 public:
  explicit Stopwatch(double& sink) : sink_(sink), start_(Clock::now()) {}
  ~Stopwatch() {
    sink_ += std::chrono::duration<double, std::milli>(Clock::now() - start_).count();
  }

 private:
  double& sink_;
  Clock::time_point start_;
};

// Per-frame pyramids of both streams, computed on first use. Holding at most
// the 2K + 1 frames of the current window is the caller's job.
class PyramidBuffer {
 public:
  PyramidBuffer(const std::vector<Tensor>& frames, const Model& model,
                StageTimes& times)
      : frames_(frames), model_(model), times_(times) {}

  const FeaturePyramid& motion(int t) { return get(t, motion_, model_.motion_backbone); }
  const FeaturePyramid& sampling(int t) {
    return get(t, sampling_, model_.sampling_backbone);
  }

  void evict_before(int t) {
    motion_.erase(motion_.begin(), motion_.lower_bound(t));
    sampling_.erase(sampling_.begin(), sampling_.lower_bound(t));
  }

  std::size_t size() const { return std::max(motion_.size(), sampling_.size()); }

 private:
  const FeaturePyramid& get(int t, std::map<int, FeaturePyramid>& cache,
                            const BackboneWeights& w) {
    auto it = cache.find(t);
    if (it == cache.end()) {
      Stopwatch sw(times_.pyramid);
      it = cache.emplace(t, extract_pyramid(frames_.at(static_cast<std::size_t>(t)), w)).first;
    }
    return it->second;
  }

  const std::vector<Tensor>& frames_;
  const Model& model_;
  StageTimes& times_;
  std::map<int, FeaturePyramid> motion_;
  std::map<int, FeaturePyramid> sampling_;
};

struct FrameDetections {
  DetectionSet motion;
  DetectionSet sampling;
  DetectionSet final;
};

DetectionSet detect_stream(const FeaturePyramid& pyramid, const HeadWeights& head,
                           const std::vector<Anchor>& anchors, int h, int w,
                           const PipelineConfig& c, int t, StreamTag tag,
                           StageTimes& times) {
  HeadOutputs out;
  {
    Stopwatch sw(times.heads);
    out = head_forward(pyramid, head);
  }
  Stopwatch sw(times.postprocess);
  return nms(decode_detections(out, anchors, h, w, c.decode, t, tag), c.nms_iou);
}

// Pyramids aggregated per stream from the reference (when include_self) and
// the given support offsets.
struct Aggregated {
  FeaturePyramid motion;
  FeaturePyramid sampling;
};

Aggregated aggregate(int t, const std::vector<int>& offsets, bool include_self,
                     PyramidBuffer& buffer, const FlowProvider& flow,
                     const Model& model, StageTimes& times) {
  const PipelineConfig& c = model.config;
  const bool need_flow = c.motion_stream || (c.sampling_stream && c.offsets == "flow");
  std::vector<FlowField> flows;
  if (need_flow && !offsets.empty()) {
    Stopwatch sw(times.flow);
    for (int tau : offsets) flows.push_back(flow.flow(t, t + tau));
  }
  Aggregated agg;
  if (c.motion_stream) {
    std::vector<FeaturePyramid> warped;
    warped.reserve(offsets.size());
    std::vector<Contribution> terms;
    if (include_self) terms.push_back({0, &buffer.motion(t)});
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      const FeaturePyramid& support = buffer.motion(t + offsets[i]);
      Stopwatch sw(times.motion);
      warped.push_back(calibrate_pyramid(support, flows[i]));
      terms.push_back({offsets[i], &warped.back()});
    }
    Stopwatch sw(times.motion);
    agg.motion = aggregate_motion(std::move(terms));
  }
  if (c.sampling_stream) {
    std::vector<FeaturePyramid> sampled;
    sampled.reserve(offsets.size());
    std::vector<Contribution> terms;
    if (include_self) terms.push_back({0, &buffer.sampling(t)});
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      const FeaturePyramid& support = buffer.sampling(t + offsets[i]);
      const FeaturePyramid* reference = c.offsets == "predictor" ? &buffer.sampling(t) : nullptr;
      Stopwatch sw(times.sampling);
      const OffsetField off =
          reference ? predict_offset_field(*reference, support, model.predictor)
                    : flow_guided_offset_field(flows[i], c.predictor.groups,
                                               static_cast<float>(c.offset_reach));
      sampled.push_back(hallucinate_pyramid(support, off, model.sampler, c.predictor.groups));
      terms.push_back({offsets[i], &sampled.back()});
    }
    Stopwatch sw(times.sampling);
    agg.sampling = aggregate_sampling(std::move(terms));
  }
  return agg;
}

FrameDetections detect_frame(int t, int n, PyramidBuffer& buffer,
                             const FlowProvider& flow, const Model& model,
                             const std::vector<Anchor>& anchors, int h, int w,
                             StageTimes& times) {
  const PipelineConfig& c = model.config;
  FrameDetections out;
  if (!c.motion_stream && !c.sampling_stream) {
    out.final = detect_stream(buffer.motion(t), model.motion_head, anchors, h, w,
                              c, t, StreamTag::single, times);
    return out;
  }
  const std::vector<int> offsets = select_supports(t, n, c.aggregation);
  const Aggregated agg = aggregate(t, offsets, true, buffer, flow, model, times);
  if (c.motion_stream) {
    out.motion = detect_stream(agg.motion, model.motion_head, anchors, h, w, c, t,
                               StreamTag::motion, times);
  }
  if (c.sampling_stream) {
    out.sampling = detect_stream(agg.sampling, model.sampling_head, anchors, h, w,
                                 c, t, StreamTag::sampling, times);
  }
  Stopwatch sw(times.postprocess);
  if (c.motion_stream && c.sampling_stream) {
    out.final = late_fuse(out.motion, out.sampling, c.nms_iou);
  } else {
    out.final = c.motion_stream ? out.motion : out.sampling;
  }
  return out;
}

void check_video(const std::vector<Tensor>& frames, const FlowProvider& flow,
                 const Model& model) {
  model.config.validate();
  if (frames.empty()) throw ValidationError("video has no frames");
  for (const Tensor& f : frames) {
    if (f.shape() != frames[0].shape()) {
      throw DimensionError("video frames differ in shape");
    }
  }
  if (flow.height() != frames[0].height() || flow.width() != frames[0].width()) {
    throw DimensionError("flow provider size does not match the frames");
  }
}

}  // namespace

VideoResult infer_video(const std::vector<Tensor>& frames,
                        const FlowProvider& flow, const Model& model) {
  check_video(frames, flow, model);
  const int n = static_cast<int>(frames.size());
  const int h = frames[0].height();
  const int w = frames[0].width();
  const std::vector<Anchor> anchors = generate_anchors(model.config.anchors, h, w);
  VideoResult result;
  PyramidBuffer buffer(frames, model, result.times);
  const int k = model.config.aggregation.range;
  for (int t = 0; t < n; ++t) {
    buffer.evict_before(t - k);
    FrameDetections d = detect_frame(t, n, buffer, flow, model, anchors, h, w, result.times);
    if (buffer.size() > static_cast<std::size_t>(model.config.aggregation.buffer_capacity)) {
      throw Error("feature buffer exceeded its capacity");
    }
    result.motion.push_back(std::move(d.motion));
    result.sampling.push_back(std::move(d.sampling));
    result.detections.push_back(std::move(d.final));
  }
  if (model.config.seq_nms) {
    Stopwatch sw(result.times.postprocess);
    SeqNmsResult s = seq_nms(result.detections, model.config.seq);
    result.detections = std::move(s.frames);
    result.tubelets = std::move(s.tubelets);
  }
  return result;
}

DetectionSet infer_frame(const std::vector<Tensor>& frames, int t,
                         const FlowProvider& flow, const Model& model) {
  check_video(frames, flow, model);
  const int n = static_cast<int>(frames.size());
  if (t < 0 || t >= n) throw ValidationError("frame index out of range");
  const int h = frames[0].height();
  const int w = frames[0].width();
  const std::vector<Anchor> anchors = generate_anchors(model.config.anchors, h, w);
  StageTimes times;
  PyramidBuffer buffer(frames, model, times);
  return detect_frame(t, n, buffer, flow, model, anchors, h, w, times).final;
}

namespace {

LossBreakdown loss_of(const Aggregated& agg, const FeaturePyramid* single,
                      const std::vector<LabeledBox>& truth, const Model& model,
                      int h, int w) {
  const PipelineConfig& c = model.config;
  const std::vector<Anchor> anchors = generate_anchors(c.anchors, h, w);
  const LossTargets targets = make_targets(anchors, truth, c.head.num_classes, c.match);
  if (single) {
    const FlatOutputs o = FlatOutputs::from(head_forward(*single, model.motion_head));
    return total_loss(&o, nullptr, targets, c.focal);
  }
  FlatOutputs m;
  FlatOutputs s;
  if (c.motion_stream) m = FlatOutputs::from(head_forward(agg.motion, model.motion_head));
  if (c.sampling_stream) s = FlatOutputs::from(head_forward(agg.sampling, model.sampling_head));
  return total_loss(c.motion_stream ? &m : nullptr, c.sampling_stream ? &s : nullptr,
                    targets, c.focal);
}

}  // namespace

TrainStep train_step_forward(const std::vector<Tensor>& frames,
                             const std::vector<LabeledBox>& truth, int t,
                             const FlowProvider& flow, const Model& model,
                             std::uint64_t seed, const std::vector<int>* forced) {
  check_video(frames, flow, model);
  const int n = static_cast<int>(frames.size());
  if (t < 0 || t >= n) throw ValidationError("reference frame out of range");
  const PipelineConfig& c = model.config;
  const int k = c.aggregation.range;
  TrainStep step;
  if (forced) {
    for (int tau : *forced) {
      if (t + tau < 0 || t + tau >= n || std::abs(tau) > k) {
        throw ValidationError("forced support offset " + std::to_string(tau) +
                              " is outside the window");
      }
    }
    step.supports = *forced;
  } else {
    std::vector<int> pool;
    for (int tau = -k; tau <= k; ++tau) {
      if (tau != 0 && t + tau >= 0 && t + tau < n) pool.push_back(tau);
    }
    const int need = c.aggregation.train_supports;
    if (static_cast<int>(pool.size()) < need) {
      throw ValidationError("video too short for " + std::to_string(need) +
                            " training supports");
    }
    Rng rng(seed);
    for (int i = 0; i < need; ++i) {
      const std::size_t j = i + rng.index(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    step.supports.assign(pool.begin(), pool.begin() + need);
    std::ranges::sort(step.supports);
  }
  StageTimes times;
  PyramidBuffer buffer(frames, model, times);
  const int h = frames[0].height();
  const int w = frames[0].width();
  if (!c.motion_stream && !c.sampling_stream) {
    step.loss = loss_of({}, &buffer.motion(t), truth, model, h, w);
    return step;
  }
  const Aggregated agg = aggregate(t, step.supports, false, buffer, flow, model, times);
  step.loss = loss_of(agg, nullptr, truth, model, h, w);
  return step;
}

LossBreakdown single_frame_loss(const Tensor& frame,
                                const std::vector<LabeledBox>& truth,
                                const Model& model) {
  const PipelineConfig& c = model.config;
  const int h = frame.height();
  const int w = frame.width();
  Aggregated agg;
  if (!c.motion_stream && !c.sampling_stream) {
    const FeaturePyramid p = extract_pyramid(frame, model.motion_backbone);
    return loss_of({}, &p, truth, model, h, w);
  }
  if (c.motion_stream) agg.motion = extract_pyramid(frame, model.motion_backbone);
  if (c.sampling_stream) agg.sampling = extract_pyramid(frame, model.sampling_backbone);
  return loss_of(agg, nullptr, truth, model, h, w);
}

namespace {

double median(std::vector<double> v) {
  std::ranges::sort(v);
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

std::vector<BenchEntry> bench(const std::vector<Tensor>& frames,
                              const FlowProvider& flow, const Model& model,
                              const std::vector<int>& support_counts, int runs) {
  if (runs < 1) throw ConfigError("bench needs at least one run");
  std::vector<Model> models;
  for (int count : support_counts) {
    Model m = model;
    m.config.aggregation.supports = count;
    m.config.validate();
    infer_video(frames, flow, m);  // warm-up
    models.push_back(std::move(m));
  }
  // timed passes interleaved across the counts
  const std::size_t n = models.size();
  std::vector<std::vector<double>> totals(n);
  std::vector<std::vector<StageTimes>> stage_runs(n);
  for (int r = 0; r < runs; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto start = Clock::now();
      VideoResult v = infer_video(frames, flow, models[i]);
      totals[i].push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
      stage_runs[i].push_back(v.times);
    }
  }
  std::vector<BenchEntry> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int count = support_counts[i];
    const std::vector<double>& total = totals[i];
    const std::vector<StageTimes>& stages = stage_runs[i];
    BenchEntry e;
    e.supports = count;
    e.runs = runs;
    e.median_ms = median(total);
    e.spread = (*std::ranges::max_element(total) - *std::ranges::min_element(total)) /
               e.median_ms;
    auto stage_median = [&](double StageTimes::*field) {
      std::vector<double> v;
      for (const StageTimes& s : stages) v.push_back(s.*field);
      return median(v);
    };
    e.stages.pyramid = stage_median(&StageTimes::pyramid);
    e.stages.flow = stage_median(&StageTimes::flow);
    e.stages.motion = stage_median(&StageTimes::motion);
    e.stages.sampling = stage_median(&StageTimes::sampling);
    e.stages.heads = stage_median(&StageTimes::heads);
    e.stages.postprocess = stage_median(&StageTimes::postprocess);
    out.push_back(e);
  }
  return out;
}

nlohmann::json bench_json(const std::vector<BenchEntry>& entries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const BenchEntry& e : entries) {
    arr.push_back({{"supports", e.supports},
                   {"runs", e.runs},
                   {"median_ms", e.median_ms},
                   {"spread", e.spread},
                   {"stages_ms",
                    {{"pyramid", e.stages.pyramid},
                     {"flow", e.stages.flow},
                     {"motion", e.stages.motion},
                     {"sampling", e.stages.sampling},
                     {"heads", e.stages.heads},
                     {"postprocess", e.stages.postprocess}}}});
  }
  return arr;
}

namespace {

struct Rgb {
  float r, g, b;
};

Rgb class_colour(int cls) {
  static constexpr Rgb palette[] = {
      {1.0f, 1.0f, 0.0f}, {0.0f, 1.0f, 1.0f}, {1.0f, 0.0f, 1.0f},
      {1.0f, 0.5f, 0.0f}, {0.5f, 0.5f, 1.0f}, {0.0f, 0.0f, 0.0f}};
  return palette[static_cast<std::size_t>(std::abs(cls)) % std::size(palette)];
}

void put(Tensor& img, int y, int x, Rgb c) {
  if (y < 0 || x < 0 || y >= img.height() || x >= img.width()) return;
  img.at(0, 0, y, x) = c.r;
  img.at(0, 1, y, x) = c.g;
  img.at(0, 2, y, x) = c.b;
}

void rectangle(Tensor& img, const Box& b, Rgb c, bool dashed) {
  const int x1 = static_cast<int>(std::lround(b.x1));
  const int y1 = static_cast<int>(std::lround(b.y1));
  const int x2 = static_cast<int>(std::lround(b.x2)) - 1;
  const int y2 = static_cast<int>(std::lround(b.y2)) - 1;
  auto on = [&](int i) { return !dashed || (i / 4) % 2 == 0; };
  for (int x = x1; x <= x2; ++x) {
    if (!on(x - x1)) continue;
    put(img, y1, x, c);
    put(img, y2, x, c);
  }
  for (int y = y1; y <= y2; ++y) {
    if (!on(y - y1)) continue;
    put(img, y, x1, c);
    put(img, y, x2, c);
  }
}

// 3x5 glyphs, one row per entry, bit 2 is the leftmost column.
constexpr unsigned char kDigits[11][5] = {
    {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7},
    {5, 5, 7, 1, 1}, {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1},
    {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7}, {0, 0, 0, 0, 2}};

void text(Tensor& img, int y, int x, const std::string& s, Rgb c) {
  for (char ch : s) {
    int g = -1;
    if (ch >= '0' && ch <= '9') g = ch - '0';
    if (ch == '.') g = 10;
    if (g >= 0) {
      for (int r = 0; r < 5; ++r) {
        for (int col = 0; col < 3; ++col) {
          if (kDigits[g][r] >> (2 - col) & 1) put(img, y + r, x + col, c);
        }
      }
    }
    x += 4;
  }
}

std::string label(const Detection& d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%d %.2f", d.class_id, d.score);
  return buf;
}

}  // namespace

std::vector<Tensor> visualize(const std::vector<Tensor>& frames,
                              const DetectionSet& detections,
                              const std::vector<std::vector<LabeledBox>>& truth) {
  std::vector<Tensor> out = frames;
  for (std::size_t f = 0; f < truth.size() && f < out.size(); ++f) {
    for (const LabeledBox& lb : truth[f]) rectangle(out[f], lb.box, {1, 1, 1}, true);
  }
  for (const Detection& d : detections) {
    if (d.frame < 0 || d.frame >= static_cast<int>(out.size())) continue;
    Tensor& img = out[static_cast<std::size_t>(d.frame)];
    const Rgb c = class_colour(d.class_id);
    rectangle(img, d.box, c, false);
    const int y = static_cast<int>(std::lround(d.box.y1)) - 7;
    text(img, y < 0 ? static_cast<int>(std::lround(d.box.y1)) + 2 : y,
         static_cast<int>(std::lround(d.box.x1)) + 1, label(d), c);
  }
  return out;
}

Tensor legend_image(int num_classes) {
  const int rows = num_classes + 1;
  Tensor img(1, 3, 8 * rows + 2, 40, 0.15f);
  for (int c = 0; c < num_classes; ++c) {
    const int y = 2 + 8 * c;
    for (int dy = 0; dy < 6; ++dy) {
      for (int dx = 0; dx < 6; ++dx) put(img, y + dy, 2 + dx, class_colour(c));
    }
    text(img, y, 12, std::to_string(c), {1, 1, 1});
  }
  rectangle(img, {2, 2.0 + 8 * num_classes, 36, 8.0 + 8 * num_classes}, {1, 1, 1}, true);
  return img;
}

}  // namespace ssvd
