#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssvd/box.hpp"
#include "ssvd/evaluation.hpp"
#include "ssvd/motion.hpp"
#include "ssvd/tensor.hpp"

namespace ssvd {

enum class ShapeKind { disc, rectangle, triangle };

std::string to_string(ShapeKind k);
ShapeKind parse_shape(const std::string& name);

/// Default class of each shape (disc 0, rectangle 1, triangle 2).
int shape_class(ShapeKind k);

struct ObjectSpec {
  ShapeKind shape = ShapeKind::disc;
  int class_id = 0;
  double width = 32.0;
  double height = 32.0;
  double x0 = 0.0;  // centre at frame 0
  double y0 = 0.0;
  double vx = 0.0;  // px / frame
  double vy = 0.0;
  std::uint64_t texture_seed = 0;
};

struct BlurEvent {
  int frame = 0;
  int length = 9;  // px
  double angle = 0.0;  // radians
};

/// Grey vertical bar spanning the image height that tracks an object's
/// centre and hides `coverage` of its width on frames [start, end).
struct OccluderSpec {
  int target = 0;
  int start = 0;
  int end = 0;
  double coverage = 0.5;
};

struct SceneSpec {
  int width = 256;
  int height = 256;
  int frames = 25;
  std::vector<ObjectSpec> objects;
  std::vector<BlurEvent> blur;
  std::vector<OccluderSpec> occluders;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;

  bool degraded() const { return !blur.empty() || !occluders.empty(); }
};

nlohmann::json spec_to_json(const SceneSpec& spec);
SceneSpec spec_from_json(const nlohmann::json& j);

/// Throws ValidationError for sizes below 8 px, objects that do not fit the
/// canvas, non-finite velocities or out-of-range degradation frames.
void validate_spec(const SceneSpec& spec);

struct Point2d {
  double x = 0.0;
  double y = 0.0;
};

/// Object centre at frame t: linear motion, reflected at the canvas walls
/// so the whole object stays visible.
Point2d object_center(const SceneSpec& spec, int object, double t);
Box object_box(const SceneSpec& spec, int object, int t);

struct SceneTruth {
  SceneSpec spec;
  std::vector<std::vector<LabeledBox>> boxes;  // per frame, track = object
  std::vector<std::vector<Speed>> speed;       // parallel to boxes
};

struct RenderedScene {
  std::vector<Tensor> frames;  // 1x3xHxW, values on the 1/255 grid
  SceneTruth truth;
};

RenderedScene render_scene(const SceneSpec& spec);
SceneTruth scene_truth(const SceneSpec& spec);

/// Full-resolution flow from frame t to frame t + tau: each object's
/// displacement inside its frame-t mask, zero on the background.
Tensor truth_flow_full(const SceneSpec& spec, int t, int tau);
FlowField truth_flow(const SceneTruth& truth, int t, int tau);

/// Exact flow derived from the scene description.
class ExactSyntheticProvider : public FlowProvider {
 public:
  explicit ExactSyntheticProvider(SceneSpec spec);
  std::string name() const override { return "exact"; }
  int height() const override { return truth_.spec.height; }
  int width() const override { return truth_.spec.width; }

 protected:
  FlowField compute(int reference, int support) const override;

 private:
  SceneTruth truth_;
};

enum class SuiteKind { clean, blur, occlusion, fast };

std::string to_string(SuiteKind k);
SuiteKind parse_suite(const std::string& name);

struct SuiteOptions {
  int scenes = 20;
  int resolution = 256;
  int frames = 25;
  std::uint64_t base_seed = 1000;
};

std::vector<SceneSpec> scenario_suite(SuiteKind kind,
                                      const SuiteOptions& options = {});

// Binary PPM (P6), 8 bits per channel.
void write_ppm(const std::string& path, const Tensor& frame);
Tensor read_ppm(const std::string& path);

/// Scene directory: frames/NNN.ppm, truth.jsonl, flow/RRR_SSS.flo for each
/// adjacent forward pair, manifest.json.
void write_scene_dir(const std::string& dir, const RenderedScene& scene);

struct LoadedScene {
  SceneSpec spec;
  bool has_spec = false;
  std::vector<Tensor> frames;
  std::vector<std::vector<LabeledBox>> truth;
};

LoadedScene load_scene_dir(const std::string& dir);

}  // namespace ssvd
