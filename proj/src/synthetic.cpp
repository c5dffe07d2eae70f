#include "ssvd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ssvd/errors.hpp"
#include "ssvd/random.hpp"

namespace ssvd {

namespace fs = std::filesystem;

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::disc: return "disc";
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::triangle: return "triangle";
  }
  return "disc";
}

ShapeKind parse_shape(const std::string& name) {
  if (name == "disc") return ShapeKind::disc;
  if (name == "rectangle") return ShapeKind::rectangle;
  if (name == "triangle") return ShapeKind::triangle;
  throw ValidationError("unknown shape '" + name + "'");
}

int shape_class(ShapeKind k) { return static_cast<int>(k); }

nlohmann::json spec_to_json(const SceneSpec& spec) {
  nlohmann::json objects = nlohmann::json::array();
  for (const ObjectSpec& o : spec.objects) {
    objects.push_back({{"shape", to_string(o.shape)},
                       {"class_id", o.class_id},
                       {"width", o.width},
                       {"height", o.height},
                       {"x0", o.x0},
                       {"y0", o.y0},
                       {"vx", o.vx},
                       {"vy", o.vy},
                       {"texture_seed", o.texture_seed}});
  }
  nlohmann::json blur = nlohmann::json::array();
  for (const BlurEvent& b : spec.blur) {
    blur.push_back({{"frame", b.frame}, {"length", b.length}, {"angle", b.angle}});
  }
  nlohmann::json occ = nlohmann::json::array();
  for (const OccluderSpec& o : spec.occluders) {
    occ.push_back({{"target", o.target},
                   {"start", o.start},
                   {"end", o.end},
                   {"coverage", o.coverage}});
  }
  return {{"width", spec.width},   {"height", spec.height},
          {"frames", spec.frames}, {"objects", objects},
          {"blur", blur},          {"occluders", occ},
          {"noise_sigma", spec.noise_sigma}, {"seed", spec.seed}};
}

SceneSpec spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  try {
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
    s.frames = j.at("frames").get<int>();
    for (const auto& o : j.at("objects")) {
      ObjectSpec os;
      os.shape = parse_shape(o.at("shape").get<std::string>());
      os.class_id = o.at("class_id").get<int>();
      os.width = o.at("width").get<double>();
      os.height = o.at("height").get<double>();
      os.x0 = o.at("x0").get<double>();
      os.y0 = o.at("y0").get<double>();
      os.vx = o.at("vx").get<double>();
      os.vy = o.at("vy").get<double>();
      os.texture_seed = o.at("texture_seed").get<std::uint64_t>();
      s.objects.push_back(os);
    }
    for (const auto& b : j.value("blur", nlohmann::json::array())) {
      s.blur.push_back({b.at("frame").get<int>(), b.at("length").get<int>(),
                        b.at("angle").get<double>()});
    }
    for (const auto& o : j.value("occluders", nlohmann::json::array())) {
      s.occluders.push_back({o.at("target").get<int>(), o.at("start").get<int>(),
                             o.at("end").get<int>(),
                             o.at("coverage").get<double>()});
    }
    s.noise_sigma = j.value("noise_sigma", 0.0);
    s.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("scene spec: ") + e.what());
  }
  return s;
}

void validate_spec(const SceneSpec& spec) {
  if (spec.width < 8 || spec.height < 8 || spec.frames < 1) {
    throw ValidationError("scene needs width, height >= 8 and >= 1 frame");
  }
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const ObjectSpec& o = spec.objects[i];
    const std::string id = "object " + std::to_string(i);
    if (!(o.width >= 8.0) || !(o.height >= 8.0)) {
      throw ValidationError(id + " is smaller than 8 px");
    }
    if (o.width > spec.width || o.height > spec.height) {
      throw ValidationError(id + " does not fit the canvas");
    }
    if (!std::isfinite(o.vx) || !std::isfinite(o.vy) || !std::isfinite(o.x0) ||
        !std::isfinite(o.y0)) {
      throw ValidationError(id + " has a non-finite position or velocity");
    }
    const bool on_canvas = o.x0 + 0.5 * o.width > 0.0 &&
                           o.x0 - 0.5 * o.width < spec.width &&
                           o.y0 + 0.5 * o.height > 0.0 &&
                           o.y0 - 0.5 * o.height < spec.height;
    if (!on_canvas) {
      throw ValidationError(id + " starts off the canvas and is never shown");
    }
  }
  for (const BlurEvent& b : spec.blur) {
    if (b.frame < 0 || b.frame >= spec.frames || b.length < 1) {
      throw ValidationError("blur event at frame " + std::to_string(b.frame) +
                            " is out of range");
    }
  }
  for (const OccluderSpec& o : spec.occluders) {
    if (o.target < 0 || o.target >= static_cast<int>(spec.objects.size()) ||
        o.start < 0 || o.end <= o.start || o.end > spec.frames ||
        !(o.coverage > 0.0 && o.coverage <= 1.0)) {
      throw ValidationError("occluder on object " + std::to_string(o.target) +
                            " is out of range");
    }
  }
}

namespace {

double reflect(double c, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0.0) return lo;
  double m = std::fmod(c - lo, 2.0 * span);
  if (m < 0.0) m += 2.0 * span;
  if (m > span) m = 2.0 * span - m;
  return lo + m;
}

}  // namespace

Point2d object_center(const SceneSpec& spec, int object, double t) {
  const ObjectSpec& o = spec.objects.at(static_cast<std::size_t>(object));
  return {reflect(o.x0 + o.vx * t, 0.5 * o.width, spec.width - 0.5 * o.width),
          reflect(o.y0 + o.vy * t, 0.5 * o.height, spec.height - 0.5 * o.height)};
}

Box object_box(const SceneSpec& spec, int object, int t) {
  const ObjectSpec& o = spec.objects.at(static_cast<std::size_t>(object));
  const Point2d c = object_center(spec, object, t);
  return {c.x - 0.5 * o.width, c.y - 0.5 * o.height, c.x + 0.5 * o.width,
          c.y + 0.5 * o.height};
}

namespace {

// Pixel-centre inside test in object-local coordinates (u, v from centre).
bool inside_shape(const ObjectSpec& o, double u, double v) {
  const double hw = 0.5 * o.width;
  const double hh = 0.5 * o.height;
  switch (o.shape) {
    case ShapeKind::disc:
      return (u / hw) * (u / hw) + (v / hh) * (v / hh) <= 1.0;
    case ShapeKind::rectangle:
      return std::fabs(u) <= hw && std::fabs(v) <= hh;
    case ShapeKind::triangle: {
      if (v < -hh || v > hh) return false;
      return std::fabs(u) <= hw * (v + hh) / o.height;
    }
  }
  return false;
}

struct Texture {
  double fx1, fy1, p1, fx2, fy2, p2;

  explicit Texture(std::uint64_t seed) {
    Rng rng(seed);
    const double tau = 2.0 * std::numbers::pi;
    auto freq = [&] { return tau / rng.uniform(12.0, 24.0); };
    const double a1 = rng.uniform(0.0, tau);
    const double a2 = rng.uniform(0.0, tau);
    const double k1 = freq();
    const double k2 = freq();
    fx1 = k1 * std::cos(a1);
    fy1 = k1 * std::sin(a1);
    fx2 = k2 * std::cos(a2);
    fy2 = k2 * std::sin(a2);
    p1 = rng.uniform(0.0, tau);
    p2 = rng.uniform(0.0, tau);
  }

  // Brightness in [0.6, 1.0].
  double operator()(double u, double v) const {
    return 0.8 + 0.1 * std::sin(fx1 * u + fy1 * v + p1) +
           0.1 * std::sin(fx2 * u + fy2 * v + p2);
  }
};

constexpr double kHue[3][3] = {
    {1.0, 0.2, 0.2}, {0.2, 1.0, 0.2}, {0.2, 0.2, 1.0}};

void apply_blur(Tensor& frame, const BlurEvent& b) {
  const int h = frame.height();
  const int w = frame.width();
  const Tensor src = frame;
  const double dx = std::cos(b.angle);
  const double dy = std::sin(b.angle);
  const double mid = 0.5 * (b.length - 1);
  const double inv = 1.0 / b.length;
  for (int c = 0; c < 3; ++c) {
    const float* p = src.plane(0, c).data();
    auto read = [&](double y, double x) {
      y = std::clamp(y, 0.0, h - 1.0);
      x = std::clamp(x, 0.0, w - 1.0);
      const int y0 = std::min(static_cast<int>(y), h - 1);
      const int x0 = std::min(static_cast<int>(x), w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double fy = y - y0;
      const double fx = x - x0;
      return (1 - fy) * ((1 - fx) * p[y0 * w + x0] + fx * p[y0 * w + x1]) +
             fy * ((1 - fx) * p[y1 * w + x0] + fx * p[y1 * w + x1]);
    };
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int k = 0; k < b.length; ++k) {
          const double o = k - mid;
          s += read(y + o * dy, x + o * dx);
        }
        frame.at(0, c, y, x) = static_cast<float>(s * inv);
      }
    }
  }
}

std::uint64_t frame_seed(std::uint64_t seed, int t) {
  return seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(t + 1));
}

}  // namespace

SceneTruth scene_truth(const SceneSpec& spec) {
  validate_spec(spec);
  SceneTruth truth;
  truth.spec = spec;
  truth.boxes.resize(static_cast<std::size_t>(spec.frames));
  for (int t = 0; t < spec.frames; ++t) {
    for (int i = 0; i < static_cast<int>(spec.objects.size()); ++i) {
      truth.boxes[t].push_back(
          {object_box(spec, i, t), spec.objects[i].class_id, i});
    }
  }
  truth.speed = speed_stratify(truth.boxes);
  return truth;
}

RenderedScene render_scene(const SceneSpec& spec) {
  RenderedScene scene;
  scene.truth = scene_truth(spec);
  const int h = spec.height;
  const int w = spec.width;

  Rng bg_rng(spec.seed);
  const double tau = 2.0 * std::numbers::pi;
  const double bp1 = bg_rng.uniform(0.0, tau);
  const double bp2 = bg_rng.uniform(0.0, tau);
  const double bp3 = bg_rng.uniform(0.0, tau);
  std::vector<float> background(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      background[static_cast<std::size_t>(y) * w + x] = static_cast<float>(
          0.45 + 0.08 * std::sin(tau * px / 37.0 + bp1) *
                     std::sin(tau * py / 29.0 + bp2) +
          0.04 * std::sin(tau * (px + py) / 17.0 + bp3));
    }
  }
  std::vector<Texture> textures;
  for (const ObjectSpec& o : spec.objects) textures.emplace_back(o.texture_seed);

  for (int t = 0; t < spec.frames; ++t) {
    Tensor frame(1, 3, h, w);
    for (int c = 0; c < 3; ++c) {
      std::ranges::copy(background, frame.plane(0, c).begin());
    }
    for (int i = 0; i < static_cast<int>(spec.objects.size()); ++i) {
      const ObjectSpec& o = spec.objects[i];
      const Point2d ctr = object_center(spec, i, t);
      const int hue = std::clamp(o.class_id, 0, 2);
      const int y_lo = std::max(0, static_cast<int>(std::floor(ctr.y - 0.5 * o.height)));
      const int y_hi = std::min(h - 1, static_cast<int>(std::ceil(ctr.y + 0.5 * o.height)));
      const int x_lo = std::max(0, static_cast<int>(std::floor(ctr.x - 0.5 * o.width)));
      const int x_hi = std::min(w - 1, static_cast<int>(std::ceil(ctr.x + 0.5 * o.width)));
      for (int y = y_lo; y <= y_hi; ++y) {
        for (int x = x_lo; x <= x_hi; ++x) {
          const double u = x + 0.5 - ctr.x;
          const double v = y + 0.5 - ctr.y;
          if (!inside_shape(o, u, v)) continue;
          const double b = textures[i](u, v);
          for (int c = 0; c < 3; ++c) {
            frame.at(0, c, y, x) = static_cast<float>(kHue[hue][c] * b);
          }
        }
      }
    }
    for (const OccluderSpec& oc : spec.occluders) {
      if (t < oc.start || t >= oc.end) continue;
      const ObjectSpec& o = spec.objects[oc.target];
      const Point2d ctr = object_center(spec, oc.target, t);
      const double half = 0.5 * oc.coverage * o.width;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (std::fabs(x + 0.5 - ctr.x) > half) continue;
          for (int c = 0; c < 3; ++c) frame.at(0, c, y, x) = 0.55f;
        }
      }
    }
    for (const BlurEvent& b : spec.blur) {
      if (b.frame == t) apply_blur(frame, b);
    }
    Rng noise(frame_seed(spec.seed, t));
    for (float& v : frame.data()) {
      double x = v;
      if (spec.noise_sigma > 0.0) x += spec.noise_sigma * noise.normal();
      v = static_cast<float>(std::round(std::clamp(x, 0.0, 1.0) * 255.0) / 255.0);
    }
    scene.frames.push_back(std::move(frame));
  }
  return scene;
}

Tensor truth_flow_full(const SceneSpec& spec, int t, int tau) {
  if (t < 0 || t >= spec.frames || t + tau < 0 || t + tau >= spec.frames) {
    throw ValidationError("flow pair (" + std::to_string(t) + ", " +
                          std::to_string(t + tau) + ") outside a " +
                          std::to_string(spec.frames) + "-frame scene");
  }
  Tensor flow(1, 2, spec.height, spec.width);
  if (tau == 0) return flow;
  for (int i = 0; i < static_cast<int>(spec.objects.size()); ++i) {
    const ObjectSpec& o = spec.objects[i];
    const Point2d a = object_center(spec, i, t);
    const Point2d b = object_center(spec, i, t + tau);
    const float dx = static_cast<float>(b.x - a.x);
    const float dy = static_cast<float>(b.y - a.y);
    const int y_lo = std::max(0, static_cast<int>(std::floor(a.y - 0.5 * o.height)));
    const int y_hi = std::min(spec.height - 1, static_cast<int>(std::ceil(a.y + 0.5 * o.height)));
    const int x_lo = std::max(0, static_cast<int>(std::floor(a.x - 0.5 * o.width)));
    const int x_hi = std::min(spec.width - 1, static_cast<int>(std::ceil(a.x + 0.5 * o.width)));
    for (int y = y_lo; y <= y_hi; ++y) {
      for (int x = x_lo; x <= x_hi; ++x) {
        if (!inside_shape(o, x + 0.5 - a.x, y + 0.5 - a.y)) continue;
        flow.at(0, 0, y, x) = dx;
        flow.at(0, 1, y, x) = dy;
      }
    }
  }
  return flow;
}

FlowField truth_flow(const SceneTruth& truth, int t, int tau) {
  return downscale_flow(truth_flow_full(truth.spec, t, tau), t, t + tau);
}

ExactSyntheticProvider::ExactSyntheticProvider(SceneSpec spec)
    : truth_(scene_truth(spec)) {
  check_input_size(truth_.spec.height, truth_.spec.width);
}

FlowField ExactSyntheticProvider::compute(int reference, int support) const {
  return truth_flow(truth_, reference, support - reference);
}

std::string to_string(SuiteKind k) {
  switch (k) {
    case SuiteKind::clean: return "clean";
    case SuiteKind::blur: return "blur";
    case SuiteKind::occlusion: return "occlusion";
    case SuiteKind::fast: return "fast";
  }
  return "clean";
}

SuiteKind parse_suite(const std::string& name) {
  if (name == "clean") return SuiteKind::clean;
  if (name == "blur") return SuiteKind::blur;
  if (name == "occlusion") return SuiteKind::occlusion;
  if (name == "fast") return SuiteKind::fast;
  throw ConfigError("unknown suite '" + name + "'");
}

namespace {

ObjectSpec random_object(Rng& rng, const SceneSpec& scene,
                         const std::vector<Box>& placed, double v_lo,
                         double v_hi) {
  ObjectSpec o;
  o.shape = static_cast<ShapeKind>(rng.index(3));
  o.class_id = shape_class(o.shape);
  const double s = rng.uniform(32.0, 64.0);
  if (o.shape == ShapeKind::rectangle) {
    const double aspect = rng.uniform(0.6, 1.6);
    o.width = s * std::sqrt(aspect);
    o.height = s / std::sqrt(aspect);
  } else {
    o.width = s;
    o.height = s;
  }
  for (int attempt = 0; attempt < 100; ++attempt) {
    o.x0 = rng.uniform(0.5 * o.width, scene.width - 0.5 * o.width);
    o.y0 = rng.uniform(0.5 * o.height, scene.height - 0.5 * o.height);
    const Box b{o.x0 - 0.5 * o.width, o.y0 - 0.5 * o.height,
                o.x0 + 0.5 * o.width, o.y0 + 0.5 * o.height};
    if (std::ranges::none_of(placed, [&](const Box& p) { return iou(p, b) > 0.0; })) {
      break;
    }
  }
  const double speed = rng.uniform(v_lo, v_hi);
  const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
  o.vx = speed * std::cos(dir);
  o.vy = speed * std::sin(dir);
  o.texture_seed = rng.next();
  return o;
}

// Runs of 2-4 blurred frames separated by gaps of 2-4 frames.
void add_blur_runs(Rng& rng, SceneSpec& s) {
  int t = static_cast<int>(rng.index(3));
  while (t < s.frames) {
    const int run = 2 + static_cast<int>(rng.index(3));
    const int length = 9 + static_cast<int>(rng.index(13));
    const double angle = rng.uniform(0.0, std::numbers::pi);
    for (int k = 0; k < run && t + k < s.frames; ++k) {
      s.blur.push_back({t + k, length, angle});
    }
    t += run + 2 + static_cast<int>(rng.index(3));
  }
}

void add_occlusions(Rng& rng, SceneSpec& s) {
  for (int i = 0; i < static_cast<int>(s.objects.size()); ++i) {
    const int dur = std::min(s.frames, 3 + static_cast<int>(rng.index(6)));
    const int start = static_cast<int>(rng.index(s.frames - dur + 1));
    s.occluders.push_back({i, start, start + dur, rng.uniform(0.3, 0.6)});
  }
}

}  // namespace

std::vector<SceneSpec> scenario_suite(SuiteKind kind,
                                      const SuiteOptions& options) {
  std::vector<SceneSpec> suite;
  for (int i = 0; i < options.scenes; ++i) {
    SceneSpec s;
    s.width = options.resolution;
    s.height = options.resolution;
    s.frames = options.frames;
    s.seed = options.base_seed + 100000ULL * static_cast<std::uint64_t>(kind) +
             static_cast<std::uint64_t>(i);
    Rng rng(s.seed);
    const bool fast = kind == SuiteKind::fast;
    const double v_lo = fast ? 24.0 : 0.0;
    const double v_hi = fast ? 48.0 : 2.0;
    const int n = 2 + static_cast<int>(rng.index(2));
    std::vector<Box> placed;
    for (int k = 0; k < n; ++k) {
      s.objects.push_back(random_object(rng, s, placed, v_lo, v_hi));
      const ObjectSpec& o = s.objects.back();
      placed.push_back({o.x0 - 0.5 * o.width, o.y0 - 0.5 * o.height,
                        o.x0 + 0.5 * o.width, o.y0 + 0.5 * o.height});
    }
    if (kind == SuiteKind::blur || kind == SuiteKind::fast) add_blur_runs(rng, s);
    if (kind == SuiteKind::occlusion) add_occlusions(rng, s);
    suite.push_back(std::move(s));
  }
  return suite;
}

void write_ppm(const std::string& path, const Tensor& frame) {
  if (frame.batch() != 1 || frame.channels() != 3) {
    throw DimensionError("write_ppm expects 1x3xHxW, got " +
                         to_string(frame.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "P6\n" << frame.width() << ' ' << frame.height() << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(frame.width()) * 3);
  for (int y = 0; y < frame.height(); ++y) {
    for (int x = 0; x < frame.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(frame.at(0, c, y, x)), 0.0, 1.0);
        row[static_cast<std::size_t>(x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("failed writing " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  auto token = [&]() {
    std::string s;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!s.empty()) break;
        continue;
      }
      s.push_back(ch);
    }
    return s;
  };
  if (token() != "P6") throw IoError(path + ": not a binary PPM");
  int w = 0;
  int h = 0;
  int maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw IoError(path + ": malformed PPM header");
  }
  if (w < 1 || h < 1 || maxval != 255) {
    throw IoError(path + ": unsupported PPM geometry");
  }
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw IoError(path + ": truncated PPM data");
  }
  Tensor t(1, 3, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        t.at(0, c, y, x) =
            static_cast<float>(buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0);
      }
    }
  }
  return t;
}

namespace {

std::string frame_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%03d.ppm", t);
  return buf;
}

}  // namespace

void write_scene_dir(const std::string& dir, const RenderedScene& scene) {
  const fs::path root(dir);
  fs::create_directories(root / "frames");
  fs::create_directories(root / "flow");
  const SceneSpec& spec = scene.truth.spec;
  for (int t = 0; t < static_cast<int>(scene.frames.size()); ++t) {
    write_ppm((root / "frames" / frame_name(t)).string(), scene.frames[t]);
  }
  for (int t = 0; t + 1 < spec.frames; ++t) {
    write_flo((root / "flow" / FloFileProvider::pair_filename(t, t + 1)).string(),
              truth_flow_full(spec, t, 1));
  }
  std::ofstream truth((root / "truth.jsonl").string());
  if (!truth) throw IoError("cannot write " + (root / "truth.jsonl").string());
  for (int t = 0; t < static_cast<int>(scene.truth.boxes.size()); ++t) {
    for (std::size_t i = 0; i < scene.truth.boxes[t].size(); ++i) {
      const LabeledBox& lb = scene.truth.boxes[t][i];
      truth << nlohmann::json{{"frame", t},
                              {"track", lb.track_id},
                              {"class", lb.class_id},
                              {"x1", lb.box.x1},
                              {"y1", lb.box.y1},
                              {"x2", lb.box.x2},
                              {"y2", lb.box.y2},
                              {"speed", to_string(scene.truth.speed[t][i])}}
                   .dump()
            << '\n';
    }
  }
  nlohmann::json manifest = {{"spec", spec_to_json(spec)},
                             {"seed", spec.seed},
                             {"width", spec.width},
                             {"height", spec.height},
                             {"frames", spec.frames},
                             {"num_classes", 3},
                             {"flow_pairs", "adjacent_forward"}};
  std::ofstream m((root / "manifest.json").string());
  if (!m) throw IoError("cannot write " + (root / "manifest.json").string());
  m << manifest.dump(2) << '\n';
}

LoadedScene load_scene_dir(const std::string& dir) {
  const fs::path root(dir);
  const fs::path manifest_path = root / "manifest.json";
  std::ifstream m(manifest_path.string());
  if (!m) throw IoError("scene " + dir + " has no manifest.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  LoadedScene scene;
  if (manifest.contains("spec")) {
    scene.spec = spec_from_json(manifest["spec"]);
    scene.has_spec = true;
  }
  const int frames = manifest.value("frames", 0);
  for (int t = 0; t < frames; ++t) {
    scene.frames.push_back(read_ppm((root / "frames" / frame_name(t)).string()));
  }
  scene.truth.resize(static_cast<std::size_t>(frames));
  std::ifstream truth((root / "truth.jsonl").string());
  if (!truth) throw IoError("scene " + dir + " has no truth.jsonl");
  std::string line;
  int lineno = 0;
  while (std::getline(truth, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const int f = j.at("frame").get<int>();
      if (f < 0 || f >= frames) {
        throw IoError("truth.jsonl line " + std::to_string(lineno) +
                      ": frame " + std::to_string(f) + " out of range");
      }
      scene.truth[f].push_back({{j.at("x1").get<double>(), j.at("y1").get<double>(),
                                 j.at("x2").get<double>(), j.at("y2").get<double>()},
                                j.at("class").get<int>(),
                                j.value("track", -1)});
    } catch (const nlohmann::json::exception& e) {
      throw IoError("truth.jsonl line " + std::to_string(lineno) + ": " +
                    e.what());
    }
  }
  return scene;
}

}  // namespace ssvd
