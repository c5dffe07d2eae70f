#include "ssvd/motion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "ssvd/binary_io.hpp"
#include "ssvd/errors.hpp"
#include "ssvd/kernels.hpp"

namespace ssvd {

FlowField downscale_flow(const Tensor& full_resolution, int reference,
                         int support) {
  if (full_resolution.channels() != 2 || full_resolution.batch() != 1) {
    throw DimensionError("flow must be 1x2xHxW, got " +
                         to_string(full_resolution.shape()));
  }
  FlowField f;
  f.reference = reference;
  f.support = support;
  for (int level : kPyramidLevels) {
    const int factor = level_stride(level);
    Tensor pooled = avg_pool(full_resolution, factor);
    const float inv = 1.0f / static_cast<float>(factor);
    for (float& v : pooled.data()) v *= inv;
    f.level(level) = std::move(pooled);
  }
  return f;
}

FlowField zero_flow(int height, int width, int reference, int support) {
  FlowField f;
  f.reference = reference;
  f.support = support;
  for (int level : kPyramidLevels) {
    const int s = level_stride(level);
    f.level(level) = Tensor(1, 2, (height + s - 1) / s, (width + s - 1) / s);
  }
  return f;
}

FlowField FlowProvider::flow(int reference, int support) const {
  if (reference == support) {
    return zero_flow(height(), width(), reference, support);
  }
  FlowField f = compute(reference, support);
  for (int level : kPyramidLevels) {
    const int s = level_stride(level);
    const Tensor& t = f.level(level);
    if (t.channels() != 2 || t.height() != (height() + s - 1) / s ||
        t.width() != (width() + s - 1) / s) {
      throw DimensionError("flow level P" + std::to_string(level) + " is " +
                           to_string(t.shape()) + " for a " +
                           std::to_string(height()) + "x" +
                           std::to_string(width()) + " input");
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// .flo files

namespace {
constexpr float kFloMagic = 202021.25f;
}

void write_flo(const std::string& path, const Tensor& flow) {
  if (flow.channels() != 2 || flow.batch() != 1) {
    throw DimensionError("write_flo expects 1x2xHxW, got " +
                         to_string(flow.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  binary::write_f32(out, kFloMagic);
  binary::write_i32(out, flow.width());
  binary::write_i32(out, flow.height());
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      binary::write_f32(out, flow.at(0, 0, y, x));
      binary::write_f32(out, flow.at(0, 1, y, x));
    }
  }
  if (!out) throw IoError("failed writing " + path);
}

Tensor read_flo(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  try {
    if (binary::read_f32(in) != kFloMagic) {
      throw IoError("bad .flo magic");
    }
    const int w = binary::read_i32(in);
    const int h = binary::read_i32(in);
    if (w < 1 || h < 1 || w > 100000 || h > 100000) {
      throw IoError("implausible .flo size");
    }
    Tensor flow(1, 2, h, w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        flow.at(0, 0, y, x) = binary::read_f32(in);
        flow.at(0, 1, y, x) = binary::read_f32(in);
      }
    }
    return flow;
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Providers

FloFileProvider::FloFileProvider(std::string directory, int height, int width)
    : directory_(std::move(directory)), height_(height), width_(width) {
  check_input_size(height, width);
}

std::string FloFileProvider::pair_filename(int reference, int support) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%03d_%03d.flo", reference, support);
  return buf;
}

FlowField FloFileProvider::compute(int reference, int support) const {
  namespace fs = std::filesystem;
  const std::string base = pair_filename(reference, support);
  const std::string stem = base.substr(0, base.size() - 4);

  const fs::path per_level_probe =
      fs::path(directory_) / (stem + "_P3.flo");
  if (fs::exists(per_level_probe)) {
    FlowField f;
    f.reference = reference;
    f.support = support;
    for (int level : kPyramidLevels) {
      const fs::path p =
          fs::path(directory_) / (stem + "_P" + std::to_string(level) + ".flo");
      if (!fs::exists(p)) {
        throw IoError("missing flow file " + p.string() + " for pair (" +
                      std::to_string(reference) + ", " +
                      std::to_string(support) + ")");
      }
      f.level(level) = read_flo(p.string());
    }
    return f;
  }

  const fs::path full = fs::path(directory_) / base;
  if (!fs::exists(full)) {
    throw IoError("no flow for pair (" + std::to_string(reference) + ", " +
                  std::to_string(support) + "): " + full.string() +
                  " not found");
  }
  Tensor flow = read_flo(full.string());
  if (flow.height() != height_ || flow.width() != width_) {
    throw DimensionError("flow " + full.string() + " is " +
                         std::to_string(flow.width()) + "x" +
                         std::to_string(flow.height()) + ", frames are " +
                         std::to_string(width_) + "x" +
                         std::to_string(height_));
  }
  return downscale_flow(flow, reference, support);
}

BlockMatcherProvider::BlockMatcherProvider(FrameSource frames, int height,
                                           int width, BlockMatcherParams params)
    : frames_(std::move(frames)),
      height_(height),
      width_(width),
      params_(params) {
  check_input_size(height, width);
}

namespace {

std::vector<float> grey_levels(const Tensor& frame) {
  const int h = frame.height();
  const int w = frame.width();
  std::vector<float> g(static_cast<std::size_t>(h) * w, 0.0f);
  for (int c = 0; c < frame.channels(); ++c) {
    auto p = frame.plane(0, c);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += p[i];
  }
  const float inv = 1.0f / static_cast<float>(frame.channels());
  for (float& v : g) v *= inv;
  return g;
}

}  // namespace

Tensor BlockMatcherProvider::match(const Tensor& reference,
                                   const Tensor& support,
                                   const BlockMatcherParams& params) {
  if (reference.shape() != support.shape() || reference.batch() != 1) {
    throw DimensionError("block matching frames differ: " +
                         to_string(reference.shape()) + " vs " +
                         to_string(support.shape()));
  }
  if (params.patch_radius < 0 || params.search_radius < 0) {
    throw ConfigError("block matcher radii must be >= 0");
  }
  const int h = reference.height();
  const int w = reference.width();
  const std::vector<float> ref = grey_levels(reference);
  const std::vector<float> sup = grey_levels(support);
  auto at = [&](const std::vector<float>& img, int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return img[static_cast<std::size_t>(y) * w + x];
  };

  // Candidates ordered so the first minimum found wins the tie rule.
  struct Candidate {
    int dy, dx;
  };
  std::vector<Candidate> candidates;
  const int sr = params.search_radius;
  for (int dy = -sr; dy <= sr; ++dy) {
    for (int dx = -sr; dx <= sr; ++dx) candidates.push_back({dy, dx});
  }
  std::ranges::stable_sort(candidates, [](const Candidate& a,
                                          const Candidate& b) {
    const int ma = a.dy * a.dy + a.dx * a.dx;
    const int mb = b.dy * b.dy + b.dx * b.dx;
    if (ma != mb) return ma < mb;
    if (a.dy != b.dy) return a.dy < b.dy;
    return a.dx < b.dx;
  });

  Tensor flow(1, 2, h, w);
  const int pr = params.patch_radius;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float best = std::numeric_limits<float>::infinity();
      Candidate best_d{0, 0};
      for (const Candidate& d : candidates) {
        float sad = 0.0f;
        for (int py = -pr; py <= pr && sad < best; ++py) {
          for (int px = -pr; px <= pr; ++px) {
            sad += std::fabs(at(ref, y + py, x + px) -
                             at(sup, y + py + d.dy, x + px + d.dx));
          }
        }
        if (sad < best) {
          best = sad;
          best_d = d;
        }
      }
      flow.at(0, 0, y, x) = static_cast<float>(best_d.dx);
      flow.at(0, 1, y, x) = static_cast<float>(best_d.dy);
    }
  }
  return flow;
}

FlowField BlockMatcherProvider::compute(int reference, int support) const {
  const Tensor& ref = frames_(reference);
  const Tensor& sup = frames_(support);
  if (ref.height() != height_ || ref.width() != width_) {
    throw DimensionError("frame " + std::to_string(reference) + " is " +
                         to_string(ref.shape()) + ", provider expects " +
                         std::to_string(height_) + "x" +
                         std::to_string(width_));
  }
  return downscale_flow(match(ref, sup, params_), reference, support);
}

// ---------------------------------------------------------------------------
// Calibration and aggregation

Tensor calibrate(const Tensor& support_feature, const Tensor& flow_level) {
  return warp(support_feature, flow_level);
}

FeaturePyramid calibrate_pyramid(const FeaturePyramid& support,
                                 const FlowField& flow) {
  FeaturePyramid out;
  for (int level : kPyramidLevels) {
    out.level(level) = calibrate(support.level(level), flow.level(level));
  }
  return out;
}

FeaturePyramid aggregate_pyramids(std::vector<Contribution> contributions) {
  if (contributions.empty()) {
    throw DimensionError("aggregation needs at least one contribution");
  }
  std::ranges::stable_sort(contributions, {}, &Contribution::tau);
  FeaturePyramid out;
  for (int level : kPyramidLevels) {
    std::vector<const Tensor*> terms;
    terms.reserve(contributions.size());
    for (const Contribution& c : contributions) {
      terms.push_back(&c.pyramid->level(level));
    }
    out.level(level) = mean_stack(terms);
  }
  return out;
}

}  // namespace ssvd
