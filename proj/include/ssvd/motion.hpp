#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "ssvd/backbone.hpp"
#include "ssvd/tensor.hpp"

namespace ssvd {

/// Per-level displacement maps m^(t, t+tau): channel 0 is dx, channel 1 is
/// dy, both in pixels of that level. Reading the support frame at
/// p + m(p) lands on the content found at p in the reference frame.
struct FlowField {
  std::array<Tensor, kLevelCount> levels;
  int reference = 0;
  int support = 0;

  Tensor& level(int i) { return levels.at(static_cast<std::size_t>(i - 3)); }
  const Tensor& level(int i) const {
    return levels.at(static_cast<std::size_t>(i - 3));
  }
};

/// Aligns a full-resolution flow (1x2xHxW) with the pyramid: level i is
/// average-pooled over 2^i x 2^i blocks and its displacements divided by 2^i.
FlowField downscale_flow(const Tensor& full_resolution, int reference,
                         int support);

/// Zero flow sized for an input of height x width.
FlowField zero_flow(int height, int width, int reference, int support);

/// Source of per-pair optical flow.
class FlowProvider {
 public:
  virtual ~FlowProvider() = default;

  /// Flow from `reference` to `support`. Identical indices short-circuit to
  /// zero flow for every provider.
  FlowField flow(int reference, int support) const;

  virtual std::string name() const = 0;
  virtual int height() const = 0;
  virtual int width() const = 0;

 protected:
  virtual FlowField compute(int reference, int support) const = 0;
};

/// Reads Middlebury .flo files from a directory. A pair is looked up first
/// as per-level files "RRR_SSS_P{i}.flo", then as one full-resolution
/// "RRR_SSS.flo" which is downscaled.
class FloFileProvider : public FlowProvider {
 public:
  FloFileProvider(std::string directory, int height, int width);
  std::string name() const override { return "flo"; }
  int height() const override { return height_; }
  int width() const override { return width_; }

  static std::string pair_filename(int reference, int support);

 protected:
  FlowField compute(int reference, int support) const override;

 private:
  std::string directory_;
  int height_;
  int width_;
};

struct BlockMatcherParams {
  int patch_radius = 2;
  int search_radius = 4;
};

/// Exhaustive SAD block matching on the grey-level frames at full
/// resolution. Ties go to the smallest displacement, then to the smallest
/// (dy, dx) in lexicographic order.
class BlockMatcherProvider : public FlowProvider {
 public:
  using FrameSource = std::function<const Tensor&(int)>;
  BlockMatcherProvider(FrameSource frames, int height, int width,
                       BlockMatcherParams params = {});
  std::string name() const override { return "block"; }
  int height() const override { return height_; }
  int width() const override { return width_; }

  /// Full-resolution flow between two frames.
  static Tensor match(const Tensor& reference, const Tensor& support,
                      const BlockMatcherParams& params);

 protected:
  FlowField compute(int reference, int support) const override;

 private:
  FrameSource frames_;
  int height_;
  int width_;
  BlockMatcherParams params_;
};

// Middlebury .flo: float 202021.25 ("PIEH"), i32 width, i32 height, then
// interleaved (u, v) float32 row-major, all little-endian.
void write_flo(const std::string& path, const Tensor& flow);
Tensor read_flo(const std::string& path);

/// Motion-aware calibration of one level: warp of the support feature.
Tensor calibrate(const Tensor& support_feature, const Tensor& flow_level);
FeaturePyramid calibrate_pyramid(const FeaturePyramid& support,
                                 const FlowField& flow);

/// One aggregation term, tagged with its temporal offset.
struct Contribution {
  int tau = 0;
  const FeaturePyramid* pyramid = nullptr;
};

/// Per-level arithmetic mean. Terms are summed in ascending tau order so the
/// result does not depend on the order of the list.
FeaturePyramid aggregate_pyramids(std::vector<Contribution> contributions);

/// Motion-stream aggregation of calibrated pyramids (including the
/// reference's own identity-warped term when present).
inline FeaturePyramid aggregate_motion(std::vector<Contribution> calibrated) {
  return aggregate_pyramids(std::move(calibrated));
}

}  // namespace ssvd
