#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>

#include "ssvd/checkpoint.hpp"
#include "ssvd/kernels.hpp"
#include "ssvd/random.hpp"
#include "ssvd/tensor.hpp"

namespace ssvd {

inline constexpr std::array<int, 4> kPyramidLevels{3, 4, 5, 6};
inline constexpr int kLevelCount = 4;
/// Input sides must be multiples of the coarsest stride.
inline constexpr int kInputMultiple = 64;

constexpr int level_stride(int level) { return 1 << level; }

/// Per-frame multi-scale maps P3..P6 (strides 8, 16, 32, 64).
struct FeaturePyramid {
  std::array<Tensor, kLevelCount> levels;

  Tensor& level(int i) { return levels.at(static_cast<std::size_t>(i - 3)); }
  const Tensor& level(int i) const {
    return levels.at(static_cast<std::size_t>(i - 3));
  }
  int channels() const { return levels[0].channels(); }
  bool identical(const FeaturePyramid& other) const;
};

/// Throws ConfigError unless both sides are positive multiples of 64.
void check_input_size(int height, int width);

struct BackboneConfig {
  int in_channels = 3;
  int channels = 32;
};

/// Toy FPN: a stride-2 stem, four stride-2 stages of two 3x3 convs (ReLU
/// after each), 1x1 laterals on the stride 8/16/32 stage outputs, a 1x1
/// projection on each top-down path, 3x3 output convs, and a 3x3 stride-2
/// P6 head on the deepest stage output.
struct BackboneWeights {
  BackboneConfig config;
  ConvSpec stem;
  std::array<ConvSpec, 4> stage_down;
  std::array<ConvSpec, 4> stage_conv;
  std::array<ConvSpec, 3> lateral;   // C3, C4, C5
  std::array<ConvSpec, 2> top_down;  // upsampled M4 -> P3, upsampled M5 -> P4
  std::array<ConvSpec, 3> output;    // P3, P4, P5
  ConvSpec p6;

  /// Correct geometry, all weights zero.
  static BackboneWeights zeros(const BackboneConfig& config);

  void save(NamedTensors& out, const std::string& prefix) const;
  static BackboneWeights load(const NamedTensors& in, const std::string& prefix,
                              const BackboneConfig& config);
};

/// He-uniform initialisation driven by `seed`; equal seeds give bit-equal
/// weights.
BackboneWeights init_backbone_weights(std::uint64_t seed,
                                      const BackboneConfig& config);

/// `frame` is a 1x3xHxW RGB image in [0, 1].
FeaturePyramid extract_pyramid(const Tensor& frame,
                               const BackboneWeights& weights);

/// Runs the motion-stream and sampling-stream backbones on one frame.
std::pair<FeaturePyramid, FeaturePyramid> dual_pyramids(
    const Tensor& frame, const BackboneWeights& motion_weights,
    const BackboneWeights& sampling_weights);

/// He-uniform conv with zero bias; helper shared by all weight initialisers.
ConvSpec he_uniform_conv(Rng& rng, int out_channels, int in_channels,
                         int kernel, int stride = 1);

}  // namespace ssvd
