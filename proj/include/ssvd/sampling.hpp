#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>

#include "ssvd/backbone.hpp"
#include "ssvd/checkpoint.hpp"
#include "ssvd/kernels.hpp"
#include "ssvd/motion.hpp"

namespace ssvd {

inline constexpr int kSamplerKernel = 3;
inline constexpr int kDeformGroups = 4;

struct OffsetPredictorConfig {
  int feature_channels = 32;  // C of each input pyramid
  int hidden_channels = 32;   // filters per predictor conv
  int groups = kDeformGroups;

  int offset_channels() const {
    return deform_offset_channels(kSamplerKernel, kSamplerKernel, groups);
  }
};

/// U-shaped offset predictor over the channel concatenation of a support
/// and a reference feature map. Three groups of two 3x3 convs (ReLU): the
/// first keeps the resolution, the second and third each open with a
/// stride-2 conv. Group outputs are upsampled back (nearest, x2 and x4,
/// cropped at bottom/right), concatenated, and a final 3x3 conv emits the
/// offsets.
struct OffsetPredictorWeights {
  OffsetPredictorConfig config;
  std::array<ConvSpec, 2> group1;
  std::array<ConvSpec, 2> group2;
  std::array<ConvSpec, 2> group3;
  ConvSpec head;

  static OffsetPredictorWeights zeros(const OffsetPredictorConfig& config);
  void save(NamedTensors& out, const std::string& prefix) const;
  static OffsetPredictorWeights load(const NamedTensors& in,
                                     const std::string& prefix,
                                     const OffsetPredictorConfig& config);
};

/// Random convs everywhere except the final prediction conv, which starts
/// at zero so an untrained predictor emits zero offsets.
OffsetPredictorWeights init_offset_predictor(std::uint64_t seed,
                                             const OffsetPredictorConfig& config);

/// Receptive-field radius (in level pixels) of each group's output, and of
/// the final prediction.
struct ReceptiveFields {
  int group1 = 0;
  int group2 = 0;
  int group3 = 0;
  int prediction = 0;
};
ReceptiveFields receptive_fields(const OffsetPredictorWeights& weights);

/// Offsets for one level: (1, 2*9*groups, h, w).
Tensor predict_offsets(const Tensor& reference_feature,
                       const Tensor& support_feature,
                       const OffsetPredictorWeights& weights);

/// Per-level offset maps for one (reference, support) pair.
struct OffsetField {
  std::array<Tensor, kLevelCount> levels;
  Tensor& level(int i) { return levels.at(static_cast<std::size_t>(i - 3)); }
  const Tensor& level(int i) const {
    return levels.at(static_cast<std::size_t>(i - 3));
  }
};

OffsetField predict_offset_field(const FeaturePyramid& reference,
                                 const FeaturePyramid& support,
                                 const OffsetPredictorWeights& weights);

/// Offsets that point every tap along a known flow: tap k at output p gets
/// the flow read at p + tap_k (zero outside the map), with each component
/// clamped to [-reach, reach].
Tensor flow_guided_offsets(const Tensor& flow_level, int groups, float reach);
OffsetField flow_guided_offset_field(const FlowField& flow, int groups,
                                     float reach);

/// 3x3, C -> C kernel whose centre tap is the identity over channels.
ConvSpec identity_sampler(int channels);
/// 3x3 depthwise smoothing kernel (centre 1/2, edge neighbours 1/8).
ConvSpec smoothing_sampler(int channels);

/// g^{t+tau -> t}: deformable convolution of the support feature with the
/// predicted offsets.
Tensor hallucinate(const Tensor& support_feature, const Tensor& offsets,
                   const ConvSpec& sampler, int groups = kDeformGroups);
FeaturePyramid hallucinate_pyramid(const FeaturePyramid& support,
                                   const OffsetField& offsets,
                                   const ConvSpec& sampler,
                                   int groups = kDeformGroups);

/// Sampling-stream aggregation; same contract as aggregate_motion.
inline FeaturePyramid aggregate_sampling(std::vector<Contribution> hallucinated) {
  return aggregate_pyramids(std::move(hallucinated));
}

/// Writes one JSON line per sampling location:
/// {"level", "y", "x", "group", "tap", "sx", "sy"}.
void write_sampling_locations(std::ostream& out, int level,
                              const Tensor& offsets, const ConvSpec& sampler,
                              int groups = kDeformGroups);

}  // namespace ssvd
