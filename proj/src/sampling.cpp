#include "ssvd/sampling.hpp"

#include <algorithm>
#include <ostream>

#include "json.hpp"

#include "ssvd/errors.hpp"

namespace ssvd {

OffsetPredictorWeights OffsetPredictorWeights::zeros(
    const OffsetPredictorConfig& config) {
  if (config.feature_channels < 1 || config.hidden_channels < 1 ||
      config.groups < 1) {
    throw ConfigError("offset predictor channel counts must be >= 1");
  }
  if (config.feature_channels % config.groups != 0) {
    throw ConfigError("feature channels " +
                      std::to_string(config.feature_channels) +
                      " not divisible by " + std::to_string(config.groups) +
                      " deformable groups");
  }
  const int p = config.hidden_channels;
  OffsetPredictorWeights w;
  w.config = config;
  w.group1 = {ConvSpec::zeros(p, 2 * config.feature_channels, 3, 1, 1),
              ConvSpec::zeros(p, p, 3, 1, 1)};
  w.group2 = {ConvSpec::zeros(p, p, 3, 2, 1), ConvSpec::zeros(p, p, 3, 1, 1)};
  w.group3 = {ConvSpec::zeros(p, p, 3, 2, 1), ConvSpec::zeros(p, p, 3, 1, 1)};
  w.head = ConvSpec::zeros(config.offset_channels(), 3 * p, 3, 1, 1);
  return w;
}

void OffsetPredictorWeights::save(NamedTensors& out,
                                  const std::string& prefix) const {
  for (int i = 0; i < 2; ++i) {
    out.add_conv(prefix + ".group1." + std::to_string(i), group1[i]);
    out.add_conv(prefix + ".group2." + std::to_string(i), group2[i]);
    out.add_conv(prefix + ".group3." + std::to_string(i), group3[i]);
  }
  out.add_conv(prefix + ".head", head);
}

OffsetPredictorWeights OffsetPredictorWeights::load(
    const NamedTensors& in, const std::string& prefix,
    const OffsetPredictorConfig& config) {
  OffsetPredictorWeights w = zeros(config);
  for (int i = 0; i < 2; ++i) {
    in.read_conv(prefix + ".group1." + std::to_string(i), w.group1[i]);
    in.read_conv(prefix + ".group2." + std::to_string(i), w.group2[i]);
    in.read_conv(prefix + ".group3." + std::to_string(i), w.group3[i]);
  }
  in.read_conv(prefix + ".head", w.head);
  return w;
}

OffsetPredictorWeights init_offset_predictor(
    std::uint64_t seed, const OffsetPredictorConfig& config) {
  OffsetPredictorWeights w = OffsetPredictorWeights::zeros(config);
  Rng rng(seed);
  const int p = config.hidden_channels;
  w.group1 = {he_uniform_conv(rng, p, 2 * config.feature_channels, 3),
              he_uniform_conv(rng, p, p, 3)};
  w.group2 = {he_uniform_conv(rng, p, p, 3, 2), he_uniform_conv(rng, p, p, 3)};
  w.group3 = {he_uniform_conv(rng, p, p, 3, 2), he_uniform_conv(rng, p, p, 3)};
  return w;
}

ReceptiveFields receptive_fields(const OffsetPredictorWeights& weights) {
  // radius grows by (k/2)*dilation*jump per conv; jump multiplies by stride.
  int radius = 0;
  int jump = 1;
  auto grow = [&](const ConvSpec& c) {
    radius += (c.kernel_h() / 2) * c.dilation * jump;
    jump *= c.stride;
  };
  ReceptiveFields rf;
  for (const auto& c : weights.group1) grow(c);
  rf.group1 = radius;
  for (const auto& c : weights.group2) grow(c);
  rf.group2 = radius;
  for (const auto& c : weights.group3) grow(c);
  rf.group3 = radius;
  rf.prediction = rf.group3 + (weights.head.kernel_h() / 2) * weights.head.dilation;
  return rf;
}

namespace {

Tensor conv_relu(const Tensor& x, const ConvSpec& conv) {
  Tensor y = conv2d(x, conv);
  relu_inplace(y);
  return y;
}

Tensor run_group(const Tensor& x, const std::array<ConvSpec, 2>& group) {
  return conv_relu(conv_relu(x, group[0]), group[1]);
}

}  // namespace

Tensor predict_offsets(const Tensor& reference_feature,
                       const Tensor& support_feature,
                       const OffsetPredictorWeights& weights) {
  if (reference_feature.shape() != support_feature.shape()) {
    throw DimensionError("predict_offsets: reference " +
                         to_string(reference_feature.shape()) +
                         " vs support " + to_string(support_feature.shape()));
  }
  if (reference_feature.channels() != weights.config.feature_channels) {
    throw DimensionError("predict_offsets: features have " +
                         std::to_string(reference_feature.channels()) +
                         " channels, predictor expects " +
                         std::to_string(weights.config.feature_channels));
  }
  const int h = reference_feature.height();
  const int w = reference_feature.width();
  const Tensor joint = concat_channels(support_feature, reference_feature);
  const Tensor g1 = run_group(joint, weights.group1);
  const Tensor g2 = run_group(g1, weights.group2);
  const Tensor g3 = run_group(g2, weights.group3);
  const Tensor up2 = crop(upsample_nearest(g2, 2), h, w);
  const Tensor up3 = crop(upsample_nearest(g3, 4), h, w);
  return conv2d(concat_channels(concat_channels(g1, up2), up3), weights.head);
}

OffsetField predict_offset_field(const FeaturePyramid& reference,
                                 const FeaturePyramid& support,
                                 const OffsetPredictorWeights& weights) {
  OffsetField f;
  for (int level : kPyramidLevels) {
    f.level(level) =
        predict_offsets(reference.level(level), support.level(level), weights);
  }
  return f;
}

Tensor flow_guided_offsets(const Tensor& flow_level, int groups, float reach) {
  if (flow_level.channels() != 2 || flow_level.batch() != 1) {
    throw DimensionError("flow_guided_offsets expects 1x2xHxW, got " +
                         to_string(flow_level.shape()));
  }
  const int k = kSamplerKernel;
  const int taps = k * k;
  const int h = flow_level.height();
  const int w = flow_level.width();
  Tensor off(1, deform_offset_channels(k, k, groups), h, w);
  for (int tap = 0; tap < taps; ++tap) {
    const int ty = tap / k - k / 2;
    const int tx = tap % k - k / 2;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int sy = y + ty;
        const int sx = x + tx;
        float dx = 0.0f;
        float dy = 0.0f;
        if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
          dx = std::clamp(flow_level.at(0, 0, sy, sx), -reach, reach);
          dy = std::clamp(flow_level.at(0, 1, sy, sx), -reach, reach);
        }
        for (int g = 0; g < groups; ++g) {
          off.at(0, 2 * (g * taps + tap), y, x) = dy;
          off.at(0, 2 * (g * taps + tap) + 1, y, x) = dx;
        }
      }
    }
  }
  return off;
}

OffsetField flow_guided_offset_field(const FlowField& flow, int groups,
                                     float reach) {
  OffsetField f;
  for (int level : kPyramidLevels) {
    f.level(level) = flow_guided_offsets(flow.level(level), groups, reach);
  }
  return f;
}

ConvSpec identity_sampler(int channels) {
  ConvSpec s = ConvSpec::zeros(channels, channels, kSamplerKernel, 1, 1);
  for (int c = 0; c < channels; ++c) s.weight.at(c, c, 1, 1) = 1.0f;
  return s;
}

ConvSpec smoothing_sampler(int channels) {
  ConvSpec s = ConvSpec::zeros(channels, channels, kSamplerKernel, 1, 1);
  for (int c = 0; c < channels; ++c) {
    s.weight.at(c, c, 1, 1) = 0.5f;
    s.weight.at(c, c, 0, 1) = 0.125f;
    s.weight.at(c, c, 2, 1) = 0.125f;
    s.weight.at(c, c, 1, 0) = 0.125f;
    s.weight.at(c, c, 1, 2) = 0.125f;
  }
  return s;
}

Tensor hallucinate(const Tensor& support_feature, const Tensor& offsets,
                   const ConvSpec& sampler, int groups) {
  return deform_conv(support_feature, offsets, sampler, groups);
}

FeaturePyramid hallucinate_pyramid(const FeaturePyramid& support,
                                   const OffsetField& offsets,
                                   const ConvSpec& sampler, int groups) {
  FeaturePyramid out;
  for (int level : kPyramidLevels) {
    out.level(level) =
        hallucinate(support.level(level), offsets.level(level), sampler, groups);
  }
  return out;
}

void write_sampling_locations(std::ostream& out, int level,
                              const Tensor& offsets, const ConvSpec& sampler,
                              int groups) {
  for (const SamplingLocation& loc :
       deform_sampling_locations(offsets, sampler, groups)) {
    nlohmann::json j = {{"level", level}, {"y", loc.y},         {"x", loc.x},
                        {"group", loc.group}, {"tap", loc.tap}, {"sx", loc.sx},
                        {"sy", loc.sy}};
    out << j.dump() << '\n';
  }
}

}  // namespace ssvd
