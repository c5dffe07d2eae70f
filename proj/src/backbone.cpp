#include "ssvd/backbone.hpp"

#include <cmath>

#include "ssvd/errors.hpp"

namespace ssvd {

bool FeaturePyramid::identical(const FeaturePyramid& other) const {
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!levels[i].identical(other.levels[i])) return false;
  }
  return true;
}

void check_input_size(int height, int width) {
  if (height < kInputMultiple || width < kInputMultiple ||
      height % kInputMultiple != 0 || width % kInputMultiple != 0) {
    throw ConfigError("input " + std::to_string(height) + "x" +
                      std::to_string(width) +
                      " is not a multiple of 64 on both sides");
  }
}

ConvSpec he_uniform_conv(Rng& rng, int out_channels, int in_channels,
                         int kernel, int stride) {
  ConvSpec conv = ConvSpec::zeros(out_channels, in_channels, kernel, stride,
                                  kernel / 2);
  const double fan_in = static_cast<double>(in_channels) * kernel * kernel;
  const double limit = std::sqrt(6.0 / fan_in);
  for (float& v : conv.weight.data()) {
    v = static_cast<float>(rng.uniform(-limit, limit));
  }
  return conv;
}

BackboneWeights BackboneWeights::zeros(const BackboneConfig& config) {
  if (config.channels < 1 || config.in_channels < 1) {
    throw ConfigError("backbone channel counts must be >= 1");
  }
  const int c = config.channels;
  BackboneWeights w;
  w.config = config;
  w.stem = ConvSpec::zeros(c, config.in_channels, 3, 2, 1);
  for (int s = 0; s < 4; ++s) {
    w.stage_down[s] = ConvSpec::zeros(c, c, 3, 2, 1);
    w.stage_conv[s] = ConvSpec::zeros(c, c, 3, 1, 1);
  }
  for (auto& l : w.lateral) l = ConvSpec::zeros(c, c, 1, 1, 0);
  for (auto& t : w.top_down) t = ConvSpec::zeros(c, c, 1, 1, 0);
  for (auto& o : w.output) o = ConvSpec::zeros(c, c, 3, 1, 1);
  w.p6 = ConvSpec::zeros(c, c, 3, 2, 1);
  return w;
}

void BackboneWeights::save(NamedTensors& out, const std::string& prefix) const {
  out.add_conv(prefix + ".stem", stem);
  for (int s = 0; s < 4; ++s) {
    out.add_conv(prefix + ".stage" + std::to_string(s) + ".down", stage_down[s]);
    out.add_conv(prefix + ".stage" + std::to_string(s) + ".conv", stage_conv[s]);
  }
  for (int i = 0; i < 3; ++i) {
    out.add_conv(prefix + ".lateral" + std::to_string(i + 3), lateral[i]);
    out.add_conv(prefix + ".output" + std::to_string(i + 3), output[i]);
  }
  for (int i = 0; i < 2; ++i) {
    out.add_conv(prefix + ".top_down" + std::to_string(i + 3), top_down[i]);
  }
  out.add_conv(prefix + ".p6", p6);
}

BackboneWeights BackboneWeights::load(const NamedTensors& in,
                                      const std::string& prefix,
                                      const BackboneConfig& config) {
  BackboneWeights w = zeros(config);
  in.read_conv(prefix + ".stem", w.stem);
  for (int s = 0; s < 4; ++s) {
    in.read_conv(prefix + ".stage" + std::to_string(s) + ".down",
                 w.stage_down[s]);
    in.read_conv(prefix + ".stage" + std::to_string(s) + ".conv",
                 w.stage_conv[s]);
  }
  for (int i = 0; i < 3; ++i) {
    in.read_conv(prefix + ".lateral" + std::to_string(i + 3), w.lateral[i]);
    in.read_conv(prefix + ".output" + std::to_string(i + 3), w.output[i]);
  }
  for (int i = 0; i < 2; ++i) {
    in.read_conv(prefix + ".top_down" + std::to_string(i + 3), w.top_down[i]);
  }
  in.read_conv(prefix + ".p6", w.p6);
  return w;
}

BackboneWeights init_backbone_weights(std::uint64_t seed,
                                      const BackboneConfig& config) {
  BackboneWeights w = BackboneWeights::zeros(config);
  Rng rng(seed);
  const int c = config.channels;
  w.stem = he_uniform_conv(rng, c, config.in_channels, 3, 2);
  for (int s = 0; s < 4; ++s) {
    w.stage_down[s] = he_uniform_conv(rng, c, c, 3, 2);
    w.stage_conv[s] = he_uniform_conv(rng, c, c, 3, 1);
  }
  for (auto& l : w.lateral) l = he_uniform_conv(rng, c, c, 1);
  for (auto& t : w.top_down) t = he_uniform_conv(rng, c, c, 1);
  for (auto& o : w.output) o = he_uniform_conv(rng, c, c, 3);
  w.p6 = he_uniform_conv(rng, c, c, 3, 2);
  return w;
}

namespace {

Tensor conv_relu(const Tensor& x, const ConvSpec& conv) {
  Tensor y = conv2d(x, conv);
  relu_inplace(y);
  return y;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

FeaturePyramid extract_pyramid(const Tensor& frame,
                               const BackboneWeights& weights) {
  if (frame.batch() != 1 || frame.channels() != weights.config.in_channels) {
    throw DimensionError("extract_pyramid: frame " + to_string(frame.shape()) +
                         " does not match backbone input channels " +
                         std::to_string(weights.config.in_channels));
  }
  check_input_size(frame.height(), frame.width());

  // Bottom-up: stem at stride 2, stage outputs at strides 4, 8, 16, 32.
  Tensor x = conv_relu(frame, weights.stem);
  std::array<Tensor, 4> stage_out;
  for (int s = 0; s < 4; ++s) {
    x = conv_relu(x, weights.stage_down[s]);
    x = conv_relu(x, weights.stage_conv[s]);
    stage_out[s] = x;
  }
  const Tensor& c3 = stage_out[1];
  const Tensor& c4 = stage_out[2];
  const Tensor& c5 = stage_out[3];

  // Top-down merge.
  Tensor m5 = conv2d(c5, weights.lateral[2]);
  Tensor m4 = conv2d(c4, weights.lateral[1]);
  add_inplace(m4, conv2d(upsample_nearest(m5, 2), weights.top_down[1]));
  Tensor m3 = conv2d(c3, weights.lateral[0]);
  add_inplace(m3, conv2d(upsample_nearest(m4, 2), weights.top_down[0]));

  FeaturePyramid p;
  p.level(3) = conv2d(m3, weights.output[0]);
  p.level(4) = conv2d(m4, weights.output[1]);
  p.level(5) = conv2d(m5, weights.output[2]);
  p.level(6) = conv2d(c5, weights.p6);
  return p;
}

std::pair<FeaturePyramid, FeaturePyramid> dual_pyramids(
    const Tensor& frame, const BackboneWeights& motion_weights,
    const BackboneWeights& sampling_weights) {
  return {extract_pyramid(frame, motion_weights),
          extract_pyramid(frame, sampling_weights)};
}

}  // namespace ssvd
