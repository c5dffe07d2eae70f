#pragma once

#include <span>
#include <vector>

#include "ssvd/tensor.hpp"

namespace ssvd {

/// Weights and geometry of one 2-D convolution layer.
///
/// `weight` is (out_channels, in_channels, kh, kw); padding is zero padding.
/// Output size per axis is floor((in + 2*pad - dilation*(k-1) - 1)/stride) + 1.
struct ConvSpec {
  Tensor weight;
  std::vector<float> bias;
  int stride = 1;
  int padding = 0;
  int dilation = 1;

  int out_channels() const { return weight.batch(); }
  int in_channels() const { return weight.channels(); }
  int kernel_h() const { return weight.height(); }
  int kernel_w() const { return weight.width(); }

  /// Throws ConfigError unless kernels are odd, stride/dilation >= 1,
  /// padding >= 0 and the bias has one entry per output channel.
  void validate() const;

  /// All-zero square kernel; padding defaults to "same" for stride 1.
  static ConvSpec zeros(int out_channels, int in_channels, int kernel,
                        int stride = 1, int padding = -1);
};

int conv_output_size(int in, int kernel, int stride, int padding,
                     int dilation);

/// Cross-correlation with zero padding. Each output element accumulates its
/// taps in (kernel row, kernel column, input channel) order starting from
/// zero, then adds the bias. Zero weights are skipped.
Tensor conv2d(const Tensor& input, const ConvSpec& spec);

struct Point2 {
  float x = 0.0f;
  float y = 0.0f;
};

/// Bilinear read of one plane at (y, x). Each of the four neighbouring taps
/// that falls outside the plane reads as zero.
float sample_plane(const float* plane, int height, int width, float y,
                   float x);

/// Samples every channel of a batch-1 map at each point. Result is laid out
/// point-major: result[p * channels + c].
std::vector<float> bilinear_sample(const Tensor& map,
                                   std::span<const Point2> points);

/// Backward warp: out(c, y, x) = feature(c, y + dy(y, x), x + dx(y, x)).
/// `flow` has two channels, dx then dy, at the feature's resolution.
Tensor warp(const Tensor& feature, const Tensor& flow);

/// Number of offset channels a deformable convolution needs.
constexpr int deform_offset_channels(int kernel_h, int kernel_w, int groups) {
  return 2 * kernel_h * kernel_w * groups;
}

/// Deformable convolution. For group g and kernel tap k = r*kw + c the
/// offsets carry dy in channel 2*(g*kh*kw + k) and dx in the next channel.
/// Input channels are split into `groups` contiguous blocks, each sampled
/// with its own offsets. Accumulation order matches conv2d.
Tensor deform_conv(const Tensor& input, const Tensor& offsets,
                   const ConvSpec& spec, int groups);

/// Where a deformable convolution samples: regular tap position plus offset.
struct SamplingLocation {
  int y = 0;
  int x = 0;
  int group = 0;
  int tap = 0;
  float sx = 0.0f;
  float sy = 0.0f;
};

/// Enumerates the sampling positions deform_conv uses for batch 0, in
/// (y, x, group, tap) order.
std::vector<SamplingLocation> deform_sampling_locations(const Tensor& offsets,
                                                        const ConvSpec& spec,
                                                        int groups);

Tensor upsample_nearest(const Tensor& input, int factor);

/// Mean over factor x factor windows (output size ceil(in / factor)); partial
/// windows at the bottom/right average only the pixels they contain.
Tensor avg_pool(const Tensor& input, int factor);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& input, int begin, int count);

/// Keeps the top-left height x width region.
Tensor crop(const Tensor& input, int height, int width);

/// Elementwise mean. Sums in list order, then divides by the count.
Tensor mean_stack(std::span<const Tensor> tensors);
Tensor mean_stack(const std::vector<const Tensor*>& tensors);

void relu_inplace(Tensor& t);

}  // namespace ssvd
