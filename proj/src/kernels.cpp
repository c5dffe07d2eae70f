#include "ssvd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ssvd/errors.hpp"

namespace ssvd {

namespace {

// First and last output index whose input coordinate o*stride + shift lands
// inside [0, extent). Returns an empty range (lo > hi) when none does.
void valid_range(int out_size, int extent, int stride, int shift, int& lo,
                 int& hi) {
  // o*stride + shift >= 0  ->  o >= ceil(-shift / stride)
  lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  // o*stride + shift <= extent - 1
  const int top = extent - 1 - shift;
  hi = top < 0 ? -1 : std::min(out_size - 1, top / stride);
}

}  // namespace

void ConvSpec::validate() const {
  if (weight.empty()) throw ConfigError("conv weight is empty");
  if (kernel_h() % 2 == 0 || kernel_w() % 2 == 0) {
    throw ConfigError("conv kernel must be odd, got " +
                      std::to_string(kernel_h()) + "x" +
                      std::to_string(kernel_w()));
  }
  if (stride < 1) throw ConfigError("conv stride must be >= 1");
  if (dilation < 1) throw ConfigError("conv dilation must be >= 1");
  if (padding < 0) throw ConfigError("conv padding must be >= 0");
  if (static_cast<int>(bias.size()) != out_channels()) {
    throw ConfigError("conv bias has " + std::to_string(bias.size()) +
                      " entries for " + std::to_string(out_channels()) +
                      " output channels");
  }
}

ConvSpec ConvSpec::zeros(int out_channels, int in_channels, int kernel,
                         int stride, int padding) {
  ConvSpec s;
  s.weight = Tensor(out_channels, in_channels, kernel, kernel);
  s.bias.assign(static_cast<std::size_t>(out_channels), 0.0f);
  s.stride = stride;
  s.padding = padding >= 0 ? padding : kernel / 2;
  return s;
}

int conv_output_size(int in, int kernel, int stride, int padding,
                     int dilation) {
  const int span = in + 2 * padding - dilation * (kernel - 1) - 1;
  if (span < 0) {
    throw ConfigError("conv input extent " + std::to_string(in) +
                      " too small for kernel " + std::to_string(kernel));
  }
  return span / stride + 1;
}

Tensor conv2d(const Tensor& input, const ConvSpec& spec) {
  spec.validate();
  if (input.channels() != spec.in_channels()) {
    throw DimensionError("conv2d: input " + to_string(input.shape()) +
                         " does not match kernel " +
                         to_string(spec.weight.shape()));
  }
  const int kh = spec.kernel_h();
  const int kw = spec.kernel_w();
  const int in_h = input.height();
  const int in_w = input.width();
  const int out_h = conv_output_size(in_h, kh, spec.stride, spec.padding,
                                     spec.dilation);
  const int out_w = conv_output_size(in_w, kw, spec.stride, spec.padding,
                                     spec.dilation);
  const int oc_count = spec.out_channels();
  const int ic_count = spec.in_channels();
  const int stride = spec.stride;

  Tensor out(input.batch(), oc_count, out_h, out_w);
  for (int n = 0; n < input.batch(); ++n) {
    for (int oc = 0; oc < oc_count; ++oc) {
      float* acc = out.plane(n, oc).data();
      for (int kr = 0; kr < kh; ++kr) {
        const int row_shift = kr * spec.dilation - spec.padding;
        int y_lo, y_hi;
        valid_range(out_h, in_h, stride, row_shift, y_lo, y_hi);
        for (int kc = 0; kc < kw; ++kc) {
          const int col_shift = kc * spec.dilation - spec.padding;
          int x_lo, x_hi;
          valid_range(out_w, in_w, stride, col_shift, x_lo, x_hi);
          for (int ic = 0; ic < ic_count; ++ic) {
            const float wv = spec.weight.at(oc, ic, kr, kc);
            if (wv == 0.0f) continue;
            const float* src = input.plane(n, ic).data();
            for (int oy = y_lo; oy <= y_hi; ++oy) {
              const float* row = src + (oy * stride + row_shift) * in_w;
              float* dst = acc + oy * out_w;
              if (stride == 1) {
                const float* s = row + col_shift;
                for (int ox = x_lo; ox <= x_hi; ++ox) dst[ox] += wv * s[ox];
              } else {
                for (int ox = x_lo; ox <= x_hi; ++ox) {
                  dst[ox] += wv * row[ox * stride + col_shift];
                }
              }
            }
          }
        }
      }
      const float b = spec.bias[static_cast<std::size_t>(oc)];
      if (b != 0.0f) {
        for (int i = 0; i < out_h * out_w; ++i) acc[i] += b;
      }
    }
  }
  return out;
}

float sample_plane(const float* plane, int height, int width, float y,
                   float x) {
  if (!(y > -1.0f && y < static_cast<float>(height) && x > -1.0f &&
        x < static_cast<float>(width))) {
    return 0.0f;
  }
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const float ly = y - static_cast<float>(y0);
  const float lx = x - static_cast<float>(x0);
  auto tap = [&](int yy, int xx) -> float {
    if (yy < 0 || yy >= height || xx < 0 || xx >= width) return 0.0f;
    return plane[yy * width + xx];
  };
  if (ly == 0.0f && lx == 0.0f) return tap(y0, x0);
  const float hy = 1.0f - ly;
  const float hx = 1.0f - lx;
  return hy * hx * tap(y0, x0) + hy * lx * tap(y0, x0 + 1) +
         ly * hx * tap(y0 + 1, x0) + ly * lx * tap(y0 + 1, x0 + 1);
}

std::vector<float> bilinear_sample(const Tensor& map,
                                   std::span<const Point2> points) {
  if (map.batch() != 1) {
    throw DimensionError("bilinear_sample expects batch 1, got " +
                         to_string(map.shape()));
  }
  const int channels = map.channels();
  std::vector<float> out(points.size() * static_cast<std::size_t>(channels));
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (int c = 0; c < channels; ++c) {
      out[p * static_cast<std::size_t>(channels) + c] =
          sample_plane(map.plane(0, c).data(), map.height(), map.width(),
                       points[p].y, points[p].x);
    }
  }
  return out;
}

Tensor warp(const Tensor& feature, const Tensor& flow) {
  if (flow.channels() != 2 || flow.height() != feature.height() ||
      flow.width() != feature.width() || flow.batch() != feature.batch()) {
    throw DimensionError("warp: feature " + to_string(feature.shape()) +
                         " vs flow " + to_string(flow.shape()));
  }
  const int h = feature.height();
  const int w = feature.width();
  Tensor out(feature.shape());
  for (int n = 0; n < feature.batch(); ++n) {
    const float* dx = flow.plane(n, 0).data();
    const float* dy = flow.plane(n, 1).data();
    for (int c = 0; c < feature.channels(); ++c) {
      const float* src = feature.plane(n, c).data();
      float* dst = out.plane(n, c).data();
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const int i = y * w + x;
          dst[i] = sample_plane(src, h, w, static_cast<float>(y) + dy[i],
                                static_cast<float>(x) + dx[i]);
        }
      }
    }
  }
  return out;
}

namespace {

struct DeformGeometry {
  int kh, kw, out_h, out_w, cpg;
};

DeformGeometry check_deform(const Tensor& input, const Tensor& offsets,
                            const ConvSpec& spec, int groups) {
  spec.validate();
  if (groups < 1) throw ConfigError("deformable groups must be >= 1");
  if (input.channels() != spec.in_channels()) {
    throw DimensionError("deform_conv: input " + to_string(input.shape()) +
                         " does not match kernel " +
                         to_string(spec.weight.shape()));
  }
  if (input.channels() % groups != 0) {
    throw ConfigError("deform_conv: " + std::to_string(input.channels()) +
                      " channels not divisible by " + std::to_string(groups) +
                      " groups");
  }
  DeformGeometry g{};
  g.kh = spec.kernel_h();
  g.kw = spec.kernel_w();
  const int expected = deform_offset_channels(g.kh, g.kw, groups);
  if (offsets.channels() != expected) {
    throw ConfigError("deform_conv: offsets have " +
                      std::to_string(offsets.channels()) +
                      " channels, expected " + std::to_string(expected) +
                      " (2 x " + std::to_string(g.kh * g.kw) + " taps x " +
                      std::to_string(groups) + " groups)");
  }
  g.out_h = conv_output_size(input.height(), g.kh, spec.stride, spec.padding,
                             spec.dilation);
  g.out_w = conv_output_size(input.width(), g.kw, spec.stride, spec.padding,
                             spec.dilation);
  if (offsets.height() != g.out_h || offsets.width() != g.out_w ||
      offsets.batch() != input.batch()) {
    throw DimensionError("deform_conv: offsets " + to_string(offsets.shape()) +
                         " do not match output " + std::to_string(g.out_h) +
                         "x" + std::to_string(g.out_w));
  }
  g.cpg = input.channels() / groups;
  return g;
}

}  // namespace

Tensor deform_conv(const Tensor& input, const Tensor& offsets,
                   const ConvSpec& spec, int groups) {
  const DeformGeometry g = check_deform(input, offsets, spec, groups);
  const int taps = g.kh * g.kw;
  const int hw = g.out_h * g.out_w;
  const int oc_count = spec.out_channels();
  Tensor out(input.batch(), oc_count, g.out_h, g.out_w);
  std::vector<float> sampled(static_cast<std::size_t>(hw));
  std::vector<float> pos_y(static_cast<std::size_t>(hw));
  std::vector<float> pos_x(static_cast<std::size_t>(hw));

  for (int n = 0; n < input.batch(); ++n) {
    for (int r = 0; r < g.kh; ++r) {
      for (int c = 0; c < g.kw; ++c) {
        const int tap = r * g.kw + c;
        int positions_for_group = -1;
        for (int ic = 0; ic < spec.in_channels(); ++ic) {
          bool used = false;
          for (int oc = 0; oc < oc_count && !used; ++oc) {
            used = spec.weight.at(oc, ic, r, c) != 0.0f;
          }
          if (!used) continue;
          const int group = ic / g.cpg;
          if (group != positions_for_group) {
            const float* off_y =
                offsets.plane(n, 2 * (group * taps + tap)).data();
            const float* off_x =
                offsets.plane(n, 2 * (group * taps + tap) + 1).data();
            for (int oy = 0; oy < g.out_h; ++oy) {
              const float base_y = static_cast<float>(
                  oy * spec.stride - spec.padding + r * spec.dilation);
              for (int ox = 0; ox < g.out_w; ++ox) {
                const float base_x = static_cast<float>(
                    ox * spec.stride - spec.padding + c * spec.dilation);
                const int i = oy * g.out_w + ox;
                pos_y[i] = base_y + off_y[i];
                pos_x[i] = base_x + off_x[i];
              }
            }
            positions_for_group = group;
          }
          const float* src = input.plane(n, ic).data();
          for (int i = 0; i < hw; ++i) {
            sampled[i] = sample_plane(src, input.height(), input.width(),
                                      pos_y[i], pos_x[i]);
          }
          for (int oc = 0; oc < oc_count; ++oc) {
            const float wv = spec.weight.at(oc, ic, r, c);
            if (wv == 0.0f) continue;
            float* dst = out.plane(n, oc).data();
            for (int i = 0; i < hw; ++i) dst[i] += wv * sampled[i];
          }
        }
      }
    }
    for (int oc = 0; oc < oc_count; ++oc) {
      const float b = spec.bias[static_cast<std::size_t>(oc)];
      if (b == 0.0f) continue;
      for (float& v : out.plane(n, oc)) v += b;
    }
  }
  return out;
}

std::vector<SamplingLocation> deform_sampling_locations(const Tensor& offsets,
                                                        const ConvSpec& spec,
                                                        int groups) {
  if (groups < 1) throw ConfigError("deformable groups must be >= 1");
  const int kh = spec.kernel_h();
  const int kw = spec.kernel_w();
  const int taps = kh * kw;
  if (offsets.channels() != deform_offset_channels(kh, kw, groups)) {
    throw ConfigError("offset channel count does not match kernel/groups");
  }
  std::vector<SamplingLocation> out;
  out.reserve(static_cast<std::size_t>(offsets.height()) * offsets.width() *
              groups * taps);
  for (int y = 0; y < offsets.height(); ++y) {
    for (int x = 0; x < offsets.width(); ++x) {
      for (int gi = 0; gi < groups; ++gi) {
        for (int tap = 0; tap < taps; ++tap) {
          const int r = tap / kw;
          const int c = tap % kw;
          const float base_y = static_cast<float>(
              y * spec.stride - spec.padding + r * spec.dilation);
          const float base_x = static_cast<float>(
              x * spec.stride - spec.padding + c * spec.dilation);
          SamplingLocation loc;
          loc.y = y;
          loc.x = x;
          loc.group = gi;
          loc.tap = tap;
          loc.sy = base_y + offsets.at(0, 2 * (gi * taps + tap), y, x);
          loc.sx = base_x + offsets.at(0, 2 * (gi * taps + tap) + 1, y, x);
          out.push_back(loc);
        }
      }
    }
  }
  return out;
}

Tensor upsample_nearest(const Tensor& input, int factor) {
  if (factor < 1) throw ConfigError("upsample factor must be >= 1");
  const int h = input.height() * factor;
  const int w = input.width() * factor;
  Tensor out(input.batch(), input.channels(), h, w);
  for (int n = 0; n < input.batch(); ++n) {
    for (int c = 0; c < input.channels(); ++c) {
      const float* src = input.plane(n, c).data();
      float* dst = out.plane(n, c).data();
      for (int y = 0; y < h; ++y) {
        const float* row = src + (y / factor) * input.width();
        for (int x = 0; x < w; ++x) dst[y * w + x] = row[x / factor];
      }
    }
  }
  return out;
}

Tensor avg_pool(const Tensor& input, int factor) {
  if (factor < 1) throw ConfigError("pool factor must be >= 1");
  const int h = (input.height() + factor - 1) / factor;
  const int w = (input.width() + factor - 1) / factor;
  Tensor out(input.batch(), input.channels(), h, w);
  for (int n = 0; n < input.batch(); ++n) {
    for (int c = 0; c < input.channels(); ++c) {
      const float* src = input.plane(n, c).data();
      float* dst = out.plane(n, c).data();
      for (int y = 0; y < h; ++y) {
        const int y_end = std::min(input.height(), (y + 1) * factor);
        for (int x = 0; x < w; ++x) {
          const int x_end = std::min(input.width(), (x + 1) * factor);
          float sum = 0.0f;
          for (int yy = y * factor; yy < y_end; ++yy) {
            for (int xx = x * factor; xx < x_end; ++xx) {
              sum += src[yy * input.width() + xx];
            }
          }
          dst[y * w + x] =
              sum / static_cast<float>((y_end - y * factor) *
                                       (x_end - x * factor));
        }
      }
    }
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.batch() != b.batch() || a.height() != b.height() ||
      a.width() != b.width()) {
    throw DimensionError("concat_channels: " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  Tensor out(a.batch(), a.channels() + b.channels(), a.height(), a.width());
  for (int n = 0; n < a.batch(); ++n) {
    for (int c = 0; c < a.channels(); ++c) {
      std::ranges::copy(a.plane(n, c), out.plane(n, c).begin());
    }
    for (int c = 0; c < b.channels(); ++c) {
      std::ranges::copy(b.plane(n, c), out.plane(n, a.channels() + c).begin());
    }
  }
  return out;
}

Tensor slice_channels(const Tensor& input, int begin, int count) {
  if (begin < 0 || count < 1 || begin + count > input.channels()) {
    throw DimensionError("slice_channels: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " +
                         to_string(input.shape()));
  }
  Tensor out(input.batch(), count, input.height(), input.width());
  for (int n = 0; n < input.batch(); ++n) {
    for (int c = 0; c < count; ++c) {
      std::ranges::copy(input.plane(n, begin + c), out.plane(n, c).begin());
    }
  }
  return out;
}

Tensor crop(const Tensor& input, int height, int width) {
  if (height < 1 || width < 1 || height > input.height() ||
      width > input.width()) {
    throw DimensionError("crop to " + std::to_string(height) + "x" +
                         std::to_string(width) + " from " +
                         to_string(input.shape()));
  }
  Tensor out(input.batch(), input.channels(), height, width);
  for (int n = 0; n < input.batch(); ++n) {
    for (int c = 0; c < input.channels(); ++c) {
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) out.at(n, c, y, x) = input.at(n, c, y, x);
      }
    }
  }
  return out;
}

Tensor mean_stack(const std::vector<const Tensor*>& tensors) {
  if (tensors.empty()) throw DimensionError("mean_stack of an empty list");
  const Shape shape = tensors.front()->shape();
  for (const Tensor* t : tensors) {
    if (t->shape() != shape) {
      throw DimensionError("mean_stack: " + to_string(t->shape()) + " vs " +
                           to_string(shape));
    }
  }
  Tensor out(shape);
  auto dst = out.data();
  for (const Tensor* t : tensors) {
    auto src = t->data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  const float count = static_cast<float>(tensors.size());
  for (float& v : dst) v /= count;
  return out;
}

Tensor mean_stack(std::span<const Tensor> tensors) {
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(tensors.size());
  for (const Tensor& t : tensors) ptrs.push_back(&t);
  return mean_stack(ptrs);
}

void relu_inplace(Tensor& t) {
  for (float& v : t.data()) v = v > 0.0f ? v : 0.0f;
}

}  // namespace ssvd
