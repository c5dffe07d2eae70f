#include "ssvd/designed.hpp"

#include <algorithm>
#include <cmath>

#include "ssvd/errors.hpp"

namespace ssvd {

namespace {

// Taps (1,1), (1,2), (2,1), (2,2) of a stride-2, pad-1 3x3 conv cover the
// 2x2 block of the output cell.
void set_block_average(ConvSpec& conv, int out, int in, float scale) {
  for (int r = 1; r <= 2; ++r) {
    for (int c = 1; c <= 2; ++c) conv.weight.at(out, in, r, c) = 0.25f * scale;
  }
}

ConvSpec identity_conv(int channels, int kernel) {
  ConvSpec conv = ConvSpec::zeros(channels, channels, kernel);
  for (int c = 0; c < channels; ++c) {
    conv.weight.at(c, c, kernel / 2, kernel / 2) = 1.0f;
  }
  return conv;
}

int sign(int v) { return (v > 0) - (v < 0); }

// Effective offset o in [-3, 3] = coarse shift P in {-2, 0, 2} + tap r.
int coarse(int o) {
  if (o <= -2) return -2;
  if (o >= 2) return 2;
  return 0;
}

int shift_index(int dy, int dx) { return (dy + 1) * 3 + (dx + 1); }

// Shared two-layer trunk: channels c*9 + index(P) of the second layer hold
// class c's occupancy shifted by P in {-2, 0, 2}^2.
std::array<ConvSpec, 2> shift_trunk(int channels, int classes) {
  std::array<ConvSpec, 2> t{ConvSpec::zeros(channels, channels, 3),
                            ConvSpec::zeros(channels, channels, 3)};
  for (int c = 0; c < classes; ++c) {
    for (int qy = -1; qy <= 1; ++qy) {
      for (int qx = -1; qx <= 1; ++qx) {
        t[0].weight.at(c * 9 + shift_index(qy, qx), c, qy + 1, qx + 1) = 1.0f;
      }
    }
    for (int py = -2; py <= 2; py += 2) {
      for (int px = -2; px <= 2; px += 2) {
        const int sy = sign(py);
        const int sx = sign(px);
        t[1].weight.at(c * 9 + shift_index(py / 2, px / 2),
                       c * 9 + shift_index(sy, sx), sy + 1, sx + 1) = 1.0f;
      }
    }
  }
  return t;
}

// Fraction of the unit cell centred at (oy, ox) inside the class's shape
// (disc, rectangle, triangle pointing up) of size aw x ah centred at 0.
double shape_cover(int class_id, int oy, int ox, double aw, double ah) {
  constexpr int n = 16;
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double v = oy - 0.5 + (i + 0.5) / n;
      const double u = ox - 0.5 + (j + 0.5) / n;
      bool in = false;
      switch (class_id) {
        case 0: in = (2 * u / aw) * (2 * u / aw) + (2 * v / ah) * (2 * v / ah) <= 1.0; break;
        case 2: in = std::fabs(v) <= 0.5 * ah && std::fabs(u) <= 0.5 * aw * (v / ah + 0.5); break;
        default: in = std::fabs(u) <= 0.5 * aw && std::fabs(v) <= 0.5 * ah;
      }
      hits += in;
    }
  }
  return static_cast<double>(hits) / (n * n);
}

}  // namespace

BackboneWeights designed_backbone(const BackboneConfig& config,
                                  const DesignedParams& params) {
  if (config.in_channels != 3 || config.channels < 3) {
    throw ConfigError("designed backbone needs RGB input and >= 3 channels");
  }
  BackboneWeights w = BackboneWeights::zeros(config);
  for (int c = 0; c < 3; ++c) {
    const double gain = 1.0 / params.brightness;
    for (int i = 0; i < 3; ++i) {
      set_block_average(w.stem, c, i, static_cast<float>(gain * (i == c ? 1.0 : -0.5)));
    }
    for (auto& s : w.stage_down) set_block_average(s, c, c, 1.0f);
    set_block_average(w.p6, c, c, 1.0f);
  }
  for (auto& s : w.stage_conv) s = identity_conv(config.channels, 3);
  for (auto& l : w.lateral) l = identity_conv(config.channels, 1);
  for (auto& o : w.output) o = identity_conv(config.channels, 3);
  return w;
}

HeadWeights designed_head(const HeadConfig& config, const AnchorConfig& anchors,
                          const DesignedParams& params) {
  const int k = config.num_classes;
  if (config.channels < 9 * k) {
    throw ConfigError("designed head needs >= 9 channels per class");
  }
  if (config.anchors != anchors.anchors_per_location()) {
    throw ConfigError("head anchor count does not match the anchor config");
  }
  HeadWeights w = HeadWeights::zeros(config);
  w.cls_trunk = shift_trunk(config.channels, k);
  w.box_trunk = shift_trunk(config.channels, k);

  // Anchor extents in cells are level independent when base size / stride
  // is constant, which holds for the default config.
  const double cells = anchors.base_sizes[0] / level_stride(kPyramidLevels[0]);
  const double g = params.class_gain;
  const double sur = params.surround;
  int slot = 0;
  for (double ratio : anchors.aspect_ratios) {
    for (double factor : anchors.size_factors) {
      const double aw = cells * factor * std::sqrt(ratio);
      const double ah = cells * factor / std::sqrt(ratio);
      for (int c = 0; c < k; ++c) {
        std::array<std::array<double, 7>, 7> m{};
        double area = 0.0;
        for (int oy = -3; oy <= 3; ++oy) {
          for (int ox = -3; ox <= 3; ++ox) {
            m[oy + 3][ox + 3] = shape_cover(c, oy, ox, aw, ah);
            area += m[oy + 3][ox + 3];
          }
        }
        // Boundary band of the template, balanced so that a perfect match
        // keeps its response.
        std::array<std::array<double, 7>, 7> band{};
        double band_m = 0.0;
        double m_m = 0.0;
        for (int oy = -3; oy <= 3; ++oy) {
          for (int ox = -3; ox <= 3; ++ox) {
            const double inner = std::min(
                {shape_cover(c, oy - 1, ox, aw, ah), shape_cover(c, oy + 1, ox, aw, ah),
                 shape_cover(c, oy, ox - 1, aw, ah), shape_cover(c, oy, ox + 1, aw, ah)});
            const double mv = m[oy + 3][ox + 3];
            band[oy + 3][ox + 3] = mv * (1.0 - inner);
            band_m += band[oy + 3][ox + 3] * mv;
            m_m += mv * mv;
          }
        }
        const double band_mean = band_m / m_m;
        const int out = slot * k + c;
        w.cls_out.bias[out] = static_cast<float>(-g * (1.0 + params.threshold));
        // Triangles point up, so their centroid sits h/6 below the box centre.
        const double centroid_dy = c == 2 ? 1.0 / 6.0 : 0.0;
        for (int oy = -3; oy <= 3; ++oy) {
          for (int ox = -3; ox <= 3; ++ox) {
            const int in = c * 9 + shift_index(coarse(oy) / 2, coarse(ox) / 2);
            const int ry = oy - coarse(oy) + 1;
            const int rx = ox - coarse(ox) + 1;
            w.cls_out.weight.at(out, in, ry, rx) =
                static_cast<float>(
                    g *
                    ((2.0 + sur) * m[oy + 3][ox + 3] - sur +
                     params.band * (band[oy + 3][ox + 3] - band_mean * m[oy + 3][ox + 3])) /
                    area);
            w.box_out.weight.at(slot * 4 + 0, in, ry, rx) =
                static_cast<float>(ox / aw / area);
            w.box_out.weight.at(slot * 4 + 1, in, ry, rx) =
                static_cast<float>((oy / ah - centroid_dy) / area);
          }
        }
      }
      ++slot;
    }
  }
  return w;
}

}  // namespace ssvd
