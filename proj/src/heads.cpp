#include "ssvd/heads.hpp"

#include <cmath>
#include <ostream>

#include "ssvd/errors.hpp"

namespace ssvd {

std::vector<Anchor> generate_anchors(const AnchorConfig& config, int height,
                                     int width) {
  check_input_size(height, width);
  std::vector<Anchor> anchors;
  for (int level : kPyramidLevels) {
    const int stride = level_stride(level);
    const int lh = (height + stride - 1) / stride;
    const int lw = (width + stride - 1) / stride;
    const double base = config.base_sizes[static_cast<std::size_t>(level - 3)];
    // Slot shapes are the same at every location of a level.
    std::vector<std::pair<double, double>> shapes;
    for (double ratio : config.aspect_ratios) {
      for (double factor : config.size_factors) {
        const double area = base * base * factor * factor;
        shapes.emplace_back(std::sqrt(area * ratio), std::sqrt(area / ratio));
      }
    }
    for (int y = 0; y < lh; ++y) {
      for (int x = 0; x < lw; ++x) {
        const double cx = stride * (x + 0.5);
        const double cy = stride * (y + 0.5);
        for (int s = 0; s < static_cast<int>(shapes.size()); ++s) {
          const auto [w, h] = shapes[static_cast<std::size_t>(s)];
          anchors.push_back({{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w,
                              cy + 0.5 * h},
                             level, y, x, s});
        }
      }
    }
  }
  return anchors;
}

void write_anchor_csv(std::ostream& out, const std::vector<Anchor>& anchors) {
  out << "level,y,x,slot,x1,y1,x2,y2\n";
  for (const Anchor& a : anchors) {
    out << a.level << ',' << a.y << ',' << a.x << ',' << a.slot << ','
        << a.box.x1 << ',' << a.box.y1 << ',' << a.box.x2 << ',' << a.box.y2
        << '\n';
  }
}

HeadWeights HeadWeights::zeros(const HeadConfig& config) {
  if (config.channels < 1 || config.num_classes < 1 || config.anchors < 1) {
    throw ConfigError("head channels, classes and anchors must be >= 1");
  }
  const int c = config.channels;
  HeadWeights w;
  w.config = config;
  w.cls_trunk = {ConvSpec::zeros(c, c, 3), ConvSpec::zeros(c, c, 3)};
  w.box_trunk = {ConvSpec::zeros(c, c, 3), ConvSpec::zeros(c, c, 3)};
  w.cls_out = ConvSpec::zeros(config.num_classes * config.anchors, c, 3);
  w.box_out = ConvSpec::zeros(4 * config.anchors, c, 3);
  return w;
}

void HeadWeights::save(NamedTensors& out, const std::string& prefix) const {
  for (int i = 0; i < 2; ++i) {
    out.add_conv(prefix + ".cls_trunk" + std::to_string(i), cls_trunk[i]);
    out.add_conv(prefix + ".box_trunk" + std::to_string(i), box_trunk[i]);
  }
  out.add_conv(prefix + ".cls_out", cls_out);
  out.add_conv(prefix + ".box_out", box_out);
}

HeadWeights HeadWeights::load(const NamedTensors& in, const std::string& prefix,
                              const HeadConfig& config) {
  HeadWeights w = zeros(config);
  for (int i = 0; i < 2; ++i) {
    in.read_conv(prefix + ".cls_trunk" + std::to_string(i), w.cls_trunk[i]);
    in.read_conv(prefix + ".box_trunk" + std::to_string(i), w.box_trunk[i]);
  }
  in.read_conv(prefix + ".cls_out", w.cls_out);
  in.read_conv(prefix + ".box_out", w.box_out);
  return w;
}

HeadWeights init_head_weights(std::uint64_t seed, const HeadConfig& config) {
  HeadWeights w = HeadWeights::zeros(config);
  Rng rng(seed);
  const int c = config.channels;
  for (int i = 0; i < 2; ++i) {
    w.cls_trunk[i] = he_uniform_conv(rng, c, c, 3);
    w.box_trunk[i] = he_uniform_conv(rng, c, c, 3);
  }
  for (float& v : w.cls_out.weight.data()) {
    v = static_cast<float>(rng.uniform(-0.01, 0.01));
  }
  for (float& v : w.box_out.weight.data()) {
    v = static_cast<float>(rng.uniform(-0.01, 0.01));
  }
  const float prior = static_cast<float>(-std::log((1.0 - 0.01) / 0.01));
  for (float& b : w.cls_out.bias) b = prior;
  return w;
}

std::size_t HeadOutputs::anchor_count() const {
  std::size_t n = 0;
  for (const Tensor& t : logits) {
    n += static_cast<std::size_t>(t.height()) * t.width() * anchors;
  }
  return n;
}

std::vector<double> HeadOutputs::flat_logits() const {
  std::vector<double> out;
  out.reserve(anchor_count() * static_cast<std::size_t>(num_classes));
  for (const Tensor& t : logits) {
    for (int y = 0; y < t.height(); ++y) {
      for (int x = 0; x < t.width(); ++x) {
        for (int a = 0; a < anchors; ++a) {
          for (int c = 0; c < num_classes; ++c) {
            out.push_back(t.at(0, a * num_classes + c, y, x));
          }
        }
      }
    }
  }
  return out;
}

std::vector<double> HeadOutputs::flat_deltas() const {
  std::vector<double> out;
  out.reserve(anchor_count() * 4);
  for (const Tensor& t : deltas) {
    for (int y = 0; y < t.height(); ++y) {
      for (int x = 0; x < t.width(); ++x) {
        for (int a = 0; a < anchors; ++a) {
          for (int j = 0; j < 4; ++j) out.push_back(t.at(0, a * 4 + j, y, x));
        }
      }
    }
  }
  return out;
}

namespace {

Tensor branch(const Tensor& x, const std::array<ConvSpec, 2>& trunk,
              const ConvSpec& out) {
  Tensor h = conv2d(x, trunk[0]);
  relu_inplace(h);
  h = conv2d(h, trunk[1]);
  relu_inplace(h);
  return conv2d(h, out);
}

}  // namespace

HeadOutputs head_forward(const FeaturePyramid& pyramid,
                         const HeadWeights& weights) {
  if (pyramid.channels() != weights.config.channels) {
    throw DimensionError("head expects " +
                         std::to_string(weights.config.channels) +
                         " channels, pyramid has " +
                         std::to_string(pyramid.channels()));
  }
  HeadOutputs out;
  out.num_classes = weights.config.num_classes;
  out.anchors = weights.config.anchors;
  for (std::size_t i = 0; i < pyramid.levels.size(); ++i) {
    out.logits[i] = branch(pyramid.levels[i], weights.cls_trunk, weights.cls_out);
    out.deltas[i] = branch(pyramid.levels[i], weights.box_trunk, weights.box_out);
  }
  return out;
}

namespace {

void check_box(const Box& b, const char* what) {
  if (!(b.width() > 0.0) || !(b.height() > 0.0)) {
    throw ValidationError(std::string(what) + " box has non-positive size");
  }
}

constexpr double kMaxLogScale = 10.0;

}  // namespace

Deltas encode_box(const Box& anchor, const Box& gt) {
  check_box(anchor, "anchor");
  check_box(gt, "ground-truth");
  const double aw = anchor.width();
  const double ah = anchor.height();
  return {(gt.center_x() - anchor.center_x()) / aw,
          (gt.center_y() - anchor.center_y()) / ah,
          std::log(gt.width() / aw), std::log(gt.height() / ah)};
}

Box decode_box(const Box& anchor, const Deltas& d) {
  check_box(anchor, "anchor");
  const double aw = anchor.width();
  const double ah = anchor.height();
  const double cx = anchor.center_x() + d[0] * aw;
  const double cy = anchor.center_y() + d[1] * ah;
  const double w = aw * std::exp(std::min(d[2], kMaxLogScale));
  const double h = ah * std::exp(std::min(d[3], kMaxLogScale));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<Assignment> match_anchors(const std::vector<Anchor>& anchors,
                                      const std::vector<LabeledBox>& gts,
                                      const MatchConfig& config) {
  std::vector<Assignment> out(anchors.size());
  if (gts.empty()) return out;

  std::vector<double> best_iou(anchors.size(), -1.0);
  std::vector<int> best_gt(anchors.size(), -1);
  std::vector<double> gt_best_iou(gts.size(), -1.0);
  std::vector<std::size_t> gt_best_anchor(gts.size(), 0);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[a].box, gts[g].box);
      if (v > best_iou[a]) {
        best_iou[a] = v;
        best_gt[a] = static_cast<int>(g);
      }
      if (v > gt_best_iou[g]) {
        gt_best_iou[g] = v;
        gt_best_anchor[g] = a;
      }
    }
  }
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (best_iou[a] >= config.foreground_iou) {
      out[a] = {MatchKind::foreground, gts[best_gt[a]].class_id, best_gt[a]};
    } else if (best_iou[a] >= config.background_iou) {
      out[a] = {MatchKind::ignore, -1, -1};
    }
  }
  // Forced matches; a later ground truth takes a shared anchor only with a
  // strictly better overlap.
  std::vector<double> forced_iou(anchors.size(), -1.0);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const std::size_t a = gt_best_anchor[g];
    if (gt_best_iou[g] > forced_iou[a]) {
      forced_iou[a] = gt_best_iou[g];
      out[a] = {MatchKind::foreground, gts[g].class_id, static_cast<int>(g)};
    }
  }
  return out;
}

int count_foreground(const std::vector<Assignment>& assignments) {
  int n = 0;
  for (const Assignment& a : assignments) {
    if (a.kind == MatchKind::foreground) ++n;
  }
  return n;
}

}  // namespace ssvd
