#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ssvd/backbone.hpp"
#include "ssvd/box.hpp"
#include "ssvd/checkpoint.hpp"

namespace ssvd {

struct AnchorConfig {
  std::array<double, kLevelCount> base_sizes{32.0, 64.0, 128.0, 256.0};
  std::vector<double> aspect_ratios{0.5, 1.0, 2.0};  // w / h
  std::vector<double> size_factors{1.0, 1.2599210498948732, 1.5874010519681994};

  int anchors_per_location() const {
    return static_cast<int>(aspect_ratios.size() * size_factors.size());
  }
};

/// slot = ratio_index * |factors| + factor_index.
struct Anchor {
  Box box;
  int level = 3;
  int y = 0;
  int x = 0;
  int slot = 0;
};

/// Anchors for a height x width input ordered by (level, y, x, slot).
std::vector<Anchor> generate_anchors(const AnchorConfig& config, int height,
                                     int width);

/// CSV with header level,y,x,slot,x1,y1,x2,y2.
void write_anchor_csv(std::ostream& out, const std::vector<Anchor>& anchors);

struct HeadConfig {
  int channels = 32;
  int num_classes = 3;
  int anchors = 9;
};

/// Class and box subnets, shared across levels.
struct HeadWeights {
  HeadConfig config;
  std::array<ConvSpec, 2> cls_trunk;
  ConvSpec cls_out;  // k*A logits
  std::array<ConvSpec, 2> box_trunk;
  ConvSpec box_out;  // 4*A deltas

  static HeadWeights zeros(const HeadConfig& config);
  void save(NamedTensors& out, const std::string& prefix) const;
  static HeadWeights load(const NamedTensors& in, const std::string& prefix,
                          const HeadConfig& config);
};

/// He-uniform trunks, small uniform output convs, class bias set to the
/// 0.01 foreground prior.
HeadWeights init_head_weights(std::uint64_t seed, const HeadConfig& config);

/// Per level: logits channel a*k + c, deltas channel a*4 + j.
struct HeadOutputs {
  std::array<Tensor, kLevelCount> logits;
  std::array<Tensor, kLevelCount> deltas;
  int num_classes = 0;
  int anchors = 0;

  std::size_t anchor_count() const;
  /// Logits flattened in anchor order: [anchor * k + class].
  std::vector<double> flat_logits() const;
  /// Deltas flattened in anchor order: [anchor * 4 + j].
  std::vector<double> flat_deltas() const;
};

HeadOutputs head_forward(const FeaturePyramid& pyramid,
                         const HeadWeights& weights);

using Deltas = std::array<double, 4>;  // dx, dy, dw, dh

/// Throws ValidationError for non-positive widths or heights.
Deltas encode_box(const Box& anchor, const Box& gt);
Box decode_box(const Box& anchor, const Deltas& deltas);

struct MatchConfig {
  double foreground_iou = 0.5;
  double background_iou = 0.4;
};

enum class MatchKind { background, foreground, ignore };

struct Assignment {
  MatchKind kind = MatchKind::background;
  int class_id = -1;
  int gt_index = -1;
};

/// IoU >= foreground_iou: foreground to the best ground truth (lowest index on
/// ties); below background_iou: background; otherwise ignore. Each ground
/// truth also claims its max-IoU anchor (lowest anchor index on ties).
std::vector<Assignment> match_anchors(const std::vector<Anchor>& anchors,
                                      const std::vector<LabeledBox>& gts,
                                      const MatchConfig& config = {});

int count_foreground(const std::vector<Assignment>& assignments);

}  // namespace ssvd
