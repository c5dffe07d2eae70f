#pragma once

#include "ssvd/backbone.hpp"
#include "ssvd/heads.hpp"

namespace ssvd {

/// Hand-set weights for the synthetic shapes: a colour-selective stem whose
/// pyramid levels hold per-class occupancy, and heads whose 7x7 effective
/// filters match each anchor's shape template (disc, rectangle, triangle by
/// class) against that occupancy and regress its centroid.
struct DesignedParams {
  double brightness = 0.64;  // mean object response of the colour contrast
  double class_gain = 8.0;
  double threshold = 0.0;
  double surround = 1.0;  // weight of occupancy outside the template
  double band = 1.0;      // extra weight on the template's boundary band
};

BackboneWeights designed_backbone(const BackboneConfig& config,
                                  const DesignedParams& params = {});

/// Needs channels >= 9 * num_classes and anchors matching `anchors`.
HeadWeights designed_head(const HeadConfig& config, const AnchorConfig& anchors,
                          const DesignedParams& params = {});

}  // namespace ssvd
