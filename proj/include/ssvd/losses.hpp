#pragma once

#include <vector>

#include "ssvd/heads.hpp"

namespace ssvd {

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

inline constexpr double kProbClamp = 1e-7;

double sigmoid(double z);

/// Focal loss of one (anchor, class) probability. `prob` is clamped to
/// [1e-7, 1 - 1e-7] first.
double focal_loss(double prob, bool positive, double alpha, double gamma);

/// d focal / d logit, where prob = sigmoid(logit). Zero where the clamp is
/// active.
double focal_logit_gradient(double logit, bool positive, double alpha,
                            double gamma);

double smooth_l1(double d);
double smooth_l1(const Deltas& pred, const Deltas& target);
double smooth_l1_gradient(double d);

/// Per-anchor training targets for one reference frame.
struct LossTargets {
  std::vector<Assignment> assignments;
  std::vector<Deltas> box_targets;  // meaningful for foreground anchors only
  int num_classes = 0;

  int foreground() const { return count_foreground(assignments); }
};

LossTargets make_targets(const std::vector<Anchor>& anchors,
                         const std::vector<LabeledBox>& gts, int num_classes,
                         const MatchConfig& match = {});

/// One stream's head outputs in anchor order: logits[a*k + c],
/// deltas[a*4 + j].
struct FlatOutputs {
  std::vector<double> logits;
  std::vector<double> deltas;

  static FlatOutputs from(const HeadOutputs& h) {
    return {h.flat_logits(), h.flat_deltas()};
  }
};

/// Unnormalised per-stream sums; total is their sum over max(n_fg, 1).
struct LossBreakdown {
  double focal_motion = 0.0;
  double focal_sampling = 0.0;
  double loc_motion = 0.0;
  double loc_sampling = 0.0;
  double total = 0.0;
  int n_fg = 0;
};

/// Either stream may be null (disabled); its terms are then zero.
LossBreakdown total_loss(const FlatOutputs* motion, const FlatOutputs* sampling,
                         const LossTargets& targets,
                         const FocalParams& params = {});

struct StreamGradients {
  std::vector<double> logits;
  std::vector<double> deltas;
};

struct LossGradients {
  StreamGradients motion;
  StreamGradients sampling;
};

/// d total / d every logit and delta of the enabled streams.
LossGradients loss_gradients(const FlatOutputs* motion,
                             const FlatOutputs* sampling,
                             const LossTargets& targets,
                             const FocalParams& params = {});

}  // namespace ssvd
