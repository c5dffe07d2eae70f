#include "ssvd/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ssvd/errors.hpp"

namespace ssvd {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double focal_loss(double prob, bool positive, double alpha, double gamma) {
  const double p = std::clamp(prob, kProbClamp, 1.0 - kProbClamp);
  if (positive) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

double focal_logit_gradient(double logit, bool positive, double alpha,
                            double gamma) {
  const double p = sigmoid(logit);
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  if (positive) {
    return alpha * std::pow(1.0 - p, gamma) *
           (gamma * p * std::log(p) - (1.0 - p));
  }
  return (1.0 - alpha) * std::pow(p, gamma) *
         (p - gamma * (1.0 - p) * std::log(1.0 - p));
}

double smooth_l1(double d) {
  const double a = std::fabs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double smooth_l1(const Deltas& pred, const Deltas& target) {
  double s = 0.0;
  for (std::size_t j = 0; j < 4; ++j) s += smooth_l1(pred[j] - target[j]);
  return s;
}

double smooth_l1_gradient(double d) {
  if (std::fabs(d) < 1.0) return d;
  return d > 0.0 ? 1.0 : -1.0;
}

LossTargets make_targets(const std::vector<Anchor>& anchors,
                         const std::vector<LabeledBox>& gts, int num_classes,
                         const MatchConfig& match) {
  LossTargets t;
  t.num_classes = num_classes;
  t.assignments = match_anchors(anchors, gts, match);
  t.box_targets.assign(anchors.size(), Deltas{0.0, 0.0, 0.0, 0.0});
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const Assignment& as = t.assignments[a];
    if (as.kind != MatchKind::foreground) continue;
    if (as.class_id < 0 || as.class_id >= num_classes) {
      throw ValidationError("ground-truth class " + std::to_string(as.class_id) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
    t.box_targets[a] = encode_box(anchors[a].box, gts[as.gt_index].box);
  }
  return t;
}

namespace {

void check_sizes(const FlatOutputs& s, const LossTargets& t) {
  const std::size_t n = t.assignments.size();
  if (s.logits.size() != n * static_cast<std::size_t>(t.num_classes) ||
      s.deltas.size() != n * 4) {
    throw DimensionError("head outputs cover " +
                         std::to_string(s.deltas.size() / 4) +
                         " anchors, targets cover " + std::to_string(n));
  }
}

struct StreamSums {
  double focal = 0.0;
  double loc = 0.0;
};

StreamSums stream_loss(const FlatOutputs& s, const LossTargets& t,
                       const FocalParams& fp) {
  check_sizes(s, t);
  const int k = t.num_classes;
  StreamSums sums;
  for (std::size_t a = 0; a < t.assignments.size(); ++a) {
    const Assignment& as = t.assignments[a];
    if (as.kind == MatchKind::ignore) continue;
    for (int c = 0; c < k; ++c) {
      const bool pos = as.kind == MatchKind::foreground && as.class_id == c;
      sums.focal += focal_loss(sigmoid(s.logits[a * k + c]), pos, fp.alpha,
                               fp.gamma);
    }
    if (as.kind == MatchKind::foreground) {
      const Deltas pred{s.deltas[a * 4], s.deltas[a * 4 + 1],
                        s.deltas[a * 4 + 2], s.deltas[a * 4 + 3]};
      sums.loc += smooth_l1(pred, t.box_targets[a]);
    }
  }
  return sums;
}

StreamGradients stream_gradients(const FlatOutputs& s, const LossTargets& t,
                                 const FocalParams& fp, double inv_n) {
  check_sizes(s, t);
  const int k = t.num_classes;
  StreamGradients g;
  g.logits.assign(s.logits.size(), 0.0);
  g.deltas.assign(s.deltas.size(), 0.0);
  for (std::size_t a = 0; a < t.assignments.size(); ++a) {
    const Assignment& as = t.assignments[a];
    if (as.kind == MatchKind::ignore) continue;
    for (int c = 0; c < k; ++c) {
      const bool pos = as.kind == MatchKind::foreground && as.class_id == c;
      g.logits[a * k + c] =
          focal_logit_gradient(s.logits[a * k + c], pos, fp.alpha, fp.gamma) *
          inv_n;
    }
    if (as.kind == MatchKind::foreground) {
      for (std::size_t j = 0; j < 4; ++j) {
        g.deltas[a * 4 + j] =
            smooth_l1_gradient(s.deltas[a * 4 + j] - t.box_targets[a][j]) *
            inv_n;
      }
    }
  }
  return g;
}

}  // namespace

LossBreakdown total_loss(const FlatOutputs* motion, const FlatOutputs* sampling,
                         const LossTargets& targets, const FocalParams& params) {
  LossBreakdown b;
  b.n_fg = targets.foreground();
  if (motion) {
    const StreamSums s = stream_loss(*motion, targets, params);
    b.focal_motion = s.focal;
    b.loc_motion = s.loc;
  }
  if (sampling) {
    const StreamSums s = stream_loss(*sampling, targets, params);
    b.focal_sampling = s.focal;
    b.loc_sampling = s.loc;
  }
  b.total = (b.focal_motion + b.focal_sampling + b.loc_motion + b.loc_sampling) /
            std::max(b.n_fg, 1);
  return b;
}

LossGradients loss_gradients(const FlatOutputs* motion,
                             const FlatOutputs* sampling,
                             const LossTargets& targets,
                             const FocalParams& params) {
  const double inv_n = 1.0 / std::max(targets.foreground(), 1);
  LossGradients g;
  if (motion) g.motion = stream_gradients(*motion, targets, params, inv_n);
  if (sampling) g.sampling = stream_gradients(*sampling, targets, params, inv_n);
  return g;
}

}  // namespace ssvd
