#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ssvd/box.hpp"
#include "ssvd/postprocess.hpp"

namespace ssvd {

enum class Speed { slow, medium, fast };

std::string to_string(Speed s);

struct SpeedConfig {
  int window = 10;
  double slow_above = 0.9;  // mean IoU > this: slow
  double fast_below = 0.7;  // mean IoU < this: fast
};

Speed classify_speed(double mean_iou, const SpeedConfig& config = {});

struct GroundTruthTrack {
  int track_id = -1;
  int class_id = 0;
  std::map<int, Box> boxes;  // frame -> box
};

/// Groups per-frame ground truth by track id (ascending).
std::vector<GroundTruthTrack> build_tracks(
    const std::vector<std::vector<LabeledBox>>& per_frame);

/// Mean IoU between the track's box at `frame` and its boxes at the other
/// frames within +-window. 1 when there are none.
double mean_nearby_iou(const GroundTruthTrack& track, int frame, int window);

/// Stratum of every ground-truth instance, parallel to `per_frame`.
std::vector<std::vector<Speed>> speed_stratify(
    const std::vector<std::vector<LabeledBox>>& per_frame,
    const SpeedConfig& config = {});

/// One ground-truth box of a single class, keyed by image.
struct GtRef {
  int image = 0;
  Box box;
};

/// One detection of a single class, keyed by image.
struct DetRef {
  int image = 0;
  Box box;
  double score = 0.0;
};

/// Greedy matching in descending score order (ties by position): each
/// detection takes the highest-IoU unmatched ground truth of its image with
/// IoU >= iou_match. Returns the matched ground-truth index or -1 per
/// detection, in input order.
std::vector<int> match_detections(const std::vector<DetRef>& dets,
                                  const std::vector<GtRef>& gts,
                                  double iou_match = 0.5);

/// Area under the all-point interpolated precision/recall curve. `is_tp` is
/// in rank order. 0 when num_gt is 0.
double ap_from_ranked(const std::vector<bool>& is_tp, int num_gt);

double average_precision(const std::vector<DetRef>& dets,
                         const std::vector<GtRef>& gts, double iou_match = 0.5);

struct EvalConfig {
  double iou_match = 0.5;
  SpeedConfig speed;
};

/// One video: per-frame ground truth and its detections (Detection::frame
/// indexes `truth`).
struct EvalSequence {
  std::vector<std::vector<LabeledBox>> truth;
  DetectionSet detections;
};

struct EvalReport {
  std::map<int, double> class_ap;
  double map = 0.0;
  double map_slow = 0.0;
  double map_medium = 0.0;
  double map_fast = 0.0;
  int gt_total = 0;
  int gt_slow = 0;
  int gt_medium = 0;
  int gt_fast = 0;
};

/// Stratified mAPs keep only ground truth of the stratum and the detections
/// matched to it; unmatched detections are left out.
EvalReport evaluate(const std::vector<EvalSequence>& sequences,
                    const EvalConfig& config = {});

std::string report_json(const EvalReport& report);
void write_class_ap_csv(std::ostream& out, const EvalReport& report);

}  // namespace ssvd
