#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ssvd/box.hpp"
#include "ssvd/heads.hpp"

namespace ssvd {

enum class StreamTag { single, motion, sampling };

std::string to_string(StreamTag tag);
StreamTag parse_stream_tag(const std::string& name);

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;
  int frame = 0;
  StreamTag stream = StreamTag::single;

  bool operator==(const Detection&) const = default;
};

using DetectionSet = std::vector<Detection>;

struct DecodeConfig {
  double score_threshold = 0.05;
  int topk_per_level = 1000;
};

/// Sigmoid scores, threshold, per-level top-k (ties by anchor-major index),
/// decode and clip to the image. Boxes that clip to zero area are dropped.
DetectionSet decode_detections(const HeadOutputs& outputs,
                               const std::vector<Anchor>& anchors,
                               int image_height, int image_width,
                               const DecodeConfig& config, int frame,
                               StreamTag stream);

/// Greedy per-class NMS. Survivors come out by descending score, ties by
/// input position.
DetectionSet nms(const DetectionSet& dets, double iou_threshold = 0.45);

/// Concatenates the motion and sampling sets and runs nms.
DetectionSet late_fuse(const DetectionSet& motion_dets,
                       const DetectionSet& sampling_dets,
                       double iou_threshold = 0.45);

enum class Rescore { mean, max };

struct SeqNmsConfig {
  double link_iou = 0.5;
  double suppress_iou = 0.45;
  Rescore rescore = Rescore::mean;
};

struct Tubelet {
  int class_id = 0;
  std::vector<Detection> members;  // consecutive frames, rescored
  std::vector<int> source_index;   // position in that frame's input set
  double score = 0.0;
};

struct SeqNmsResult {
  std::vector<Tubelet> tubelets;
  std::vector<DetectionSet> frames;
};

/// `per_frame[i]` holds the detections of the i-th consecutive frame. Per
/// class: repeatedly extract the maximum-total-score path over linked
/// detections of adjacent frames, rescore its members, and drop same-frame
/// detections overlapping a member; stop when no link is left. Ties prefer
/// the earliest frame and lowest index.
SeqNmsResult seq_nms(const std::vector<DetectionSet>& per_frame,
                     const SeqNmsConfig& config = {});

void write_detections_jsonl(std::ostream& out, const DetectionSet& dets);
DetectionSet read_detections_jsonl(std::istream& in);
void write_tubelets_jsonl(std::ostream& out,
                          const std::vector<Tubelet>& tubelets);

}  // namespace ssvd
