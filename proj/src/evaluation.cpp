#include "ssvd/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <set>

#include "json.hpp"

namespace ssvd {

std::string to_string(Speed s) {
  switch (s) {
    case Speed::slow: return "slow";
    case Speed::medium: return "medium";
    case Speed::fast: return "fast";
  }
  return "slow";
}

Speed classify_speed(double mean_iou, const SpeedConfig& config) {
  if (mean_iou > config.slow_above) return Speed::slow;
  if (mean_iou < config.fast_below) return Speed::fast;
  return Speed::medium;
}

std::vector<GroundTruthTrack> build_tracks(
    const std::vector<std::vector<LabeledBox>>& per_frame) {
  std::map<int, GroundTruthTrack> tracks;
  for (int f = 0; f < static_cast<int>(per_frame.size()); ++f) {
    for (const LabeledBox& lb : per_frame[f]) {
      GroundTruthTrack& t = tracks[lb.track_id];
      t.track_id = lb.track_id;
      t.class_id = lb.class_id;
      t.boxes[f] = lb.box;
    }
  }
  std::vector<GroundTruthTrack> out;
  for (auto& [id, t] : tracks) out.push_back(std::move(t));
  return out;
}

double mean_nearby_iou(const GroundTruthTrack& track, int frame, int window) {
  const auto it = track.boxes.find(frame);
  if (it == track.boxes.end()) return 1.0;
  double sum = 0.0;
  int n = 0;
  for (auto jt = track.boxes.lower_bound(frame - window);
       jt != track.boxes.end() && jt->first <= frame + window; ++jt) {
    if (jt->first == frame) continue;
    sum += iou(it->second, jt->second);
    ++n;
  }
  return n == 0 ? 1.0 : sum / n;
}

std::vector<std::vector<Speed>> speed_stratify(
    const std::vector<std::vector<LabeledBox>>& per_frame,
    const SpeedConfig& config) {
  const std::vector<GroundTruthTrack> tracks = build_tracks(per_frame);
  std::map<int, const GroundTruthTrack*> by_id;
  for (const auto& t : tracks) by_id[t.track_id] = &t;
  std::vector<std::vector<Speed>> out(per_frame.size());
  for (int f = 0; f < static_cast<int>(per_frame.size()); ++f) {
    for (const LabeledBox& lb : per_frame[f]) {
      const double m = mean_nearby_iou(*by_id.at(lb.track_id), f, config.window);
      out[f].push_back(classify_speed(m, config));
    }
  }
  return out;
}

std::vector<int> match_detections(const std::vector<DetRef>& dets,
                                  const std::vector<GtRef>& gts,
                                  double iou_match) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::multimap<int, int> gts_by_image;
  for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
    gts_by_image.emplace(gts[g].image, g);
  }
  std::vector<char> taken(gts.size(), 0);
  std::vector<int> match(dets.size(), -1);
  for (std::size_t d : order) {
    double best = iou_match;
    int best_g = -1;
    auto [lo, hi] = gts_by_image.equal_range(dets[d].image);
    for (auto it = lo; it != hi; ++it) {
      const int g = it->second;
      if (taken[g]) continue;
      const double v = iou(dets[d].box, gts[g].box);
      if (v >= best && (best_g < 0 || v > best)) {
        best = v;
        best_g = g;
      }
    }
    if (best_g >= 0) {
      taken[best_g] = 1;
      match[d] = best_g;
    }
  }
  return match;
}

double ap_from_ranked(const std::vector<bool>& is_tp, int num_gt) {
  if (num_gt <= 0) return 0.0;
  const std::size_t n = is_tp.size();
  std::vector<long double> precision(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_tp[i]) ++tp;
    precision[i] = static_cast<long double>(tp) / static_cast<long double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  // recall steps by 1/num_gt at each true positive
  long double sum = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_tp[i]) sum += precision[i];
  }
  return static_cast<double>(sum / num_gt);
}

namespace {

std::vector<bool> ranked_tp(const std::vector<DetRef>& dets,
                            const std::vector<int>& match) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<bool> tp;
  tp.reserve(order.size());
  for (std::size_t d : order) tp.push_back(match[d] >= 0);
  return tp;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double average_precision(const std::vector<DetRef>& dets,
                         const std::vector<GtRef>& gts, double iou_match) {
  const std::vector<int> match = match_detections(dets, gts, iou_match);
  return ap_from_ranked(ranked_tp(dets, match), static_cast<int>(gts.size()));
}

EvalReport evaluate(const std::vector<EvalSequence>& sequences,
                    const EvalConfig& config) {
  // Images are numbered across sequences so matching never crosses videos.
  std::map<int, std::vector<GtRef>> gts;
  std::map<int, std::vector<Speed>> gt_speed;
  std::map<int, std::vector<DetRef>> dets;
  EvalReport report;
  int image_base = 0;
  for (const EvalSequence& seq : sequences) {
    const auto strata = speed_stratify(seq.truth, config.speed);
    for (int f = 0; f < static_cast<int>(seq.truth.size()); ++f) {
      for (std::size_t i = 0; i < seq.truth[f].size(); ++i) {
        const LabeledBox& lb = seq.truth[f][i];
        gts[lb.class_id].push_back({image_base + f, lb.box});
        gt_speed[lb.class_id].push_back(strata[f][i]);
        ++report.gt_total;
        switch (strata[f][i]) {
          case Speed::slow: ++report.gt_slow; break;
          case Speed::medium: ++report.gt_medium; break;
          case Speed::fast: ++report.gt_fast; break;
        }
      }
    }
    for (const Detection& d : seq.detections) {
      if (d.frame < 0 || d.frame >= static_cast<int>(seq.truth.size())) continue;
      dets[d.class_id].push_back({image_base + d.frame, d.box, d.score});
    }
    image_base += static_cast<int>(seq.truth.size());
  }

  std::vector<double> overall;
  std::map<Speed, std::vector<double>> stratified;
  for (const auto& [cls, class_gts] : gts) {
    const std::vector<DetRef>& class_dets = dets[cls];
    const std::vector<int> match =
        match_detections(class_dets, class_gts, config.iou_match);
    const double ap = ap_from_ranked(ranked_tp(class_dets, match),
                                     static_cast<int>(class_gts.size()));
    report.class_ap[cls] = ap;
    overall.push_back(ap);

    const std::vector<Speed>& speeds = gt_speed[cls];
    for (Speed s : {Speed::slow, Speed::medium, Speed::fast}) {
      const int n_gt = static_cast<int>(std::ranges::count(speeds, s));
      if (n_gt == 0) continue;
      std::vector<DetRef> kept;
      std::vector<int> kept_match;
      for (std::size_t d = 0; d < class_dets.size(); ++d) {
        if (match[d] >= 0 && speeds[match[d]] == s) {
          kept.push_back(class_dets[d]);
          kept_match.push_back(match[d]);
        }
      }
      stratified[s].push_back(ap_from_ranked(ranked_tp(kept, kept_match), n_gt));
    }
  }
  report.map = mean_of(overall);
  report.map_slow = mean_of(stratified[Speed::slow]);
  report.map_medium = mean_of(stratified[Speed::medium]);
  report.map_fast = mean_of(stratified[Speed::fast]);
  return report;
}

std::string report_json(const EvalReport& r) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [cls, ap] : r.class_ap) classes[std::to_string(cls)] = ap;
  nlohmann::json j = {
      {"class_ap", classes},
      {"mAP", r.map},
      {"mAP_slow", r.map_slow},
      {"mAP_medium", r.map_medium},
      {"mAP_fast", r.map_fast},
      {"gt_counts",
       {{"total", r.gt_total},
        {"slow", r.gt_slow},
        {"medium", r.gt_medium},
        {"fast", r.gt_fast}}}};
  return j.dump(2);
}

void write_class_ap_csv(std::ostream& out, const EvalReport& report) {
  out << "class,ap\n";
  for (const auto& [cls, ap] : report.class_ap) out << cls << ',' << ap << '\n';
}

}  // namespace ssvd
