#include "ssvd/postprocess.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>

#include "json.hpp"
#include "ssvd/errors.hpp"
#include "ssvd/losses.hpp"

namespace ssvd {

std::string to_string(StreamTag tag) {
  switch (tag) {
    case StreamTag::single: return "single";
    case StreamTag::motion: return "motion";
    case StreamTag::sampling: return "sampling";
  }
  return "single";
}

StreamTag parse_stream_tag(const std::string& name) {
  if (name == "single") return StreamTag::single;
  if (name == "motion") return StreamTag::motion;
  if (name == "sampling") return StreamTag::sampling;
  throw ValidationError("unknown stream tag '" + name + "'");
}

DetectionSet decode_detections(const HeadOutputs& outputs,
                               const std::vector<Anchor>& anchors,
                               int image_height, int image_width,
                               const DecodeConfig& config, int frame,
                               StreamTag stream) {
  if (outputs.anchor_count() != anchors.size()) {
    throw DimensionError("head outputs cover " +
                         std::to_string(outputs.anchor_count()) +
                         " anchors, anchor list has " +
                         std::to_string(anchors.size()));
  }
  const int k = outputs.num_classes;
  const int na = outputs.anchors;
  DetectionSet out;
  std::size_t level_base = 0;
  for (std::size_t li = 0; li < outputs.logits.size(); ++li) {
    const Tensor& lg = outputs.logits[li];
    const Tensor& dl = outputs.deltas[li];
    struct Cand {
      double score;
      std::size_t anchor;
      int cls;
    };
    std::vector<Cand> cands;
    for (int y = 0; y < lg.height(); ++y) {
      for (int x = 0; x < lg.width(); ++x) {
        for (int a = 0; a < na; ++a) {
          const std::size_t idx =
              level_base + (static_cast<std::size_t>(y) * lg.width() + x) * na + a;
          for (int c = 0; c < k; ++c) {
            const double s = sigmoid(lg.at(0, a * k + c, y, x));
            if (s >= config.score_threshold) cands.push_back({s, idx, c});
          }
        }
      }
    }
    // cands are already in (anchor, class) order, so a stable sort keeps the
    // index tie rule.
    std::ranges::stable_sort(cands, [](const Cand& a, const Cand& b) {
      return a.score > b.score;
    });
    if (static_cast<int>(cands.size()) > config.topk_per_level) {
      cands.resize(static_cast<std::size_t>(std::max(config.topk_per_level, 0)));
    }
    for (const Cand& c : cands) {
      const Anchor& anchor = anchors[c.anchor];
      const std::size_t local = c.anchor - level_base;
      const int a = static_cast<int>(local % na);
      const int cell = static_cast<int>(local / na);
      const int y = cell / lg.width();
      const int x = cell % lg.width();
      const Deltas d{dl.at(0, a * 4, y, x), dl.at(0, a * 4 + 1, y, x),
                     dl.at(0, a * 4 + 2, y, x), dl.at(0, a * 4 + 3, y, x)};
      Box b = decode_box(anchor.box, d);
      b.x1 = std::clamp(b.x1, 0.0, static_cast<double>(image_width));
      b.x2 = std::clamp(b.x2, 0.0, static_cast<double>(image_width));
      b.y1 = std::clamp(b.y1, 0.0, static_cast<double>(image_height));
      b.y2 = std::clamp(b.y2, 0.0, static_cast<double>(image_height));
      if (!b.valid()) continue;
      out.push_back({b, c.cls, c.score, frame, stream});
    }
    level_base += static_cast<std::size_t>(lg.height()) * lg.width() * na;
  }
  return out;
}

DetectionSet nms(const DetectionSet& dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<char> removed(dets.size(), 0);
  DetectionSet out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t a = order[i];
    if (removed[a]) continue;
    out.push_back(dets[a]);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t b = order[j];
      if (!removed[b] && dets[b].class_id == dets[a].class_id &&
          iou(dets[a].box, dets[b].box) > iou_threshold) {
        removed[b] = 1;
      }
    }
  }
  return out;
}

DetectionSet late_fuse(const DetectionSet& motion_dets,
                       const DetectionSet& sampling_dets,
                       double iou_threshold) {
  DetectionSet all = motion_dets;
  all.insert(all.end(), sampling_dets.begin(), sampling_dets.end());
  return nms(all, iou_threshold);
}

namespace {

struct Node {
  int frame;  // position in per_frame
  int index;  // position in that frame's set
};

// Seq-NMS restricted to one class.
void seq_nms_class(const std::vector<DetectionSet>& per_frame, int cls,
                   const SeqNmsConfig& config, std::vector<Tubelet>& tubelets,
                   std::vector<std::vector<double>>& rescored,
                   std::vector<std::vector<char>>& dropped) {
  const int nf = static_cast<int>(per_frame.size());
  std::vector<std::vector<int>> nodes(static_cast<std::size_t>(nf));
  for (int f = 0; f < nf; ++f) {
    for (int i = 0; i < static_cast<int>(per_frame[f].size()); ++i) {
      if (per_frame[f][i].class_id == cls) nodes[f].push_back(i);
    }
  }
  // links[f][a] = positions in nodes[f-1] linked to nodes[f][a].
  std::vector<std::vector<std::vector<int>>> links(static_cast<std::size_t>(nf));
  for (int f = 1; f < nf; ++f) {
    links[f].resize(nodes[f].size());
    for (std::size_t a = 0; a < nodes[f].size(); ++a) {
      const Box& cur = per_frame[f][nodes[f][a]].box;
      for (std::size_t b = 0; b < nodes[f - 1].size(); ++b) {
        if (iou(per_frame[f - 1][nodes[f - 1][b]].box, cur) >= config.link_iou) {
          links[f][a].push_back(static_cast<int>(b));
        }
      }
    }
  }
  std::vector<std::vector<char>> active(static_cast<std::size_t>(nf));
  for (int f = 0; f < nf; ++f) active[f].assign(nodes[f].size(), 1);

  auto any_link = [&] {
    for (int f = 1; f < nf; ++f) {
      for (std::size_t a = 0; a < nodes[f].size(); ++a) {
        if (!active[f][a]) continue;
        for (int b : links[f][a]) {
          if (active[f - 1][b]) return true;
        }
      }
    }
    return false;
  };

  std::vector<std::vector<double>> best(static_cast<std::size_t>(nf));
  std::vector<std::vector<int>> prev(static_cast<std::size_t>(nf));
  while (any_link()) {
    double top = -1.0;
    Node end{-1, -1};
    for (int f = 0; f < nf; ++f) {
      best[f].assign(nodes[f].size(), 0.0);
      prev[f].assign(nodes[f].size(), -1);
      for (std::size_t a = 0; a < nodes[f].size(); ++a) {
        if (!active[f][a]) continue;
        double carry = 0.0;
        if (f > 0) {
          for (int b : links[f][a]) {
            if (active[f - 1][b] && best[f - 1][b] > carry) {
              carry = best[f - 1][b];
              prev[f][a] = b;
            }
          }
        }
        best[f][a] = per_frame[f][nodes[f][a]].score + carry;
        if (best[f][a] > top) {
          top = best[f][a];
          end = {f, static_cast<int>(a)};
        }
      }
    }
    std::vector<Node> path;
    for (Node n = end; n.index >= 0;) {
      path.push_back(n);
      const int p = prev[n.frame][n.index];
      n = {n.frame - 1, p};
    }
    std::ranges::reverse(path);

    double sum = 0.0;
    double mx = 0.0;
    for (const Node& n : path) {
      const double s = per_frame[n.frame][nodes[n.frame][n.index]].score;
      sum += s;
      mx = std::max(mx, s);
    }
    const double value =
        config.rescore == Rescore::mean ? sum / static_cast<double>(path.size())
                                        : mx;
    Tubelet tube;
    tube.class_id = cls;
    tube.score = value;
    for (const Node& n : path) {
      const int src = nodes[n.frame][n.index];
      rescored[n.frame][src] = value;
      Detection d = per_frame[n.frame][src];
      d.score = value;
      tube.members.push_back(d);
      tube.source_index.push_back(src);
      active[n.frame][n.index] = 0;
      const Box& keep = per_frame[n.frame][src].box;
      for (std::size_t a = 0; a < nodes[n.frame].size(); ++a) {
        if (!active[n.frame][a]) continue;
        const int other = nodes[n.frame][a];
        if (iou(per_frame[n.frame][other].box, keep) > config.suppress_iou) {
          active[n.frame][a] = 0;
          dropped[n.frame][other] = 1;
        }
      }
    }
    tubelets.push_back(std::move(tube));
  }
}

}  // namespace

SeqNmsResult seq_nms(const std::vector<DetectionSet>& per_frame,
                     const SeqNmsConfig& config) {
  std::vector<std::vector<double>> rescored(per_frame.size());
  std::vector<std::vector<char>> dropped(per_frame.size());
  int max_class = -1;
  for (std::size_t f = 0; f < per_frame.size(); ++f) {
    rescored[f].resize(per_frame[f].size());
    dropped[f].assign(per_frame[f].size(), 0);
    for (std::size_t i = 0; i < per_frame[f].size(); ++i) {
      rescored[f][i] = per_frame[f][i].score;
      max_class = std::max(max_class, per_frame[f][i].class_id);
    }
  }
  SeqNmsResult result;
  for (int c = 0; c <= max_class; ++c) {
    seq_nms_class(per_frame, c, config, result.tubelets, rescored, dropped);
  }
  result.frames.resize(per_frame.size());
  for (std::size_t f = 0; f < per_frame.size(); ++f) {
    for (std::size_t i = 0; i < per_frame[f].size(); ++i) {
      if (dropped[f][i]) continue;
      Detection d = per_frame[f][i];
      d.score = rescored[f][i];
      result.frames[f].push_back(d);
    }
  }
  return result;
}

namespace {

nlohmann::json detection_json(const Detection& d) {
  return {{"frame", d.frame}, {"class", d.class_id}, {"score", d.score},
          {"x1", d.box.x1},   {"y1", d.box.y1},      {"x2", d.box.x2},
          {"y2", d.box.y2},   {"stream", to_string(d.stream)}};
}

}  // namespace

void write_detections_jsonl(std::ostream& out, const DetectionSet& dets) {
  for (const Detection& d : dets) out << detection_json(d).dump() << '\n';
}

DetectionSet read_detections_jsonl(std::istream& in) {
  DetectionSet out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Detection d;
      d.frame = j.at("frame").get<int>();
      d.class_id = j.at("class").get<int>();
      d.score = j.at("score").get<double>();
      d.box = {j.at("x1").get<double>(), j.at("y1").get<double>(),
               j.at("x2").get<double>(), j.at("y2").get<double>()};
      d.stream = parse_stream_tag(j.value("stream", std::string("single")));
      out.push_back(d);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("detections line " + std::to_string(lineno) + ": " +
                    e.what());
    }
  }
  return out;
}

void write_tubelets_jsonl(std::ostream& out,
                          const std::vector<Tubelet>& tubelets) {
  for (const Tubelet& t : tubelets) {
    nlohmann::json members = nlohmann::json::array();
    for (const Detection& d : t.members) members.push_back(detection_json(d));
    out << nlohmann::json{{"class", t.class_id},
                          {"score", t.score},
                          {"members", members}}
               .dump()
        << '\n';
  }
}

}  // namespace ssvd
