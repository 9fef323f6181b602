#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "avfusion/boxes.hpp"

namespace avf {

struct ImageDetections {
  std::string sample_id;
  std::vector<Detection> detections;
};

struct ImageTruth {
  std::string sample_id;
  std::vector<BoundingBox> boxes;
};

struct PrPoint {
  double score, recall, precision;
};

struct ClassReport {
  std::optional<double> ap;  // empty when the class has no ground truth
  std::vector<PrPoint> curve;
  std::size_t tp = 0, fp = 0, fn = 0, n_gt = 0;
};

struct EvalReport {
  std::array<ClassReport, kNumClasses> classes;
  double map = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
  std::vector<std::string> warnings;
};

/// All-point interpolated area under the PR curve from TP/FP flags in rank
/// order: sum over i of (r_i - r_{i-1}) * max_{j >= i} p_j.
inline double average_precision(const std::vector<bool>& tp_in_rank_order, std::size_t n_gt) {
  if (n_gt == 0) throw std::invalid_argument("average_precision: no ground truth");
  const std::size_t n = tp_in_rank_order.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += tp_in_rank_order[i] ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev) * precision[i];
    prev = recall[i];
  }
  return ap;
}

namespace detail {

struct Ranked {
  double score;
  std::size_t sample, index;
};

/// Index of the unmatched truth with the highest IoU >= thresh (lowest index on
/// ties), or truths.size() when none qualifies.
inline std::size_t best_unmatched(const BoundingBox& box, const std::vector<const BoundingBox*>& truths,
                                  const std::vector<bool>& used, double thresh) {
  std::size_t best = truths.size();
  double best_iou = 0.0;
  for (std::size_t g = 0; g < truths.size(); ++g) {
    if (used[g]) continue;
    const double v = iou(box, *truths[g]);
    if (v >= thresh && (best == truths.size() || v > best_iou)) best = g, best_iou = v;
  }
  return best;
}

/// Greedy matching of one class pooled over samples. Returns TP flags in rank
/// order, plus the ranking itself.
inline std::vector<bool> match_class(const std::vector<ImageDetections>& dets,
                                     const std::vector<std::vector<const BoundingBox*>>& gts,
                                     VehicleClass cls, double iou_thresh, std::vector<Ranked>& ranking) {
  ranking.clear();
  for (std::size_t s = 0; s < dets.size(); ++s)
    for (std::size_t i = 0; i < dets[s].detections.size(); ++i)
      if (dets[s].detections[i].box.cls == cls) ranking.push_back({dets[s].detections[i].score(), s, i});
  std::sort(ranking.begin(), ranking.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.sample != b.sample) return a.sample < b.sample;
    return a.index < b.index;
  });
  std::vector<std::vector<bool>> used(gts.size());
  for (std::size_t s = 0; s < gts.size(); ++s) used[s].assign(gts[s].size(), false);
  std::vector<bool> flags;
  flags.reserve(ranking.size());
  for (const Ranked& r : ranking) {
    const BoundingBox& box = dets[r.sample].detections[r.index].box;
    const std::size_t best = best_unmatched(box, gts[r.sample], used[r.sample], iou_thresh);
    if (best < gts[r.sample].size()) used[r.sample][best] = true;
    flags.push_back(best < gts[r.sample].size());
  }
  return flags;
}

}  // namespace detail

/// Pooled per-class AP at the given IoU threshold and their unweighted mean.
/// Detections and truths are paired by sample id; the position of a sample in
/// `truths` is its tie-break order.
inline EvalReport evaluate(const std::vector<ImageDetections>& detections, const std::vector<ImageTruth>& truths,
                           double iou_thresh = 0.5) {
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t s = 0; s < truths.size(); ++s)
    if (!position.emplace(truths[s].sample_id, s).second)
      throw std::invalid_argument("evaluate: duplicate sample id '" + truths[s].sample_id + "'");
  std::vector<ImageDetections> aligned(truths.size());
  for (std::size_t s = 0; s < truths.size(); ++s) aligned[s].sample_id = truths[s].sample_id;
  for (const auto& d : detections) {
    const auto it = position.find(d.sample_id);
    if (it == position.end())
      throw std::invalid_argument("evaluate: detections for unknown sample '" + d.sample_id + "'");
    auto& slot = aligned[it->second].detections;
    slot.insert(slot.end(), d.detections.begin(), d.detections.end());
  }

  EvalReport report;
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto cls = static_cast<VehicleClass>(c);
    std::vector<std::vector<const BoundingBox*>> gts(truths.size());
    ClassReport& cr = report.classes[c];
    for (std::size_t s = 0; s < truths.size(); ++s)
      for (const auto& b : truths[s].boxes)
        if (b.cls == cls) gts[s].push_back(&b), ++cr.n_gt;
    std::vector<detail::Ranked> ranking;
    const std::vector<bool> flags = detail::match_class(aligned, gts, cls, iou_thresh, ranking);
    for (std::size_t i = 0; i < flags.size(); ++i) {
      (flags[i] ? cr.tp : cr.fp) += 1;
      if (cr.n_gt > 0)
        cr.curve.push_back({ranking[i].score, static_cast<double>(cr.tp) / static_cast<double>(cr.n_gt),
                            static_cast<double>(cr.tp) / static_cast<double>(i + 1)});
    }
    cr.fn = cr.n_gt - cr.tp;
    report.tp += cr.tp, report.fp += cr.fp, report.fn += cr.fn;
    if (cr.n_gt == 0) {
      report.warnings.push_back(std::string("class ") + class_name(cls) +
                                " has no ground truth; excluded from mAP");
      continue;
    }
    cr.ap = average_precision(flags, cr.n_gt);
    sum += *cr.ap;
    ++defined;
  }
  if (defined == 0) report.warnings.push_back("no class has ground truth; mAP is 0");
  report.map = defined ? sum / static_cast<double>(defined) : 0.0;
  return report;
}

/// AP of one image and class, taking `ranked` as the ranking order.
inline std::optional<double> average_precision(const std::vector<Detection>& ranked,
                                               const std::vector<BoundingBox>& gts, VehicleClass cls,
                                               double iou_thresh = 0.5) {
  std::vector<const BoundingBox*> truth;
  for (const auto& b : gts)
    if (b.cls == cls) truth.push_back(&b);
  if (truth.empty()) return std::nullopt;
  std::vector<bool> used(truth.size(), false), flags;
  for (const auto& d : ranked) {
    if (d.box.cls != cls) continue;
    const std::size_t best = detail::best_unmatched(d.box, truth, used, iou_thresh);
    if (best < truth.size()) used[best] = true;
    flags.push_back(best < truth.size());
  }
  return average_precision(flags, truth.size());
}

/// Rows (t_seconds, x_center, y_center, class, confidence), one per detection.
inline std::string export_trajectory(const std::vector<std::vector<Detection>>& per_frame, double fps) {
  if (!(fps > 0.0)) throw std::invalid_argument("export_trajectory: fps must be positive");
  std::string out = "t_seconds,x_center,y_center,class,confidence\n";
  char line[160];
  for (std::size_t f = 0; f < per_frame.size(); ++f)
    for (const auto& d : per_frame[f]) {
      std::snprintf(line, sizeof line, "%.6f,%.6f,%.6f,%s,%.6f\n", static_cast<double>(f) / fps, d.box.cx,
                    d.box.cy, class_name(d.box.cls), d.confidence);
      out += line;
    }
  return out;
}

}  // namespace avf
