#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "avfusion/boxes.hpp"
#include "avfusion/graph.hpp"
#include "avfusion/rng.hpp"

namespace avf {

// ---------------------------------------------------------------------------
// Anchor clustering

struct KMeansResult {
  AnchorSet anchors;
  std::vector<double> objective;  // sum of 1 - IoU after each assignment step
  std::size_t iterations = 0;
};

/// Lloyd clustering of box shapes under d(b, c) = 1 - IoU of origin-centred
/// boxes, with k-means++ seeding. A cluster keeps its previous centroid when
/// the coordinate mean would raise that cluster's cost, so the objective never
/// increases.
inline KMeansResult kmeans_anchors(std::span<const std::pair<double, double>> boxes, std::size_t k = 5,
                                   std::uint64_t seed = 0, std::size_t max_iterations = 100) {
  if (k == 0) throw std::invalid_argument("kmeans_anchors: k must be positive");
  for (const auto& [w, h] : boxes)
    if (!(w > 0.0) || !(h > 0.0)) throw std::invalid_argument("kmeans_anchors: box sizes must be positive");
  const std::set<std::pair<double, double>> distinct(boxes.begin(), boxes.end());
  if (distinct.size() < k)
    throw std::invalid_argument("kmeans_anchors: need at least " + std::to_string(k) +
                                " distinct boxes, got " + std::to_string(distinct.size()));

  auto dist = [](const std::pair<double, double>& b, const std::pair<double, double>& c) {
    return 1.0 - shape_iou(b.first, b.second, c.first, c.second);
  };
  const std::size_t n = boxes.size();
  Rng rng(seed);

  std::vector<std::pair<double, double>> centroids{boxes[rng.below(n)]};
  std::vector<double> nearest(n);
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = std::numeric_limits<double>::max();
      for (const auto& c : centroids) d = std::min(d, dist(boxes[i], c));
      nearest[i] = d * d;
      total += nearest[i];
    }
    double u = rng.uniform() * total;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (nearest[i] <= 0.0) continue;
      pick = i;
      if (u < nearest[i]) break;
      u -= nearest[i];
    }
    centroids.push_back(boxes[pick]);
  }

  KMeansResult result;
  std::vector<std::size_t> assign(n, k), previous;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = dist(boxes[i], centroids[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = dist(boxes[i], centroids[c]);
        if (d < best_d) best_d = d, best = c;
      }
      assign[i] = best;
      objective += best_d;
    }
    result.objective.push_back(objective);
    result.iterations = it + 1;
    if (assign == previous) break;
    previous = assign;

    for (std::size_t c = 0; c < k; ++c) {
      double sw = 0.0, sh = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (assign[i] == c) sw += boxes[i].first, sh += boxes[i].second, ++count;
      if (count == 0) continue;
      const std::pair<double, double> mean{sw / static_cast<double>(count), sh / static_cast<double>(count)};
      double cost_mean = 0.0, cost_old = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (assign[i] == c) cost_mean += dist(boxes[i], mean), cost_old += dist(boxes[i], centroids[c]);
      if (cost_mean <= cost_old) centroids[c] = mean;
    }
  }
  result.anchors.priors = centroids;
  result.anchors.canonicalize();
  return result;
}

// ---------------------------------------------------------------------------
// Region proposal head

inline constexpr std::size_t kRawPerAnchor = 4 + 1 + kNumClasses;

/// One 1x1 convolution over fused[H, W, C]: weight [C, K * 8], bias [K * 8].
/// Output [H, W, K, 8] of raw (t_x, t_y, t_w, t_h, t_conf, 3 class logits).
template <class T>
Var rpn_forward(Graph<T>& g, Var fused, Var weight, Var bias) {
  const Shape s = g.value(fused).shape();
  if (s.size() != 3) throw ShapeError("rpn_forward: fused features must be [H, W, C]");
  const Shape ws = g.value(weight).shape();
  if (ws.size() != 2 || ws[0] != s[2] || ws[1] % kRawPerAnchor != 0)
    throw ShapeError("rpn_forward: weight " + to_string(ws) + " does not fit features " + to_string(s));
  const std::size_t k = ws[1] / kRawPerAnchor;
  Var flat = g.reshape(fused, {s[0] * s[1], s[2]});
  Var out = g.add_row_bias(g.matmul(flat, weight), bias);
  return g.reshape(out, {s[0], s[1], k, kRawPerAnchor});
}

template <class T>
Tensor<T> rpn_forward(const Tensor<T>& fused, const Tensor<T>& weight, const Tensor<T>& bias) {
  Graph<T> g;
  return g.value(rpn_forward(g, g.leaf(fused), g.leaf(weight), g.leaf(bias)));
}

// ---------------------------------------------------------------------------
// Decoding and suppression

/// Decodes raw[H, W, K, 8] into one detection per (cell, anchor) in row-major
/// order: cx = (j + sigmoid(t_x)) / W, cy = (i + sigmoid(t_y)) / H,
/// w = p_w exp(t_w), h = p_h exp(t_h) (clamped into (0, 1]),
/// confidence = sigmoid(t_conf), class scores = softmax(logits).
template <class T>
std::vector<Detection> decode_boxes(const Tensor<T>& raw, const AnchorSet& anchors) {
  if (raw.rank() != 4 || raw.dim(2) != anchors.size() || raw.dim(3) != kRawPerAnchor)
    throw ShapeError("decode_boxes: raw output " + to_string(raw.shape()) + " does not match " +
                     std::to_string(anchors.size()) + " anchors");
  const std::size_t H = raw.dim(0), W = raw.dim(1), K = raw.dim(2);
  std::vector<Detection> out;
  out.reserve(H * W * K);
  auto size = [](double prior, double t) {
    return std::clamp(prior * std::exp(t), std::numeric_limits<double>::min(), 1.0);
  };
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t a = 0; a < K; ++a) {
        const T* r = raw.ptr() + ((i * W + j) * K + a) * kRawPerAnchor;
        Detection d;
        d.box.cx = (static_cast<double>(j) + ops::sigmoid<double>(r[0])) / static_cast<double>(W);
        d.box.cy = (static_cast<double>(i) + ops::sigmoid<double>(r[1])) / static_cast<double>(H);
        d.box.w = size(anchors.priors[a].first, r[2]);
        d.box.h = size(anchors.priors[a].second, r[3]);
        d.confidence = ops::sigmoid<double>(r[4]);
        const double m = std::max({double(r[5]), double(r[6]), double(r[7])});
        double sum = 0.0;
        for (std::size_t c = 0; c < kNumClasses; ++c) sum += (d.class_scores[c] = std::exp(double(r[5 + c]) - m));
        std::size_t best = 0;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
          d.class_scores[c] /= sum;
          if (d.class_scores[c] > d.class_scores[best]) best = c;
        }
        d.box.cls = static_cast<VehicleClass>(best);
        out.push_back(d);
      }
  return out;
}

/// Per-class greedy suppression. Detections below conf_thresh are dropped;
/// within a class the highest confidence survives and suppresses others with
/// IoU > iou_thresh (ties favour the lower input index). Output is sorted by
/// confidence, descending.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh = 0.5,
                                  double conf_thresh = 0.25) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].confidence >= conf_thresh) order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    bool keep = true;
    for (std::size_t k : kept)
      if (dets[k].box.cls == dets[idx].box.cls && iou(dets[k].box, dets[idx].box) > iou_thresh) {
        keep = false;
        break;
      }
    if (keep) kept.push_back(idx);
  }
  std::vector<Detection> out;
  out.reserve(kept.size());
  for (std::size_t k : kept) out.push_back(dets[k]);
  return out;
}

}  // namespace avf
