#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "avfusion/boxes.hpp"
#include "avfusion/detect_head.hpp"
#include "avfusion/graph.hpp"

namespace avf {

enum class Slot : std::uint8_t { negative, positive, ignore };

struct SlotTarget {
  Slot role = Slot::negative;
  double ox = 0.0, oy = 0.0, sw = 0.0, sh = 0.0;
  VehicleClass cls = VehicleClass::moving;
  double conf = 0.0;
};

struct TargetGrid {
  std::size_t h = 0, w = 0, k = 0;
  std::vector<SlotTarget> slots;  // row-major (i, j, anchor)

  std::size_t index(std::size_t i, std::size_t j, std::size_t a) const { return (i * w + j) * k + a; }
  SlotTarget& at(std::size_t i, std::size_t j, std::size_t a) { return slots[index(i, j, a)]; }
  const SlotTarget& at(std::size_t i, std::size_t j, std::size_t a) const { return slots[index(i, j, a)]; }

  std::size_t count(Slot role) const {
    return static_cast<std::size_t>(
        std::count_if(slots.begin(), slots.end(), [role](const SlotTarget& s) { return s.role == role; }));
  }
};

/// Grid cell (row, col) containing the box centre.
inline std::pair<std::size_t, std::size_t> center_cell(const BoundingBox& b, std::size_t H, std::size_t W) {
  const auto cell = [](double v, std::size_t n) {
    return std::min(static_cast<std::size_t>(std::floor(v * static_cast<double>(n))), n - 1);
  };
  return {cell(b.cy, H), cell(b.cx, W)};
}

/// Each box goes to the cell holding its centre and to the free anchor of best
/// shape IoU there (a taken best anchor falls through to the next best).
/// Remaining anchors of that cell whose shape IoU with any of its boxes
/// exceeds 0.5 are ignored; everything else is negative.
inline TargetGrid assign_targets(std::span<const BoundingBox> gt, const AnchorSet& anchors, std::size_t H,
                                 std::size_t W) {
  anchors.validate();
  if (H == 0 || W == 0) throw std::invalid_argument("assign_targets: empty grid");
  TargetGrid t{H, W, anchors.size(), std::vector<SlotTarget>(H * W * anchors.size())};
  const std::size_t K = anchors.size();
  const double below_one = std::nextafter(1.0, 0.0);

  for (std::size_t n = 0; n < gt.size(); ++n) {
    const BoundingBox& b = gt[n];
    if (!(b.w > 0.0) || !(b.h > 0.0))
      throw std::invalid_argument("assign_targets: box " + std::to_string(n) + " has zero area");
    if (!is_valid(b)) throw std::invalid_argument("assign_targets: box " + std::to_string(n) + " is out of range");
    const auto [i, j] = center_cell(b, H, W);
    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return shape_iou(b.w, b.h, anchors.priors[x].first, anchors.priors[x].second) >
             shape_iou(b.w, b.h, anchors.priors[y].first, anchors.priors[y].second);
    });
    const auto free = std::find_if(order.begin(), order.end(),
                                   [&](std::size_t a) { return t.at(i, j, a).role != Slot::positive; });
    if (free == order.end())
      throw std::invalid_argument("assign_targets: more than " + std::to_string(K) + " boxes share cell (" +
                                  std::to_string(i) + ", " + std::to_string(j) + ")");
    SlotTarget& s = t.at(i, j, *free);
    s.role = Slot::positive;
    s.ox = std::min(b.cx * static_cast<double>(W) - static_cast<double>(j), below_one);
    s.oy = std::min(b.cy * static_cast<double>(H) - static_cast<double>(i), below_one);
    s.sw = std::log(b.w / anchors.priors[*free].first);
    s.sh = std::log(b.h / anchors.priors[*free].second);
    s.cls = b.cls;
    s.conf = 1.0;
  }

  for (const BoundingBox& b : gt) {
    const auto [i, j] = center_cell(b, H, W);
    for (std::size_t a = 0; a < K; ++a) {
      SlotTarget& s = t.at(i, j, a);
      if (s.role == Slot::negative && shape_iou(b.w, b.h, anchors.priors[a].first, anchors.priors[a].second) > 0.5)
        s.role = Slot::ignore;
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Loss terms

struct FocalConfig {
  double alpha = 0.25;
  double gamma = 2.0;
};

struct LossTerms {
  double focal = 0.0, x = 0.0, y = 0.0, w = 0.0, h = 0.0, conf = 0.0;

  double total() const { return focal + x + y + w + h + conf; }

  LossTerms& operator+=(const LossTerms& o) {
    focal += o.focal, x += o.x, y += o.y, w += o.w, h += o.h, conf += o.conf;
    return *this;
  }
  LossTerms& operator*=(double s) {
    focal *= s, x *= s, y *= s, w *= s, h *= s, conf *= s;
    return *this;
  }
};

inline double smooth_l1(double d) { return std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5; }
inline double smooth_l1_grad(double d) { return std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0); }

/// -alpha (1 - p_t)^gamma log p_t with p_t = softmax(logits)[target]. When
/// `grad` is non-empty it receives d/dlogits.
inline double focal_loss(std::span<const double> logits, std::size_t target, double alpha, double gamma,
                         std::span<double> grad = {}) {
  if (target >= logits.size()) throw std::invalid_argument("focal_loss: target class out of range");
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  const double log_p = logits[target] - m - std::log(sum);
  const double p = std::exp(log_p);
  const double q = -std::expm1(log_p);  // 1 - p without cancellation
  const double loss = -alpha * std::pow(q, gamma) * log_p;
  if (!grad.empty()) {
    // dL/dz_j = -alpha [q^gamma - gamma q^(gamma-1) p log p] (delta_tj - s_j)
    const double tail = (gamma != 0.0 && q > 0.0) ? gamma * std::pow(q, gamma - 1.0) * p * log_p : 0.0;
    const double c = -alpha * (std::pow(q, gamma) - tail);
    for (std::size_t j = 0; j < logits.size(); ++j) {
      const double s = std::exp(logits[j] - m) / sum;
      grad[j] = c * ((j == target ? 1.0 : 0.0) - s);
    }
  }
  return loss;
}

/// All six terms for one sample's raw head output [H, W, K, 8]. Focal and box
/// terms are averaged over positives (0 without positives); the confidence
/// term is averaged over non-ignored slots. Writes d(total)/d(raw) into `grad`
/// when given.
template <class T>
LossTerms detection_loss(const Tensor<T>& raw, const TargetGrid& targets, const FocalConfig& focal = {},
                         Tensor<T>* grad = nullptr) {
  if (raw.shape() != Shape{targets.h, targets.w, targets.k, kRawPerAnchor})
    throw ShapeError("detection_loss: raw output " + to_string(raw.shape()) + " does not match the target grid");
  const std::size_t positives = targets.count(Slot::positive);
  const std::size_t counted = targets.slots.size() - targets.count(Slot::ignore);
  const double inv_pos = positives ? 1.0 / static_cast<double>(positives) : 0.0;
  const double inv_cnt = counted ? 1.0 / static_cast<double>(counted) : 0.0;
  if (grad) *grad = Tensor<T>(raw.shape());

  LossTerms l;
  for (std::size_t s = 0; s < targets.slots.size(); ++s) {
    const SlotTarget& st = targets.slots[s];
    if (st.role == Slot::ignore) continue;
    const T* r = raw.ptr() + s * kRawPerAnchor;
    T* gr = grad ? grad->ptr() + s * kRawPerAnchor : nullptr;

    const double c = ops::sigmoid<double>(r[4]);
    l.conf += (c - st.conf) * (c - st.conf) * inv_cnt;
    if (gr) gr[4] = static_cast<T>(2.0 * (c - st.conf) * c * (1.0 - c) * inv_cnt);
    if (st.role != Slot::positive) continue;

    const double sx = ops::sigmoid<double>(r[0]), sy = ops::sigmoid<double>(r[1]);
    const double dx = sx - st.ox, dy = sy - st.oy;
    const double dw = double(r[2]) - st.sw, dh = double(r[3]) - st.sh;
    l.x += smooth_l1(dx) * inv_pos;
    l.y += smooth_l1(dy) * inv_pos;
    l.w += smooth_l1(dw) * inv_pos;
    l.h += smooth_l1(dh) * inv_pos;
    const double z[kNumClasses] = {double(r[5]), double(r[6]), double(r[7])};
    double gz[kNumClasses];
    l.focal += focal_loss(z, class_index(st.cls), focal.alpha, focal.gamma,
                          gr ? std::span<double>(gz) : std::span<double>()) * inv_pos;
    if (gr) {
      gr[0] = static_cast<T>(smooth_l1_grad(dx) * sx * (1.0 - sx) * inv_pos);
      gr[1] = static_cast<T>(smooth_l1_grad(dy) * sy * (1.0 - sy) * inv_pos);
      gr[2] = static_cast<T>(smooth_l1_grad(dw) * inv_pos);
      gr[3] = static_cast<T>(smooth_l1_grad(dh) * inv_pos);
      for (std::size_t j = 0; j < kNumClasses; ++j) gr[5 + j] = static_cast<T>(gz[j] * inv_pos);
    }
  }
  return l;
}

/// (l_x, l_y, l_w, l_h, l_conf); the focal field is left at 0.
template <class T>
LossTerms box_conf_losses(const Tensor<T>& raw, const TargetGrid& targets) {
  LossTerms l = detection_loss(raw, targets);
  l.focal = 0.0;
  return l;
}

template <class T>
double total_loss(const Tensor<T>& raw, const TargetGrid& targets, const FocalConfig& focal = {}) {
  return detection_loss(raw, targets, focal).total();
}

/// Scalar [1] node holding the total loss; `terms` receives the breakdown.
template <class T>
Var detection_loss(Graph<T>& g, Var raw, const TargetGrid& targets, const FocalConfig& focal = {},
                   LossTerms* terms = nullptr) {
  Tensor<T> grad;
  const LossTerms l = detection_loss(g.value(raw), targets, focal, g.requires_grad(raw) ? &grad : nullptr);
  if (terms) *terms = l;
  return g.custom(Tensor<T>({1}, static_cast<T>(l.total())), {raw},
                  [raw, grad = std::move(grad)](Graph<T>& gg, const Tensor<T>& gy) {
                    Tensor<T> gr = grad;
                    for (auto& v : gr.data()) v *= gy[0];
                    gg.accumulate(raw, gr);
                  }, "detection_loss");
}

}  // namespace avf
