#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace avf {

enum class VehicleClass : std::uint8_t { moving = 0, idling = 1, engine_off = 2 };

inline constexpr std::size_t kNumClasses = 3;

inline const char* class_name(VehicleClass c) {
  switch (c) {
    case VehicleClass::moving: return "moving";
    case VehicleClass::idling: return "idling";
    case VehicleClass::engine_off: return "engine_off";
  }
  return "?";
}

inline VehicleClass parse_class(std::string_view name) {
  if (name == "moving") return VehicleClass::moving;
  if (name == "idling") return VehicleClass::idling;
  if (name == "engine_off") return VehicleClass::engine_off;
  throw std::invalid_argument("unknown vehicle class '" + std::string(name) + "'");
}

inline std::size_t class_index(VehicleClass c) { return static_cast<std::size_t>(c); }

/// Box in normalized image coordinates: centre (cx, cy), size (w, h).
struct BoundingBox {
  double cx = 0.5, cy = 0.5, w = 0.1, h = 0.1;
  VehicleClass cls = VehicleClass::moving;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline bool is_valid(const BoundingBox& b) {
  return std::isfinite(b.cx) && std::isfinite(b.cy) && b.cx >= 0.0 && b.cx <= 1.0 && b.cy >= 0.0 &&
         b.cy <= 1.0 && b.w > 0.0 && b.w <= 1.0 && b.h > 0.0 && b.h <= 1.0;
}

struct Detection {
  BoundingBox box;
  double confidence = 0.0;
  std::array<double, kNumClasses> class_scores{};

  /// Ranking score: objectness times the best class probability.
  double score() const {
    return confidence * *std::max_element(class_scores.begin(), class_scores.end());
  }
};

struct Corners {
  double x1, y1, x2, y2;
};

inline Corners to_corners(const BoundingBox& b) {
  return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}

inline Corners clip_unit(Corners c) {
  auto clip = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return {clip(c.x1), clip(c.y1), clip(c.x2), clip(c.y2)};
}

/// Intersection over union of axis-aligned rectangles; 0 when disjoint.
inline double iou(const Corners& a, const Corners& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// IoU of two boxes after clipping their extents to the unit square.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  return iou(clip_unit(to_corners(a)), clip_unit(to_corners(b)));
}

/// IoU of two origin-centred boxes of sizes (w1, h1) and (w2, h2).
inline double shape_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  return inter / (w1 * h1 + w2 * h2 - inter);
}

/// Prior box shapes (w, h) in normalized image units, sorted by area.
struct AnchorSet {
  std::vector<std::pair<double, double>> priors;

  std::size_t size() const { return priors.size(); }

  void canonicalize() {
    std::stable_sort(priors.begin(), priors.end(), [](const auto& a, const auto& b) {
      return a.first * a.second < b.first * b.second;
    });
  }

  void validate() const {
    if (priors.empty()) throw std::invalid_argument("anchor set is empty");
    for (const auto& [w, h] : priors)
      if (!(w > 0.0) || !(h > 0.0) || !std::isfinite(w) || !std::isfinite(h))
        throw std::invalid_argument("anchor sizes must be positive and finite");
  }
};

}  // namespace avf
