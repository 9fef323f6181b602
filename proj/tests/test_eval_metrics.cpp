#include <gtest/gtest.h>

#include <sstream>

#include "avfusion/metrics.hpp"
#include "avfusion/rng.hpp"
#include "oracles.hpp"

using avf::BoundingBox;
using avf::Detection;
using avf::ImageDetections;
using avf::ImageTruth;
using avf::VehicleClass;

namespace {

Detection det(const BoundingBox& b, double conf) { return avf::oracle::make_det(b, conf); }

}  // namespace

TEST(Iou, ClosedForms) {
  const BoundingBox a{0.4, 0.4, 0.2, 0.2};
  EXPECT_DOUBLE_EQ(avf::iou(a, a), 1.0);
  EXPECT_EQ(avf::iou(a, BoundingBox{0.8, 0.8, 0.1, 0.1}), 0.0);
  EXPECT_NEAR(avf::iou(avf::Corners{0, 0, 2, 2}, avf::Corners{1, 1, 3, 3}), 1.0 / 7, 1e-15);
}

TEST(Iou, ExtentClippedToUnitSquare) {
  // Both boxes reach past the left edge; only the visible parts count.
  const BoundingBox a{0.0, 0.5, 0.4, 0.2}, b{0.05, 0.5, 0.3, 0.2};
  EXPECT_NEAR(avf::iou(a, b), 1.0, 1e-15);
}

TEST(AveragePrecision, HandComputed) {
  const BoundingBox gt{0.5, 0.5, 0.2, 0.2};
  EXPECT_DOUBLE_EQ(*avf::average_precision({det(gt, 0.9)}, {gt}, VehicleClass::moving), 1.0);
  const BoundingBox miss{0.1, 0.1, 0.1, 0.1};
  EXPECT_DOUBLE_EQ(*avf::average_precision({det(miss, 0.9), det(gt, 0.5)}, {gt}, VehicleClass::moving), 0.5);
  EXPECT_FALSE(avf::average_precision({det(gt, 0.9)}, {gt}, VehicleClass::idling).has_value());
  EXPECT_DOUBLE_EQ(avf::average_precision(std::vector<bool>{false, true}, 1), 0.5);
  EXPECT_DOUBLE_EQ(avf::average_precision(std::vector<bool>{}, 3), 0.0);
}

TEST(AveragePrecision, TruePositivesFirstGiveOne) {
  avf::Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n_tp = 1 + rng.below(6), n_fp = rng.below(6);
    std::vector<bool> flags(n_tp, true);
    flags.resize(n_tp + n_fp, false);
    EXPECT_DOUBLE_EQ(avf::average_precision(flags, n_tp), 1.0);

    // Same through the pooled evaluator with randomly permuted input order.
    ImageTruth truth{"s", {}};
    ImageDetections dets{"s", {}};
    for (std::size_t i = 0; i < n_tp; ++i) {
      truth.boxes.push_back({0.1 + 0.15 * static_cast<double>(i), 0.5, 0.1, 0.1});
      dets.detections.push_back(det(truth.boxes.back(), 0.5 + 0.05 * rng.uniform()));
    }
    for (std::size_t i = 0; i < n_fp; ++i) dets.detections.push_back(det({0.5, 0.1, 0.05, 0.05}, 0.4 * rng.uniform()));
    rng.shuffle(dets.detections.begin(), dets.detections.end());
    EXPECT_DOUBLE_EQ(avf::evaluate({dets}, {truth}).map, 1.0);
  }
}

TEST(AveragePrecision, MonotoneUnderRemovals) {
  avf::Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<bool> flags(n);
    std::size_t tps = 0;
    for (std::size_t i = 0; i < n; ++i) tps += (flags[i] = rng.uniform() < 0.5);
    const std::size_t n_gt = tps + rng.below(3) + 1;
    const double ap = avf::average_precision(flags, n_gt);
    for (std::size_t i = 0; i < n; ++i) {
      auto fewer = flags;
      fewer.erase(fewer.begin() + static_cast<long>(i));
      const double v = avf::average_precision(fewer, n_gt);
      if (flags[i]) {
        EXPECT_LE(v, ap + 1e-15);
      } else {
        EXPECT_GE(v, ap - 1e-15);
      }
    }
  }
}

TEST(AveragePrecision, EqualScoresFollowSampleThenIndexOrder) {
  const BoundingBox gt{0.5, 0.5, 0.2, 0.2};
  const BoundingBox miss{0.1, 0.1, 0.1, 0.1};
  // Tied scores: the FP in sample "a" ranks before the TP in sample "b".
  const std::vector<ImageTruth> truths = {{"a", {}}, {"b", {gt}}};
  const std::vector<ImageDetections> d1 = {{"b", {det(gt, 0.7)}}, {"a", {det(miss, 0.7)}}};
  const std::vector<ImageDetections> d2 = {{"a", {det(miss, 0.7)}}, {"b", {det(gt, 0.7)}}};
  EXPECT_DOUBLE_EQ(avf::evaluate(d1, truths).map, 0.5);
  EXPECT_DOUBLE_EQ(avf::evaluate(d2, truths).map, 0.5);
  // Within one sample the lower index wins the tie.
  const std::vector<ImageTruth> one = {{"a", {gt}}};
  EXPECT_DOUBLE_EQ(avf::evaluate({{"a", {det(gt, 0.7), det(miss, 0.7)}}}, one).map, 1.0);
  EXPECT_DOUBLE_EQ(avf::evaluate({{"a", {det(miss, 0.7), det(gt, 0.7)}}}, one).map, 0.5);
}

TEST(MapAt05, PerfectEmptyAndMissingClasses) {
  avf::Rng rng(5);
  std::vector<ImageTruth> truths;
  std::vector<ImageDetections> perfect;
  for (int s = 0; s < 10; ++s) {
    ImageTruth t{"s" + std::to_string(s), {}};
    ImageDetections d{t.sample_id, {}};
    for (int k = 0; k < 3; ++k) {
      BoundingBox b{0.15 + 0.3 * k, 0.5, 0.1, 0.2, static_cast<VehicleClass>(k)};
      t.boxes.push_back(b);
      d.detections.push_back(det(b, rng.uniform(0.3, 1)));
    }
    truths.push_back(t);
    perfect.push_back(d);
  }
  const auto r = avf::evaluate(perfect, truths);
  EXPECT_DOUBLE_EQ(r.map, 1.0);
  EXPECT_EQ(r.tp, 30u);
  EXPECT_EQ(r.fp + r.fn, 0u);
  EXPECT_TRUE(r.warnings.empty());

  const auto e = avf::evaluate({}, truths);
  for (const auto& c : e.classes) EXPECT_EQ(*c.ap, 0.0);
  EXPECT_EQ(e.fn, 30u);

  for (auto& t : truths) t.boxes.pop_back();  // no engine_off ground truth left
  const auto m = avf::evaluate(perfect, truths);
  EXPECT_FALSE(m.classes[2].ap.has_value());
  EXPECT_EQ(m.classes[2].fp, 10u);
  ASSERT_EQ(m.warnings.size(), 1u);
  EXPECT_DOUBLE_EQ(m.map, (*m.classes[0].ap + *m.classes[1].ap) / 2);
}

TEST(MapAt05, UnknownSampleIdThrows) {
  EXPECT_THROW(avf::evaluate({{"x", {}}}, {{"y", {}}}), std::invalid_argument);
}

TEST(MapAt05, AgreesWithBruteForceReference) {
  avf::Rng rng(6);
  for (int scene = 0; scene < 100; ++scene) {
    std::vector<ImageTruth> truths;
    std::vector<ImageDetections> dets;
    avf::oracle::random_scene(rng, dets, truths);
    const auto r = avf::evaluate(dets, truths);
    EXPECT_NEAR(r.map, avf::oracle::reference_map(dets, truths), 1e-9) << "scene " << scene;
    double sum = 0;
    int n = 0;
    for (const auto& c : r.classes)
      if (c.ap) {
        EXPECT_GE(*c.ap, 0.0);
        EXPECT_LE(*c.ap, 1.0);
        sum += *c.ap, ++n;
      }
    if (n) {
      EXPECT_DOUBLE_EQ(r.map, sum / n);
    }
  }
}

TEST(Trajectory, StaticIdlingRows) {
  const Detection d = det({0.25, 0.75, 0.1, 0.1, VehicleClass::idling}, 0.8);
  const std::vector<std::vector<Detection>> frames(10, std::vector<Detection>{d});
  const std::string csv = avf::export_trajectory(frames, 25.0);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "t_seconds,x_center,y_center,class,confidence");
  int rows = 0;
  while (std::getline(is, line)) {
    char expect[96];
    std::snprintf(expect, sizeof expect, "%.6f,0.250000,0.750000,idling,0.800000", rows * 0.04);
    EXPECT_EQ(line, expect);
    ++rows;
  }
  EXPECT_EQ(rows, 10);
  EXPECT_NE(csv.find("0.360000,"), std::string::npos);
}

TEST(Trajectory, EmptyIsHeaderOnlyAndRowCountMatches) {
  EXPECT_EQ(avf::export_trajectory({}, 25.0), "t_seconds,x_center,y_center,class,confidence\n");
  const Detection d = det({0.5, 0.5, 0.1, 0.1}, 0.5);
  const std::string csv = avf::export_trajectory({{d, d}, {}, {d}}, 10.0);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}
