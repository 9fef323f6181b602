#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "avfusion/detect_head.hpp"
#include "avfusion/grad_check.hpp"
#include "avfusion/losses.hpp"
#include "oracles.hpp"

using avf::AnchorSet;
using avf::BoundingBox;
using avf::Detection;
using avf::Tensor;
using avf::oracle::random_tensor;
using avf::VehicleClass;

namespace {

Detection make_det(double cx, double cy, double w, double h, double conf, VehicleClass c = VehicleClass::moving) {
  Detection d;
  d.box = {cx, cy, w, h, c};
  d.confidence = conf;
  d.class_scores = {0, 0, 0};
  d.class_scores[avf::class_index(c)] = 1.0;
  return d;
}

}  // namespace

TEST(KMeans, IdenticalBoxesSingleCluster) {
  const std::vector<std::pair<double, double>> boxes(10, {0.2, 0.3});
  const auto r = avf::kmeans_anchors(boxes, 1, 7);
  ASSERT_EQ(r.anchors.size(), 1u);
  EXPECT_DOUBLE_EQ(r.anchors.priors[0].first, 0.2);
  EXPECT_DOUBLE_EQ(r.anchors.priors[0].second, 0.3);
}

TEST(KMeans, IouDistanceArithmetic) {
  EXPECT_DOUBLE_EQ(1.0 - avf::shape_iou(0.3, 0.4, 0.3, 0.4), 0.0);
  EXPECT_NEAR(1.0 - avf::shape_iou(0.1, 0.1, 0.2, 0.2), 0.75, 1e-15);
}

TEST(KMeans, RecoversTwoTightClusters) {
  avf::Rng rng(5);
  double m[2][2];
  const auto boxes = avf::oracle::two_cluster_boxes(rng, m);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = avf::kmeans_anchors(boxes, 2, seed);
    EXPECT_NEAR(r.anchors.priors[0].first, m[0][0], 1e-3);
    EXPECT_NEAR(r.anchors.priors[0].second, m[0][1], 1e-3);
    EXPECT_NEAR(r.anchors.priors[1].first, m[1][0], 1e-3);
    EXPECT_NEAR(r.anchors.priors[1].second, m[1][1], 1e-3);
  }
}

TEST(KMeans, DeterministicSortedAndObjectiveNonIncreasing) {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    avf::Rng rng(100 + trial);
    std::vector<std::pair<double, double>> boxes;
    for (int i = 0; i < 150; ++i) boxes.push_back({rng.uniform(0.02, 0.6), rng.uniform(0.02, 0.6)});
    const auto a = avf::kmeans_anchors(boxes, 5, trial), b = avf::kmeans_anchors(boxes, 5, trial);
    EXPECT_EQ(a.anchors.priors, b.anchors.priors);
    for (std::size_t i = 1; i < a.objective.size(); ++i) EXPECT_LE(a.objective[i], a.objective[i - 1]);
    for (std::size_t i = 1; i < 5; ++i)
      EXPECT_LE(a.anchors.priors[i - 1].first * a.anchors.priors[i - 1].second,
                a.anchors.priors[i].first * a.anchors.priors[i].second);
    EXPECT_LE(a.iterations, 100u);
  }
}

TEST(KMeans, TooFewDistinctBoxesThrows) {
  const std::vector<std::pair<double, double>> boxes = {{0.1, 0.1}, {0.1, 0.1}, {0.2, 0.2}};
  EXPECT_THROW(avf::kmeans_anchors(boxes, 3, 0), std::invalid_argument);
  EXPECT_NO_THROW(avf::kmeans_anchors(boxes, 2, 0));
}

TEST(Rpn, CanonicalLayoutAndZeroParams) {
  const auto fused = random_tensor({7, 7, 128}, 1).cast<float>();
  const Tensor<float> w({128, 40}), b({40});
  const auto out = avf::rpn_forward(fused, w, b);
  ASSERT_EQ(out.shape(), (avf::Shape{7, 7, 5, 8}));
  for (float v : out.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Rpn, MatchesPerCellDotProducts) {
  const auto f = random_tensor({3, 2, 6}, 2), w = random_tensor({6, 16}, 3), b = random_tensor({16}, 4);
  const auto out = avf::rpn_forward(f, w, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t o = 0; o < 16; ++o) {
        double acc = b[o];
        for (std::size_t c = 0; c < 6; ++c) acc += f.at(i, j, c) * w.at(c, o);
        EXPECT_NEAR(out.at(i, j, o / 8, o % 8), acc, 1e-12);
      }
}

TEST(Rpn, ShapeMismatchThrows) {
  EXPECT_THROW(avf::rpn_forward(Tensor<double>({2, 2, 4}), Tensor<double>({5, 8}), Tensor<double>({8})),
               avf::ShapeError);
  EXPECT_THROW(avf::rpn_forward(Tensor<double>({2, 2, 4}), Tensor<double>({4, 7}), Tensor<double>({7})),
               avf::ShapeError);
}

TEST(Rpn, GradCheck) {
  const auto r = avf::grad_check(
      [](avf::Graph<double>& g, std::span<const avf::Var> v) { return avf::rpn_forward(g, v[0], v[1], v[2]); },
      {random_tensor({3, 3, 4}, 5), random_tensor({4, 16}, 6), random_tensor({16}, 7)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Decode, ZeroRawAtCell) {
  AnchorSet anchors{{{2.0 / 7, 1.0 / 7}}};
  const Tensor<double> raw({7, 7, 1, 8});
  const auto dets = avf::decode_boxes(raw, anchors);
  ASSERT_EQ(dets.size(), 49u);
  const Detection& d = dets[2 * 7 + 3];
  EXPECT_DOUBLE_EQ(d.box.cx, 0.5);
  EXPECT_NEAR(d.box.cy, 2.5 / 7, 1e-15);
  EXPECT_DOUBLE_EQ(d.box.w, 2.0 / 7);
  EXPECT_DOUBLE_EQ(d.box.h, 1.0 / 7);
  EXPECT_DOUBLE_EQ(d.confidence, 0.5);
  for (double s : d.class_scores) EXPECT_NEAR(s, 1.0 / 3, 1e-15);
}

TEST(Decode, LogTwoDoublesWidth) {
  AnchorSet anchors{{{0.1, 0.2}}};
  Tensor<double> raw({1, 1, 1, 8});
  raw[2] = std::log(2.0);
  const auto d = avf::decode_boxes(raw, anchors)[0];
  EXPECT_NEAR(d.box.w, 0.2, 1e-15);
  EXPECT_DOUBLE_EQ(d.box.h, 0.2);
}

TEST(Decode, InvertsTargetEncoding) {
  avf::Rng rng(9);
  AnchorSet anchors{{{0.05, 0.08}, {0.2, 0.1}, {0.3, 0.4}}};
  for (int trial = 0; trial < 200; ++trial) {
    const BoundingBox gt{rng.uniform(0, 0.999), rng.uniform(0, 0.999), rng.uniform(0.01, 0.9), rng.uniform(0.01, 0.9),
                         static_cast<VehicleClass>(trial % 3)};
    const auto targets = avf::assign_targets(std::span<const BoundingBox>(&gt, 1), anchors, 7, 7);
    Tensor<double> raw({7, 7, 3, 8});
    std::size_t pos = 0;
    for (std::size_t s = 0; s < targets.slots.size(); ++s) {
      const auto& t = targets.slots[s];
      if (t.role != avf::Slot::positive) continue;
      pos = s;
      raw[s * 8 + 0] = std::log(t.ox / (1 - t.ox));
      raw[s * 8 + 1] = std::log(t.oy / (1 - t.oy));
      raw[s * 8 + 2] = t.sw;
      raw[s * 8 + 3] = t.sh;
    }
    const auto d = avf::decode_boxes(raw, anchors)[pos];
    EXPECT_NEAR(d.box.cx, gt.cx, 1e-9);
    EXPECT_NEAR(d.box.cy, gt.cy, 1e-9);
    EXPECT_NEAR(d.box.w, gt.w, 1e-9);
    EXPECT_NEAR(d.box.h, gt.h, 1e-9);
  }
}

TEST(Decode, OutputsAreValidBoxesForAnyFiniteRaw) {
  AnchorSet anchors{{{0.1, 0.1}, {0.5, 0.9}}};
  for (double scale : {1.0, 30.0, 800.0}) {
    const auto raw = random_tensor({4, 5, 2, 8}, static_cast<std::uint64_t>(scale), -scale, scale);
    for (const auto& d : avf::decode_boxes(raw, anchors)) {
      EXPECT_TRUE(avf::is_valid(d.box)) << d.box.cx << " " << d.box.cy << " " << d.box.w << " " << d.box.h;
      EXPECT_GE(d.confidence, 0.0);
      EXPECT_LE(d.confidence, 1.0);
      EXPECT_NEAR(d.class_scores[0] + d.class_scores[1] + d.class_scores[2], 1.0, 1e-12);
    }
  }
}

TEST(Nms, SuppressesOverlapKeepsDisjoint) {
  // B overlaps A by 0.15 of 0.2 in x: IoU = 0.15 / 0.25 = 0.6.
  const std::vector<Detection> dets = {make_det(0.3, 0.5, 0.2, 0.2, 0.9), make_det(0.35, 0.5, 0.2, 0.2, 0.8),
                                       make_det(0.8, 0.8, 0.1, 0.1, 0.7)};
  ASSERT_NEAR(avf::iou(dets[0].box, dets[1].box), 0.6, 1e-12);
  const auto out = avf::nms(dets);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].confidence, 0.9);
  EXPECT_EQ(out[1].confidence, 0.7);
}

TEST(Nms, EmptyAndPerClass) {
  EXPECT_TRUE(avf::nms({}).empty());
  const std::vector<Detection> dets = {make_det(0.5, 0.5, 0.2, 0.2, 0.9, VehicleClass::moving),
                                       make_det(0.5, 0.5, 0.2, 0.2, 0.8, VehicleClass::idling),
                                       make_det(0.5, 0.5, 0.2, 0.2, 0.6, VehicleClass::engine_off)};
  EXPECT_EQ(avf::nms(dets).size(), 3u);
  EXPECT_EQ(avf::nms(dets, 0.5, 0.85).size(), 1u);
}

TEST(Nms, MatchesRecursiveReferenceOnRandomInstances) {
  avf::Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto dets = avf::oracle::random_nms_instance(rng);
    const double iou_t = trial % 2 ? 0.5 : 0.3, conf_t = trial % 3 ? 0.25 : 0.0;
    const auto got = avf::nms(dets, iou_t, conf_t), want = avf::oracle::nms_reference(dets, iou_t, conf_t);
    ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].box, want[i].box);
      EXPECT_EQ(got[i].confidence, want[i].confidence);
    }
  }
}
