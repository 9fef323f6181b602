#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "avfusion/grad_check.hpp"
#include "avfusion/losses.hpp"
#include "oracles.hpp"

using avf::AnchorSet;
using avf::BoundingBox;
using avf::Slot;
using avf::Tensor;
using avf::VehicleClass;
using avf::oracle::perfect_raw;

namespace {

const AnchorSet kAnchors{{{0.05, 0.05}, {0.1, 0.2}, {0.2, 0.1}, {0.3, 0.3}, {0.6, 0.5}}};

std::vector<BoundingBox> random_boxes(avf::Rng& rng, std::size_t n) {
  std::vector<BoundingBox> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.02, 0.7), rng.uniform(0.02, 0.7),
                   static_cast<VehicleClass>(rng.below(3))});
  return out;
}

}  // namespace

TEST(AssignTargets, CentreBoxOnSevenGrid) {
  const BoundingBox gt{0.5, 0.5, 0.1, 0.2, VehicleClass::idling};
  const auto t = avf::assign_targets(std::span(&gt, 1), kAnchors, 7, 7);
  const auto& s = t.at(3, 3, 1);
  EXPECT_EQ(s.role, Slot::positive);
  EXPECT_DOUBLE_EQ(s.ox, 0.5);
  EXPECT_DOUBLE_EQ(s.oy, 0.5);
  EXPECT_EQ(s.sw, 0.0);
  EXPECT_EQ(s.sh, 0.0);
  EXPECT_EQ(s.conf, 1.0);
  EXPECT_EQ(s.cls, VehicleClass::idling);
  EXPECT_EQ(t.count(Slot::positive), 1u);
}

TEST(AssignTargets, TwoBoxesInDifferentCells) {
  const std::vector<BoundingBox> gt = {{0.1, 0.1, 0.2, 0.2}, {0.9, 0.7, 0.3, 0.3}};
  const auto t = avf::assign_targets(gt, kAnchors, 7, 7);
  std::size_t positives = 0;
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j)
      for (std::size_t a = 0; a < 5; ++a) positives += t.at(i, j, a).role == Slot::positive;
  EXPECT_EQ(positives, 2u);
  // (0.2, 0.2) ties anchors (0.1, 0.2) and (0.2, 0.1) at IoU 0.5; the lower index wins.
  EXPECT_EQ(t.at(0, 0, 1).role, Slot::positive);
  EXPECT_EQ(t.at(0, 0, 2).role, Slot::negative);  // IoU 0.5 is not above the ignore threshold
  EXPECT_EQ(t.at(4, 6, 3).role, Slot::positive);
}

TEST(AssignTargets, ZeroAreaThrows) {
  const BoundingBox gt{0.5, 0.5, 0.0, 0.2};
  EXPECT_THROW(avf::assign_targets(std::span(&gt, 1), kAnchors, 7, 7), std::invalid_argument);
}

TEST(AssignTargets, AgreesWithExhaustiveSearch) {
  avf::Rng rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    const auto gt = random_boxes(rng, 1 + rng.below(6));
    const std::size_t H = 1 + rng.below(8), W = 1 + rng.below(8), K = kAnchors.size();
    const auto t = avf::assign_targets(gt, kAnchors, H, W);
    std::vector<Slot> want(H * W * K, Slot::negative);
    auto inside = [&](const BoundingBox& b, std::size_t i, std::size_t j) {
      const double x = b.cx * W, y = b.cy * H;
      return (x >= j && (x < j + 1.0 || j == W - 1)) && (y >= i && (y < i + 1.0 || i == H - 1));
    };
    for (const auto& b : gt) {
      double best = -1;
      std::size_t pick = want.size();
      for (std::size_t s = 0; s < want.size(); ++s) {
        const std::size_t a = s % K, j = (s / K) % W, i = s / K / W;
        if (!inside(b, i, j) || want[s] == Slot::positive) continue;
        const double v = avf::shape_iou(b.w, b.h, kAnchors.priors[a].first, kAnchors.priors[a].second);
        if (v > best) best = v, pick = s;
      }
      ASSERT_LT(pick, want.size());
      want[pick] = Slot::positive;
    }
    for (std::size_t s = 0; s < want.size(); ++s) {
      if (want[s] == Slot::positive) continue;
      const std::size_t a = s % K, j = (s / K) % W, i = s / K / W;
      for (const auto& b : gt)
        if (inside(b, i, j) && avf::shape_iou(b.w, b.h, kAnchors.priors[a].first, kAnchors.priors[a].second) > 0.5)
          want[s] = Slot::ignore;
    }
    for (std::size_t s = 0; s < want.size(); ++s) ASSERT_EQ(t.slots[s].role, want[s]) << "trial " << trial;
    EXPECT_EQ(t.count(Slot::positive), gt.size());
    for (const auto& st : t.slots)
      if (st.role == Slot::positive) {
        EXPECT_GE(st.ox, 0.0);
        EXPECT_LT(st.ox, 1.0);
        EXPECT_GE(st.oy, 0.0);
        EXPECT_LT(st.oy, 1.0);
      }
  }
}

TEST(Focal, UniformLogitsClosedForm) {
  const double z[3] = {0.3, 0.3, 0.3};
  EXPECT_NEAR(avf::focal_loss(z, 1, 0.25, 2.0), 0.25 * (4.0 / 9.0) * std::log(3.0), 1e-12);
  EXPECT_NEAR(avf::focal_loss(z, 1, 0.25, 2.0), 0.12207, 1e-5);
}

TEST(Focal, ConfidentCorrectGoesToZero) {
  const double z[3] = {60.0, 0.0, 0.0};
  EXPECT_LT(avf::focal_loss(z, 0, 0.25, 2.0), 1e-40);
}

TEST(Focal, GammaZeroIsScaledCrossEntropy) {
  const double z[3] = {0.5, -1.0, 2.0};
  const double lse = std::log(std::exp(0.5) + std::exp(-1.0) + std::exp(2.0));
  EXPECT_NEAR(avf::focal_loss(z, 0, 0.25, 0.0), 0.25 * (lse - 0.5), 1e-12);
}

TEST(Focal, GradientMatchesFiniteDifferences) {
  avf::Rng rng(2);
  for (double gamma : {0.0, 0.5, 2.0}) {
    double z[3] = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)}, g[3];
    avf::focal_loss(z, 2, 0.25, gamma, g);
    for (int j = 0; j < 3; ++j) {
      double zp[3] = {z[0], z[1], z[2]}, zm[3] = {z[0], z[1], z[2]};
      zp[j] += 1e-6, zm[j] -= 1e-6;
      const double fd = (avf::focal_loss(zp, 2, 0.25, gamma) - avf::focal_loss(zm, 2, 0.25, gamma)) / 2e-6;
      EXPECT_NEAR(g[j], fd, 1e-8);
    }
  }
}

TEST(BoxConf, SmoothL1ClosedForms) {
  EXPECT_EQ(avf::smooth_l1(1.0), 0.5);
  EXPECT_EQ(avf::smooth_l1(2.0), 1.5);
  EXPECT_EQ(avf::smooth_l1(-2.0), 1.5);
  EXPECT_EQ(avf::smooth_l1(0.5), 0.125);
}

TEST(BoxConf, SingleBackgroundSlot) {
  const avf::TargetGrid t = avf::assign_targets({}, AnchorSet{{{0.1, 0.1}}}, 1, 1);
  const auto l = avf::box_conf_losses(Tensor<double>({1, 1, 1, 8}), t);
  EXPECT_DOUBLE_EQ(l.conf, 0.25);
  EXPECT_EQ(l.x + l.y + l.w + l.h + l.focal, 0.0);
}

TEST(BoxConf, PerfectPredictionsGiveZero) {
  const std::vector<BoundingBox> gt = {{0.5, 0.5, 0.1, 0.2, VehicleClass::moving},
                                       {1.5 / 7, 4.5 / 7, 0.3, 0.3, VehicleClass::engine_off}};
  const auto t = avf::assign_targets(gt, kAnchors, 7, 7);
  const auto l = avf::detection_loss(perfect_raw(t), t);
  EXPECT_EQ(l.focal, 0.0);
  EXPECT_EQ(l.x, 0.0);
  EXPECT_EQ(l.y, 0.0);
  EXPECT_EQ(l.w, 0.0);
  EXPECT_EQ(l.h, 0.0);
  EXPECT_EQ(l.conf, 0.0);
  EXPECT_EQ(avf::total_loss(perfect_raw(t), t), 0.0);
}

TEST(TotalLoss, SumOfTermsNonNegativeAndZeroOnlyAtTargets) {
  avf::Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const auto gt = random_boxes(rng, 1 + rng.below(4));
    const auto t = avf::assign_targets(gt, kAnchors, 5, 5);
    Tensor<double> raw({5, 5, 5, 8});
    for (auto& v : raw.data()) v = rng.uniform(-3, 3);
    const auto l = avf::detection_loss(raw, t);
    EXPECT_NEAR(avf::total_loss(raw, t), l.focal + l.x + l.y + l.w + l.h + l.conf, 1e-12);
    EXPECT_GE(l.total(), 0.0);

    // Away from the targets at a counted slot the loss is positive; changes
    // confined to ignored slots leave the zero loss untouched.
    const auto perfect = perfect_raw(t);
    const double floor = avf::total_loss(perfect, t);  // logit round-off only
    EXPECT_LT(floor, 1e-30);
    for (std::size_t s = 0; s < t.slots.size(); ++s) {
      Tensor<double> moved = perfect;
      const std::size_t c = t.slots[s].role == Slot::positive ? rng.below(8) : 4;
      moved[s * 8 + c] += c == 4 && t.slots[s].role == Slot::positive ? -45.0 : 1000.0;
      const double v = avf::total_loss(moved, t);
      if (t.slots[s].role == Slot::ignore) {
        EXPECT_EQ(v, floor);
      } else if (c != 5 + avf::class_index(t.slots[s].cls)) {
        EXPECT_GT(v, floor) << s << " " << c;
      }
    }
  }
}

TEST(TotalLoss, GraphGradientMatchesFiniteDifferences) {
  avf::Rng rng(41);
  const auto gt = random_boxes(rng, 3);
  const auto t = avf::assign_targets(gt, kAnchors, 3, 4);
  Tensor<double> raw({3, 4, 5, 8});
  for (auto& v : raw.data()) v = rng.uniform(-2, 2);
  const auto r = avf::grad_check(
      [&](avf::Graph<double>& g, std::span<const avf::Var> v) { return avf::detection_loss(g, v[0], t); }, {raw});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(TotalLoss, NoPositivesOnlyConfidence) {
  const auto t = avf::assign_targets({}, kAnchors, 2, 2);
  Tensor<double> raw({2, 2, 5, 8}, 0.7);
  const auto l = avf::detection_loss(raw, t);
  EXPECT_EQ(l.focal + l.x + l.y + l.w + l.h, 0.0);
  const double s = 1 / (1 + std::exp(-0.7));
  EXPECT_NEAR(l.conf, s * s, 1e-15);
}
