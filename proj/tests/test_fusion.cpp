#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "avfusion/fusion.hpp"
#include "avfusion/grad_check.hpp"
#include "avfusion/rng.hpp"
#include "oracles.hpp"

using avf::Tensor;
using avf::oracle::random_tensor;

namespace {

void expect_row_stochastic(const Tensor<double>& w) {
  for (std::size_t i = 0; i < w.dim(0); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < w.dim(1); ++j) {
      EXPECT_GE(w.at(i, j), 0.0);
      EXPECT_LE(w.at(i, j), 1.0);
      s += w.at(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

}  // namespace

TEST(FlattenSpatial, ShapeIndexAndInverse) {
  const auto f = random_tensor({7, 7, 64}, 1);
  const auto r = avf::flatten_spatial(f);
  EXPECT_EQ(r.shape(), (avf::Shape{49, 64}));
  for (std::size_t d = 0; d < 64; ++d) EXPECT_EQ(r.at(17, d), f.at(2, 3, d));
  EXPECT_EQ(avf::unflatten_spatial(r, 7, 7), f);
  EXPECT_THROW(avf::unflatten_spatial(r, 6, 8), avf::ShapeError);
}

TEST(BidirAttention, ZeroGammaIsExactIdentity) {
  const auto v = random_tensor({4, 5, 6}, 2, -5, 5), a = random_tensor({4, 5, 6}, 3, -5, 5);
  const auto r = avf::bidir_attention(v, a, 0.0, 0.0);
  EXPECT_EQ(r.f_v, v);
  EXPECT_EQ(r.f_a, a);
}

TEST(BidirAttention, TwoCellScalarOracle) {
  const Tensor<double> v({1, 2, 2}, {1, 0, 0, 1}), a({1, 2, 2}, {2, 0, 0, 3});
  const auto r = avf::bidir_attention(v, a, 1.0, 1.0);
  const double e2 = std::exp(2.0), e3 = std::exp(3.0);
  EXPECT_NEAR(r.w_av.at(0, 0), e2 / (e2 + 1), 1e-12);
  EXPECT_NEAR(r.w_av.at(0, 1), 1 / (e2 + 1), 1e-12);
  EXPECT_NEAR(r.w_av.at(0, 0), 0.8808, 1e-4);
  EXPECT_NEAR(r.w_av.at(1, 1), e3 / (e3 + 1), 1e-12);
  // G is symmetric here, so both directions agree.
  EXPECT_NEAR(r.w_va.at(0, 0), r.w_av.at(0, 0), 1e-15);
  // f_a_rw[0] = W_av[0] . F_a + F_a[0]
  EXPECT_NEAR(r.f_a.at(0, 0, 0), e2 / (e2 + 1) * 2 + 2, 1e-12);
  EXPECT_NEAR(r.f_a.at(0, 0, 1), 1 / (e2 + 1) * 3, 1e-12);
}

TEST(BidirAttention, DirectionsUseGramAndItsTranspose) {
  const auto v = random_tensor({2, 3, 4}, 4), a = random_tensor({2, 3, 4}, 5);
  const auto r = avf::bidir_attention(v, a, 0.5, -0.5);
  const auto fv = avf::flatten_spatial(v), fa = avf::flatten_spatial(a);
  for (std::size_t i = 0; i < 6; ++i) {
    double zr = 0, zc = 0;
    std::vector<double> row(6), col(6);
    for (std::size_t j = 0; j < 6; ++j) {
      double gij = 0, gji = 0;
      for (std::size_t d = 0; d < 4; ++d) gij += fv.at(i, d) * fa.at(j, d), gji += fv.at(j, d) * fa.at(i, d);
      zr += row[j] = std::exp(gij);
      zc += col[j] = std::exp(gji);
    }
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_NEAR(r.w_av.at(i, j), row[j] / zr, 1e-12);
      EXPECT_NEAR(r.w_va.at(i, j), col[j] / zc, 1e-12);
    }
  }
}

TEST(BidirAttention, RowStochasticOnArbitraryInputs) {
  for (double scale : {0.1, 3.0, 40.0}) {
    const auto r = avf::bidir_attention(random_tensor({3, 4, 5}, 6, -scale, scale),
                                        random_tensor({3, 4, 5}, 7, -scale, scale), 0.3, 0.7);
    expect_row_stochastic(r.w_av);
    expect_row_stochastic(r.w_va);
    EXPECT_TRUE(r.f_v.all_finite());
  }
}

TEST(BidirAttention, JointPermutationEquivariance) {
  avf::Rng rng(8);
  const auto v = random_tensor({3, 3, 4}, 9), a = random_tensor({3, 3, 4}, 10);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  auto permute = [&](const Tensor<double>& f) {
    Tensor<double> out(f.shape());
    for (std::size_t i = 0; i < 9; ++i) std::copy_n(f.ptr() + perm[i] * 4, 4, out.ptr() + i * 4);
    return out;
  };
  const auto r = avf::bidir_attention(v, a, 0.8, 1.3);
  const auto p = avf::bidir_attention(permute(v), permute(a), 0.8, 1.3);
  EXPECT_LT(avf::max_abs_diff(p.f_v, permute(r.f_v)), 1e-12);
  EXPECT_LT(avf::max_abs_diff(p.f_a, permute(r.f_a)), 1e-12);
}

TEST(BidirAttention, ScalingAudioSharpensRows) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto v = random_tensor({2, 3, 4}, 100 + seed), a = random_tensor({2, 3, 4}, 200 + seed);
    const auto base = avf::bidir_attention(v, a, 0.0, 0.0).w_av;
    std::vector<std::size_t> arg(6);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 1; j < 6; ++j)
        if (base.at(i, j) > base.at(i, arg[i])) arg[i] = j;
    std::vector<double> prev(6);
    for (std::size_t i = 0; i < 6; ++i) prev[i] = base.at(i, arg[i]);
    for (double c : {1.5, 2.0, 4.0, 8.0}) {
      Tensor<double> scaled = a;
      for (auto& x : scaled.data()) x *= c;
      const auto w = avf::bidir_attention(v, scaled, 0.0, 0.0).w_av;
      for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_GE(w.at(i, arg[i]), prev[i] - 1e-15);
        prev[i] = w.at(i, arg[i]);
      }
    }
  }
}

TEST(BidirAttention, ShapeMismatchThrows) {
  EXPECT_THROW(avf::bidir_attention(Tensor<double>({2, 2, 3}), Tensor<double>({2, 2, 4}), 0.0, 0.0),
               avf::ShapeError);
}

TEST(BidirAttention, GradCheckIncludingGammas) {
  const auto r = avf::grad_check(
      [](avf::Graph<double>& g, std::span<const avf::Var> v) {
        const auto out = avf::bidir_attention(g, v[0], v[1], v[2], v[3]);
        return avf::concat_features(g, out.f_v, out.f_a);
      },
      {random_tensor({2, 3, 4}, 11), random_tensor({2, 3, 4}, 12), Tensor<double>({1}, 0.7),
       Tensor<double>({1}, -0.4)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(ConcatFeatures, LayoutAndOrder) {
  const auto v = random_tensor({7, 7, 64}, 13), a = random_tensor({7, 7, 64}, 14);
  const auto c = avf::concat_features(v, a);
  ASSERT_EQ(c.shape(), (avf::Shape{7, 7, 128}));
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_EQ(c.at(i, j, 0), v.at(i, j, 0));
      EXPECT_EQ(c.at(i, j, 64), a.at(i, j, 0));
      EXPECT_EQ(c.at(i, j, 127), a.at(i, j, 63));
    }
  EXPECT_FALSE(c == avf::concat_features(a, v));
  EXPECT_THROW(avf::concat_features(v, Tensor<double>({7, 7, 32})), avf::ShapeError);
}
