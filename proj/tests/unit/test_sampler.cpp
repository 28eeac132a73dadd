#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "icnet/autodiff.hpp"
#include "icnet/sampler.hpp"
#include "oracles.hpp"

using namespace icnet;

namespace {

Flow constant_flow(const GridShape& shape, double tx, double ty, double tz) {
  Flow f(shape, 3);
  for (std::size_t i = 0; i < f.voxels(); ++i) {
    f.channel(0)[i] = tx;
    f.channel(1)[i] = ty;
    f.channel(2)[i] = tz;
  }
  return f;
}

}  // namespace

TEST(Trilinear, VoxelCentreReturnsStoredValue) {
  std::mt19937_64 rng(1);
  const Volume v = oracle::random_volume(GridShape{4, 5, 3}, 2, rng);
  const auto got = sampler::trilinear_sample(v, {2.0, 3.0, 1.0});
  EXPECT_EQ(got.at(0), v.at(0, 2, 3, 1));
  EXPECT_EQ(got.at(1), v.at(1, 2, 3, 1));
}

TEST(Trilinear, MidpointAlongX) {
  Volume v(GridShape{2, 2, 2}, 1);
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t y = 0; y < 2; ++y) v.at(0, 1, y, z) = 2.0;
  EXPECT_DOUBLE_EQ(sampler::trilinear_sample(v, {0.5, 0.0, 0.0}).at(0), 1.0);
}

TEST(Trilinear, ClampsOutsideTheGrid) {
  std::mt19937_64 rng(2);
  const Volume v = oracle::random_volume(GridShape{3, 3, 3}, 1, rng);
  EXPECT_EQ(sampler::trilinear_sample(v, {-5, -5, -5}).at(0), v.at(0, 0, 0, 0));
  EXPECT_EQ(sampler::trilinear_sample(v, {9, 1, -2}).at(0), v.at(0, 2, 1, 0));
}

TEST(Trilinear, ReproducesAffineFunctionsInside) {
  const GridShape s{5, 4, 6};
  Volume v(s, 1);
  auto f = [](double x, double y, double z) { return 0.5 + 2.0 * x - 1.5 * y + 0.25 * z; };
  for (std::size_t z = 0; z < s.dz; ++z)
    for (std::size_t y = 0; y < s.dy; ++y)
      for (std::size_t x = 0; x < s.dx; ++x) v.at(0, x, y, z) = f(double(x), double(y), double(z));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Point3 p{u(rng) * 4, u(rng) * 3, u(rng) * 5};
    EXPECT_NEAR(sampler::trilinear_sample(v, p).at(0), f(p[0], p[1], p[2]), 1e-12);
  }
}

TEST(Warp, ZeroFlowIsExactIdentity) {
  std::mt19937_64 rng(4);
  const Volume v = oracle::random_volume(GridShape{6, 5, 4}, 2, rng);
  EXPECT_EQ(sampler::warp(v, Flow(v.shape(), 3, 0.0)), v);
}

TEST(Warp, IntegerTranslationMatchesIndexArithmetic) {
  std::mt19937_64 rng(5);
  const GridShape s{7, 6, 8};
  const Volume v = oracle::random_volume(s, 1, rng);
  for (const auto& t : std::vector<std::array<long, 3>>{{1, 0, 0}, {-2, 1, 3}, {0, -1, -1}}) {
    const Volume w = sampler::warp(v, constant_flow(s, double(t[0]), double(t[1]), double(t[2])));
    for (std::size_t z = 0; z < s.dz; ++z)
      for (std::size_t y = 0; y < s.dy; ++y)
        for (std::size_t x = 0; x < s.dx; ++x) {
          const double want = oracle::clamped_voxel(v, 0, long(x) + t[0], long(y) + t[1], long(z) + t[2]);
          EXPECT_NEAR(w.at(0, x, y, z), want, 1e-12);
        }
  }
}

TEST(Warp, FlowToOneCentreGivesConstant) {
  std::mt19937_64 rng(6);
  const GridShape s{5, 5, 5};
  const Volume v = oracle::random_volume(s, 1, rng);
  Flow f(s, 3);
  for (std::size_t z = 0; z < s.dz; ++z)
    for (std::size_t y = 0; y < s.dy; ++y)
      for (std::size_t x = 0; x < s.dx; ++x) {
        f.at(0, x, y, z) = 2.0 - double(x);
        f.at(1, x, y, z) = 3.0 - double(y);
        f.at(2, x, y, z) = 1.0 - double(z);
      }
  const Volume w = sampler::warp(v, f);
  for (double x : w.data()) EXPECT_DOUBLE_EQ(x, v.at(0, 2, 3, 1));
}

TEST(Warp, LinearInTheImage) {
  std::mt19937_64 rng(7);
  const GridShape s{5, 4, 6};
  const Volume v1 = oracle::random_volume(s, 1, rng), v2 = oracle::random_volume(s, 1, rng);
  const Flow f = oracle::random_volume(s, 3, rng, -2.5, 2.5);
  Volume comb(s, 1);
  for (std::size_t i = 0; i < comb.size(); ++i) comb.data()[i] = 1.5 * v1.data()[i] - 0.75 * v2.data()[i];
  const Volume lhs = sampler::warp(comb, f);
  const Volume w1 = sampler::warp(v1, f), w2 = sampler::warp(v2, f);
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs.data()[i], 1.5 * w1.data()[i] - 0.75 * w2.data()[i], 1e-12);
}

TEST(Warp, ShapeMismatchRejected) {
  EXPECT_THROW(sampler::warp(Volume(GridShape{4, 4, 4}, 1), Flow(GridShape{4, 4, 5}, 3)), ShapeError);
  EXPECT_THROW(sampler::warp(Volume(GridShape{4, 4, 4}, 1), Volume(GridShape{4, 4, 4}, 2)), ShapeError);
}

TEST(Warp, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  const GridShape s{5, 4, 4};
  const auto image = ad::Tensor::from_volume(oracle::random_volume(s, 2, rng));
  // keep every sample coordinate off the integer lattice
  Flow flow(s, 3);
  std::uniform_real_distribution<double> frac(0.15, 0.85);
  std::uniform_int_distribution<int> whole(-1, 1);
  for (double& x : flow.data()) x = whole(rng) + frac(rng);
  const auto fn = [](ad::Tape&, const std::vector<ad::Var>& v) {
    const ad::Var w = ad::warp(v[0], v[1]);
    return ad::sum(ad::mul(w, w));
  };
  const auto check = oracle::check_gradient_coordinates(fn, {image, ad::Tensor::from_volume(flow)});
  EXPECT_LT(check.max_relative_error, 1e-5);
  const auto dir = oracle::check_gradient(fn, {image, ad::Tensor::from_volume(flow)}, 9, 6);
  EXPECT_LT(dir.max_relative_error, 1e-5);
  EXPECT_GT(dir.smallest_directional, 1e-6);
}

TEST(Warp, NonFiniteFlowPropagatesWithoutLeavingTheGrid) {
  std::mt19937_64 rng(14);
  const GridShape s{4, 4, 4};
  const Volume v = oracle::random_volume(s, 1, rng);
  Flow f(s, 3);
  f.at(1, 2, 2, 2) = std::nan("");
  f.at(0, 1, 1, 1) = std::numeric_limits<double>::infinity();
  const Volume w = sampler::warp(v, f);
  EXPECT_TRUE(std::isnan(w.at(0, 2, 2, 2)));
  EXPECT_EQ(w.at(0, 1, 1, 1), v.at(0, 3, 1, 1));
  EXPECT_EQ(w.at(0, 0, 0, 0), v.at(0, 0, 0, 0));
  EXPECT_THROW(sampler::warp_nearest(LabelMap(s), f), NumericError);
}

TEST(WarpNearest, ZeroFlowIdentity) {
  std::mt19937_64 rng(10);
  const LabelMap m = oracle::random_labels(GridShape{5, 4, 3}, 4, rng);
  EXPECT_EQ(sampler::warp_nearest(m, Flow(m.shape(), 3)), m);
}

TEST(WarpNearest, OneVoxelTranslationShiftsInterior) {
  std::mt19937_64 rng(11);
  const GridShape s{5, 4, 3};
  const LabelMap m = oracle::random_labels(s, 4, rng);
  const LabelMap w = sampler::warp_nearest(m, constant_flow(s, 0, 1, 0));
  for (std::size_t z = 0; z < s.dz; ++z)
    for (std::size_t y = 0; y + 1 < s.dy; ++y)
      for (std::size_t x = 0; x < s.dx; ++x) EXPECT_EQ(w.at(x, y, z), m.at(x, y + 1, z));
}

TEST(WarpNearest, SubHalfDisplacementKeepsLabels) {
  std::mt19937_64 rng(12);
  const LabelMap m = oracle::random_labels(GridShape{4, 4, 4}, 3, rng);
  EXPECT_EQ(sampler::warp_nearest(m, constant_flow(m.shape(), 0.49, -0.49, 0.49)), m);
}

TEST(WarpNearest, HalfVoxelTiesGoToTheFloor) {
  LabelMap m(GridShape{3, 2, 2});
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t y = 0; y < 2; ++y) {
      m.at(1, y, z) = 1;
      m.at(2, y, z) = 2;
    }
  const LabelMap w = sampler::warp_nearest(m, constant_flow(m.shape(), 0.5, 0, 0));
  EXPECT_EQ(w.at(0, 0, 0), 0);
  EXPECT_EQ(w.at(1, 0, 0), 1);
}

TEST(EstimateInverse, ZeroFlowGivesZero) {
  const Flow inv = sampler::estimate_inverse(Flow(GridShape{4, 4, 4}, 3));
  for (double x : inv.data()) EXPECT_EQ(x, 0.0);
}

TEST(EstimateInverse, ConstantFlowNegatesExactly) {
  const GridShape s{12, 12, 12};
  const Flow t = constant_flow(s, 1.25, -0.5, 2.0);
  const Flow inv = sampler::estimate_inverse(t);
  for (std::size_t i = 0; i < inv.voxels(); ++i) {
    EXPECT_EQ(inv.channel(0)[i], -1.25);
    EXPECT_EQ(inv.channel(1)[i], 0.5);
    EXPECT_EQ(inv.channel(2)[i], -2.0);
  }
}

TEST(EstimateInverse, RoundTripOfConstantFlowUnderMapPoint) {
  const GridShape s{10, 10, 10};
  const Flow t = constant_flow(s, 0.7, -1.3, 0.4);
  const Flow inv = sampler::estimate_inverse(t);
  for (const Point3& p : std::vector<Point3>{{3, 4, 5}, {2.5, 6.25, 4.75}, {5.1, 3.3, 2.2}}) {
    const Point3 back = sampler::map_point(inv, sampler::map_point(t, p));
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(back[k], p[k], 1e-6);
  }
}

TEST(EstimateInverse, MatchesDefinition) {
  std::mt19937_64 rng(13);
  const Flow f = oracle::random_volume(GridShape{5, 5, 5}, 3, rng, -1.5, 1.5);
  Flow neg = f;
  for (double& x : neg.data()) x = -x;
  EXPECT_EQ(sampler::estimate_inverse(f), sampler::warp(neg, f));
}

TEST(MapPoint, Examples) {
  const GridShape s{5, 5, 5};
  const Point3 p{2, 2, 2};
  EXPECT_EQ(sampler::map_point(Flow(s, 3), p), p);
  const Point3 q = sampler::map_point(constant_flow(s, 1, 0, 0), p);
  EXPECT_EQ(q, (Point3{3, 2, 2}));
}

TEST(MapPoint, LinearFlowInterpolatesLinearly) {
  const GridShape s{6, 6, 6};
  Flow f(s, 3);
  for (std::size_t z = 0; z < s.dz; ++z)
    for (std::size_t y = 0; y < s.dy; ++y)
      for (std::size_t x = 0; x < s.dx; ++x) {
        f.at(0, x, y, z) = 0.1 * double(x);
        f.at(1, x, y, z) = -0.2 * double(z);
        f.at(2, x, y, z) = 0.05 * double(x + y);
      }
  const Point3 p{1.5, 2.25, 3.75};
  const Point3 q = sampler::map_point(f, p);
  EXPECT_NEAR(q[0], p[0] + 0.1 * p[0], 1e-12);
  EXPECT_NEAR(q[1], p[1] - 0.2 * p[2], 1e-12);
  EXPECT_NEAR(q[2], p[2] + 0.05 * (p[0] + p[1]), 1e-12);
}
