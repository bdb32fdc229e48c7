#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "facepipe/error.hpp"
#include "facepipe/neighbor_index.hpp"
#include "facepipe/pointcloud.hpp"
#include "facepipe/rng.hpp"

using namespace facepipe;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<Vec3> random_points(Rng& rng, std::size_t n, double extent) {
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = Vec3(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-extent, extent));
  return pts;
}

std::size_t linear_nearest(const std::vector<Vec3>& pts, const Vec3& q) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d = (pts[i] - q).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

TEST(PointCloud, RejectsNonFiniteCoordinates) {
  EXPECT_THROW(PointCloud({Vec3(0, std::nan(""), 0)}), ContractViolation);
  EXPECT_THROW(PointCloud({Vec3(0, 0, 0)}, {{"nose_tip", Vec3(std::numeric_limits<double>::infinity(), 0, 0)}}),
               ContractViolation);
}

TEST(PointCloud, LandmarkLookup) {
  const PointCloud c({Vec3(1, 2, 3)}, {{"nose_tip", Vec3(1, 2, 3)}});
  ASSERT_NE(c.landmark("nose_tip"), nullptr);
  EXPECT_EQ(*c.landmark("nose_tip"), Vec3(1, 2, 3));
  EXPECT_EQ(c.landmark("chin"), nullptr);
}

TEST(RigidTransform, RejectsNonRotation) {
  Mat3 scaled = Mat3::Identity() * 2.0;
  EXPECT_THROW(RigidTransform(scaled, Vec3::Zero()), ContractViolation);
  Mat3 reflection = Mat3::Identity();
  reflection(2, 2) = -1.0;
  EXPECT_THROW(RigidTransform(reflection, Vec3::Zero()), ContractViolation);
}

TEST(RigidTransform, IdentityLeavesCloudUnchanged) {
  const PointCloud c({Vec3(1, 2, 3), Vec3(-4, 5, 6)});
  const PointCloud out = apply_transform(c, RigidTransform::identity());
  EXPECT_EQ(out.points(), c.points());
}

TEST(RigidTransform, InverseRestoresPoints) {
  Rng rng(3);
  const PointCloud c(random_points(rng, 50, 100.0), {{"nose_tip", Vec3(0, 0, 10)}});
  const auto t = RigidTransform::from_euler_zyx(0.3, -0.2, 0.5, Vec3(10, -20, 5));
  const PointCloud back = apply_transform(apply_transform(c, t), t.inverse());
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_LT((back[i] - c[i]).norm(), 1e-9);
  EXPECT_LT((*back.landmark("nose_tip") - Vec3(0, 0, 10)).norm(), 1e-9);
}

TEST(RigidTransform, YawNinetyDegrees) {
  // Ry(90) = [[0,0,1],[0,1,0],[-1,0,0]] takes +x to -z.
  const auto t = RigidTransform::from_euler_zyx(0.0, kPi / 2, 0.0);
  const Vec3 p = t.apply(Vec3(1, 0, 0));
  EXPECT_NEAR(p.x(), 0.0, 1e-15);
  EXPECT_NEAR(p.y(), 0.0, 1e-15);
  EXPECT_NEAR(p.z(), -1.0, 1e-15);
}

TEST(RigidTransform, EulerRoundTrip) {
  const auto t = RigidTransform::from_euler_zyx(0.1, -0.15, 0.12);
  const Vec3 e = t.euler_zyx();
  EXPECT_NEAR(e.x(), 0.1, 1e-12);
  EXPECT_NEAR(e.y(), -0.15, 1e-12);
  EXPECT_NEAR(e.z(), 0.12, 1e-12);
}

TEST(RigidTransform, ComposeAppliesFirstThenSecond) {
  const auto a = RigidTransform::from_euler_zyx(0.2, 0.0, 0.0, Vec3(1, 0, 0));
  const auto b = RigidTransform::from_euler_zyx(0.0, 0.0, 0.4, Vec3(0, 2, 0));
  const Vec3 p(3, -1, 2);
  EXPECT_LT((b.compose(a).apply(p) - b.apply(a.apply(p))).norm(), 1e-12);
  EXPECT_NEAR(a.compose(a.inverse()).angle(), 0.0, 1e-12);
}

TEST(CropSphere, BoundaryIsInclusive) {
  const PointCloud c({Vec3(99, 0, 0), Vec3(100, 0, 0), Vec3(101, 0, 0)});
  const PointCloud out = crop_sphere(c, Vec3::Zero(), 100.0);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0], Vec3(99, 0, 0));
  EXPECT_EQ(out[1], Vec3(100, 0, 0));
}

TEST(CropSphere, LargeRadiusKeepsEverything) {
  Rng rng(1);
  const PointCloud c(random_points(rng, 20, 50.0));
  EXPECT_EQ(crop_sphere(c, Vec3::Zero(), 1e9).points(), c.points());
}

TEST(CropSphere, FarCenterThrows) {
  const PointCloud c({Vec3(0, 0, 0)});
  EXPECT_THROW(crop_sphere(c, Vec3(1000, 0, 0), 100.0), EmptyCropError);
}

TEST(CropSphere, Idempotent) {
  Rng rng(2);
  const PointCloud c(random_points(rng, 200, 150.0));
  const PointCloud once = crop_sphere(c, Vec3(10, 0, 0), 100.0);
  EXPECT_EQ(crop_sphere(once, Vec3(10, 0, 0), 100.0).points(), once.points());
}

TEST(NeighborIndex, ExactHitReturnsStoredIndex) {
  Rng rng(4);
  const auto pts = random_points(rng, 300, 10.0);
  const NeighborIndex index(pts);
  for (std::size_t i : {0u, 17u, 299u}) EXPECT_EQ(nearest(index, pts[i]), i);
}

TEST(NeighborIndex, TiesGoToLowerIndex) {
  const std::vector<Vec3> pts{Vec3(5, 0, 0), Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 7, 0)};
  const NeighborIndex index(pts);
  EXPECT_EQ(nearest(index, Vec3::Zero()), 1u);
}

TEST(NeighborIndex, TiesAcrossManyDuplicates) {
  // Equidistant candidates spread over different leaves.
  std::vector<Vec3> pts;
  for (int i = 0; i < 64; ++i) pts.emplace_back(std::cos(i * kPi / 32), std::sin(i * kPi / 32), 0.0);
  for (int i = 0; i < 64; ++i) pts.emplace_back(3.0 + i, 0.0, 0.0);
  const NeighborIndex index(pts);
  EXPECT_EQ(nearest(index, Vec3::Zero()), linear_nearest(pts, Vec3::Zero()));
}

TEST(NeighborIndex, MatchesLinearScan) {
  Rng rng(5);
  const auto pts = random_points(rng, 1000, 50.0);
  const NeighborIndex index(pts);
  for (int q = 0; q < 100; ++q) {
    const Vec3 query(rng.uniform(-60, 60), rng.uniform(-60, 60), rng.uniform(-60, 60));
    EXPECT_EQ(nearest(index, query), linear_nearest(pts, query));
  }
}

TEST(NeighborIndex, GridWithExactTies) {
  // Integer lattice queried at half-integer points: up to 8 equidistant hits.
  std::vector<Vec3> pts;
  for (int z = 0; z < 6; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) pts.emplace_back(x, y, z);
  const NeighborIndex index(pts);
  for (double x = 0.5; x < 5; x += 1.0)
    for (double y = 0.5; y < 5; y += 1.0) {
      const Vec3 q(x, y, 2.5);
      EXPECT_EQ(nearest(index, q), linear_nearest(pts, q));
    }
}

TEST(NeighborIndex, EmptyInputThrows) { EXPECT_THROW(NeighborIndex(std::vector<Vec3>{}), ContractViolation); }

TEST(Rng, UniformStaysInsideOpenInterval) {
  Rng rng(9);
  for (int i = 0; i < 100000; ++i) {
    const double v = rng.uniform(-0.05, 0.05);
    ASSERT_GT(v, -0.05);
    ASSERT_LT(v, 0.05);
  }
}

TEST(Rng, SameSeedSameStream) {
  Rng a(123), b(123);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next(), b.next());
  EXPECT_NE(mix_seed(1, 0), mix_seed(1, 1));
}

TEST(Rng, UniformIndexCoversRange) {
  Rng rng(10);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) counts[rng.uniform_index(7)]++;
  for (int c : counts) EXPECT_GT(c, 800);
}
