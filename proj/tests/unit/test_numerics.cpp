#include <cmath>
#include <numbers>
#include <set>

#include "helpers.hpp"

using namespace geosig;
using geosig::test::random_rotation;
using geosig::test::random_transform;

TEST(Procrustes, IdentityWhenPointsCoincide) {
  std::vector<Vec3> src = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const RigidTransform T = procrustes_align(src, src);
  EXPECT_LT((T.R - Mat3::Identity()).norm(), 1e-12);
  EXPECT_LT(T.t.norm(), 1e-12);
}

TEST(Procrustes, RecoversKnownMotion) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const RigidTransform truth = random_transform(rng);
    std::vector<Vec3> src, dst;
    std::uniform_real_distribution<double> u(-2, 2);
    for (int i = 0; i < 10; ++i) {
      src.emplace_back(u(rng), u(rng), u(rng));
      dst.push_back(truth.apply(src.back()));
    }
    const RigidTransform T = procrustes_align(src, dst);
    EXPECT_LT((T.R - truth.R).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((T.t - truth.t).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_TRUE(T.is_valid());
  }
}

TEST(Procrustes, NoisyPairsStayWithinHalfDegree) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int trial = 0; trial < 50; ++trial) {
    const RigidTransform truth = random_transform(rng);
    std::vector<Vec3> src, dst;
    for (int i = 0; i < 100; ++i) {
      src.emplace_back(u(rng), u(rng), u(rng));
      dst.push_back(truth.apply(src.back()) + Vec3(noise(rng), noise(rng), noise(rng)));
    }
    const RigidTransform T = procrustes_align(src, dst);
    EXPECT_LE(rotation_angle(T.R.transpose() * truth.R) * 180.0 / std::numbers::pi, 0.5);
  }
}

TEST(Procrustes, RejectsDegenerateInput) {
  std::vector<Vec3> two = {{0, 0, 0}, {1, 0, 0}};
  EXPECT_GEOSIG_ERROR(procrustes_align(two, two), ErrorCode::DegenerateConfiguration);
  std::vector<Vec3> line = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  EXPECT_GEOSIG_ERROR(procrustes_align(line, line), ErrorCode::DegenerateConfiguration);
}

TEST(Procrustes, ReflectionGuardKeepsProperRotation) {
  // Mirror image of a tetrahedron: the best proper rotation still has det +1.
  std::vector<Vec3> src = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  std::vector<Vec3> dst;
  for (const auto& p : src) dst.emplace_back(-p.x(), p.y(), p.z());
  const RigidTransform T = procrustes_align(src, dst);
  EXPECT_NEAR(T.R.determinant(), 1.0, 1e-9);
}

TEST(Rotation, LogOfIdentityIsZero) { EXPECT_LT(rot_log(Mat3::Identity()).norm(), 1e-15); }

TEST(Rotation, QuarterTurnAboutZ) {
  const Vec3 v = rot_log(test::yaw(std::numbers::pi / 2));
  EXPECT_NEAR(v.x(), 0.0, 1e-9);
  EXPECT_NEAR(v.y(), 0.0, 1e-9);
  EXPECT_NEAR(v.z(), std::numbers::pi / 2, 1e-9);
}

TEST(Rotation, ExpLogRoundTrip) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10000; ++i) {
    const Mat3 R = random_rotation(rng);
    EXPECT_LT((rot_exp(rot_log(R)) - R).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Rotation, SmallAnglesAndHalfTurn) {
  for (double a : {1e-12, 1e-8, 5e-5, 2e-4, 1.0, std::numbers::pi - 1e-7, std::numbers::pi}) {
    const Vec3 axis = Vec3(1, 2, 3).normalized();
    const Mat3 R = Eigen::AngleAxisd(a, axis).toRotationMatrix();
    const Vec3 v = rot_log(R);
    EXPECT_NEAR(v.norm(), a, 1e-9) << a;
    EXPECT_LT((rot_exp(v) - R).cwiseAbs().maxCoeff(), 1e-9) << a;
  }
}

TEST(Rotation, AngleMatchesQuaternionOracle) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 R = random_rotation(rng);
    const Eigen::Quaterniond q(R);
    const double oracle = 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
    EXPECT_NEAR(rotation_angle(R), oracle, 1e-9);
  }
}

TEST(RigidTransform, InverseAndComposition) {
  std::mt19937_64 rng(7);
  const RigidTransform a = random_transform(rng), b = random_transform(rng);
  const RigidTransform id = a * a.inverse();
  EXPECT_LT((id.R - Mat3::Identity()).norm(), 1e-12);
  EXPECT_LT(id.t.norm(), 1e-12);
  const Vec3 p(0.3, -1.2, 2.0);
  EXPECT_LT(((a * b).apply(p) - a.apply(b.apply(p))).norm(), 1e-12);
  EXPECT_LT((RigidTransform::from_matrix(a.matrix()).R - a.R).norm(), 0.0 + 1e-15);
}

TEST(LogSumExp, Basics) {
  EXPECT_NEAR(logsumexp(std::vector<double>{0.0, 0.0}), std::log(2.0), 1e-15);
  EXPECT_NEAR(logsumexp(std::vector<double>{1000.0, 1000.0}), 1000.0 + std::log(2.0), 1e-12);
  EXPECT_GEOSIG_ERROR(logsumexp(std::vector<double>{}), ErrorCode::InvalidArgument);
}

TEST(LogSumExp, MatchesNaiveFormula) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-20, 20);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(1 + trial % 9);
    double naive = 0.0;
    for (auto& x : v) {
      x = u(rng);
      naive += std::exp(x);
    }
    EXPECT_NEAR(logsumexp(v), std::log(naive), 1e-12);
  }
}

TEST(SeedStream, SamePathSameStream) {
  const SeedStream a = SeedStream(42).derive("gmm").derive(3);
  const SeedStream b = SeedStream(42).derive("gmm").derive(3);
  EXPECT_EQ(a.seed(), b.seed());
  auto ea = a.engine(), eb = b.engine();
  for (int i = 0; i < 100; ++i) EXPECT_EQ(ea(), eb());
}

TEST(SeedStream, DistinctPathsDiffer) {
  const SeedStream root(42);
  std::set<std::uint64_t> seen;
  for (const char* label : {"a", "b", "ica", "gmm", "validate"}) seen.insert(root.derive(label).seed());
  for (std::uint64_t i = 0; i < 100; ++i) seen.insert(root.derive(i).seed());
  EXPECT_EQ(seen.size(), 105u);
  EXPECT_NE(SeedStream(1).derive("x").seed(), SeedStream(2).derive("x").seed());
  EXPECT_NE(root.derive("a").derive("b").seed(), root.derive("b").derive("a").seed());
}

TEST(SampleIndices, SortedDistinctInRange) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 50;
    const std::size_t k = trial % (n + 1);
    const auto idx = sample_indices(n, k, rng);
    ASSERT_EQ(idx.size(), k);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      EXPECT_LT(idx[i], n);
      if (i) EXPECT_LT(idx[i - 1], idx[i]);
    }
  }
}

TEST(Median, OddAndEven) {
  EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
}
