#include <algorithm>
#include <numbers>
#include <sstream>

#include "geosig/evaluation.hpp"
#include "geosig/features.hpp"
#include "helpers.hpp"

using namespace geosig;
using std::numbers::pi;

namespace {

SurfacePatch patch(const Vec3& mean, const Vec3& normal) {
  SurfacePatch p;
  p.mean = mean;
  p.normal = normal.normalized();
  p.point_ids = {0};
  return p;
}

FeatureConfig cfg_eps(double eps) {
  FeatureConfig c;
  c.eps_theta = eps;
  return c;
}

void expect_feature(const RawFeature& got, const std::array<double, 13>& want, double tol = 1e-12) {
  for (int i = 0; i < kRawFeatureDim; ++i) EXPECT_NEAR(got[i], want[i], tol) << "component " << i;
}

void expect_ranges(const RawFeature& f) {
  const double len = f[8];
  for (int i : {0, 1, 2}) {
    EXPECT_GE(f[i], 0.0);
    EXPECT_LE(f[i], pi);
  }
  EXPECT_LE(std::abs(f[3]), len + 1e-12);
  for (int i : {4, 5, 6}) EXPECT_LE(std::abs(f[i]), 1.0 + 1e-12);
  for (int i = 9; i < 13; ++i)
    EXPECT_TRUE(f[i] == 0.0 || f[i] == len || f[i] == -len) << "component " << i << " = " << f[i];
}

}  // namespace

TEST(GramSchmidt, AxisAligned) {
  const LocalBasis b = gram_schmidt_basis(Vec3(0, 0, 1), Vec3(2, 0, 0));
  EXPECT_LT((b.u - Vec3(1, 0, 0)).norm(), 1e-15);
  EXPECT_LT((b.v - Vec3(0, 0, 1)).norm(), 1e-15);
  EXPECT_LT((b.w - Vec3(0, -1, 0)).norm(), 1e-15);
}

TEST(GramSchmidt, Degenerate) {
  EXPECT_GEOSIG_ERROR(gram_schmidt_basis(Vec3(0, 0, 1), Vec3(0, 0, 3)), ErrorCode::DegenerateBasis);
  EXPECT_GEOSIG_ERROR(gram_schmidt_basis(Vec3(0, 0, 1), Vec3(0, 0, -3)), ErrorCode::DegenerateBasis);
  EXPECT_GEOSIG_ERROR(gram_schmidt_basis(Vec3(0, 0, 1), Vec3(1e-7, 0, 0)), ErrorCode::DegenerateBasis);
}

TEST(GramSchmidt, RandomDrawsAreOrthonormalRightHanded) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int i = 0; i < 10000; ++i) {
    const Vec3 normal = test::random_unit(rng);
    const Vec3 r(n(rng), n(rng), n(rng));
    const auto b = try_gram_schmidt_basis(normal, r);
    if (!b) continue;
    EXPECT_NEAR(b->u.norm(), 1.0, 1e-6);
    EXPECT_NEAR(b->v.norm(), 1.0, 1e-6);
    EXPECT_NEAR(b->w.norm(), 1.0, 1e-6);
    EXPECT_NEAR(b->u.dot(b->v), 0.0, 1e-6);
    EXPECT_NEAR(b->u.dot(b->w), 0.0, 1e-6);
    EXPECT_NEAR(b->v.dot(b->w), 0.0, 1e-6);
    EXPECT_LT((b->u.cross(b->v) - b->w).norm(), 1e-6);
  }
}

TEST(RobustSignum, ClampNearPerpendicular) {
  EXPECT_EQ(robust_signum(0.0, 0.01), 0);
  EXPECT_EQ(robust_signum(0.9, 0.1), 1);
  EXPECT_EQ(robust_signum(-0.9, 0.1), -1);
  EXPECT_EQ(robust_signum(std::sin(0.1) - 1e-9, 0.1), 0);
  EXPECT_EQ(robust_signum(std::sin(0.1) + 1e-3, 0.1), 1);
  EXPECT_EQ(robust_signum(-std::sin(0.1) - 1e-3, 0.1), -1);
}

TEST(PairFeature, HandEvaluatedCoplanarPair) {
  const RawFeature f = pair_feature(patch({0, 0, 0}, {0, 0, 1}), patch({2, 0, 0}, {0, 0, 1}), cfg_eps(0.1));
  expect_feature(f, {0, pi / 2, pi / 2, 0, 0, 1, 0, 0, 2, 0, 0, 2, 0});
}

TEST(PairFeature, FacingPair) {
  const RawFeature f = pair_feature(patch({0, 0, 0}, {0, 0, 1}), patch({1, 0, 0}, {0, 0, -1}), cfg_eps(0.1));
  // u = (1,0,0), v = (0,0,1), w = (0,-1,0); n_alpha . v = -1
  expect_feature(f, {pi, pi / 2, pi / 2, 0, 0, -1, 0, 0, 1, 0, 0, -1, 0});
}

TEST(PairFeature, TiltedPairAgainstDirectFormula) {
  const Vec3 nm = Vec3(0.2, -0.3, 1.0).normalized(), na = Vec3(-0.5, 0.4, 0.7).normalized();
  const Vec3 lm(0.1, 0.2, 0.3), la(1.4, -0.6, 0.9);
  const RawFeature f = pair_feature(patch(lm, nm), patch(la, na), cfg_eps(0.06));
  const Vec3 r = la - lm, u = r.normalized();
  const Vec3 v = (nm - nm.dot(u) * u).normalized(), w = u.cross(v);
  auto ang = [](const Vec3& a, const Vec3& b) { return std::acos(std::clamp(a.dot(b), -1.0, 1.0)); };
  auto sgn = [](double a) { return std::abs(a) <= std::sin(0.06) ? 0.0 : (a > 0 ? 1.0 : -1.0); };
  const double L = r.norm();
  expect_feature(f, {ang(na, nm), ang(u, nm), ang(u, na), r.dot(nm), na.dot(u), na.dot(v), na.dot(w),
                     r.dot(na.cross(nm)), L, L * sgn(nm.dot(u)), L * sgn(na.dot(u)), L * sgn(na.dot(v)),
                     L * sgn(na.dot(w))},
                 1e-9);
  expect_ranges(f);
}

TEST(PairFeature, RigidInvarianceAndRanges) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3, 3);
  const FeatureConfig cfg;
  int checked = 0;
  for (int i = 0; i < 20000; ++i) {
    const Vec3 lm(u(rng), u(rng), u(rng)), la(u(rng), u(rng), u(rng));
    const Vec3 nm = test::random_unit(rng), na = test::random_unit(rng);
    const auto f = try_pair_feature(lm, nm, la, na, cfg.eps_theta);
    if (!f) continue;
    expect_ranges(*f);
    const RigidTransform T = test::random_transform(rng, 10.0);
    const auto g = try_pair_feature(T.apply(lm), T.R * nm, T.apply(la), T.R * na, cfg.eps_theta);
    ASSERT_TRUE(g);
    for (int c = 0; c < kRawFeatureDim; ++c) ASSERT_NEAR((*f)[c], (*g)[c], 1e-6) << "component " << c;
    ++checked;
  }
  EXPECT_GT(checked, 19000);
}

TEST(PatchFeatureSet, SingletonAndTinyRadius) {
  PatchSet one = {patch({0, 0, 0}, {0, 0, 1})};
  EXPECT_TRUE(patch_feature_set(0, one, FeatureConfig{}).empty());
  PatchSet spread = {patch({0, 0, 0}, {0, 0, 1}), patch({1, 0, 0}, {0, 0, 1}), patch({0, 1, 0}, {0, 0, 1})};
  FeatureConfig c;
  c.neighbor_radius = 0.5;
  EXPECT_TRUE(patch_feature_set(0, spread, c).empty());
  EXPECT_GEOSIG_ERROR(patch_feature_set(3, spread, c), ErrorCode::InvalidArgument);
}

TEST(PatchFeatureSet, CoplanarPatches) {
  PatchSet level;
  for (const Vec3& p : {Vec3(0, 0, 2), Vec3(0.5, 0, 2), Vec3(-0.5, 0.2, 2), Vec3(0.1, 0.7, 2), Vec3(0.3, -0.4, 2)})
    level.push_back(patch(p, {0, 0, -1}));
  const LevelFeatures f = patch_feature_set(0, level, FeatureConfig{});
  ASSERT_EQ(f.size(), 4u);
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_NEAR(f.features[i][0], 0.0, 1e-9);
    EXPECT_EQ(f.provenance[i].first, 0);
  }
}

TEST(PatchFeatureSet, RadiusMonotonicityAndCap) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-4, 4);
  PatchSet level;
  for (int i = 0; i < 80; ++i) level.push_back(patch({u(rng), u(rng), u(rng)}, test::random_unit(rng)));
  FeatureConfig c;
  c.max_neighbors = 1000;
  std::size_t prev = 0;
  for (double r : {0.5, 1.0, 2.0, 3.0, 5.0, 8.0, 20.0}) {
    c.neighbor_radius = r;
    const std::size_t n = patch_feature_set(5, level, c).size();
    EXPECT_GE(n, prev);
    prev = n;
  }
  EXPECT_EQ(prev, 79u);
  c.max_neighbors = 10;
  EXPECT_EQ(patch_feature_set(5, level, c).size(), 10u);
}

TEST(FrameFeatureSets, ExhaustiveCardinalityAndDeterminism) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-2, 2);
  SegmentationHierarchy hier;
  for (int h = 0; h < 3; ++h) {
    PatchSet level;
    for (int i = 0; i < 30 - 8 * h; ++i) level.push_back(patch({u(rng), u(rng), u(rng)}, test::random_unit(rng)));
    hier.levels.push_back(level);
  }
  FeatureConfig c;
  c.neighbor_radius = 2.5;
  c.max_neighbors = 1000;
  const auto full = frame_feature_sets(hier, c);
  ASSERT_EQ(full.size(), 3u);
  for (int h = 0; h < 3; ++h) {
    std::size_t expect = 0;
    for (std::size_t mu = 0; mu < hier.levels[h].size(); ++mu) expect += patch_feature_set(mu, hier.levels[h], c).size();
    EXPECT_EQ(full[h].size(), expect);
  }
  c.patch_sample_fraction = 0.5;
  c.neighbor_sample_fraction = 0.5;
  c.seed = 77;
  const auto a = frame_feature_sets(hier, c), b = frame_feature_sets(hier, c);
  for (int h = 0; h < 3; ++h) {
    EXPECT_EQ(a[h].features, b[h].features);
    EXPECT_EQ(a[h].provenance, b[h].provenance);
    EXPECT_LT(a[h].size(), full[h].size());
  }
}

TEST(FrameFeatureSets, TwoPosesOfOneRoomAgree) {
  // Nearly the same view from two sensor poses: the feature multisets should
  // coincide up to segmentation jitter.
  const SceneSpec room = make_room(5);
  const Pose a = loop_pose(room, 5, 0, 40);
  const Pose b{a.R * Eigen::AngleAxisd(0.03, Vec3::UnitZ()).toRotationMatrix(), a.t + Vec3(0.02, -0.01, 0.0)};
  const PipelineConfig cfg = synthetic_pipeline_config(3);
  auto features_of = [&](const Pose& p) {
    RangeFrame f = synth_scene(room, p, synthetic_intrinsics());
    return frame_features(segment_frame(f, cfg), cfg);
  };
  const auto fa = features_of(a), fb = features_of(b);
  ASSERT_EQ(fa.size(), fb.size());
  for (std::size_t h = 0; h < fa.size(); ++h) {
    ASSERT_FALSE(fa[h].empty());
    // distances in units of the RMS feature magnitude of the first set
    double rms = 0.0;
    for (const auto& f : fa[h].features)
      for (int c = 0; c < kRawFeatureDim; ++c) rms += f[c] * f[c] / fa[h].size();
    rms = std::sqrt(rms);
    std::vector<double> dists;
    for (std::size_t i = 0; i < fb[h].size(); i += 7) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& g : fa[h].features) {
        double d = 0.0;
        for (int c = 0; c < kRawFeatureDim; ++c) d += std::pow(fb[h].features[i][c] - g[c], 2);
        best = std::min(best, d);
      }
      dists.push_back(std::sqrt(best) / rms);
    }
    EXPECT_LE(median(dists), 0.05) << "level " << h;
  }
}

TEST(DumpFeatures, OneRowPerFeature) {
  LevelFeatures l;
  l.features.push_back(RawFeature{});
  l.provenance.emplace_back(3, 4);
  std::ostringstream out;
  dump_features(out, {l, l});
  const std::string s = out.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 2);
  EXPECT_EQ(s.substr(0, 6), "1 3 4 ");
  EXPECT_EQ(s.substr(s.find('\n') + 1, 6), "2 3 4 ");
}
