#include <numbers>
#include <sstream>

#include "geosig/segmentation.hpp"
#include "helpers.hpp"

using namespace geosig;

namespace {

CameraIntrinsics camera(int w = 96, int h = 64) {
  CameraIntrinsics K;
  K.fx = K.fy = 80.0;
  K.cx = w / 2.0;
  K.cy = h / 2.0;
  K.width = w;
  K.height = h;
  return K;
}

PointCloud render(const SceneSpec& s, const Pose& pose = Pose::identity(), const CameraIntrinsics& K = camera()) {
  return estimate_normals(depth_to_cloud(synth_scene(s, pose, K)), 0.08);
}

SceneSpec frontal_plane(double z = 2.0) {
  SceneSpec s;
  s.planes.push_back({Vec3(0, 0, z), Vec3(0, 0, -1), 20.0, 20.0});
  return s;
}

void expect_partition(const PatchSet& level, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const auto& p : level) {
    ASSERT_FALSE(p.point_ids.empty());
    for (int i : p.point_ids) ++seen[i];
  }
  for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(seen[i], 1) << "point " << i;
}

void expect_patch_invariants(const PatchSet& level, const PointCloud& cloud) {
  for (const auto& p : level) {
    EXPECT_NEAR(p.normal.norm(), 1.0, 1e-6);
    Vec3 c = Vec3::Zero();
    for (int i : p.point_ids) c += cloud.points[i];
    c /= static_cast<double>(p.point_ids.size());
    EXPECT_LT((c - p.mean).norm(), 1e-6);
    EXPECT_TRUE(std::is_sorted(p.point_ids.begin(), p.point_ids.end()));
  }
}

/// Base level made by cutting the image into a cols x rows grid of pixel blocks.
PatchSet grid_patches(const PointCloud& cloud, const PointGraph& graph, int cols, int rows) {
  const auto& K = *cloud.intrinsics;
  PatchSet out(static_cast<std::size_t>(cols) * rows);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int u = cloud.pixel_index[i] % K.width, v = cloud.pixel_index[i] / K.width;
    const int c = u * cols / K.width, r = v * rows / K.height;
    out[static_cast<std::size_t>(r) * cols + c].point_ids.push_back(static_cast<int>(i));
  }
  for (std::size_t p = 0; p < out.size(); ++p) {
    out[p].id = static_cast<int>(p);
    refresh_patch(out[p], cloud, graph);
  }
  return out;
}

}  // namespace

TEST(SegmentBase, ParallelPlanesNeverShareAPatch) {
  SceneSpec s;
  s.planes.push_back({Vec3(-0.6, 0, 2), Vec3(0, 0, -1), 0.55, 5.0});
  s.planes.push_back({Vec3(0.6, 0, 3), Vec3(0, 0, -1), 0.8, 5.0});
  const PointCloud cloud = render(s);
  SegmentationConfig cfg;
  const PointGraph g = build_point_graph(cloud, cfg);
  const PatchSet patches = segment_base(cloud, g, 10, cfg);
  expect_partition(patches, cloud.size());
  for (const auto& p : patches) {
    bool near = false, far = false;
    for (int i : p.point_ids) (cloud.points[i].z() < 2.5 ? near : far) = true;
    EXPECT_FALSE(near && far);
  }
}

TEST(SegmentBase, PlanarCloudGivesCompactAlignedPatches) {
  const PointCloud cloud = render(frontal_plane());
  SegmentationConfig cfg;
  const PointGraph g = build_point_graph(cloud, cfg);
  const PatchSet patches = segment_base(cloud, g, 9, cfg);
  expect_partition(patches, cloud.size());
  expect_patch_invariants(patches, cloud);
  EXPECT_GE(patches.size(), 7u);
  EXPECT_LE(patches.size(), 12u);
  for (const auto& p : patches) {
    const double ang = std::acos(std::min(1.0, std::abs(p.normal.dot(Vec3::UnitZ())))) * 180.0 / std::numbers::pi;
    EXPECT_LE(ang, 2.0);
  }
}

TEST(SegmentBase, TooFewPoints) {
  PointCloud c;
  c.points = {{0, 0, 1}, {0.01, 0, 1}, {0, 0.01, 1}};
  c = estimate_normals(std::move(c), 0.05);
  SegmentationConfig cfg;
  const PointGraph g = build_point_graph(c, cfg);
  EXPECT_GEOSIG_ERROR(segment_base(c, g, 10, cfg), ErrorCode::TooFewPoints);
}

TEST(MergeSmall, FoldsTinyPatchIntoNeighbor) {
  const PointCloud cloud = render(frontal_plane(), Pose::identity(), camera(25, 21));
  ASSERT_EQ(cloud.size(), 525u);
  SegmentationConfig cfg;
  const PointGraph g = build_point_graph(cloud, cfg);
  PatchSet two(2);
  for (std::size_t i = 0; i < cloud.size(); ++i) two[i < 5 ? 0 : 1].point_ids.push_back(static_cast<int>(i));
  two[1].point_ids.resize(500);  // 5 + 500 points
  PointCloud sub = cloud;
  sub.points.resize(505);
  sub.normals.resize(505);
  sub.pixel_index.resize(505);
  const PointGraph gs = build_point_graph(sub, cfg);
  for (auto& p : two) refresh_patch(p, sub, gs);
  const PatchSet merged = merge_small(two, sub, gs, 10, 0.0);
  ASSERT_EQ(merged.size(), 1u);
  EXPECT_EQ(merged[0].point_ids.size(), 505u);
  expect_patch_invariants(merged, sub);
  (void)g;
}

TEST(MergeSmall, IdentityWhenAllLargeEnough) {
  const PointCloud cloud = render(frontal_plane());
  SegmentationConfig cfg;
  const PointGraph g = build_point_graph(cloud, cfg);
  const PatchSet base = grid_patches(cloud, g, 4, 4);
  const PatchSet out = merge_small(base, cloud, g, 10, 1e-4);
  ASSERT_EQ(out.size(), base.size());
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i].point_ids, base[i].point_ids);
}

TEST(MergeSmall, ChainOfSmallPatchesTerminates) {
  const PointCloud cloud = render(frontal_plane(), Pose::identity(), camera(30, 4));
  SegmentationConfig cfg;
  const PointGraph g = build_point_graph(cloud, cfg);
  // three 8-point strips next to a 96-point block
  const PatchSet base = grid_patches(cloud, g, 15, 1);
  PatchSet chain;
  for (int c = 0; c < 15; ++c) {
    if (c < 3) {
      chain.push_back(base[c]);
    } else if (c == 3) {
      chain.push_back(base[c]);
    } else {
      auto& dst = chain.back().point_ids;
      dst.insert(dst.end(), base[c].point_ids.begin(), base[c].point_ids.end());
      std::sort(dst.begin(), dst.end());
    }
  }
  for (auto& p : chain) refresh_patch(p, cloud, g);
  const PatchSet out = merge_small(chain, cloud, g, 20, 0.0);
  expect_partition(out, cloud.size());
  for (const auto& p : out) EXPECT_GE(p.point_ids.size(), 20u);
}

TEST(Hierarchy, LevelCountsFollowReduction) {
  const PointCloud cloud = render(frontal_plane(), Pose::identity(), camera(160, 128));
  SegmentationConfig cfg;
  const PointGraph g = build_point_graph(cloud, cfg);
  const PatchSet base = grid_patches(cloud, g, 16, 16);
  const auto hier = build_hierarchy(base, cloud, g, 4, 2.5, 1);
  ASSERT_EQ(hier.height(), 4);
  const double expected[] = {256, 102, 41, 16};
  for (int h = 0; h < 4; ++h) {
    expect_partition(hier.levels[h], cloud.size());
    expect_patch_invariants(hier.levels[h], cloud);
    // adjacency splitting can only add a few clusters
    EXPECT_GE(static_cast<double>(hier.levels[h].size()), expected[h]) << h;
    EXPECT_LE(static_cast<double>(hier.levels[h].size()), 1.1 * expected[h] + 1) << h;
    if (h) EXPECT_LE(hier.levels[h].size(), hier.levels[h - 1].size());
  }
}

TEST(Hierarchy, SingleLevelAndClamp) {
  const PointCloud cloud = render(frontal_plane());
  SegmentationConfig cfg;
  const PointGraph g = build_point_graph(cloud, cfg);
  const auto one = build_hierarchy(grid_patches(cloud, g, 4, 4), cloud, g, 1, 2.5, 1);
  ASSERT_EQ(one.height(), 1);
  EXPECT_EQ(one.levels[0].size(), 16u);
  const auto clamp = build_hierarchy(grid_patches(cloud, g, 2, 2), cloud, g, 4, 2.5, 1);
  ASSERT_EQ(clamp.height(), 4);
  for (const auto& level : clamp.levels) EXPECT_EQ(level.size(), 4u);
  EXPECT_GEOSIG_ERROR(build_hierarchy(one.levels[0], cloud, g, 0, 2.5, 1), ErrorCode::InvalidArgument);
  EXPECT_GEOSIG_ERROR(build_hierarchy(one.levels[0], cloud, g, 2, 1.0, 1), ErrorCode::InvalidArgument);
}

TEST(SegmentView, RoomPartitionAndDeterminism) {
  SceneSpec s;
  s.boxes.push_back({Vec3(0, 0, 0), Vec3(3, 3, 2)});
  s.boxes.push_back({Vec3(1.0, 0.3, 2.0), Vec3(0.3, 0.3, 0.4)});
  s.planes.push_back({Vec3(-0.5, -0.2, 2.2), Vec3(0.3, 0.2, -1).normalized(), 0.4, 0.3});
  const PointCloud cloud = render(s);
  SegmentationConfig cfg;
  cfg.base_target = 200;
  cfg.seed = 9;
  const auto a = segment_view(cloud, cfg, "f");
  const auto b = segment_view(cloud, cfg, "f");
  ASSERT_EQ(a.height(), cfg.levels);
  for (int h = 0; h < a.height(); ++h) {
    expect_partition(a.levels[h], cloud.size());
    expect_patch_invariants(a.levels[h], cloud);
    if (h) EXPECT_LE(a.levels[h].size(), a.levels[h - 1].size());
    ASSERT_EQ(a.levels[h].size(), b.levels[h].size());
    for (std::size_t p = 0; p < a.levels[h].size(); ++p) EXPECT_EQ(a.levels[h][p].point_ids, b.levels[h][p].point_ids);
  }
  for (const auto& p : a.levels[0]) {
    EXPECT_GE(static_cast<int>(p.point_ids.size()), cfg.min_points);
    EXPECT_GE(p.area, cfg.min_area);
  }
}

TEST(SegmentationFile, ExportImportRoundTrip) {
  SceneSpec s = frontal_plane();
  s.boxes.push_back({Vec3(0.3, 0, 1.5), Vec3(0.2, 0.2, 0.2)});
  const PointCloud cloud = render(s);
  SegmentationConfig cfg;
  cfg.base_target = 60;
  const auto hier = segment_view(cloud, cfg, "frame-1");
  std::stringstream io;
  export_segmentation(io, hier, cloud.size());
  const PointGraph g = build_point_graph(cloud, cfg);
  const auto back = import_segmentation(io, cloud, g);
  EXPECT_EQ(back.frame_id, "frame-1");
  ASSERT_EQ(back.height(), hier.height());
  for (int h = 0; h < hier.height(); ++h) {
    ASSERT_EQ(back.levels[h].size(), hier.levels[h].size());
    for (std::size_t p = 0; p < hier.levels[h].size(); ++p) {
      EXPECT_EQ(back.levels[h][p].point_ids, hier.levels[h][p].point_ids);
      EXPECT_LT((back.levels[h][p].mean - hier.levels[h][p].mean).norm(), 1e-12);
    }
  }
  std::istringstream bad("something else\n");
  EXPECT_GEOSIG_ERROR(import_segmentation(bad, cloud, g), ErrorCode::UnsupportedFormat);
}
