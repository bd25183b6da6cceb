#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "geosig/numerics.hpp"
#include "geosig/scene.hpp"

namespace geosig {

struct SurfacePatch {
  int id = 0;
  Vec3 mean = Vec3::Zero();    // centroid of member points
  Vec3 normal = Vec3::UnitZ();  // normalized mean of member normals
  std::vector<int> point_ids;  // sorted
  double area = 0.0;           // m^2
  int level = 1;
};

using PatchSet = std::vector<SurfacePatch>;

struct SegmentationHierarchy {
  std::string frame_id;
  std::vector<PatchSet> levels;  // levels[0] is the finest

  int height() const { return static_cast<int>(levels.size()); }
};

struct SegmentationConfig {
  int base_target = 1000;
  int levels = 4;
  double reduction = 2.5;
  int min_points = 20;
  double min_area = 1e-3;
  int kmeans_iterations = 6;
  // Point-graph construction: neighbors are linked when closer than
  // gap_abs + gap_rel * depth; a link is "smooth" when normals differ by less than crease_deg.
  double gap_abs = 0.02;
  double gap_rel = 0.03;
  double crease_deg = 35.0;
  double graph_radius = 0.05;  // unstructured clouds only
  std::uint64_t seed = 0;
};

/// Point adjacency in CSR layout.
struct PointGraph {
  std::vector<int> offsets;  // size n + 1
  std::vector<int> targets;
  std::vector<std::uint8_t> smooth;
  std::vector<double> point_area;

  std::size_t size() const { return offsets.empty() ? 0 : offsets.size() - 1; }
};

/// Pixel-grid adjacency for pixel-backed clouds, radius graph otherwise. Requires normals.
PointGraph build_point_graph(const PointCloud& cloud, const SegmentationConfig& cfg);

/// Recomputes mean, normal and area from point_ids.
void refresh_patch(SurfacePatch& patch, const PointCloud& cloud, const PointGraph& graph);

/// Surface-seeded K-Means over positions, split into smoothly connected components.
PatchSet segment_base(const PointCloud& cloud, const PointGraph& graph, int target_count,
                      const SegmentationConfig& cfg);

/// Folds patches below min_points / min_area into the adjacent patch with the closest normal.
PatchSet merge_small(PatchSet patches, const PointCloud& cloud, const PointGraph& graph, int min_points,
                     double min_area);

/// Agglomerative hierarchy: K-Means over patch means, clusters split along patch adjacency.
SegmentationHierarchy build_hierarchy(const PatchSet& base, const PointCloud& cloud, const PointGraph& graph,
                                      int levels, double reduction, std::uint64_t seed);

/// Full chain: graph, base segmentation, merge, hierarchy.
SegmentationHierarchy segment_view(const PointCloud& cloud, const SegmentationConfig& cfg,
                                   const std::string& frame_id = {});

/// Patch-id-per-point text format:
///   geosig-segmentation 1
///   frame_id <id>
///   points <N>
///   levels <H> <c_1> ... <c_H>
///   followed by H lines of N patch ids.
void export_segmentation(std::ostream& out, const SegmentationHierarchy& hier, std::size_t point_count);
SegmentationHierarchy import_segmentation(std::istream& in, const PointCloud& cloud, const PointGraph& graph);

}  // namespace geosig
