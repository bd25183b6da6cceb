#include "geosig/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "geosig/error.hpp"
#include "geosig/spatial_hash.hpp"

namespace geosig {

namespace {

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

  int find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a > b) std::swap(a, b);
    parent_[b] = a;  // smallest index is the root, so labelling is order-stable
  }

 private:
  std::vector<int> parent_;
};

/// Groups items by label into index lists, ordered by smallest member.
std::vector<std::vector<int>> group_by(const std::vector<int>& labels) {
  std::map<int, std::vector<int>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(static_cast<int>(i));
  std::vector<std::vector<int>> out;
  out.reserve(groups.size());
  for (auto& [_, members] : groups) out.push_back(std::move(members));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

std::vector<int> point_labels(const PatchSet& patches, std::size_t n) {
  std::vector<int> label(n, -1);
  for (std::size_t p = 0; p < patches.size(); ++p)
    for (int i : patches[p].point_ids) label[i] = static_cast<int>(p);
  return label;
}

std::vector<std::set<int>> patch_adjacency(const std::vector<int>& label, std::size_t patch_count,
                                           const PointGraph& graph) {
  std::vector<std::set<int>> adj(patch_count);
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const int a = label[i];
    if (a < 0) continue;
    for (int e = graph.offsets[i]; e < graph.offsets[i + 1]; ++e) {
      const int b = label[graph.targets[e]];
      if (b >= 0 && b != a) {
        adj[a].insert(b);
        adj[b].insert(a);
      }
    }
  }
  return adj;
}

PatchSet patches_from_groups(const std::vector<std::vector<int>>& groups, const PointCloud& cloud,
                             const PointGraph& graph, int level) {
  PatchSet out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    SurfacePatch p;
    p.id = static_cast<int>(out.size());
    p.level = level;
    p.point_ids = g;
    std::sort(p.point_ids.begin(), p.point_ids.end());
    refresh_patch(p, cloud, graph);
    out.push_back(std::move(p));
  }
  return out;
}

/// Weighted K-Means++ seeding followed by Lloyd iterations.
std::vector<int> kmeans_labels(const std::vector<Vec3>& x, const std::vector<double>& w, int k,
                               std::mt19937_64& rng, int iterations) {
  const std::size_t n = x.size();
  std::vector<Vec3> centers;
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  centers.push_back(x[rng() % n]);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (x[i] - centers.back()).squaredNorm());
      total += w[i] * d2[i];
    }
    if (!(total > 0.0)) break;
    double r = unit(rng) * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      r -= w[i] * d2[i];
      if (r <= 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(x[pick]);
  }

  std::vector<int> label(n, 0);
  for (int it = 0; it <= iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centers.size(); ++c) {
        const double d = (x[i] - centers[c]).squaredNorm();
        if (d < bd) {
          bd = d;
          best = static_cast<int>(c);
        }
      }
      changed |= label[i] != best;
      label[i] = best;
    }
    if (it == iterations || (!changed && it > 0)) break;
    std::vector<Vec3> sum(centers.size(), Vec3::Zero());
    std::vector<double> wsum(centers.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[label[i]] += w[i] * x[i];
      wsum[label[i]] += w[i];
    }
    for (std::size_t c = 0; c < centers.size(); ++c)
      if (wsum[c] > 0.0) centers[c] = sum[c] / wsum[c];
  }
  return label;
}

std::int64_t cell_of(double v, double s) { return static_cast<std::int64_t>(std::floor(v / s)); }

struct CellKey {
  std::int64_t x, y, z;
  auto operator<=>(const CellKey&) const = default;
};

std::map<CellKey, std::vector<int>> voxelize(const std::vector<Vec3>& pts, double s) {
  std::map<CellKey, std::vector<int>> cells;
  for (std::size_t i = 0; i < pts.size(); ++i)
    cells[{cell_of(pts[i].x(), s), cell_of(pts[i].y(), s), cell_of(pts[i].z(), s)}].push_back(static_cast<int>(i));
  return cells;
}

std::size_t occupied_cells(const std::vector<Vec3>& pts, double s) {
  std::unordered_map<std::uint64_t, char> cells;
  cells.reserve(pts.size());
  for (const Vec3& p : pts) {
    const auto h = static_cast<std::uint64_t>(cell_of(p.x(), s) * 73856093LL) ^
                   static_cast<std::uint64_t>(cell_of(p.y(), s) * 19349663LL) ^
                   static_cast<std::uint64_t>(cell_of(p.z(), s) * 83492791LL);
    cells.emplace(h, 0);
  }
  return cells.size();
}

}  // namespace

PointGraph build_point_graph(const PointCloud& cloud, const SegmentationConfig& cfg) {
  if (!cloud.has_normals()) throw Error(ErrorCode::InvalidArgument, "point graph requires normals");
  const std::size_t n = cloud.size();
  const double cos_crease = std::cos(cfg.crease_deg * M_PI / 180.0);

  std::vector<std::vector<int>> nbrs(n);
  PointGraph g;
  g.point_area.assign(n, 0.0);

  auto linked = [&](int a, int b) {
    const double gap = cfg.gap_abs + cfg.gap_rel * std::max(cloud.points[a].z(), cloud.points[b].z());
    return (cloud.points[a] - cloud.points[b]).norm() <= gap;
  };

  if (cloud.pixel_backed()) {
    const auto& K = *cloud.intrinsics;
    std::vector<int> at_pixel(static_cast<std::size_t>(K.width) * K.height, -1);
    for (std::size_t i = 0; i < n; ++i) at_pixel[cloud.pixel_index[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < n; ++i) {
      const int pix = cloud.pixel_index[i];
      const int u = pix % K.width;
      const int v = pix / K.width;
      const int right = u + 1 < K.width ? at_pixel[pix + 1] : -1;
      const int down = v + 1 < K.height ? at_pixel[pix + K.width] : -1;
      for (int j : {right, down}) {
        if (j >= 0 && linked(static_cast<int>(i), j)) {
          nbrs[i].push_back(j);
          nbrs[j].push_back(static_cast<int>(i));
        }
      }
      const Vec3& p = cloud.points[i];
      const double incidence = std::max(std::abs(cloud.normals[i].dot(p.normalized())), 0.25);
      g.point_area[i] = p.z() * p.z() / (K.fx * K.fy) / incidence;
    }
  } else {
    SpatialHash grid(cloud.points, cfg.graph_radius);
    std::vector<int> found;
    const double fallback_area = 0.25 * cfg.graph_radius * cfg.graph_radius;
    for (std::size_t i = 0; i < n; ++i) {
      found.clear();
      grid.radius_query(cloud.points[i], cfg.graph_radius, found);
      for (int j : found)
        if (j != static_cast<int>(i)) nbrs[i].push_back(j);
      g.point_area[i] = fallback_area;
    }
  }

  g.offsets.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(nbrs[i].begin(), nbrs[i].end());
    g.offsets[i + 1] = g.offsets[i] + static_cast<int>(nbrs[i].size());
  }
  g.targets.reserve(g.offsets[n]);
  g.smooth.reserve(g.offsets[n]);
  for (std::size_t i = 0; i < n; ++i)
    for (int j : nbrs[i]) {
      g.targets.push_back(j);
      g.smooth.push_back(cloud.normals[i].dot(cloud.normals[j]) >= cos_crease ? 1 : 0);
    }
  return g;
}

void refresh_patch(SurfacePatch& patch, const PointCloud& cloud, const PointGraph& graph) {
  Vec3 mean = Vec3::Zero();
  Vec3 nsum = Vec3::Zero();
  double area = 0.0;
  for (int i : patch.point_ids) {
    mean += cloud.points[i];
    if (cloud.has_normals()) nsum += cloud.normals[i];
    if (!graph.point_area.empty()) area += graph.point_area[i];
  }
  const double count = static_cast<double>(patch.point_ids.size());
  patch.mean = count > 0 ? Vec3(mean / count) : Vec3::Zero();
  patch.area = area;
  if (nsum.norm() > 1e-12) {
    patch.normal = nsum.normalized();
  } else {
    // opposing normals cancel; fall back to the sensor-facing direction
    const double m = patch.mean.norm();
    patch.normal = m > 0.0 ? Vec3(-patch.mean / m) : Vec3(0, 0, -1);
  }
}

PatchSet segment_base(const PointCloud& cloud, const PointGraph& graph, int target_count,
                      const SegmentationConfig& cfg) {
  if (target_count < 4) throw Error(ErrorCode::InvalidArgument, "target_count must be at least 4");
  if (cloud.size() < static_cast<std::size_t>(target_count))
    throw Error(ErrorCode::TooFewPoints, std::to_string(cloud.size()) + " points for " +
                                             std::to_string(target_count) + " patches");
  if (!cloud.has_normals()) throw Error(ErrorCode::InvalidArgument, "segment_base requires normals");
  const auto& pts = cloud.points;
  const std::size_t n = pts.size();

  // Pick the voxel edge whose occupied-cell count is closest to the target.
  double total_area = std::accumulate(graph.point_area.begin(), graph.point_area.end(), 0.0);
  Eigen::AlignedBox3d box;
  for (const Vec3& p : pts) box.extend(p);
  if (!(total_area > 0.0)) total_area = box.sizes().squaredNorm();
  double lo = 1e-4;
  double hi = std::max(box.sizes().maxCoeff(), 1e-3) * 2.0;
  double s = std::clamp(std::sqrt(total_area / target_count), lo, hi);
  for (int it = 0; it < 20; ++it) {
    const std::size_t c = occupied_cells(pts, s);
    if (c == static_cast<std::size_t>(target_count)) break;
    if (c > static_cast<std::size_t>(target_count)) lo = s; else hi = s;
    s = std::sqrt(lo * hi);
  }

  std::vector<Vec3> centers;
  for (const auto& [key, members] : voxelize(pts, s)) {
    Vec3 c = Vec3::Zero();
    for (int i : members) c += pts[i];
    c /= static_cast<double>(members.size());
    int best = members.front();
    double bd = std::numeric_limits<double>::infinity();
    for (int i : members) {
      const double d = (pts[i] - c).squaredNorm();
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    centers.push_back(pts[best]);
  }

  // Local-window K-Means: each center only claims points within 2s.
  std::vector<int> label(n, -1);
  std::vector<double> dist(n);
  SpatialHash grid(pts, s);
  std::vector<int> found;
  for (int it = 0; it < std::max(cfg.kmeans_iterations, 1); ++it) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < centers.size(); ++c) {
      found.clear();
      grid.radius_query(centers[c], 2.0 * s, found);
      for (int i : found) {
        const double d = (pts[i] - centers[c]).squaredNorm();
        if (d < dist[i] || (d == dist[i] && static_cast<int>(c) < label[i])) {
          dist[i] = d;
          label[i] = static_cast<int>(c);
        }
      }
    }
    std::vector<Vec3> sum(centers.size(), Vec3::Zero());
    std::vector<int> cnt(centers.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (label[i] < 0) continue;
      sum[label[i]] += pts[i];
      ++cnt[label[i]];
    }
    for (std::size_t c = 0; c < centers.size(); ++c)
      if (cnt[c] > 0) centers[c] = sum[c] / cnt[c];
  }
  // Points never reached keep a label through their nearest center.
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] >= 0) continue;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.size(); ++c) {
      const double d = (pts[i] - centers[c]).squaredNorm();
      if (d < bd) {
        bd = d;
        label[i] = static_cast<int>(c);
      }
    }
  }

  // Split clusters into components connected by smooth links.
  DisjointSet ds(n);
  for (std::size_t i = 0; i < n; ++i)
    for (int e = graph.offsets[i]; e < graph.offsets[i + 1]; ++e) {
      const int j = graph.targets[e];
      if (graph.smooth[e] && label[j] == label[i]) ds.unite(static_cast<int>(i), j);
    }
  std::vector<int> comp(n);
  for (std::size_t i = 0; i < n; ++i) comp[i] = ds.find(static_cast<int>(i));
  return patches_from_groups(group_by(comp), cloud, graph, 1);
}

PatchSet merge_small(PatchSet patches, const PointCloud& cloud, const PointGraph& graph, int min_points,
                     double min_area) {
  const std::size_t m = patches.size();
  if (m <= 1) return patches;
  auto adj = patch_adjacency(point_labels(patches, cloud.size()), m, graph);
  std::vector<char> alive(m, 1);
  std::size_t alive_count = m;

  auto small = [&](const SurfacePatch& p) {
    return static_cast<int>(p.point_ids.size()) < min_points || p.area < min_area;
  };

  while (alive_count > 1) {
    int victim = -1;
    for (std::size_t p = 0; p < m; ++p) {
      if (!alive[p] || !small(patches[p])) continue;
      if (victim < 0 || patches[p].point_ids.size() < patches[victim].point_ids.size()) victim = static_cast<int>(p);
    }
    if (victim < 0) break;

    int target = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (int q : adj[victim]) {
      if (!alive[q]) continue;
      const double score = patches[victim].normal.dot(patches[q].normal);
      if (score > best || (score == best && q < target)) {
        best = score;
        target = q;
      }
    }
    if (target < 0) {
      // isolated fragment: attach to the nearest surviving patch
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t q = 0; q < m; ++q) {
        if (!alive[q] || static_cast<int>(q) == victim) continue;
        const double d = (patches[q].mean - patches[victim].mean).squaredNorm();
        if (d < bd) {
          bd = d;
          target = static_cast<int>(q);
        }
      }
    }

    auto& dst = patches[target].point_ids;
    const auto& src = patches[victim].point_ids;
    std::vector<int> merged;
    merged.reserve(dst.size() + src.size());
    std::merge(dst.begin(), dst.end(), src.begin(), src.end(), std::back_inserter(merged));
    dst = std::move(merged);
    refresh_patch(patches[target], cloud, graph);

    for (int q : adj[victim]) {
      adj[q].erase(victim);
      if (q != target) {
        adj[q].insert(target);
        adj[target].insert(q);
      }
    }
    adj[target].erase(target);
    adj[victim].clear();
    alive[victim] = 0;
    --alive_count;
  }

  PatchSet out;
  for (std::size_t p = 0; p < m; ++p) {
    if (!alive[p]) continue;
    out.push_back(std::move(patches[p]));
    out.back().id = static_cast<int>(out.size()) - 1;
  }
  return out;
}

SegmentationHierarchy build_hierarchy(const PatchSet& base, const PointCloud& cloud, const PointGraph& graph,
                                      int levels, double reduction, std::uint64_t seed) {
  if (levels < 1) throw Error(ErrorCode::InvalidArgument, "hierarchy needs at least one level");
  if (!(reduction > 1.0)) throw Error(ErrorCode::InvalidArgument, "reduction must exceed 1");

  SegmentationHierarchy hier;
  hier.levels.push_back(base);
  for (auto& p : hier.levels.back()) p.level = 1;
  const SeedStream stream = SeedStream(seed).derive("hierarchy");

  for (int h = 1; h < levels; ++h) {
    const PatchSet& fine = hier.levels.back();
    const int count = static_cast<int>(fine.size());
    const int k = std::min(count, std::max(4, static_cast<int>(std::lround(count / reduction))));
    if (k >= count) {
      PatchSet same = fine;
      for (auto& p : same) p.level = h + 1;
      hier.levels.push_back(std::move(same));
      continue;
    }

    std::vector<Vec3> means;
    std::vector<double> weights;
    for (const auto& p : fine) {
      means.push_back(p.mean);
      weights.push_back(static_cast<double>(p.point_ids.size()));
    }
    auto rng = stream.derive(static_cast<std::uint64_t>(h)).engine();
    const std::vector<int> cluster = kmeans_labels(means, weights, k, rng, 10);

    const auto adj = patch_adjacency(point_labels(fine, cloud.size()), fine.size(), graph);
    DisjointSet ds(fine.size());
    for (std::size_t a = 0; a < fine.size(); ++a)
      for (int b : adj[a])
        if (cluster[a] == cluster[b]) ds.unite(static_cast<int>(a), b);

    std::vector<int> comp(fine.size());
    for (std::size_t a = 0; a < fine.size(); ++a) comp[a] = ds.find(static_cast<int>(a));
    std::vector<std::vector<int>> groups;
    for (const auto& members : group_by(comp)) {
      std::vector<int> pts;
      for (int a : members) pts.insert(pts.end(), fine[a].point_ids.begin(), fine[a].point_ids.end());
      groups.push_back(std::move(pts));
    }
    hier.levels.push_back(patches_from_groups(groups, cloud, graph, h + 1));
  }
  return hier;
}

SegmentationHierarchy segment_view(const PointCloud& cloud, const SegmentationConfig& cfg,
                                   const std::string& frame_id) {
  const PointGraph graph = build_point_graph(cloud, cfg);
  const int target = std::min<int>(cfg.base_target, static_cast<int>(cloud.size()));
  PatchSet base = segment_base(cloud, graph, std::max(target, 4), cfg);
  base = merge_small(std::move(base), cloud, graph, cfg.min_points, cfg.min_area);
  SegmentationHierarchy hier = build_hierarchy(base, cloud, graph, cfg.levels, cfg.reduction, cfg.seed);
  hier.frame_id = frame_id;
  return hier;
}

void export_segmentation(std::ostream& out, const SegmentationHierarchy& hier, std::size_t point_count) {
  out << "geosig-segmentation 1\n";
  out << "frame_id " << (hier.frame_id.empty() ? "-" : hier.frame_id) << '\n';
  out << "points " << point_count << '\n';
  out << "levels " << hier.height();
  for (const auto& level : hier.levels) out << ' ' << level.size();
  out << '\n';
  for (const auto& level : hier.levels) {
    const auto label = point_labels(level, point_count);
    for (std::size_t i = 0; i < label.size(); ++i) out << (i ? " " : "") << label[i];
    out << '\n';
  }
}

SegmentationHierarchy import_segmentation(std::istream& in, const PointCloud& cloud, const PointGraph& graph) {
  std::string tag, key;
  int version = 0;
  if (!(in >> tag >> version) || tag != "geosig-segmentation" || version != 1)
    throw Error(ErrorCode::UnsupportedFormat, "not a geosig segmentation file");
  SegmentationHierarchy hier;
  std::size_t points = 0;
  int levels = 0;
  if (!(in >> key >> hier.frame_id) || key != "frame_id") throw Error(ErrorCode::UnsupportedFormat, "missing frame_id");
  if (hier.frame_id == "-") hier.frame_id.clear();
  if (!(in >> key >> points) || key != "points") throw Error(ErrorCode::UnsupportedFormat, "missing points");
  if (points != cloud.size()) throw Error(ErrorCode::DimensionMismatch, "segmentation point count differs from cloud");
  if (!(in >> key >> levels) || key != "levels" || levels < 1) throw Error(ErrorCode::UnsupportedFormat, "missing levels");
  std::vector<std::size_t> counts(levels);
  for (auto& c : counts)
    if (!(in >> c)) throw Error(ErrorCode::UnsupportedFormat, "missing level counts");

  for (int h = 0; h < levels; ++h) {
    std::vector<int> label(points);
    for (auto& l : label)
      if (!(in >> l) || l < 0) throw Error(ErrorCode::UnsupportedFormat, "bad patch id at level " + std::to_string(h + 1));
    // keep the exported patch ids, so patch p reads back as patch p
    std::vector<std::vector<int>> groups(counts[h]);
    for (std::size_t i = 0; i < points; ++i) {
      if (static_cast<std::size_t>(label[i]) >= counts[h])
        throw Error(ErrorCode::UnsupportedFormat, "patch id out of range at level " + std::to_string(h + 1));
      groups[label[i]].push_back(static_cast<int>(i));
    }
    if (std::any_of(groups.begin(), groups.end(), [](const auto& g) { return g.empty(); }))
      throw Error(ErrorCode::UnsupportedFormat, "level " + std::to_string(h + 1) + " patch count mismatch");
    hier.levels.push_back(patches_from_groups(groups, cloud, graph, h + 1));
  }
  return hier;
}

}  // namespace geosig
