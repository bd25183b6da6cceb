#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

#include "geosig/numerics.hpp"
#include "geosig/segmentation.hpp"

namespace geosig {

inline constexpr int kRawFeatureDim = 13;

/// Pairwise geometric properties of a patch μ relative to a neighbor α:
///   0 angle(n_α, n_μ)      1 angle(u, n_μ)       2 angle(u, n_α)
///   3 r·n_μ                4 n_α·u               5 n_α·v            6 n_α·w
///   7 r·(n_α × n_μ)        8 |r|
///   9..12 |r|·sgn_ε of (n_μ·u, n_α·u, n_α·v, n_α·w)
/// with r = l_α - l_μ and (u, v, w) the basis from gram_schmidt_basis(n_μ, r).
using RawFeature = std::array<double, kRawFeatureDim>;

struct LocalBasis {
  Vec3 u, v, w;
};

struct FeatureConfig {
  double neighbor_radius = 3.0;  // m
  double eps_theta = 0.06;       // rad
  int max_neighbors = 64;
  double patch_sample_fraction = 1.0;
  double neighbor_sample_fraction = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Orthonormal right-handed frame with u along r. Throws DegenerateBasis when
/// r is tiny or (anti)parallel to the normal.
LocalBasis gram_schmidt_basis(const Vec3& normal, const Vec3& r);
std::optional<LocalBasis> try_gram_schmidt_basis(const Vec3& normal, const Vec3& r);

/// Sign of `a` with a dead zone |a| <= sin(eps_theta) (angle within eps_theta of perpendicular).
int robust_signum(double a, double eps_theta);

/// Angle between two unit vectors, accurate near 0 and pi.
double unit_angle(const Vec3& a, const Vec3& b);

RawFeature pair_feature(const SurfacePatch& mu, const SurfacePatch& alpha, const FeatureConfig& cfg);
std::optional<RawFeature> try_pair_feature(const Vec3& mean_mu, const Vec3& normal_mu, const Vec3& mean_alpha,
                                           const Vec3& normal_alpha, double eps_theta);

struct LevelFeatures {
  std::vector<RawFeature> features;
  std::vector<std::pair<int, int>> provenance;  // (patch index, neighbor index) per feature

  std::size_t size() const { return features.size(); }
  bool empty() const { return features.empty(); }
};

/// Features of patch `mu` against its radius neighborhood in `level`.
LevelFeatures patch_feature_set(std::size_t mu, const PatchSet& level, const FeatureConfig& cfg,
                                std::uint64_t stream_seed = 0);

/// Per-level aggregated feature sets; patch and neighbor sampling seeded from cfg.seed.
std::vector<LevelFeatures> frame_feature_sets(const SegmentationHierarchy& hier, const FeatureConfig& cfg);

/// Debug dump: one row per feature, "level patch neighbor f0 ... f12".
void dump_features(std::ostream& out, const std::vector<LevelFeatures>& levels);

}  // namespace geosig
