#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "geosig/feature_space.hpp"
#include "geosig/features.hpp"
#include "geosig/numerics.hpp"
#include "geosig/scene.hpp"
#include "geosig/segmentation.hpp"

namespace geosig {

inline constexpr int kDescriptorDim = 2 * kProjectedDim;

/// Mean and per-dimension standard deviation of a patch's projected feature set.
using PatchDescriptor = Eigen::Matrix<double, kDescriptorDim, 1>;

struct ValidationConfig {
  double max_residual_angle = 0.05;  // rad
  double max_residual_translation = 0.10;  // m
  int ransac_iters = 500;
  double inlier_dist = 0.05;  // m
  int min_inliers = 12;
  // Patch centroids slide along large surfaces between views. When > 0 and
  // normals are available, a match also counts as an inlier if it lies within
  // inlier_dist of the target plane, within slide_dist of the target centroid,
  // and its rotated normal agrees to within 30 degrees.
  double slide_dist = 0.0;  // m
  double ratio = 0.9;  // best / second-best descriptor distance
  // Descriptor neighborhoods are local so that partially overlapping views
  // still describe shared structure alike.
  double descriptor_radius = 1.0;  // m
  int descriptor_neighbors = 48;
  double eps_theta = 0.06;
  // Overlap consistency: after alignment, depth samples of one view that fall
  // inside the other view's image must agree with its measured depth. 0 disables.
  double min_support = 0.5;
  double support_dist = 0.05;  // m, plus 2% of depth
  int support_stride = 4;      // pixel stride of the stored depth samples
  std::uint64_t seed = 0;

  void validate() const;
};

/// One view at the validation level: patch means, normals and descriptors.
struct ValidationView {
  std::string frame_id;
  std::vector<Vec3> means;
  std::vector<Vec3> normals;
  std::vector<PatchDescriptor> descriptors;

  // Downsampled depth image (metres, 0 = invalid) and its camera; empty for
  // unstructured clouds, which skips the overlap check.
  std::optional<CameraIntrinsics> camera;
  std::vector<double> depth;

  std::size_t size() const { return means.size(); }
};

ValidationView make_validation_view(const PatchSet& level, const IcaModel& ica, const ValidationConfig& cfg,
                                    const std::string& frame_id = {});

/// Stores every `stride`-th pixel of `frame` for the overlap check.
void attach_depth(ValidationView& view, const RangeFrame& frame, int stride);

/// Fraction of `from` depth samples that, mapped by `to_from` into the camera of
/// `to`, land on a valid pixel and agree with its depth within
/// support_dist + 2% of depth. Returns 1 when either view has no depth and 0
/// when fewer than cfg.min_inliers samples land in the image.
double overlap_support(const ValidationView& from, const ValidationView& to, const RigidTransform& to_from,
                       const ValidationConfig& cfg);

struct Correspondence {
  int query = 0;      // index into the first view
  int candidate = 0;  // index into the second view
  double distance = 0.0;
};

/// Mutual nearest neighbours in descriptor space that also pass the ratio test
/// in both directions. Ordered by query index.
std::vector<Correspondence> match_patches(const ValidationView& q, const ValidationView& x, double ratio);

struct TransformEstimate {
  RigidTransform T;  // maps first-view coordinates into the second view
  std::vector<int> inliers;  // indices into the correspondence list
  double rms = 0.0;
};

/// RANSAC over 3-correspondence samples with Kabsch fits, refit on all inliers.
/// When normals of the target points are given, the refit also minimizes
/// point-to-plane error, which ignores centroid drift along the surface.
/// Throws InsufficientCorrespondences (< 3) or ConsensusFailure (< min_inliers).
TransformEstimate estimate_transform(const std::vector<Correspondence>& matches, const std::vector<Vec3>& from,
                                     const std::vector<Vec3>& to, const ValidationConfig& cfg, std::mt19937_64& rng,
                                     const std::vector<Vec3>* from_normals = nullptr,
                                     const std::vector<Vec3>* to_normals = nullptr);

/// Gauss-Newton refinement of T over paired points with normals: point-to-plane
/// distance along the target normal, normal alignment, and a weak point-to-point term.
RigidTransform refine_point_to_plane(const RigidTransform& initial, const std::vector<Vec3>& from,
                                     const std::vector<Vec3>& from_normals, const std::vector<Vec3>& to,
                                     const std::vector<Vec3>& to_normals, int iterations = 10);

struct Residual {
  double angle = 0.0;        // rad, |log(R_f R_b)|
  double translation = 0.0;  // m, translation of T_f * T_b
};

/// Residual of composing a forward estimate with a backward estimate.
Residual transform_residual(const RigidTransform& forward, const RigidTransform& backward);

struct ValidationResult {
  bool accepted = false;
  RigidTransform T;  // candidate <- query (forward estimate)
  Residual residual;
  std::size_t matches = 0;
  std::size_t inliers_forward = 0;
  std::size_t inliers_backward = 0;
  double support_forward = 0.0;
  double support_backward = 0.0;
  std::string reason;  // empty when accepted
};

/// Accepts when the independently seeded forward and backward estimates agree
/// and both overlap supports reach cfg.min_support.
/// Seeds derive from (cfg.seed, query id, candidate id).
ValidationResult two_way_validate(const ValidationView& q, const ValidationView& x, const ValidationConfig& cfg);

/// Acceptance test on given estimates.
bool residual_accepts(const Residual& r, const ValidationConfig& cfg);

}  // namespace geosig
