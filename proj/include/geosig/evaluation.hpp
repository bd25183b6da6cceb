#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "geosig/pipeline.hpp"
#include "geosig/scene.hpp"

namespace geosig {

struct PoseError {
  double angle_deg = 0.0;
  double dist = 0.0;  // m

  bool within(double max_dist = 0.05, double max_deg = 5.0) const { return dist <= max_dist && angle_deg <= max_deg; }
};

/// Geodesic angle and translation norm of T_est^-1 * T_gt.
PoseError pose_error(const RigidTransform& est, const RigidTransform& gt);

struct DiversityStats {
  double mean = 0.0;
  double stddev = 0.0;  // population
};

/// Statistics of |t_X - t_Q| over the retrieved poses.
DiversityStats diversity_stats(std::span<const Pose> retrieved, const Pose& query);

inline constexpr double kDefaultVoxel = 0.08;

/// Distinct occupied cells of the world-frame union of back-projected frames.
/// Every frame needs pose_gt.
std::size_t voxel_coverage(std::span<const RangeFrame> frames, double voxel = kDefaultVoxel);

/// Indices kept by uniform-interval subsampling: 0, rate, 2 rate, ... (ceil(n / rate) of them).
std::vector<std::size_t> sparsify(std::size_t n, std::size_t rate);

// ---------------------------------------------------------------------------
// Synthetic rooms

/// 160 x 120 pinhole camera used by the synthetic experiments.
CameraIntrinsics synthetic_intrinsics();

/// Box room with floor-standing furniture and wall shelves.
SceneSpec make_room(std::uint64_t seed);

/// Camera-to-world pose from position, yaw about world z and downward pitch (radians).
/// Camera axes: x right, y down, z forward; world z is up.
Pose look_pose(const Vec3& position, double yaw, double pitch);

/// Pose i of n along a closed loop through the room interior.
Pose loop_pose(const SceneSpec& room, std::uint64_t seed, std::size_t i, std::size_t n);

/// Pipeline settings tuned for synthetic_intrinsics.
PipelineConfig synthetic_pipeline_config(std::uint64_t seed = 0);

struct SyntheticSetup {
  int rooms = 5;
  int db_frames = 60;
  int queries = 20;
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;
};

struct SyntheticWorld {
  std::vector<SceneSpec> rooms;
  std::vector<RangeFrame> database;  // frame ids "r<room>/d<index>"
  std::vector<RangeFrame> queries;   // frame ids "r<room>/q<index>"
};

/// Each room's loop is sampled at db_frames + queries poses; every
/// ((db_frames + queries) / queries)-th pose is held out as a query.
SyntheticWorld make_synthetic_world(const SyntheticSetup& setup);

/// Random upright camera pose inside the room's free central region.
Pose random_room_pose(const SceneSpec& room, std::mt19937_64& rng);

/// Fraction of valid pixels of `a` that `b` also observes: back-projected into b's
/// camera they land inside the image, in front of the sensor, and within
/// 5 cm + 1% of depth of b's measured depth.
double view_overlap(const RangeFrame& a, const RangeFrame& b);

struct ViewPair {
  RangeFrame a;
  RangeFrame b;
  bool positive = false;  // same room and overlapping
};

struct PairSetup {
  int positives = 200;
  int negatives = 200;
  int rooms = 5;
  double max_angle_deg = 30.0;
  double max_dist = 1.0;
  double min_overlap = 0.4;  // both directions
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;
};

/// Positives: same room, relative pose within the bounds, overlap >= min_overlap.
/// Negatives: views of two different rooms.
std::vector<ViewPair> make_view_pairs(const PairSetup& setup);

/// Room prefix of a synthetic frame id ("r3/q7" -> "r3").
std::string room_of(const std::string& frame_id);

// ---------------------------------------------------------------------------
// Reports

struct QueryRecord {
  std::string query_id;
  std::string top_result;
  double pose_error_rot = 0.0;    // deg
  double pose_error_trans = 0.0;  // m
  bool accepted = false;          // a pose was produced
  bool localized = false;         // within the error bounds
  bool correct_room = false;      // top retrieval shares the query's room
};

struct EvalReport {
  std::string variant;
  std::vector<QueryRecord> records;
  DiversityStats diversity;
  std::vector<std::size_t> voxel_counts;

  double accuracy() const;           // fraction localized
  double retrieval_accuracy() const; // fraction with correct_room

  /// One line-delimited record per query, then a summary table.
  void write(std::ostream& out) const;
};

/// Relocalizes every query against `db` and scores it against pose_gt.
EvalReport evaluate_relocalization(const ViewDatabase& db, const std::vector<ProcessedView>& queries,
                                   Variant variant, double max_dist = 0.05, double max_deg = 5.0);

}  // namespace geosig
