#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geosig/numerics.hpp"

namespace geosig {

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  double depth_scale = 0.001;  // meters per stored depth unit

  /// Throws InvalidArgument when any invariant fails.
  void validate() const;

  /// Intrinsics of the 7-scenes Kinect depth stream.
  static CameraIntrinsics seven_scenes();
};

/// A depth image in stored units (16-bit, 0 = invalid) plus its camera model.
struct RangeFrame {
  std::vector<std::uint16_t> depth;  // row-major, width * height
  CameraIntrinsics intrinsics;
  std::optional<Pose> pose_gt;
  std::string frame_id;

  std::uint16_t at(int u, int v) const { return depth[static_cast<std::size_t>(v) * intrinsics.width + u]; }
};

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;           // empty until estimated
  std::vector<int> pixel_index;        // v * width + u, empty for unstructured clouds
  std::vector<std::uint8_t> degenerate;  // per point, set by estimate_normals
  std::optional<CameraIntrinsics> intrinsics;  // source camera for pixel-backed clouds

  std::size_t size() const { return points.size(); }
  bool has_normals() const { return !normals.empty() && normals.size() == points.size(); }
  bool pixel_backed() const { return intrinsics.has_value() && pixel_index.size() == points.size(); }
};

PointCloud depth_to_cloud(const RangeFrame& frame);

inline constexpr double kDefaultNormalRadius = 0.05;

/// PCA normals over a radius neighborhood, oriented toward the sensor origin.
PointCloud estimate_normals(PointCloud cloud, double radius = kDefaultNormalRadius);

/// Loads frame-XXXXXX.depth.png / frame-XXXXXX.pose.txt from a 7-scenes sequence directory.
RangeFrame load_sevenscenes_frame(const std::filesystem::path& dir, int index,
                                  const CameraIntrinsics& intrinsics = CameraIntrinsics::seven_scenes());

/// Reads a 16-bit grayscale PNG.
std::vector<std::uint16_t> read_depth_png(const std::filesystem::path& path, int& width, int& height);
void write_depth_png(const std::filesystem::path& path, const RangeFrame& frame);

/// Parses a 4x4 row-major camera-to-world matrix.
Pose parse_pose(const std::string& text);
std::string format_pose(const Pose& pose);

// ---------------------------------------------------------------------------
// Synthetic scenes

/// Bounded rectangle. The in-plane axes are fixed by `normal` alone (see plane_axes).
struct PlanePrimitive {
  Vec3 center;
  Vec3 normal;
  double half_u = 1.0;
  double half_v = 1.0;
};

/// Axis-aligned box. Rays starting inside the box hit its inner walls.
struct BoxPrimitive {
  Vec3 center;
  Vec3 half_extents;
};

struct SceneSpec {
  std::vector<PlanePrimitive> planes;
  std::vector<BoxPrimitive> boxes;

  bool empty() const { return planes.empty() && boxes.empty(); }

  /// Text format, one primitive per line ('#' starts a comment):
  ///   plane cx cy cz nx ny nz half_u half_v
  ///   box   cx cy cz hx hy hz
  static SceneSpec parse(const std::string& text);
  static SceneSpec load(const std::filesystem::path& path);
  std::string to_text() const;
};

/// In-plane axes (u, v) for a plane normal; u is perpendicular to world z unless n is parallel to z.
std::pair<Vec3, Vec3> plane_axes(const Vec3& normal);

struct SynthOptions {
  double noise_sigma = 0.0;  // meters, Gaussian depth noise
  std::uint64_t noise_seed = 0;
  double max_depth = 10.0;
  std::string frame_id = "synth";
};

/// Ray-casts the scene through `intrinsics` from a camera-to-world `pose`.
RangeFrame synth_scene(const SceneSpec& spec, const Pose& pose, const CameraIntrinsics& intrinsics,
                       const SynthOptions& options = {});

}  // namespace geosig
