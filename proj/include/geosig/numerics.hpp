#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace geosig {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rigid motion x -> R x + t.
struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return R * p + t; }
  Vec3 rotate(const Vec3& v) const { return R * v; }

  RigidTransform inverse() const { return {R.transpose(), -(R.transpose() * t)}; }

  /// (*this) after `rhs`: x -> this(rhs(x)).
  RigidTransform operator*(const RigidTransform& rhs) const { return {R * rhs.R, R * rhs.t + t}; }

  Eigen::Matrix4d matrix() const;
  static RigidTransform from_matrix(const Eigen::Matrix4d& m);

  /// Checks RᵀR = I and det R = +1 within `tol`.
  bool is_valid(double tol = 1e-6) const;
};

/// Sensor pose, camera-to-world.
using Pose = RigidTransform;

/// Axis-angle vector of a rotation matrix. Uses a series expansion near identity.
Vec3 rot_log(const Mat3& R);
Mat3 rot_exp(const Vec3& v);

/// Geodesic angle (radians) of R.
double rotation_angle(const Mat3& R);

/// Least-squares rigid transform mapping `src` onto `dst` (Kabsch with reflection guard).
/// Throws DegenerateConfiguration for fewer than 3 pairs or colinear sources.
RigidTransform procrustes_align(std::span<const Vec3> src, std::span<const Vec3> dst);

/// Same as procrustes_align but with per-pair non-negative weights.
RigidTransform procrustes_align(std::span<const Vec3> src, std::span<const Vec3> dst,
                                std::span<const double> weights);

double logsumexp(std::span<const double> values);

/// Deterministic seed derivation. A stream is identified by a root seed plus a
/// path of labels; the same (seed, path) always yields the same engine state.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t root) : root_(root), state_(mix(root)) {}

  SeedStream derive(std::string_view label) const;
  SeedStream derive(std::uint64_t index) const;

  std::uint64_t root() const { return root_; }
  std::uint64_t seed() const { return state_; }
  std::mt19937_64 engine() const { return std::mt19937_64(state_); }

  static std::uint64_t mix(std::uint64_t x);

 private:
  SeedStream(std::uint64_t root, std::uint64_t state) : root_(root), state_(state) {}

  std::uint64_t root_;
  std::uint64_t state_;
};

/// Indices [0, n) sampled without replacement, returned sorted.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::mt19937_64& rng);

double median(std::vector<double> values);

}  // namespace geosig
