#include "geosig/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "geosig/error.hpp"

namespace geosig {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AllInvalidDepth: return "AllInvalidDepth";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedPose: return "MalformedPose";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::EmptyScene: return "EmptyScene";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::DegenerateBasis: return "DegenerateBasis";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::AllLevelsEmpty: return "AllLevelsEmpty";
    case ErrorCode::ModelMismatch: return "ModelMismatch";
    case ErrorCode::DuplicateFrameId: return "DuplicateFrameId";
    case ErrorCode::EmptyDatabase: return "EmptyDatabase";
    case ErrorCode::MissingSignature: return "MissingSignature";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::InsufficientCorrespondences: return "InsufficientCorrespondences";
    case ErrorCode::ConsensusFailure: return "ConsensusFailure";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::NoValidatedCandidate: return "NoValidatedCandidate";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = R;
  m.topRightCorner<3, 1>() = t;
  return m;
}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& m) {
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

bool RigidTransform::is_valid(double tol) const {
  if (!R.allFinite() || !t.allFinite()) return false;
  if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(R.determinant() - 1.0) <= tol;
}

namespace {
constexpr double kSmallAngle = 1e-4;
}

Vec3 rot_log(const Mat3& R) {
  const double cos_angle = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  const Vec3 skew(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  const double sin_angle = 0.5 * skew.norm();
  const double angle = std::atan2(sin_angle, cos_angle);

  if (angle < kSmallAngle) {
    // angle / sin(angle) ~ 1 + angle^2 / 6
    return 0.5 * (1.0 + angle * angle / 6.0) * skew;
  }
  if (angle < M_PI - 1e-3) {
    return (angle / (2.0 * sin_angle)) * skew;
  }
  // Near pi the skew part vanishes; recover the axis from the symmetric part.
  const Mat3 B = (0.5 * (R + R.transpose()) - cos_angle * Mat3::Identity()) / (1.0 - cos_angle);
  int k = 0;
  B.diagonal().maxCoeff(&k);
  Vec3 axis = B.col(k) / std::sqrt(std::max(B(k, k), 1e-300));
  axis.normalize();
  if (axis.dot(skew) < 0.0) axis = -axis;
  return angle * axis;
}

Mat3 rot_exp(const Vec3& v) {
  const double angle = v.norm();
  Mat3 K;
  K << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  if (angle < kSmallAngle) {
    const double a2 = angle * angle;
    return Mat3::Identity() + (1.0 - a2 / 6.0) * K + (0.5 - a2 / 24.0) * K * K;
  }
  const double a = std::sin(angle) / angle;
  const double b = (1.0 - std::cos(angle)) / (angle * angle);
  return Mat3::Identity() + a * K + b * K * K;
}

double rotation_angle(const Mat3& R) { return rot_log(R).norm(); }

RigidTransform procrustes_align(std::span<const Vec3> src, std::span<const Vec3> dst) {
  std::vector<double> w(src.size(), 1.0);
  return procrustes_align(src, dst, w);
}

RigidTransform procrustes_align(std::span<const Vec3> src, std::span<const Vec3> dst,
                                std::span<const double> weights) {
  if (src.size() != dst.size() || src.size() != weights.size())
    throw Error(ErrorCode::DimensionMismatch, "procrustes_align: pair count mismatch");
  if (src.size() < 3)
    throw Error(ErrorCode::DegenerateConfiguration, "procrustes_align needs at least 3 pairs");

  double wsum = 0.0;
  Vec3 cs = Vec3::Zero();
  Vec3 cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    wsum += weights[i];
    cs += weights[i] * src[i];
    cd += weights[i] * dst[i];
  }
  if (!(wsum > 0.0)) throw Error(ErrorCode::DegenerateConfiguration, "zero total weight");
  cs /= wsum;
  cd /= wsum;

  Mat3 H = Mat3::Zero();
  Mat3 S = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 a = src[i] - cs;
    H += weights[i] * a * (dst[i] - cd).transpose();
    S += weights[i] * a * a.transpose();
  }

  // Colinear (rank < 2) source configurations leave the rotation about the line undetermined.
  Eigen::SelfAdjointEigenSolver<Mat3> spread(S / wsum);
  const Vec3 ev = spread.eigenvalues();
  if (ev(1) <= 1e-12 * std::max(1.0, ev(2)))
    throw Error(ErrorCode::DegenerateConfiguration, "procrustes_align: colinear points");

  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 U = svd.matrixU();
  const Mat3 V = svd.matrixV();
  Mat3 D = Mat3::Identity();
  if ((V * U.transpose()).determinant() < 0.0) D(2, 2) = -1.0;

  RigidTransform T;
  T.R = V * D * U.transpose();
  T.t = cd - T.R * cs;
  return T;
}

double logsumexp(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "logsumexp of empty set");
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - m);
  return m + std::log(acc);
}

std::uint64_t SeedStream::mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

SeedStream SeedStream::derive(std::string_view label) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return SeedStream(root_, mix(state_ ^ mix(h)));
}

SeedStream SeedStream::derive(std::uint64_t index) const {
  return SeedStream(root_, mix(state_ ^ mix(index + 0x632be59bd9b4e019ULL)));
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (count >= n) return idx;
  // Partial Fisher-Yates; uses raw engine output so results do not depend on
  // the standard library's distribution implementation.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  double m = values[mid];
  if (values.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(values.begin(), values.begin() + mid));
  }
  return m;
}

}  // namespace geosig
