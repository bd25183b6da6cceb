#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "geosig/numerics.hpp"

namespace geosig {

/// Uniform-grid bucket index over a fixed point set.
class SpatialHash {
 public:
  SpatialHash(std::span<const Vec3> points, double cell) : points_(points), cell_(cell) {
    for (std::size_t i = 0; i < points.size(); ++i) buckets_[key(points[i])].push_back(static_cast<int>(i));
  }

  /// Appends indices of points within `radius` of `p` to `out`.
  void radius_query(const Vec3& p, double radius, std::vector<int>& out) const {
    const int reach = static_cast<int>(std::ceil(radius / cell_));
    const auto c = coords(p);
    const double r2 = radius * radius;
    for (int dx = -reach; dx <= reach; ++dx)
      for (int dy = -reach; dy <= reach; ++dy)
        for (int dz = -reach; dz <= reach; ++dz) {
          auto it = buckets_.find(pack(c[0] + dx, c[1] + dy, c[2] + dz));
          if (it == buckets_.end()) continue;
          for (int idx : it->second)
            if ((points_[idx] - p).squaredNorm() <= r2) out.push_back(idx);
        }
  }

  double cell() const { return cell_; }

 private:
  std::array<std::int64_t, 3> coords(const Vec3& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x() / cell_)),
            static_cast<std::int64_t>(std::floor(p.y() / cell_)),
            static_cast<std::int64_t>(std::floor(p.z() / cell_))};
  }
  static std::uint64_t pack(std::int64_t x, std::int64_t y, std::int64_t z) {
    constexpr std::int64_t kOff = 1 << 20;
    return (static_cast<std::uint64_t>(x + kOff) << 42) | (static_cast<std::uint64_t>(y + kOff) << 21) |
           static_cast<std::uint64_t>(z + kOff);
  }
  std::uint64_t key(const Vec3& p) const {
    const auto c = coords(p);
    return pack(c[0], c[1], c[2]);
  }

  std::span<const Vec3> points_;
  double cell_;
  std::unordered_map<std::uint64_t, std::vector<int>> buckets_;
};

}  // namespace geosig
