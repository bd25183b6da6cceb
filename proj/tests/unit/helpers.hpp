#pragma once

#include <random>

#include <unistd.h>

#include <gtest/gtest.h>

#include "geosig/error.hpp"
#include "geosig/numerics.hpp"

namespace geosig::test {

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

inline RigidTransform random_transform(std::mt19937_64& rng, double max_t = 5.0) {
  std::uniform_real_distribution<double> u(-max_t, max_t);
  return {random_rotation(rng), Vec3(u(rng), u(rng), u(rng))};
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

inline Mat3 yaw(double rad) { return Eigen::AngleAxisd(rad, Vec3::UnitZ()).toRotationMatrix(); }

}  // namespace geosig::test

#define EXPECT_GEOSIG_ERROR(stmt, expected)                                   \
  do {                                                                        \
    try {                                                                     \
      stmt;                                                                   \
      ADD_FAILURE() << "no error thrown, expected " << ::geosig::to_string(expected); \
    } catch (const ::geosig::Error& e) {                                      \
      EXPECT_EQ(e.code(), expected) << e.what();                              \
    }                                                                         \
  } while (0)
