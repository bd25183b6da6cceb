#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "geosig/feature_space.hpp"

namespace geosig {

/// View signature: per-level power/L2-normalized Fisher vectors, concatenated in level order.
struct Signature {
  std::vector<double> data;  // (2d + 1) * G * H
  int G = 0;
  int H = 0;
  int feature_dim = kProjectedDim;
  std::uint64_t model_version = 0;
  std::string frame_id;

  std::size_t dimension() const { return data.size(); }
  std::size_t block_size() const { return static_cast<std::size_t>(2 * feature_dim + 1) * G; }
};

struct FisherVector {
  Eigen::VectorXd values;  // [m0_1, m1_1, m2_1, ..., m0_G, m1_G, m2_G]
  bool empty = false;
};

/// Raw (unnormalized) Fisher vector of a feature set under `gmm`.
FisherVector fisher_vector(const SampleMatrix& features, const GmmModel& gmm,
                           Responsibility mode = Responsibility::Weighted);

/// Signed square root, then unit L2 norm. Zero stays zero.
Eigen::VectorXd power_l2_normalize(const Eigen::VectorXd& v);

/// Throws AllLevelsEmpty when every level is empty; empty levels encode as zero blocks.
Signature encode_view(const std::vector<SampleMatrix>& level_features, const GmmModel& gmm,
                      std::uint64_t model_version = 0, const std::string& frame_id = {},
                      Responsibility mode = Responsibility::Weighted);

/// Signature file: "GEOSIGSG", u32 version, frame_id, u32 G, u32 H, u32 d, u64 model version,
/// u8 float width (4 or 8), u64 length, then little-endian values.
void save_signature(const std::filesystem::path& path, const Signature& sig, int float_width = 8);
Signature load_signature(const std::filesystem::path& path);

void write_signature(std::ostream& out, const Signature& sig, int float_width = 8);
Signature read_signature(std::istream& in);

}  // namespace geosig
