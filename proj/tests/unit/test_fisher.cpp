#include <algorithm>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "fv_oracle.hpp"
#include "geosig/fisher.hpp"
#include "helpers.hpp"

using namespace geosig;

namespace {

GmmModel unit_gmm(int d) {
  GmmModel m;
  m.weights = Eigen::VectorXd::Ones(1);
  m.means = Eigen::MatrixXd::Zero(1, d);
  m.variances = Eigen::MatrixXd::Ones(1, d);
  return m;
}

}  // namespace

TEST(FisherVector, SampleAtTheMean) {
  const GmmModel m = unit_gmm(12);
  const SampleMatrix X = SampleMatrix::Zero(1, 12);
  const FisherVector fv = fisher_vector(X, m);
  ASSERT_EQ(fv.values.size(), 25);
  EXPECT_EQ(fv.values(0), 0.0);
  for (int j = 0; j < 12; ++j) {
    EXPECT_EQ(fv.values(1 + j), 0.0);
    EXPECT_NEAR(fv.values(13 + j), -1.0 / std::sqrt(2.0), 1e-15);
  }
}

TEST(FisherVector, SingleComponentZerothOrderVanishes) {
  const GmmModel m = unit_gmm(12);
  const SampleMatrix X = SampleMatrix::Random(37, 12) * 3.0;
  EXPECT_EQ(fisher_vector(X, m).values(0), 0.0);
}

TEST(FisherVector, EmptySetIsFlaggedZero) {
  const FisherVector fv = fisher_vector(SampleMatrix(0, 12), unit_gmm(12));
  EXPECT_TRUE(fv.empty);
  EXPECT_EQ(fv.values.size(), 25);
  EXPECT_EQ(fv.values.norm(), 0.0);
  EXPECT_GEOSIG_ERROR(fisher_vector(SampleMatrix::Zero(3, 11), unit_gmm(12)), ErrorCode::DimensionMismatch);
}

TEST(FisherVector, MatchesFiniteDifferenceGradient) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    auto [gmm, X] = oracle::random_instance(rng, 3, 12, 20);
    const Eigen::VectorXd fv = fisher_vector(X, gmm).values;
    const Eigen::VectorXd ref = oracle::finite_difference_fv(X, gmm);
    EXPECT_LE(oracle::gradient_relative_error(fv, ref, 3, 12), 1e-4) << "instance " << t;
  }
}

TEST(FisherVector, PermutationInvariant) {
  std::mt19937_64 rng(2);
  auto [gmm, X] = oracle::random_instance(rng, 4, 12, 60);
  std::vector<int> order(60);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  SampleMatrix Y(60, 12);
  for (int i = 0; i < 60; ++i) Y.row(i) = X.row(order[i]);
  EXPECT_LT((fisher_vector(X, gmm).values - fisher_vector(Y, gmm).values).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(FisherVector, DuplicationQuasiInvariance) {
  std::mt19937_64 rng(3);
  auto [gmm, X] = oracle::random_instance(rng, 5, 12, 40);
  const Eigen::VectorXd base = fisher_vector(X, gmm).values;
  for (int k : {2, 3, 7}) {
    SampleMatrix Y(40 * k, 12);
    for (int r = 0; r < k; ++r) Y.middleRows(40 * r, 40) = X;
    EXPECT_LT((fisher_vector(Y, gmm).values - base).cwiseAbs().maxCoeff(), 1e-12) << k;
  }
}

TEST(PowerL2, HandArithmetic) {
  const Eigen::VectorXd v = power_l2_normalize(Eigen::Vector2d(4, -9));
  EXPECT_NEAR(v(0), 2 / std::sqrt(13.0), 1e-15);
  EXPECT_NEAR(v(1), -3 / std::sqrt(13.0), 1e-15);
  EXPECT_EQ(power_l2_normalize(Eigen::VectorXd::Zero(5)).norm(), 0.0);
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    const Eigen::VectorXd r = Eigen::VectorXd::Random(50) * std::pow(10.0, t % 7 - 3);
    EXPECT_NEAR(power_l2_normalize(r).norm(), 1.0, 1e-12);
  }
}

TEST(EncodeView, LayoutNormsAndEmptyLevels) {
  std::mt19937_64 rng(5);
  auto [gmm, X] = oracle::random_instance(rng, 4, 12, 30);
  const std::vector<SampleMatrix> levels = {X, SampleMatrix(0, 12), X.topRows(10)};
  const Signature sig = encode_view(levels, gmm, 77, "f");
  EXPECT_EQ(sig.dimension(), 25u * 4 * 3);
  EXPECT_EQ(sig.G, 4);
  EXPECT_EQ(sig.H, 3);
  EXPECT_EQ(sig.model_version, 77u);
  const std::size_t B = sig.block_size();
  auto block_norm = [&](int h) {
    return Eigen::Map<const Eigen::VectorXd>(sig.data.data() + h * B, static_cast<Eigen::Index>(B)).norm();
  };
  EXPECT_NEAR(block_norm(0), 1.0, 1e-12);
  EXPECT_EQ(block_norm(1), 0.0);
  EXPECT_NEAR(block_norm(2), 1.0, 1e-12);
  const Eigen::VectorXd first = power_l2_normalize(fisher_vector(X, gmm).values);
  for (std::size_t i = 0; i < B; ++i) EXPECT_EQ(sig.data[i], first(static_cast<Eigen::Index>(i)));
  EXPECT_GEOSIG_ERROR(encode_view({SampleMatrix(0, 12)}, gmm), ErrorCode::AllLevelsEmpty);
}

TEST(EncodeView, IdenticalInputsGiveIdenticalSignatures) {
  std::mt19937_64 rng(6);
  auto [gmm, X] = oracle::random_instance(rng, 3, 12, 25);
  const Signature a = encode_view({X}, gmm), b = encode_view({X}, gmm);
  EXPECT_EQ(a.data, b.data);
  EXPECT_EQ(a.H, 1);
}

TEST(SignatureFile, RoundTripBothWidths) {
  std::mt19937_64 rng(7);
  auto [gmm, X] = oracle::random_instance(rng, 3, 12, 25);
  const Signature sig = encode_view({X, X}, gmm, 5, "frame-9");
  std::stringstream s8, s4;
  write_signature(s8, sig, 8);
  write_signature(s4, sig, 4);
  const Signature r8 = read_signature(s8), r4 = read_signature(s4);
  EXPECT_EQ(r8.data, sig.data);
  EXPECT_EQ(r8.frame_id, "frame-9");
  EXPECT_EQ(r8.model_version, 5u);
  ASSERT_EQ(r4.data.size(), sig.data.size());
  for (std::size_t i = 0; i < sig.data.size(); ++i) EXPECT_LT(std::abs(r4.data[i] - sig.data[i]), 1e-6);
  std::stringstream junk("not a signature at all");
  EXPECT_GEOSIG_ERROR(read_signature(junk), ErrorCode::UnsupportedFormat);
  EXPECT_GEOSIG_ERROR(load_signature("/nonexistent/sig.bin"), ErrorCode::MissingFile);
}
