#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "geosig/features.hpp"

namespace geosig {

inline constexpr int kProjectedDim = 12;

using ProjectedFeature = Eigen::Matrix<double, kProjectedDim, 1>;
/// Row-major sample matrix, one feature per row.
using SampleMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

SampleMatrix to_matrix(std::span<const RawFeature> features);

// ---------------------------------------------------------------------------
// ICA projection 13 -> 12

struct IcaModel {
  Eigen::Matrix<double, kRawFeatureDim, 1> mean = Eigen::Matrix<double, kRawFeatureDim, 1>::Zero();
  Eigen::Matrix<double, kProjectedDim, kRawFeatureDim> whitening = Eigen::Matrix<double, kProjectedDim, kRawFeatureDim>::Zero();
  Eigen::Matrix<double, kProjectedDim, kProjectedDim> unmixing = Eigen::Matrix<double, kProjectedDim, kProjectedDim>::Identity();
  bool converged = true;
  int iterations = 0;

  /// unmixing * whitening
  Eigen::Matrix<double, kProjectedDim, kRawFeatureDim> projection() const { return unmixing * whitening; }
};

struct IcaOptions {
  int max_iterations = 500;
  double tolerance = 1e-5;
  std::uint64_t seed = 0;
};

/// Centering, PCA whitening to 12 dims, then symmetric fixed-point ICA with a tanh contrast.
/// Non-convergence leaves unmixing = I and converged = false.
IcaModel fit_ica(const SampleMatrix& samples, const IcaOptions& options = {});
IcaModel fit_ica(std::span<const RawFeature> samples, const IcaOptions& options = {});

ProjectedFeature project(const RawFeature& f, const IcaModel& ica);
SampleMatrix project_all(std::span<const RawFeature> features, const IcaModel& ica);

// ---------------------------------------------------------------------------
// Diagonal-covariance GMM

struct GmmModel {
  Eigen::VectorXd weights;    // G
  Eigen::MatrixXd means;      // G x d
  Eigen::MatrixXd variances;  // G x d

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }

  /// Per-component log N(x; mean_g, diag var_g) for one sample.
  Eigen::VectorXd component_log_densities(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  double log_likelihood(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  void validate() const;
};

inline constexpr double kVarianceFloor = 1e-6;

struct GmmOptions {
  int max_iterations = 200;
  double tolerance = 1e-6;  // mean log-likelihood gain per sample
  double variance_floor = kVarianceFloor;
  std::uint64_t seed = 0;
};

struct GmmFitReport {
  std::vector<double> log_likelihood;  // mean per-sample log-likelihood after each EM iteration
  bool converged = false;
};

/// K-Means++ seeding, one Lloyd iteration, then EM.
GmmModel fit_gmm(const SampleMatrix& samples, int components, const GmmOptions& options = {},
                 GmmFitReport* report = nullptr);

enum class Responsibility {
  Weighted,    // p_g N(f; ν_g, Λ_g), normalized
  Unweighted,  // exp(-½ Mahalanobis), normalized; ignores p_g and |Λ_g|
};

/// Precomputed per-component constants for repeated responsibility evaluation.
class GmmScorer {
 public:
  GmmScorer(const GmmModel& gmm, Responsibility mode = Responsibility::Weighted);

  /// Normalized responsibilities of `x` (length d) into `out`.
  void responsibilities(const double* x, Eigen::VectorXd& out) const;

 private:
  const GmmModel& gmm_;
  Eigen::MatrixXd inv_var_;
  Eigen::VectorXd log_norm_;
};

/// Soft assignment of f to each component, computed in the log domain.
Eigen::VectorXd posterior(const Eigen::Ref<const Eigen::VectorXd>& f, const GmmModel& gmm,
                          Responsibility mode = Responsibility::Weighted);

// ---------------------------------------------------------------------------
// Model files: "GEOSIGMD", u32 version, u8 kind ('I' or 'G'), dims, row-major little-endian f64.

void save_ica(const std::filesystem::path& path, const IcaModel& ica);
IcaModel load_ica(const std::filesystem::path& path);
void save_gmm(const std::filesystem::path& path, const GmmModel& gmm);
GmmModel load_gmm(const std::filesystem::path& path);

/// Lossless text (hex-float) exports for inspection.
void export_ica_text(std::ostream& out, const IcaModel& ica);
void export_gmm_text(std::ostream& out, const GmmModel& gmm);

/// Content hash of a trained (ICA, GMM) pair; stamped into signatures and databases.
std::uint64_t model_version(const IcaModel& ica, const GmmModel& gmm);

}  // namespace geosig
