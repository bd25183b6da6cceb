#include <filesystem>
#include <sstream>

#include <Eigen/SVD>

#include "geosig/feature_space.hpp"
#include "helpers.hpp"

using namespace geosig;
namespace fs = std::filesystem;

namespace {

/// 12 independent non-Gaussian sources mixed linearly into 13 dimensions.
struct IcaFixture {
  Eigen::MatrixXd sources;  // n x 12
  SampleMatrix mixed;       // n x 13
};

IcaFixture ica_fixture(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::exponential_distribution<double> ex(1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  IcaFixture f;
  f.sources.resize(n, 12);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 12; ++c) {
      switch (c % 3) {
        case 0: f.sources(i, c) = uni(rng) * std::sqrt(3.0); break;
        case 1: f.sources(i, c) = (uni(rng) < 0 ? -1 : 1) * ex(rng) / std::sqrt(2.0); break;
        default: f.sources(i, c) = (uni(rng) < 0 ? -1.0 : 1.0) + 0.1 * gauss(rng); break;
      }
    }
  Eigen::MatrixXd A(13, 12);
  for (int r = 0; r < 13; ++r)
    for (int c = 0; c < 12; ++c) A(r, c) = gauss(rng);
  f.mixed = f.sources * A.transpose();
  f.mixed.rowwise() += Eigen::RowVectorXd::LinSpaced(13, 1.0, 13.0);
  return f;
}

SampleMatrix two_blobs(int n, std::uint64_t seed, double sep = 10.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SampleMatrix X(n, 12);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 12; ++c) X(i, c) = gauss(rng) + (i % 2 ? sep : 0.0);
  return X;
}

double correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd ca = a.array() - a.mean(), cb = b.array() - b.mean();
  return ca.dot(cb) / (ca.norm() * cb.norm());
}

GmmModel simple_gmm(int G, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.2, 2.0);
  GmmModel m;
  m.weights.resize(G);
  m.means.resize(G, d);
  m.variances.resize(G, d);
  for (int g = 0; g < G; ++g) {
    m.weights(g) = u(rng);
    for (int j = 0; j < d; ++j) {
      m.means(g, j) = 3.0 * u(rng) - 3.0;
      m.variances(g, j) = u(rng);
    }
  }
  m.weights /= m.weights.sum();
  return m;
}

}  // namespace

TEST(Ica, RecoversIndependentSources) {
  const auto fx = ica_fixture(6000, 1);
  IcaOptions opt;
  opt.seed = 2;
  const IcaModel ica = fit_ica(fx.mixed, opt);
  ASSERT_TRUE(ica.converged);
  SampleMatrix centered = fx.mixed.rowwise() - ica.mean.transpose();
  const Eigen::MatrixXd Y = centered * ica.projection().transpose();
  for (int c = 0; c < 12; ++c) {
    double best = 0.0;
    for (int s = 0; s < 12; ++s) best = std::max(best, std::abs(correlation(Y.col(c), fx.sources.col(s))));
    EXPECT_GE(best, 0.95) << "component " << c;
  }
}

TEST(Ica, WhitensAndCentersTrainingData) {
  const auto fx = ica_fixture(3000, 3);
  const IcaModel ica = fit_ica(fx.mixed);
  const SampleMatrix centered = fx.mixed.rowwise() - ica.mean.transpose();
  const Eigen::MatrixXd Y = centered * ica.projection().transpose();
  const Eigen::MatrixXd cov = Y.transpose() * Y / static_cast<double>(Y.rows());
  EXPECT_LT((cov - Eigen::MatrixXd::Identity(12, 12)).cwiseAbs().maxCoeff(), 1e-3);
  RawFeature mean;
  for (int c = 0; c < 13; ++c) mean[c] = ica.mean(c);
  EXPECT_LT(project(mean, ica).norm(), 1e-6);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(ica.projection());
  EXPECT_GT(svd.singularValues()(11), 1e-9);
}

TEST(Ica, Errors) {
  SampleMatrix same = SampleMatrix::Ones(500, 13);
  EXPECT_GEOSIG_ERROR(fit_ica(same), ErrorCode::RankDeficient);
  EXPECT_GEOSIG_ERROR(fit_ica(SampleMatrix::Random(100, 13)), ErrorCode::TooFewSamples);
  EXPECT_GEOSIG_ERROR(fit_ica(SampleMatrix::Random(500, 12)), ErrorCode::DimensionMismatch);
}

TEST(Ica, NonConvergenceKeepsWhitening) {
  const auto fx = ica_fixture(1000, 4);
  IcaOptions opt;
  opt.max_iterations = 1;
  opt.tolerance = 1e-300;
  const IcaModel ica = fit_ica(fx.mixed, opt);
  EXPECT_FALSE(ica.converged);
  EXPECT_EQ(ica.unmixing, (Eigen::Matrix<double, 12, 12>::Identity()));
}

TEST(Project, AffineCombination) {
  const auto fx = ica_fixture(1000, 5);
  const IcaModel ica = fit_ica(fx.mixed);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int t = 0; t < 100; ++t) {
    RawFeature a, b, c;
    const double w = u(rng) / 5.0;
    for (int i = 0; i < 13; ++i) {
      a[i] = u(rng);
      b[i] = u(rng);
      c[i] = w * a[i] + (1 - w) * b[i];
    }
    const ProjectedFeature lhs = project(c, ica);
    const ProjectedFeature rhs = w * project(a, ica) + (1 - w) * project(b, ica);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(lhs.size(), 12);
  }
  std::vector<RawFeature> many(3);
  for (auto& f : many)
    for (auto& x : f) x = u(rng);
  const SampleMatrix P = project_all(many, ica);
  for (int i = 0; i < 3; ++i) EXPECT_LT((P.row(i).transpose() - project(many[i], ica)).norm(), 1e-12);
}

TEST(Gmm, RecoversTwoSeparatedBlobs) {
  const SampleMatrix X = two_blobs(2000, 7);
  GmmOptions opt;
  opt.seed = 1;
  const GmmModel m = fit_gmm(X, 2, opt);
  m.validate();
  const int lo = m.means(0, 0) < m.means(1, 0) ? 0 : 1;
  for (int j = 0; j < 12; ++j) {
    EXPECT_NEAR(m.means(lo, j), 0.0, 0.1);
    EXPECT_NEAR(m.means(1 - lo, j), 10.0, 0.1);
  }
  EXPECT_NEAR(m.weights(0), 0.5, 0.05);
}

TEST(Gmm, SingleComponentIsClosedForm) {
  const SampleMatrix X = two_blobs(500, 8, 3.0);
  const GmmModel m = fit_gmm(X, 1);
  const Eigen::RowVectorXd mean = X.colwise().mean();
  const Eigen::RowVectorXd var = (X.rowwise() - mean).array().square().colwise().mean();
  EXPECT_LT((m.means.row(0) - mean).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((m.variances.row(0) - var).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_DOUBLE_EQ(m.weights(0), 1.0);
}

TEST(Gmm, LogLikelihoodNonDecreasing) {
  const SampleMatrix X = two_blobs(1200, 9, 2.0);
  GmmFitReport report;
  GmmOptions opt;
  opt.seed = 3;
  opt.tolerance = 0.0;
  opt.max_iterations = 40;
  fit_gmm(X, 6, opt, &report);
  ASSERT_GE(report.log_likelihood.size(), 2u);
  for (std::size_t i = 1; i < report.log_likelihood.size(); ++i)
    EXPECT_GE(report.log_likelihood[i], report.log_likelihood[i - 1] - 1e-9) << i;
}

TEST(Gmm, DeterministicAndFloored) {
  SampleMatrix X = two_blobs(400, 10);
  X.col(3).setConstant(1.0);  // a flat dimension
  GmmOptions opt;
  opt.seed = 4;
  const GmmModel a = fit_gmm(X, 4, opt), b = fit_gmm(X, 4, opt);
  EXPECT_EQ(a.means, b.means);
  EXPECT_EQ(a.variances, b.variances);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_GE(a.variances.minCoeff(), kVarianceFloor);
  EXPECT_NEAR(a.weights.sum(), 1.0, 1e-9);
}

TEST(Gmm, TooFewSamples) { EXPECT_GEOSIG_ERROR(fit_gmm(two_blobs(30, 1), 4), ErrorCode::TooFewSamples); }

TEST(Posterior, SimpleCases) {
  GmmModel one = simple_gmm(1, 12, 1);
  one.weights(0) = 1.0;
  const Eigen::VectorXd f = Eigen::VectorXd::Random(12);
  EXPECT_NEAR(posterior(f, one)(0), 1.0, 1e-15);

  GmmModel two;
  two.weights = Eigen::Vector2d(0.5, 0.5);
  two.means = Eigen::MatrixXd::Zero(2, 12);
  two.means.row(1).setConstant(50.0);
  two.variances = Eigen::MatrixXd::Ones(2, 12);
  const Eigen::VectorXd pi = posterior(two.means.row(0).transpose(), two);
  EXPECT_NEAR(pi(0), 1.0, 1e-6);
  EXPECT_NEAR(pi(1), 0.0, 1e-6);
}

TEST(Posterior, MatchesNaiveFormula) {
  const GmmModel m = simple_gmm(5, 12, 2);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(-1.5, 1.0);
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXd f(12);
    for (auto& x : f) x = n(rng);
    Eigen::VectorXd naive(5);
    for (int g = 0; g < 5; ++g) {
      double p = m.weights(g);
      for (int j = 0; j < 12; ++j) {
        const double v = m.variances(g, j), d = f(j) - m.means(g, j);
        p *= std::exp(-0.5 * d * d / v) / std::sqrt(2 * M_PI * v);
      }
      naive(g) = p;
    }
    naive /= naive.sum();
    EXPECT_LT((posterior(f, m) - naive).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Posterior, UnweightedIgnoresWeightsAndDeterminants) {
  GmmModel m = simple_gmm(3, 12, 4);
  const Eigen::VectorXd f = Eigen::VectorXd::Constant(12, 0.3);
  const Eigen::VectorXd a = posterior(f, m, Responsibility::Unweighted);
  m.weights = Eigen::Vector3d(0.8, 0.1, 0.1);
  EXPECT_LT((posterior(f, m, Responsibility::Unweighted) - a).norm(), 1e-15);
  Eigen::VectorXd naive(3);
  for (int g = 0; g < 3; ++g)
    naive(g) = std::exp(-0.5 * ((f.transpose() - m.means.row(g)).array().square() / m.variances.row(g).array()).sum());
  naive /= naive.sum();
  EXPECT_LT((a - naive).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Posterior, StableFarFromEveryComponent) {
  const GmmModel m = simple_gmm(8, 12, 5);
  std::mt19937_64 rng(6);
  for (int t = 0; t < 500; ++t) {
    // Mahalanobis distances up to ~100 from every component
    Eigen::VectorXd f = 30.0 * Eigen::VectorXd::Random(12);
    const Eigen::VectorXd pi = posterior(f, m);
    EXPECT_TRUE(pi.allFinite());
    EXPECT_NEAR(pi.sum(), 1.0, 1e-12);
  }
}

TEST(ModelFiles, RoundTripIsBitwise) {
  const fs::path dir = fs::temp_directory_path() / ("geosig_models_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const auto fx = ica_fixture(800, 11);
  const IcaModel ica = fit_ica(fx.mixed);
  const GmmModel gmm = simple_gmm(4, 12, 12);
  save_ica(dir / "ica.bin", ica);
  save_gmm(dir / "gmm.bin", gmm);
  const IcaModel ica2 = load_ica(dir / "ica.bin");
  const GmmModel gmm2 = load_gmm(dir / "gmm.bin");
  EXPECT_EQ(ica2.mean, ica.mean);
  EXPECT_EQ(ica2.whitening, ica.whitening);
  EXPECT_EQ(ica2.unmixing, ica.unmixing);
  EXPECT_EQ(gmm2.weights, gmm.weights);
  EXPECT_EQ(gmm2.means, gmm.means);
  EXPECT_EQ(gmm2.variances, gmm.variances);
  EXPECT_EQ(model_version(ica2, gmm2), model_version(ica, gmm));
  EXPECT_GEOSIG_ERROR(load_gmm(dir / "ica.bin"), ErrorCode::UnsupportedFormat);
  EXPECT_GEOSIG_ERROR(load_ica(dir / "missing.bin"), ErrorCode::MissingFile);

  std::ostringstream text;
  export_gmm_text(text, gmm);
  EXPECT_NE(text.str().find("0x"), std::string::npos);
  fs::remove_all(dir);
}

TEST(ModelFiles, VersionTracksContent) {
  const auto fx = ica_fixture(800, 13);
  const IcaModel ica = fit_ica(fx.mixed);
  GmmModel gmm = simple_gmm(4, 12, 14);
  const auto v = model_version(ica, gmm);
  gmm.means(0, 0) += 1e-12;
  EXPECT_NE(model_version(ica, gmm), v);
}
