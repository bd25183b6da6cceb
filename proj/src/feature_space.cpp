#include "geosig/feature_space.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include <Eigen/Eigenvalues>

#include "binary_io.hpp"
#include "geosig/error.hpp"

namespace geosig {

namespace {

constexpr char kMagic[8] = {'G', 'E', 'O', 'S', 'I', 'G', 'M', 'D'};
constexpr std::uint32_t kModelFileVersion = 1;
const double kLog2Pi = std::log(2.0 * M_PI);

Eigen::MatrixXd symmetric_decorrelate(const Eigen::MatrixXd& B) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B * B.transpose());
  const Eigen::VectorXd inv_sqrt = es.eigenvalues().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose() * B;
}

void write_header(std::ostream& out, char kind) {
  out.write(kMagic, sizeof(kMagic));
  io::put<std::uint32_t>(out, kModelFileVersion);
  io::put<char>(out, kind);
}

void read_header(std::istream& in, char kind, const std::filesystem::path& path) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kMagic))
    throw Error(ErrorCode::UnsupportedFormat, path.string() + " is not a geosig model file");
  const auto version = io::get<std::uint32_t>(in);
  if (version != kModelFileVersion)
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": unsupported model version " + std::to_string(version));
  const char k = io::get<char>(in);
  if (k != kind)
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": expected model kind '" + std::string(1, kind) + "'");
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  return in;
}

template <typename M>
void write_rowmajor(std::ostream& out, const M& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) io::put<double>(out, m(r, c));
}

template <typename M>
void read_rowmajor(std::istream& in, M& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = io::get<double>(in);
}

template <typename M>
void text_matrix(std::ostream& out, const char* name, const M& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? " " : "") << std::hexfloat << m(r, c);
    out << std::defaultfloat << '\n';
  }
}

}  // namespace

SampleMatrix to_matrix(std::span<const RawFeature> features) {
  SampleMatrix m(static_cast<Eigen::Index>(features.size()), kRawFeatureDim);
  for (std::size_t i = 0; i < features.size(); ++i)
    for (int c = 0; c < kRawFeatureDim; ++c) m(static_cast<Eigen::Index>(i), c) = features[i][c];
  return m;
}

IcaModel fit_ica(std::span<const RawFeature> samples, const IcaOptions& options) {
  return fit_ica(to_matrix(samples), options);
}

IcaModel fit_ica(const SampleMatrix& X, const IcaOptions& options) {
  if (X.cols() != kRawFeatureDim) throw Error(ErrorCode::DimensionMismatch, "ICA expects 13-D samples");
  const Eigen::Index n = X.rows();
  if (n < 10 * kRawFeatureDim)
    throw Error(ErrorCode::TooFewSamples, "ICA needs at least 130 samples, got " + std::to_string(n));

  IcaModel model;
  model.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd centered = X.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd ev = es.eigenvalues();  // ascending
  const double largest = ev(kRawFeatureDim - 1);
  const double kept_min = ev(kRawFeatureDim - kProjectedDim);
  if (!(largest > 1e-12) || !(kept_min > 1e-9 * largest))
    throw Error(ErrorCode::RankDeficient, "sample covariance has rank below 12");

  for (int k = 0; k < kProjectedDim; ++k) {
    const int src = kRawFeatureDim - 1 - k;
    model.whitening.row(k) = es.eigenvectors().col(src).transpose() / std::sqrt(ev(src));
  }
  const Eigen::MatrixXd Z = centered * model.whitening.transpose();  // n x 12

  auto rng = SeedStream(options.seed).derive("ica").engine();
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd B(kProjectedDim, kProjectedDim);
  for (int r = 0; r < kProjectedDim; ++r)
    for (int c = 0; c < kProjectedDim; ++c) B(r, c) = gauss(rng);
  B = symmetric_decorrelate(B);

  model.converged = false;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Eigen::MatrixXd Y = Z * B.transpose();
    const Eigen::MatrixXd G = Y.array().tanh().matrix();
    const Eigen::VectorXd gprime_mean = (1.0 - G.array().square()).matrix().colwise().mean().transpose();
    Eigen::MatrixXd B_new = (G.transpose() * Z) * inv_n - gprime_mean.asDiagonal() * B;
    B_new = symmetric_decorrelate(B_new);
    const double change = (1.0 - (B_new * B.transpose()).diagonal().array().abs()).abs().maxCoeff();
    B = B_new;
    model.iterations = it;
    if (change < options.tolerance) {
      model.converged = true;
      break;
    }
  }

  if (model.converged) {
    // canonical sign: largest-magnitude loading positive
    for (int r = 0; r < kProjectedDim; ++r) {
      Eigen::Index arg = 0;
      B.row(r).cwiseAbs().maxCoeff(&arg);
      if (B(r, arg) < 0.0) B.row(r) *= -1.0;
    }
    model.unmixing = B;
  } else {
    model.unmixing.setIdentity();
  }
  return model;
}

ProjectedFeature project(const RawFeature& f, const IcaModel& ica) {
  const Eigen::Map<const Eigen::Matrix<double, kRawFeatureDim, 1>> x(f.data());
  return ica.unmixing * (ica.whitening * (x - ica.mean));
}

SampleMatrix project_all(std::span<const RawFeature> features, const IcaModel& ica) {
  const auto P = ica.projection();
  SampleMatrix out(static_cast<Eigen::Index>(features.size()), kProjectedDim);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Eigen::Map<const Eigen::Matrix<double, kRawFeatureDim, 1>> x(features[i].data());
    out.row(static_cast<Eigen::Index>(i)) = (P * (x - ica.mean)).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------

void GmmModel::validate() const {
  if (weights.size() < 1) throw Error(ErrorCode::InvalidArgument, "GMM needs at least one component");
  if (means.rows() != weights.size() || variances.rows() != weights.size() || variances.cols() != means.cols())
    throw Error(ErrorCode::DimensionMismatch, "GMM parameter shapes disagree");
  if (std::abs(weights.sum() - 1.0) > 1e-9) throw Error(ErrorCode::InvalidArgument, "GMM weights do not sum to 1");
  if ((variances.array() <= 0.0).any()) throw Error(ErrorCode::InvalidArgument, "GMM variances must be positive");
}

Eigen::VectorXd GmmModel::component_log_densities(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const int G = components();
  Eigen::VectorXd out(G);
  for (int g = 0; g < G; ++g) {
    double maha = 0.0;
    double logdet = 0.0;
    for (int j = 0; j < dim(); ++j) {
      const double d = x(j) - means(g, j);
      maha += d * d / variances(g, j);
      logdet += std::log(variances(g, j));
    }
    out(g) = -0.5 * (maha + logdet + dim() * kLog2Pi);
  }
  return out;
}

double GmmModel::log_likelihood(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  Eigen::VectorXd lp = component_log_densities(x) + weights.array().log().matrix();
  return logsumexp(std::span<const double>(lp.data(), static_cast<std::size_t>(lp.size())));
}

GmmScorer::GmmScorer(const GmmModel& gmm, Responsibility mode) : gmm_(gmm) {
  inv_var_ = gmm.variances.cwiseInverse();
  log_norm_ = Eigen::VectorXd::Zero(gmm.components());
  if (mode == Responsibility::Weighted) {
    for (int g = 0; g < gmm.components(); ++g)
      log_norm_(g) = std::log(gmm.weights(g)) - 0.5 * (gmm.variances.row(g).array().log().sum() + gmm.dim() * kLog2Pi);
  }
}

void GmmScorer::responsibilities(const double* x, Eigen::VectorXd& out) const {
  const int G = gmm_.components();
  const int d = gmm_.dim();
  out.resize(G);
  double m = -std::numeric_limits<double>::infinity();
  for (int g = 0; g < G; ++g) {
    double maha = 0.0;
    for (int j = 0; j < d; ++j) {
      const double diff = x[j] - gmm_.means(g, j);
      maha += diff * diff * inv_var_(g, j);
    }
    out(g) = log_norm_(g) - 0.5 * maha;
    m = std::max(m, out(g));
  }
  double s = 0.0;
  for (int g = 0; g < G; ++g) {
    out(g) = std::exp(out(g) - m);
    s += out(g);
  }
  out /= s;
}

Eigen::VectorXd posterior(const Eigen::Ref<const Eigen::VectorXd>& f, const GmmModel& gmm, Responsibility mode) {
  if (f.size() != gmm.dim()) throw Error(ErrorCode::DimensionMismatch, "feature dimension differs from GMM");
  const Eigen::VectorXd x = f;
  Eigen::VectorXd out;
  GmmScorer(gmm, mode).responsibilities(x.data(), out);
  return out;
}

GmmModel fit_gmm(const SampleMatrix& X, int G, const GmmOptions& options, GmmFitReport* report) {
  if (G < 1) throw Error(ErrorCode::InvalidArgument, "GMM needs at least one component");
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (n < 10 * static_cast<Eigen::Index>(G))
    throw Error(ErrorCode::TooFewSamples, std::to_string(n) + " samples for " + std::to_string(G) + " components");

  auto rng = SeedStream(options.seed).derive("gmm").engine();
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // K-Means++ seeding
  Eigen::MatrixXd centers(G, d);
  centers.row(0) = X.row(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n)));
  Eigen::VectorXd d2 = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  for (int g = 1; g < G; ++g) {
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (X.row(i) - centers.row(g - 1)).squaredNorm());
    const double total = d2.sum();
    Eigen::Index pick = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
    if (total > 0.0) {
      double r = unit(rng) * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        r -= d2(i);
        if (r <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.row(g) = X.row(pick);
  }

  // one Lloyd iteration
  std::vector<int> label(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    (centers.rowwise() - X.row(i)).rowwise().squaredNorm().minCoeff(&best);
    label[i] = static_cast<int>(best);
  }
  const Eigen::RowVectorXd global_mean = X.colwise().mean();
  const Eigen::RowVectorXd global_var =
      ((X.rowwise() - global_mean).array().square().colwise().sum() / static_cast<double>(n)).max(options.variance_floor);

  GmmModel model;
  model.weights = Eigen::VectorXd::Zero(G);
  model.means = Eigen::MatrixXd::Zero(G, d);
  model.variances = Eigen::MatrixXd::Zero(G, d);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(G);
  for (Eigen::Index i = 0; i < n; ++i) {
    counts(label[i]) += 1.0;
    model.means.row(label[i]) += X.row(i);
  }
  for (int g = 0; g < G; ++g) {
    if (counts(g) > 0) model.means.row(g) /= counts(g); else model.means.row(g) = centers.row(g);
  }
  for (Eigen::Index i = 0; i < n; ++i)
    model.variances.row(label[i]) += (X.row(i) - model.means.row(label[i])).array().square().matrix();
  for (int g = 0; g < G; ++g) {
    if (counts(g) >= 2) {
      model.variances.row(g) = (model.variances.row(g) / counts(g)).array().max(options.variance_floor).matrix();
    } else {
      model.variances.row(g) = global_var;
    }
    model.weights(g) = std::max(counts(g), 1.0);
  }
  model.weights /= model.weights.sum();

  // EM
  Eigen::MatrixXd resp(n, G);
  double prev = -std::numeric_limits<double>::infinity();
  GmmFitReport local;
  for (int it = 0; it < options.max_iterations; ++it) {
    // E-step
    Eigen::VectorXd log_w = model.weights.array().log().matrix();
    Eigen::VectorXd log_norm(G);
    Eigen::MatrixXd inv_var = model.variances.cwiseInverse();
    for (int g = 0; g < G; ++g)
      log_norm(g) = log_w(g) - 0.5 * (model.variances.row(g).array().log().sum() + d * kLog2Pi);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (int g = 0; g < G; ++g) {
        const double maha = ((X.row(i) - model.means.row(g)).array().square() * inv_var.row(g).array()).sum();
        resp(i, g) = log_norm(g) - 0.5 * maha;
        m = std::max(m, resp(i, g));
      }
      double s = 0.0;
      for (int g = 0; g < G; ++g) s += std::exp(resp(i, g) - m);
      const double lse = m + std::log(s);
      ll += lse;
      for (int g = 0; g < G; ++g) resp(i, g) = std::exp(resp(i, g) - lse);
    }
    ll /= static_cast<double>(n);
    local.log_likelihood.push_back(ll);
    if (ll - prev < options.tolerance) {
      local.converged = true;
      break;
    }
    prev = ll;

    // M-step
    const Eigen::VectorXd Nk = resp.colwise().sum().transpose();
    const Eigen::MatrixXd sum_x = resp.transpose() * X;
    const Eigen::MatrixXd sum_xx = resp.transpose() * X.array().square().matrix();
    for (int g = 0; g < G; ++g) {
      if (Nk(g) < 1e-10) continue;  // starved component keeps its parameters
      model.means.row(g) = sum_x.row(g) / Nk(g);
      model.variances.row(g) =
          (sum_xx.row(g).array() / Nk(g) - model.means.row(g).array().square()).max(options.variance_floor).matrix();
    }
    model.weights = Nk.cwiseMax(1e-10);
    model.weights /= model.weights.sum();
  }
  if (report) *report = std::move(local);
  return model;
}

// ---------------------------------------------------------------------------

void save_ica(const std::filesystem::path& path, const IcaModel& ica) {
  auto out = open_out(path);
  write_header(out, 'I');
  io::put<std::uint32_t>(out, kRawFeatureDim);
  io::put<std::uint32_t>(out, kProjectedDim);
  io::put<std::uint8_t>(out, ica.converged ? 1 : 0);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(ica.iterations));
  write_rowmajor(out, ica.mean.transpose());
  write_rowmajor(out, ica.whitening);
  write_rowmajor(out, ica.unmixing);
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

IcaModel load_ica(const std::filesystem::path& path) {
  auto in = open_in(path);
  read_header(in, 'I', path);
  if (io::get<std::uint32_t>(in) != kRawFeatureDim || io::get<std::uint32_t>(in) != kProjectedDim)
    throw Error(ErrorCode::DimensionMismatch, path.string() + ": unexpected ICA dimensions");
  IcaModel ica;
  ica.converged = io::get<std::uint8_t>(in) != 0;
  ica.iterations = static_cast<int>(io::get<std::uint32_t>(in));
  Eigen::Matrix<double, 1, kRawFeatureDim> mean_row;
  read_rowmajor(in, mean_row);
  ica.mean = mean_row.transpose();
  read_rowmajor(in, ica.whitening);
  read_rowmajor(in, ica.unmixing);
  return ica;
}

void save_gmm(const std::filesystem::path& path, const GmmModel& gmm) {
  gmm.validate();
  auto out = open_out(path);
  write_header(out, 'G');
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(gmm.components()));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(gmm.dim()));
  write_rowmajor(out, gmm.weights.transpose());
  write_rowmajor(out, gmm.means);
  write_rowmajor(out, gmm.variances);
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

GmmModel load_gmm(const std::filesystem::path& path) {
  auto in = open_in(path);
  read_header(in, 'G', path);
  const auto G = io::get<std::uint32_t>(in);
  const auto d = io::get<std::uint32_t>(in);
  if (G == 0 || G > 1'000'000 || d == 0 || d > 4096) throw Error(ErrorCode::UnsupportedFormat, path.string() + ": bad GMM dims");
  GmmModel gmm;
  gmm.weights.resize(G);
  gmm.means.resize(G, d);
  gmm.variances.resize(G, d);
  Eigen::RowVectorXd w(G);
  read_rowmajor(in, w);
  gmm.weights = w.transpose();
  read_rowmajor(in, gmm.means);
  read_rowmajor(in, gmm.variances);
  gmm.validate();
  return gmm;
}

void export_ica_text(std::ostream& out, const IcaModel& ica) {
  out << "geosig-ica 1\nconverged " << ica.converged << "\niterations " << ica.iterations << '\n';
  text_matrix(out, "mean", ica.mean.transpose());
  text_matrix(out, "whitening", ica.whitening);
  text_matrix(out, "unmixing", ica.unmixing);
}

void export_gmm_text(std::ostream& out, const GmmModel& gmm) {
  out << "geosig-gmm 1\n";
  text_matrix(out, "weights", gmm.weights.transpose());
  text_matrix(out, "means", gmm.means);
  text_matrix(out, "variances", gmm.variances);
}

std::uint64_t model_version(const IcaModel& ica, const GmmModel& gmm) {
  std::uint64_t h = io::fnv1a(ica.mean.data(), sizeof(double) * ica.mean.size());
  const auto P = ica.projection();
  for (Eigen::Index r = 0; r < P.rows(); ++r)
    for (Eigen::Index c = 0; c < P.cols(); ++c) {
      const double v = P(r, c);
      h = io::fnv1a(&v, sizeof v, h);
    }
  for (const Eigen::MatrixXd* m : {&gmm.means, &gmm.variances})
    for (Eigen::Index r = 0; r < m->rows(); ++r)
      for (Eigen::Index c = 0; c < m->cols(); ++c) {
        const double v = (*m)(r, c);
        h = io::fnv1a(&v, sizeof v, h);
      }
  h = io::fnv1a(gmm.weights.data(), sizeof(double) * gmm.weights.size(), h);
  return h;
}

}  // namespace geosig
