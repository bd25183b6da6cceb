#include "geosig/fisher.hpp"

#include <cmath>
#include <fstream>

#include "binary_io.hpp"
#include "geosig/error.hpp"

namespace geosig {

namespace {
constexpr char kSigMagic[8] = {'G', 'E', 'O', 'S', 'I', 'G', 'S', 'G'};
constexpr std::uint32_t kSigVersion = 1;
}  // namespace

FisherVector fisher_vector(const SampleMatrix& X, const GmmModel& gmm, Responsibility mode) {
  const int G = gmm.components();
  const int d = gmm.dim();
  const int block = 2 * d + 1;
  FisherVector fv;
  fv.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(block) * G);
  if (X.rows() == 0) {
    fv.empty = true;
    return fv;
  }
  if (X.cols() != d) throw Error(ErrorCode::DimensionMismatch, "feature dimension differs from GMM");

  const Eigen::MatrixXd inv_std = gmm.variances.cwiseSqrt().cwiseInverse();
  Eigen::VectorXd s0 = Eigen::VectorXd::Zero(G);
  Eigen::MatrixXd s1 = Eigen::MatrixXd::Zero(G, d);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(G, d);
  const GmmScorer scorer(gmm, mode);
  Eigen::VectorXd pi;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double* f = X.row(i).data();
    scorer.responsibilities(f, pi);
    for (int g = 0; g < G; ++g) {
      s0(g) += pi(g) - gmm.weights(g);
      if (pi(g) < 1e-300) continue;
      for (int j = 0; j < d; ++j) {
        const double z = (f[j] - gmm.means(g, j)) * inv_std(g, j);
        s1(g, j) += pi(g) * z;
        s2(g, j) += pi(g) * (z * z - 1.0);
      }
    }
  }

  const double n = static_cast<double>(X.rows());
  for (int g = 0; g < G; ++g) {
    const double sp = std::sqrt(gmm.weights(g));
    const Eigen::Index off = static_cast<Eigen::Index>(g) * block;
    fv.values(off) = s0(g) / (n * sp);
    fv.values.segment(off + 1, d) = s1.row(g).transpose() / (n * sp);
    fv.values.segment(off + 1 + d, d) = s2.row(g).transpose() / (n * std::sqrt(2.0) * sp);
  }
  return fv;
}

Eigen::VectorXd power_l2_normalize(const Eigen::VectorXd& v) {
  Eigen::VectorXd out = v.unaryExpr([](double a) { return a < 0.0 ? -std::sqrt(-a) : std::sqrt(a); });
  const double norm = out.norm();
  if (norm > 0.0) out /= norm;
  return out;
}

Signature encode_view(const std::vector<SampleMatrix>& level_features, const GmmModel& gmm,
                      std::uint64_t model_version, const std::string& frame_id, Responsibility mode) {
  bool any = false;
  for (const auto& lf : level_features) any |= lf.rows() > 0;
  if (!any) throw Error(ErrorCode::AllLevelsEmpty, "no features at any level of '" + frame_id + "'");

  Signature sig;
  sig.G = gmm.components();
  sig.H = static_cast<int>(level_features.size());
  sig.feature_dim = gmm.dim();
  sig.model_version = model_version;
  sig.frame_id = frame_id;
  sig.data.reserve(sig.block_size() * sig.H);
  for (const auto& lf : level_features) {
    const Eigen::VectorXd block = power_l2_normalize(fisher_vector(lf, gmm, mode).values);
    sig.data.insert(sig.data.end(), block.data(), block.data() + block.size());
  }
  return sig;
}

void write_signature(std::ostream& out, const Signature& sig, int float_width) {
  if (float_width != 4 && float_width != 8) throw Error(ErrorCode::InvalidArgument, "float width must be 4 or 8");
  out.write(kSigMagic, sizeof(kSigMagic));
  io::put<std::uint32_t>(out, kSigVersion);
  io::put_string(out, sig.frame_id);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(sig.G));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(sig.H));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(sig.feature_dim));
  io::put<std::uint64_t>(out, sig.model_version);
  io::put<std::uint8_t>(out, static_cast<std::uint8_t>(float_width));
  io::put<std::uint64_t>(out, sig.data.size());
  if (float_width == 8) {
    io::put_doubles(out, sig.data.data(), sig.data.size());
  } else {
    for (double v : sig.data) io::put<float>(out, static_cast<float>(v));
  }
}

Signature read_signature(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kSigMagic))
    throw Error(ErrorCode::UnsupportedFormat, "not a geosig signature");
  if (io::get<std::uint32_t>(in) != kSigVersion) throw Error(ErrorCode::UnsupportedFormat, "unsupported signature version");
  Signature sig;
  sig.frame_id = io::get_string(in);
  sig.G = static_cast<int>(io::get<std::uint32_t>(in));
  sig.H = static_cast<int>(io::get<std::uint32_t>(in));
  sig.feature_dim = static_cast<int>(io::get<std::uint32_t>(in));
  sig.model_version = io::get<std::uint64_t>(in);
  const auto width = io::get<std::uint8_t>(in);
  const auto n = io::get<std::uint64_t>(in);
  if (n != sig.block_size() * static_cast<std::size_t>(sig.H))
    throw Error(ErrorCode::DimensionMismatch, "signature length disagrees with its header");
  sig.data.resize(n);
  if (width == 8) {
    io::get_doubles(in, sig.data.data(), n);
  } else if (width == 4) {
    for (auto& v : sig.data) v = io::get<float>(in);
  } else {
    throw Error(ErrorCode::UnsupportedFormat, "bad float width");
  }
  return sig;
}

void save_signature(const std::filesystem::path& path, const Signature& sig, int float_width) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  write_signature(out, sig, float_width);
}

Signature load_signature(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  return read_signature(in);
}

}  // namespace geosig
