#include "geosig/features.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "geosig/error.hpp"

namespace geosig {

void FeatureConfig::validate() const {
  if (!(neighbor_radius > 0.0 && eps_theta > 0.0 && max_neighbors > 0))
    throw Error(ErrorCode::InvalidArgument, "feature config values must be positive");
  if (!(patch_sample_fraction > 0.0 && patch_sample_fraction <= 1.0 && neighbor_sample_fraction > 0.0 &&
        neighbor_sample_fraction <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "sample fractions must lie in (0, 1]");
}

std::optional<LocalBasis> try_gram_schmidt_basis(const Vec3& normal, const Vec3& r) {
  const double len = r.norm();
  if (len <= 1e-6) return std::nullopt;
  const Vec3 u = r / len;
  if (std::abs(normal.dot(u)) >= 1.0 - 1e-6) return std::nullopt;
  const Vec3 v = (normal - normal.dot(u) * u).normalized();
  return LocalBasis{u, v, u.cross(v)};
}

LocalBasis gram_schmidt_basis(const Vec3& normal, const Vec3& r) {
  auto basis = try_gram_schmidt_basis(normal, r);
  if (!basis) throw Error(ErrorCode::DegenerateBasis, "normal and displacement are colinear");
  return *basis;
}

int robust_signum(double a, double eps_theta) {
  if (std::abs(a) <= std::sin(eps_theta)) return 0;
  return a > 0.0 ? 1 : -1;
}

double unit_angle(const Vec3& a, const Vec3& b) { return std::atan2(a.cross(b).norm(), a.dot(b)); }

std::optional<RawFeature> try_pair_feature(const Vec3& mean_mu, const Vec3& n_mu, const Vec3& mean_alpha,
                                           const Vec3& n_alpha, double eps_theta) {
  const Vec3 r = mean_alpha - mean_mu;
  const auto basis = try_gram_schmidt_basis(n_mu, r);
  if (!basis) return std::nullopt;
  const auto& [u, v, w] = *basis;
  const double len = r.norm();

  const double mu_u = n_mu.dot(u);
  const double a_u = n_alpha.dot(u);
  const double a_v = n_alpha.dot(v);
  const double a_w = n_alpha.dot(w);
  return RawFeature{
      unit_angle(n_alpha, n_mu),
      unit_angle(u, n_mu),
      unit_angle(u, n_alpha),
      r.dot(n_mu),
      a_u,
      a_v,
      a_w,
      r.dot(n_alpha.cross(n_mu)),
      len,
      len * robust_signum(mu_u, eps_theta),
      len * robust_signum(a_u, eps_theta),
      len * robust_signum(a_v, eps_theta),
      len * robust_signum(a_w, eps_theta),
  };
}

RawFeature pair_feature(const SurfacePatch& mu, const SurfacePatch& alpha, const FeatureConfig& cfg) {
  auto f = try_pair_feature(mu.mean, mu.normal, alpha.mean, alpha.normal, cfg.eps_theta);
  if (!f) throw Error(ErrorCode::DegenerateBasis, "patch pair has a degenerate local basis");
  return *f;
}

namespace {

std::size_t fraction_count(std::size_t n, double fraction) {
  if (n == 0) return 0;
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))), 1, n);
}

}  // namespace

LevelFeatures patch_feature_set(std::size_t mu, const PatchSet& level, const FeatureConfig& cfg,
                                std::uint64_t stream_seed) {
  if (mu >= level.size()) throw Error(ErrorCode::InvalidArgument, "patch index outside level");
  const SurfacePatch& self = level[mu];
  const double r2 = cfg.neighbor_radius * cfg.neighbor_radius;

  std::vector<std::size_t> candidates;
  for (std::size_t a = 0; a < level.size(); ++a)
    if (a != mu && (level[a].mean - self.mean).squaredNorm() <= r2) candidates.push_back(a);

  std::size_t keep = fraction_count(candidates.size(), cfg.neighbor_sample_fraction);
  keep = std::min<std::size_t>(keep, static_cast<std::size_t>(cfg.max_neighbors));
  if (keep < candidates.size()) {
    auto rng = SeedStream(stream_seed).derive(static_cast<std::uint64_t>(mu)).engine();
    std::vector<std::size_t> chosen;
    for (std::size_t i : sample_indices(candidates.size(), keep, rng)) chosen.push_back(candidates[i]);
    candidates = std::move(chosen);
  }

  LevelFeatures out;
  out.features.reserve(candidates.size());
  for (std::size_t a : candidates) {
    auto f = try_pair_feature(self.mean, self.normal, level[a].mean, level[a].normal, cfg.eps_theta);
    if (!f) continue;
    out.features.push_back(*f);
    out.provenance.emplace_back(static_cast<int>(mu), static_cast<int>(a));
  }
  return out;
}

std::vector<LevelFeatures> frame_feature_sets(const SegmentationHierarchy& hier, const FeatureConfig& cfg) {
  cfg.validate();
  const SeedStream root = SeedStream(cfg.seed).derive("features");
  std::vector<LevelFeatures> out;
  for (int h = 0; h < hier.height(); ++h) {
    const PatchSet& level = hier.levels[h];
    const SeedStream level_stream = root.derive(static_cast<std::uint64_t>(h));
    auto rng = level_stream.derive("patches").engine();
    const auto sampled = sample_indices(level.size(), fraction_count(level.size(), cfg.patch_sample_fraction), rng);
    const std::uint64_t nbr_seed = level_stream.derive("neighbors").seed();

    LevelFeatures agg;
    for (std::size_t mu : sampled) {
      LevelFeatures f = patch_feature_set(mu, level, cfg, nbr_seed);
      agg.features.insert(agg.features.end(), f.features.begin(), f.features.end());
      agg.provenance.insert(agg.provenance.end(), f.provenance.begin(), f.provenance.end());
    }
    out.push_back(std::move(agg));
  }
  return out;
}

void dump_features(std::ostream& out, const std::vector<LevelFeatures>& levels) {
  const auto old = out.precision(17);
  for (std::size_t h = 0; h < levels.size(); ++h) {
    for (std::size_t i = 0; i < levels[h].size(); ++i) {
      out << h + 1 << ' ' << levels[h].provenance[i].first << ' ' << levels[h].provenance[i].second;
      for (double c : levels[h].features[i]) out << ' ' << c;
      out << '\n';
    }
  }
  out.precision(old);
}

}  // namespace geosig
