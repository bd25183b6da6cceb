#include "geosig/validation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "geosig/error.hpp"

namespace geosig {

void ValidationConfig::validate() const {
  if (!(max_residual_angle > 0.0) || !(max_residual_translation > 0.0) || ransac_iters < 1 || !(inlier_dist > 0.0) ||
      min_inliers < 3 || !(ratio > 0.0) || ratio > 1.0 || !(descriptor_radius > 0.0) || descriptor_neighbors < 1 ||
      min_support < 0.0 || min_support > 1.0 || !(support_dist > 0.0) || support_stride < 1 || slide_dist < 0.0)
    throw Error(ErrorCode::InvalidArgument, "invalid validation config");
}

ValidationView make_validation_view(const PatchSet& level, const IcaModel& ica, const ValidationConfig& cfg,
                                    const std::string& frame_id) {
  cfg.validate();
  const auto P = ica.projection();
  const double r2 = cfg.descriptor_radius * cfg.descriptor_radius;

  ValidationView view;
  view.frame_id = frame_id;
  view.means.reserve(level.size());
  view.descriptors.reserve(level.size());
  std::vector<std::pair<double, std::size_t>> near;
  for (std::size_t mu = 0; mu < level.size(); ++mu) {
    const SurfacePatch& self = level[mu];
    near.clear();
    for (std::size_t a = 0; a < level.size(); ++a) {
      const double d2 = (level[a].mean - self.mean).squaredNorm();
      if (a != mu && d2 <= r2) near.emplace_back(d2, a);
    }
    const std::size_t keep = std::min<std::size_t>(near.size(), cfg.descriptor_neighbors);
    std::partial_sort(near.begin(), near.begin() + keep, near.end());

    Eigen::Matrix<double, kProjectedDim, 1> sum = Eigen::Matrix<double, kProjectedDim, 1>::Zero();
    Eigen::Matrix<double, kProjectedDim, 1> sq = Eigen::Matrix<double, kProjectedDim, 1>::Zero();
    int count = 0;
    for (std::size_t i = 0; i < keep; ++i) {
      const SurfacePatch& nb = level[near[i].second];
      auto f = try_pair_feature(self.mean, self.normal, nb.mean, nb.normal, cfg.eps_theta);
      if (!f) continue;
      const Eigen::Map<const Eigen::Matrix<double, kRawFeatureDim, 1>> raw(f->data());
      const Eigen::Matrix<double, kProjectedDim, 1> p = P * (raw - ica.mean);
      sum += p;
      sq += p.cwiseProduct(p);
      ++count;
    }
    PatchDescriptor desc = PatchDescriptor::Zero();
    if (count > 0) {
      const auto mean = sum / count;
      desc.head<kProjectedDim>() = mean;
      desc.tail<kProjectedDim>() = (sq / count - mean.cwiseProduct(mean)).cwiseMax(0.0).cwiseSqrt();
    }
    view.means.push_back(self.mean);
    view.normals.push_back(self.normal);
    view.descriptors.push_back(desc);
  }
  return view;
}

namespace {

struct Nearest {
  int best = -1;
  double d1 = std::numeric_limits<double>::infinity();
  double d2 = std::numeric_limits<double>::infinity();
};

std::vector<Nearest> nearest_two(const ValidationView& from, const ValidationView& to) {
  std::vector<Nearest> out(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    Nearest& n = out[i];
    for (std::size_t j = 0; j < to.size(); ++j) {
      const double d = (from.descriptors[i] - to.descriptors[j]).norm();
      if (d < n.d1) {
        n.d2 = n.d1;
        n.d1 = d;
        n.best = static_cast<int>(j);
      } else if (d < n.d2) {
        n.d2 = d;
      }
    }
  }
  return out;
}

// An exact tie with the runner-up is ambiguous even at distance zero.
bool passes_ratio(const Nearest& n, double ratio) {
  if (!std::isfinite(n.d2)) return true;
  return n.d1 <= ratio * n.d2 && (ratio >= 1.0 || n.d2 > 0.0);
}

}  // namespace

std::vector<Correspondence> match_patches(const ValidationView& q, const ValidationView& x, double ratio) {
  std::vector<Correspondence> out;
  if (q.size() == 0 || x.size() == 0) return out;
  const auto fwd = nearest_two(q, x);
  const auto bwd = nearest_two(x, q);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const Nearest& f = fwd[i];
    if (f.best < 0 || bwd[f.best].best != static_cast<int>(i)) continue;
    if (!passes_ratio(f, ratio) || !passes_ratio(bwd[f.best], ratio)) continue;
    out.push_back({static_cast<int>(i), f.best, f.d1});
  }
  return out;
}

namespace {

struct Normals {
  const std::vector<Vec3>* from = nullptr;
  const std::vector<Vec3>* to = nullptr;
  double slide = 0.0;
  bool active() const { return from && to && slide > 0.0; }
};

std::vector<int> inliers_of(const RigidTransform& T, const std::vector<Correspondence>& m,
                            const std::vector<Vec3>& from, const std::vector<Vec3>& to, double dist, double* sse,
                            const Normals& normals = {}) {
  const double kMinNormalCos = std::cos(30.0 * std::numbers::pi / 180.0);
  std::vector<int> in;
  double s = 0.0;
  const double d2 = dist * dist;
  const double slide2 = normals.slide * normals.slide;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Vec3 diff = T.apply(from[m[i].query]) - to[m[i].candidate];
    const double e = diff.squaredNorm();
    if (e <= d2) {
      in.push_back(static_cast<int>(i));
      s += e;
    } else if (normals.active() && e <= slide2) {
      const Vec3& nt = (*normals.to)[m[i].candidate];
      const double off = nt.dot(diff);
      if (std::abs(off) <= dist && (T.R * (*normals.from)[m[i].query]).dot(nt) >= kMinNormalCos) {
        in.push_back(static_cast<int>(i));
        s += off * off;
      }
    }
  }
  if (sse) *sse = s;
  return in;
}

RigidTransform fit(const std::vector<int>& ids, const std::vector<Correspondence>& m, const std::vector<Vec3>& from,
                   const std::vector<Vec3>& to) {
  std::vector<Vec3> a, b;
  a.reserve(ids.size());
  b.reserve(ids.size());
  for (int i : ids) {
    a.push_back(from[m[i].query]);
    b.push_back(to[m[i].candidate]);
  }
  return procrustes_align(a, b);
}

}  // namespace

RigidTransform refine_point_to_plane(const RigidTransform& initial, const std::vector<Vec3>& from,
                                     const std::vector<Vec3>& from_normals, const std::vector<Vec3>& to,
                                     const std::vector<Vec3>& to_normals, int iterations) {
  // Residual weights: the normal term is scaled to be comparable to metres of
  // plane offset; the point term only pins down otherwise free sliding directions.
  constexpr double kNormalWeight = 0.5;
  constexpr double kPointWeight = 0.1;
  RigidTransform T = initial;
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix<double, 6, 6> A = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> b = Eigen::Matrix<double, 6, 1>::Zero();
    auto add = [&](const Eigen::Matrix<double, 1, 6>& J, double r, double w) {
      A += w * w * J.transpose() * J;
      b -= w * w * J.transpose() * r;
    };
    for (std::size_t i = 0; i < from.size(); ++i) {
      // left perturbation: T' = (I + [dw]x, dt) * T
      const Vec3 p = T.apply(from[i]);
      const Vec3 e = p - to[i];
      const Vec3& n = to_normals[i];
      Eigen::Matrix<double, 1, 6> J;
      J << p.cross(n).transpose(), n.transpose();
      add(J, n.dot(e), 1.0);
      for (int a = 0; a < 3; ++a) {
        Eigen::Matrix<double, 1, 6> Jp = Eigen::Matrix<double, 1, 6>::Zero();
        Jp(a + 3) = 1.0;
        Jp.head<3>() = -Vec3::Unit(a).cross(p).transpose();
        add(Jp, e(a), kPointWeight);
      }
      const Vec3 m = T.R * from_normals[i];
      const Vec3 en = m - to_normals[i];
      for (int a = 0; a < 3; ++a) {
        Eigen::Matrix<double, 1, 6> Jn = Eigen::Matrix<double, 1, 6>::Zero();
        Jn.head<3>() = -Vec3::Unit(a).cross(m).transpose();
        add(Jn, en(a), kNormalWeight);
      }
    }
    const Eigen::Matrix<double, 6, 1> delta = A.ldlt().solve(b);
    if (!delta.allFinite()) break;
    const RigidTransform step{rot_exp(delta.head<3>()), delta.tail<3>()};
    T = step * T;
    if (delta.norm() < 1e-10) break;
  }
  return T;
}

TransformEstimate estimate_transform(const std::vector<Correspondence>& matches, const std::vector<Vec3>& from,
                                     const std::vector<Vec3>& to, const ValidationConfig& cfg, std::mt19937_64& rng,
                                     const std::vector<Vec3>* from_normals, const std::vector<Vec3>* to_normals) {
  if (matches.size() < 3) throw Error(ErrorCode::InsufficientCorrespondences, "need at least 3 correspondences");
  const std::size_t n = matches.size();
  // A rigid motion preserves distances, so samples whose pairwise distances
  // disagree cannot all be inliers and are skipped before fitting.
  const double tolerance = 2.0 * cfg.inlier_dist;
  const Normals normals{from_normals, to_normals, cfg.slide_dist};

  std::vector<int> best;
  double best_sse = std::numeric_limits<double>::infinity();
  std::vector<int> sample(3);
  for (int it = 0; it < cfg.ransac_iters; ++it) {
    const auto picked = sample_indices(n, 3, rng);
    for (int j = 0; j < 3; ++j) sample[j] = static_cast<int>(picked[j]);
    bool consistent = true;
    for (int a = 0; a < 3 && consistent; ++a)
      for (int b = a + 1; b < 3; ++b) {
        const double da = (from[matches[sample[a]].query] - from[matches[sample[b]].query]).norm();
        const double db = (to[matches[sample[a]].candidate] - to[matches[sample[b]].candidate]).norm();
        if (std::abs(da - db) > tolerance) consistent = false;
      }
    if (!consistent) continue;
    RigidTransform T;
    try {
      T = fit(sample, matches, from, to);
    } catch (const Error&) {
      continue;
    }
    double sse = 0.0;
    auto in = inliers_of(T, matches, from, to, cfg.inlier_dist, &sse, normals);
    if (in.size() > best.size() || (in.size() == best.size() && sse < best_sse)) {
      best = std::move(in);
      best_sse = sse;
    }
  }
  if (best.size() < 3 || static_cast<int>(best.size()) < cfg.min_inliers)
    throw Error(ErrorCode::ConsensusFailure,
                "consensus of " + std::to_string(best.size()) + " below " + std::to_string(cfg.min_inliers));

  TransformEstimate est;
  est.inliers = best;
  est.T = fit(best, matches, from, to);
  for (int round = 0; round < 3; ++round) {
    auto in = inliers_of(est.T, matches, from, to, cfg.inlier_dist, nullptr, normals);
    if (in == est.inliers || in.size() < 3) break;
    RigidTransform T;
    try {
      T = fit(in, matches, from, to);
    } catch (const Error&) {
      break;
    }
    est.T = T;
    est.inliers = std::move(in);
  }
  if (static_cast<int>(est.inliers.size()) < cfg.min_inliers)
    throw Error(ErrorCode::ConsensusFailure, "consensus lost after refit");
  if (from_normals && to_normals) {
    std::vector<Vec3> a, an, b, bn;
    for (int i : est.inliers) {
      a.push_back(from[matches[i].query]);
      an.push_back((*from_normals)[matches[i].query]);
      b.push_back(to[matches[i].candidate]);
      bn.push_back((*to_normals)[matches[i].candidate]);
    }
    est.T = refine_point_to_plane(est.T, a, an, b, bn);
  }
  if (normals.active()) {
    // Sliding matches only guide the search; the refined motion must still
    // bring enough centroids together on its own.
    const auto strict = inliers_of(est.T, matches, from, to, cfg.inlier_dist, nullptr);
    if (static_cast<int>(strict.size()) < cfg.min_inliers)
      throw Error(ErrorCode::ConsensusFailure, "only " + std::to_string(strict.size()) + " centroid inliers");
  }
  double sse = 0.0;
  for (int i : est.inliers) sse += (est.T.apply(from[matches[i].query]) - to[matches[i].candidate]).squaredNorm();
  est.rms = std::sqrt(sse / static_cast<double>(est.inliers.size()));
  return est;
}

void attach_depth(ValidationView& view, const RangeFrame& frame, int stride) {
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be at least 1");
  const CameraIntrinsics& k = frame.intrinsics;
  CameraIntrinsics c = k;
  c.width = (k.width + stride - 1) / stride;
  c.height = (k.height + stride - 1) / stride;
  // sample (i, j) sits at pixel (i * stride, j * stride)
  c.fx = k.fx / stride;
  c.fy = k.fy / stride;
  c.cx = k.cx / stride;
  c.cy = k.cy / stride;
  c.depth_scale = 1.0;
  view.depth.assign(static_cast<std::size_t>(c.width) * c.height, 0.0);
  for (int j = 0; j < c.height; ++j)
    for (int i = 0; i < c.width; ++i)
      view.depth[static_cast<std::size_t>(j) * c.width + i] = frame.at(i * stride, j * stride) * k.depth_scale;
  view.camera = c;
}

double overlap_support(const ValidationView& from, const ValidationView& to, const RigidTransform& to_from,
                       const ValidationConfig& cfg) {
  if (!from.camera || !to.camera) return 1.0;
  const CameraIntrinsics& a = *from.camera;
  const CameraIntrinsics& b = *to.camera;
  int landed = 0, agreed = 0;
  for (int j = 0; j < a.height; ++j)
    for (int i = 0; i < a.width; ++i) {
      const double z = from.depth[static_cast<std::size_t>(j) * a.width + i];
      if (z <= 0.0) continue;
      const Vec3 q = to_from.apply(Vec3((i - a.cx) / a.fx * z, (j - a.cy) / a.fy * z, z));
      if (q.z() <= 1e-6) continue;
      const long u = std::lround(b.fx * q.x() / q.z() + b.cx), v = std::lround(b.fy * q.y() / q.z() + b.cy);
      if (u < 0 || v < 0 || u >= b.width || v >= b.height) continue;
      const double d = to.depth[static_cast<std::size_t>(v) * b.width + u];
      if (d <= 0.0) continue;
      const double tol = cfg.support_dist + 0.02 * q.z();
      if (q.z() > d + tol) continue;  // hidden behind what `to` observes
      ++landed;
      if (q.z() >= d - tol) ++agreed;
    }
  if (landed < cfg.min_inliers) return 0.0;
  return static_cast<double>(agreed) / landed;
}

Residual transform_residual(const RigidTransform& forward, const RigidTransform& backward) {
  const RigidTransform r = forward * backward;
  return {rot_log(r.R).norm(), r.t.norm()};
}

bool residual_accepts(const Residual& r, const ValidationConfig& cfg) {
  return r.angle <= cfg.max_residual_angle && r.translation <= cfg.max_residual_translation;
}

ValidationResult two_way_validate(const ValidationView& q, const ValidationView& x, const ValidationConfig& cfg) {
  cfg.validate();
  ValidationResult res;
  const auto matches = match_patches(q, x, cfg.ratio);
  res.matches = matches.size();
  if (static_cast<int>(matches.size()) < cfg.min_inliers) {
    res.reason = "too few correspondences (" + std::to_string(matches.size()) + ")";
    return res;
  }
  std::vector<Correspondence> swapped(matches);
  for (auto& c : swapped) std::swap(c.query, c.candidate);

  const SeedStream root = SeedStream(cfg.seed).derive("validate");
  auto rng_f = root.derive(q.frame_id).derive(x.frame_id).engine();
  auto rng_b = root.derive(x.frame_id).derive(q.frame_id).engine();
  TransformEstimate f, b;
  try {
    f = estimate_transform(matches, q.means, x.means, cfg, rng_f, &q.normals, &x.normals);
    b = estimate_transform(swapped, x.means, q.means, cfg, rng_b, &x.normals, &q.normals);
  } catch (const Error& e) {
    res.reason = e.what();
    return res;
  }
  res.T = f.T;
  res.inliers_forward = f.inliers.size();
  res.inliers_backward = b.inliers.size();
  res.residual = transform_residual(f.T, b.T);
  if (!residual_accepts(res.residual, cfg)) {
    res.reason = "residual transform too large";
    return res;
  }
  if (cfg.min_support > 0.0) {
    res.support_forward = overlap_support(q, x, f.T, cfg);
    res.support_backward = overlap_support(x, q, b.T, cfg);
    if (std::min(res.support_forward, res.support_backward) < cfg.min_support) {
      res.reason = "aligned views do not overlap consistently";
      return res;
    }
  }
  res.accepted = true;
  return res;
}

}  // namespace geosig
