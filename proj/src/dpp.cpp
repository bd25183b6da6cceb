#include "geosig/dpp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "geosig/error.hpp"

namespace geosig {

void DppConfig::validate() const {
  if (sigma && !(*sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
  if (omega && !(*omega > 0.0)) throw Error(ErrorCode::InvalidArgument, "omega must be positive");
  if (!(kappa > 0.0)) throw Error(ErrorCode::InvalidArgument, "kappa must be positive");
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
}

DppKernel build_kernel(const RetrievalSet& retrieved, const std::vector<const Signature*>& signatures,
                       const Signature& query, const DppConfig& cfg) {
  cfg.validate();
  const std::size_t n = retrieved.hits.size();
  if (signatures.size() != n) throw Error(ErrorCode::MissingSignature, "signature list does not cover the retrieval set");
  for (std::size_t i = 0; i < n; ++i)
    if (!signatures[i]) throw Error(ErrorCode::MissingSignature, retrieved.hits[i].frame_id);

  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> pair_dist;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      S(i, j) = S(j, i) = similarity(*signatures[i], *signatures[j]);
      pair_dist.push_back(-S(i, j));
    }

  DppKernel K;
  double tuned = pair_dist.empty() ? 1.0 : median(pair_dist);
  if (!(tuned > 0.0)) tuned = 1.0;
  K.sigma = cfg.sigma.value_or(tuned);
  K.omega = cfg.omega.value_or(K.sigma);
  K.kappa = cfg.kappa;

  Eigen::VectorXd rho(n);
  for (std::size_t i = 0; i < n; ++i) rho(i) = std::exp(similarity(*signatures[i], query) / (2.0 * K.omega));
  K.L.resize(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) K.L(i, j) = rho(i) * rho(j) * K.kappa * std::exp(S(i, j) / K.sigma);
  return K;
}

DppKernel build_kernel(const RetrievalSet& retrieved, const SignatureDatabase& db, const Signature& query,
                       const DppConfig& cfg) {
  std::vector<const Signature*> sigs;
  sigs.reserve(retrieved.hits.size());
  for (const auto& h : retrieved.hits) {
    const DatabaseEntry* e = db.find(h.frame_id);
    sigs.push_back(e ? &e->signature : nullptr);
  }
  return build_kernel(retrieved, sigs, query, cfg);
}

DppSelection greedy_kdpp(const Eigen::MatrixXd& L, std::size_t k) {
  const std::size_t n = static_cast<std::size_t>(L.rows());
  if (k > n) throw Error(ErrorCode::InvalidArgument, "k exceeds the number of items");
  DppSelection out;
  if (k == 0) return out;

  // gain(i) = L_ii - |c_i|^2 is the Schur complement of i given the current selection,
  // so det(L_{C+i}) = det(L_C) * gain(i). Rows of C hold the Cholesky columns.
  Eigen::VectorXd gain = L.diagonal();
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  std::vector<std::uint8_t> taken(n, 0);
  const double collapse = 1e-12 * std::max(L.diagonal().maxCoeff(), std::numeric_limits<double>::min());

  for (std::size_t step = 0; step < k; ++step) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i)
      if (!taken[i] && (best == n || gain(i) > gain(best))) best = i;
    if (gain(best) <= collapse) {
      out.padded = true;
      break;
    }
    out.indices.push_back(best);
    out.log_det += std::log(gain(best));
    taken[best] = 1;
    const double root = std::sqrt(gain(best));
    const auto s = static_cast<Eigen::Index>(step);
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double dot = C.col(i).head(s).dot(C.col(best).head(s));
      C(s, i) = (L(best, i) - dot) / root;
      gain(i) -= C(s, i) * C(s, i);
    }
  }

  if (out.padded) {
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
      if (!taken[i]) rest.push_back(i);
    std::stable_sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) { return L(a, a) > L(b, b); });
    for (std::size_t i = 0; out.indices.size() < k; ++i) out.indices.push_back(rest[i]);
  }
  return out;
}

double subset_det(const Eigen::MatrixXd& L, const std::vector<std::size_t>& subset) {
  const auto m = static_cast<Eigen::Index>(subset.size());
  if (m == 0) return 1.0;
  Eigen::MatrixXd sub(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) sub(a, b) = L(subset[a], subset[b]);
  // principal minors of a PSD kernel are >= 0; clamp round-off in the pivots
  const Eigen::VectorXd d = sub.ldlt().vectorD();
  double det = 1.0;
  for (Eigen::Index i = 0; i < m; ++i) det *= std::max(d(i), 0.0);
  return det;
}

std::vector<std::size_t> exact_kdpp_map(const Eigen::MatrixXd& L, std::size_t k) {
  const std::size_t n = static_cast<std::size_t>(L.rows());
  if (n > kExactDppLimit) throw Error(ErrorCode::TooLarge, "exhaustive k-DPP search is limited to 15 items");
  if (k > n) throw Error(ErrorCode::InvalidArgument, "k exceeds the number of items");

  std::vector<std::size_t> current(k), best;
  for (std::size_t i = 0; i < k; ++i) current[i] = i;
  double best_det = -std::numeric_limits<double>::infinity();
  while (true) {
    const double d = subset_det(L, current);
    if (d > best_det) {
      best_det = d;
      best = current;
    }
    // next combination in lexicographic order
    std::size_t i = k;
    while (i > 0 && current[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++current[i - 1];
    for (std::size_t j = i; j < k; ++j) current[j] = current[j - 1] + 1;
  }
  return best;
}

RetrievalSet diversify(const RetrievalSet& retrieved, const SignatureDatabase& db, const Signature& query,
                       const DppConfig& cfg, DppSelection* selection) {
  const DppKernel K = build_kernel(retrieved, db, query, cfg);
  const std::size_t k = std::min(cfg.k, retrieved.hits.size());
  DppSelection sel = greedy_kdpp(K.L, k);
  RetrievalSet out;
  out.query_id = retrieved.query_id;
  for (std::size_t i : sel.indices) out.hits.push_back(retrieved.hits[i]);
  if (selection) *selection = std::move(sel);
  return out;
}

}  // namespace geosig
