#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "geosig/fisher.hpp"
#include "geosig/retrieval.hpp"

namespace geosig {

/// Kernel parameters. Unset values self-tune: sigma = median of -s(X, Y) over
/// distinct retrieved pairs, omega = sigma, kappa = 1.
struct DppConfig {
  std::optional<double> sigma;
  std::optional<double> omega;
  double kappa = 1.0;
  std::size_t k = 5;

  void validate() const;
};

struct DppKernel {
  Eigen::MatrixXd L;  // rows/cols follow retrieval order
  double sigma = 0.0;
  double omega = 0.0;
  double kappa = 1.0;

  std::size_t size() const { return static_cast<std::size_t>(L.rows()); }
};

/// L(X, Y) = rho_X rho_Y kappa exp(s(X, Y) / sigma) with rho_X = exp(s(X, Q) / (2 omega)).
/// `signatures[i]` belongs to `retrieved.hits[i]`; a null entry throws MissingSignature.
DppKernel build_kernel(const RetrievalSet& retrieved, const std::vector<const Signature*>& signatures,
                       const Signature& query, const DppConfig& cfg);

/// Same, looking signatures up in `db` by frame id.
DppKernel build_kernel(const RetrievalSet& retrieved, const SignatureDatabase& db, const Signature& query,
                       const DppConfig& cfg);

struct DppSelection {
  std::vector<std::size_t> indices;  // selection order
  bool padded = false;               // determinant collapsed; tail filled by diagonal
  double log_det = 0.0;              // log det(L_C) of the non-padded part
};

/// Greedy MAP: repeatedly add the item with the largest Schur-complement gain.
DppSelection greedy_kdpp(const Eigen::MatrixXd& L, std::size_t k);

/// Exhaustive argmax det(L_C) over |C| = k. Throws TooLarge for more than 15 items.
std::vector<std::size_t> exact_kdpp_map(const Eigen::MatrixXd& L, std::size_t k);

inline constexpr std::size_t kExactDppLimit = 15;

/// det(L_C) via LDLT; 0 for the empty set is 1.
double subset_det(const Eigen::MatrixXd& L, const std::vector<std::size_t>& subset);

/// Diversified retrieval: the hits at the greedy-selected positions, in selection order.
RetrievalSet diversify(const RetrievalSet& retrieved, const SignatureDatabase& db, const Signature& query,
                       const DppConfig& cfg, DppSelection* selection = nullptr);

}  // namespace geosig
