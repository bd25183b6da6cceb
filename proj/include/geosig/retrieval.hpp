#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "geosig/fisher.hpp"
#include "geosig/numerics.hpp"

namespace geosig {

/// s(X, Y) = -||ψ_X - ψ_Y||_1. Throws DimensionMismatch / ModelMismatch.
double similarity(const Signature& x, const Signature& y);

/// L1 distance over raw spans, in index order.
double l1_distance(const double* a, const double* b, std::size_t n);

struct RetrievalHit {
  std::string frame_id;
  double similarity = 0.0;
  std::size_t index = 0;  // database position
};

struct RetrievalSet {
  std::string query_id;
  std::vector<RetrievalHit> hits;  // non-increasing similarity, ties by frame_id
};

enum class SearchMode { Linear, VpTree };

struct DatabaseEntry {
  std::string frame_id;
  Signature signature;
  std::optional<Pose> pose;  // evaluation only; search never reads it
};

struct DatabaseStats {
  std::size_t entries = 0;
  std::size_t dimension = 0;
  int G = 0;
  int H = 0;
  std::uint64_t model_version = 0;
};

/// Unordered signature store with exact L1 k-NN.
/// Many concurrent readers or one writer; queries never observe a partial insert.
class SignatureDatabase {
 public:
  SignatureDatabase(int G, int H, int feature_dim, std::uint64_t model_version);

  /// Opens an existing database file; later flush() calls append to it.
  static SignatureDatabase open(const std::filesystem::path& path);
  /// Creates (or truncates) `path` as an empty database bound to this instance.
  void create(const std::filesystem::path& path);

  void insert(const std::string& frame_id, Signature signature, std::optional<Pose> pose = std::nullopt);
  void insert(DatabaseEntry entry);

  RetrievalSet knn(const Signature& query, std::size_t k, SearchMode mode = SearchMode::Linear) const;

  /// Writes entries added since the last flush, then a fresh index footer.
  void flush();
  void save(const std::filesystem::path& path);

  DatabaseStats stats() const;
  std::size_t size() const;
  const DatabaseEntry& entry(std::size_t i) const;
  const DatabaseEntry* find(const std::string& frame_id) const;

  /// Every `rate`-th entry in insertion order (ceil(N / rate) entries).
  SignatureDatabase subsample(std::size_t rate) const;

  SignatureDatabase(SignatureDatabase&& other) noexcept;
  SignatureDatabase& operator=(SignatureDatabase&& other) noexcept;
  ~SignatureDatabase();

 private:
  struct VpNode;
  void check(const Signature& sig) const;
  void ensure_index() const;
  RetrievalSet knn_linear(const Signature& query, std::size_t k) const;
  RetrievalSet knn_vptree(const Signature& query, std::size_t k) const;

  int G_;
  int H_;
  int feature_dim_;
  std::uint64_t model_version_;
  std::vector<DatabaseEntry> entries_;
  std::unordered_map<std::string, std::size_t> by_id_;

  std::filesystem::path path_;
  std::size_t persisted_ = 0;

  mutable std::unique_ptr<std::shared_mutex> mutex_;
  mutable std::vector<VpNode> vp_nodes_;
  mutable bool index_stale_ = true;
};

}  // namespace geosig
