#include "geosig/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>

#include "binary_io.hpp"
#include "geosig/error.hpp"

namespace geosig {

namespace {

constexpr char kDbMagic[8] = {'G', 'E', 'O', 'S', 'I', 'G', 'D', 'B'};
constexpr char kDbEnd[8] = {'G', 'S', 'D', 'B', 'E', 'N', 'D', '\0'};
constexpr std::uint32_t kDbVersion = 1;
constexpr std::uint8_t kEntryTag = 'E';
constexpr std::uint8_t kFooterTag = 'F';

struct Candidate {
  double dist;
  const std::string* id;
  std::size_t index;
};

// Strict "a ranks before b": smaller distance, then lexicographic frame id.
bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.dist != b.dist) return a.dist < b.dist;
  return *a.id < *b.id;
}

class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) {}

  void offer(const Candidate& c) {
    if (heap_.size() < k_) {
      heap_.push_back(c);
      std::push_heap(heap_.begin(), heap_.end(), ranks_before);
    } else if (ranks_before(c, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), ranks_before);
      heap_.back() = c;
      std::push_heap(heap_.begin(), heap_.end(), ranks_before);
    }
  }
  double tau() const { return heap_.size() < k_ ? std::numeric_limits<double>::infinity() : heap_.front().dist; }

  RetrievalSet finish(const std::string& query_id) {
    std::sort(heap_.begin(), heap_.end(), ranks_before);
    RetrievalSet out;
    out.query_id = query_id;
    for (const auto& c : heap_) out.hits.push_back({*c.id, 0.0 - c.dist, c.index});
    return out;
  }

 private:
  std::size_t k_;
  std::vector<Candidate> heap_;  // max-heap on rank: worst kept candidate at front
};

void write_entry(std::ostream& out, const DatabaseEntry& e) {
  io::put<std::uint8_t>(out, kEntryTag);
  write_signature(out, e.signature, 8);
  io::put<std::uint8_t>(out, e.pose ? 1 : 0);
  if (e.pose) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) io::put<double>(out, e.pose->R(r, c));
    for (int r = 0; r < 3; ++r) io::put<double>(out, e.pose->t(r));
  }
}

DatabaseEntry read_entry(std::istream& in) {
  if (io::get<std::uint8_t>(in) != kEntryTag) throw Error(ErrorCode::UnsupportedFormat, "corrupt database record");
  DatabaseEntry e;
  e.signature = read_signature(in);
  e.frame_id = e.signature.frame_id;
  if (io::get<std::uint8_t>(in)) {
    Pose p;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) p.R(r, c) = io::get<double>(in);
    for (int r = 0; r < 3; ++r) p.t(r) = io::get<double>(in);
    e.pose = p;
  }
  return e;
}

}  // namespace

double l1_distance(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(a[i] - b[i]);
  return s;
}

double similarity(const Signature& x, const Signature& y) {
  if (x.data.size() != y.data.size()) throw Error(ErrorCode::DimensionMismatch, "signature lengths differ");
  if (x.model_version != y.model_version) throw Error(ErrorCode::ModelMismatch, "signatures from different models");
  return 0.0 - l1_distance(x.data.data(), y.data.data(), x.data.size());  // +0 for equal vectors
}

struct SignatureDatabase::VpNode {
  std::size_t item = 0;
  double mu = 0.0;
  int inside = -1;
  int outside = -1;
};

SignatureDatabase::SignatureDatabase(int G, int H, int feature_dim, std::uint64_t model_version)
    : G_(G), H_(H), feature_dim_(feature_dim), model_version_(model_version), mutex_(std::make_unique<std::shared_mutex>()) {}

SignatureDatabase::SignatureDatabase(SignatureDatabase&& other) noexcept = default;
SignatureDatabase& SignatureDatabase::operator=(SignatureDatabase&& other) noexcept = default;
SignatureDatabase::~SignatureDatabase() = default;

void SignatureDatabase::check(const Signature& sig) const {
  const std::size_t dim = static_cast<std::size_t>(2 * feature_dim_ + 1) * G_ * H_;
  if (sig.data.size() != dim || sig.G != G_ || sig.H != H_)
    throw Error(ErrorCode::DimensionMismatch, "signature dimension " + std::to_string(sig.data.size()) +
                                                  " does not match database dimension " + std::to_string(dim));
  if (sig.model_version != model_version_) throw Error(ErrorCode::ModelMismatch, "signature model version differs from database");
}

void SignatureDatabase::insert(const std::string& frame_id, Signature signature, std::optional<Pose> pose) {
  signature.frame_id = frame_id;
  insert(DatabaseEntry{frame_id, std::move(signature), pose});
}

void SignatureDatabase::insert(DatabaseEntry entry) {
  std::unique_lock lock(*mutex_);
  check(entry.signature);
  if (by_id_.count(entry.frame_id)) throw Error(ErrorCode::DuplicateFrameId, entry.frame_id);
  entry.signature.frame_id = entry.frame_id;
  by_id_.emplace(entry.frame_id, entries_.size());
  entries_.push_back(std::move(entry));
  index_stale_ = true;
}

std::size_t SignatureDatabase::size() const {
  std::shared_lock lock(*mutex_);
  return entries_.size();
}

const DatabaseEntry& SignatureDatabase::entry(std::size_t i) const {
  std::shared_lock lock(*mutex_);
  return entries_.at(i);
}

const DatabaseEntry* SignatureDatabase::find(const std::string& frame_id) const {
  std::shared_lock lock(*mutex_);
  auto it = by_id_.find(frame_id);
  return it == by_id_.end() ? nullptr : &entries_[it->second];
}

DatabaseStats SignatureDatabase::stats() const {
  std::shared_lock lock(*mutex_);
  return {entries_.size(), static_cast<std::size_t>(2 * feature_dim_ + 1) * G_ * H_, G_, H_, model_version_};
}

RetrievalSet SignatureDatabase::knn(const Signature& query, std::size_t k, SearchMode mode) const {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  if (mode == SearchMode::VpTree) ensure_index();
  std::shared_lock lock(*mutex_);
  if (entries_.empty()) throw Error(ErrorCode::EmptyDatabase, "database has no entries");
  check(query);
  return mode == SearchMode::Linear ? knn_linear(query, k) : knn_vptree(query, k);
}

RetrievalSet SignatureDatabase::knn_linear(const Signature& query, std::size_t k) const {
  TopK top(k);
  const std::size_t n = query.data.size();
  for (std::size_t i = 0; i < entries_.size(); ++i)
    top.offer({l1_distance(query.data.data(), entries_[i].signature.data.data(), n), &entries_[i].frame_id, i});
  return top.finish(query.frame_id);
}

void SignatureDatabase::ensure_index() const {
  {
    std::shared_lock lock(*mutex_);
    if (!index_stale_) return;
  }
  std::unique_lock lock(*mutex_);
  if (!index_stale_) return;

  vp_nodes_.clear();
  vp_nodes_.reserve(entries_.size());
  std::vector<std::size_t> items(entries_.size());
  std::iota(items.begin(), items.end(), 0);
  const std::size_t n = entries_.empty() ? 0 : entries_.front().signature.data.size();

  // Iterative build; vantage point = first item of each range (insertion order).
  struct Task {
    std::size_t lo, hi;
    int parent;
    bool inside;
  };
  std::vector<Task> stack{{0, items.size(), -1, false}};
  std::vector<std::pair<double, std::size_t>> dist;
  while (!stack.empty()) {
    const Task t = stack.back();
    stack.pop_back();
    if (t.lo >= t.hi) continue;
    const int node = static_cast<int>(vp_nodes_.size());
    vp_nodes_.push_back({items[t.lo], 0.0, -1, -1});
    if (t.parent >= 0) (t.inside ? vp_nodes_[t.parent].inside : vp_nodes_[t.parent].outside) = node;

    const std::size_t vp = items[t.lo];
    dist.clear();
    for (std::size_t i = t.lo + 1; i < t.hi; ++i)
      dist.emplace_back(l1_distance(entries_[vp].signature.data.data(), entries_[items[i]].signature.data.data(), n),
                        items[i]);
    if (dist.empty()) continue;
    std::sort(dist.begin(), dist.end());
    const std::size_t mid = (dist.size() - 1) / 2;
    const double mu = dist[mid].first;
    vp_nodes_[node].mu = mu;
    // inside: d <= mu, outside: d > mu
    std::size_t split = 0;
    while (split < dist.size() && dist[split].first <= mu) ++split;
    for (std::size_t i = 0; i < dist.size(); ++i) items[t.lo + 1 + i] = dist[i].second;
    stack.push_back({t.lo + 1, t.lo + 1 + split, node, true});
    stack.push_back({t.lo + 1 + split, t.hi, node, false});
  }
  index_stale_ = false;
}

RetrievalSet SignatureDatabase::knn_vptree(const Signature& query, std::size_t k) const {
  TopK top(k);
  const std::size_t n = query.data.size();
  std::vector<int> stack;
  if (!vp_nodes_.empty()) stack.push_back(0);
  while (!stack.empty()) {
    const VpNode& node = vp_nodes_[stack.back()];
    stack.pop_back();
    const double d = l1_distance(query.data.data(), entries_[node.item].signature.data.data(), n);
    top.offer({d, &entries_[node.item].frame_id, node.item});
    const double tau = top.tau();
    // slack absorbs rounding in the triangle inequality
    const double slack = 1e-9 * (d + node.mu + (std::isfinite(tau) ? tau : 0.0)) + 1e-12;
    const bool visit_inside = node.inside >= 0 && d - tau <= node.mu + slack;
    const bool visit_outside = node.outside >= 0 && d + tau + slack >= node.mu;
    // push the more promising side last so it is explored first
    if (d <= node.mu) {
      if (visit_outside) stack.push_back(node.outside);
      if (visit_inside) stack.push_back(node.inside);
    } else {
      if (visit_inside) stack.push_back(node.inside);
      if (visit_outside) stack.push_back(node.outside);
    }
  }
  return top.finish(query.frame_id);
}

// ---------------------------------------------------------------------------
// Persistence: header, entry records, footer {tag, count, offsets[count], footer_start, end magic}.

void SignatureDatabase::create(const std::filesystem::path& path) {
  std::unique_lock lock(*mutex_);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(kDbMagic, sizeof(kDbMagic));
  io::put<std::uint32_t>(out, kDbVersion);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(G_));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(H_));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(feature_dim_));
  io::put<std::uint64_t>(out, model_version_);
  const std::uint64_t footer_start = static_cast<std::uint64_t>(out.tellp());
  io::put<std::uint8_t>(out, kFooterTag);
  io::put<std::uint64_t>(out, 0);
  io::put<std::uint64_t>(out, footer_start);
  out.write(kDbEnd, sizeof(kDbEnd));
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
  path_ = path;
  persisted_ = 0;
}

namespace {

struct Footer {
  std::uint64_t start = 0;
  std::vector<std::uint64_t> offsets;
};

Footer read_footer(std::istream& in, const std::filesystem::path& path) {
  in.seekg(-static_cast<std::streamoff>(sizeof(kDbEnd) + sizeof(std::uint64_t)), std::ios::end);
  Footer f;
  f.start = io::get<std::uint64_t>(in);
  char end[8];
  if (!in.read(end, sizeof(end)) || !std::equal(end, end + 8, kDbEnd))
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": missing database footer");
  in.seekg(static_cast<std::streamoff>(f.start));
  if (io::get<std::uint8_t>(in) != kFooterTag) throw Error(ErrorCode::UnsupportedFormat, path.string() + ": corrupt footer");
  const auto count = io::get<std::uint64_t>(in);
  f.offsets.resize(count);
  for (auto& o : f.offsets) o = io::get<std::uint64_t>(in);
  return f;
}

}  // namespace

SignatureDatabase SignatureDatabase::open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kDbMagic))
    throw Error(ErrorCode::UnsupportedFormat, path.string() + " is not a geosig database");
  if (io::get<std::uint32_t>(in) != kDbVersion) throw Error(ErrorCode::UnsupportedFormat, "unsupported database version");
  const int G = static_cast<int>(io::get<std::uint32_t>(in));
  const int H = static_cast<int>(io::get<std::uint32_t>(in));
  const int d = static_cast<int>(io::get<std::uint32_t>(in));
  const auto version = io::get<std::uint64_t>(in);
  SignatureDatabase db(G, H, d, version);

  const Footer footer = read_footer(in, path);
  for (std::uint64_t off : footer.offsets) {
    in.seekg(static_cast<std::streamoff>(off));
    db.insert(read_entry(in));
  }
  db.path_ = path;
  db.persisted_ = db.entries_.size();
  return db;
}

void SignatureDatabase::flush() {
  std::unique_lock lock(*mutex_);
  if (path_.empty()) throw Error(ErrorCode::InvalidArgument, "database is not bound to a file");
  Footer footer;
  {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, path_.string());
    footer = read_footer(in, path_);
  }
  if (footer.offsets.size() != persisted_)
    throw Error(ErrorCode::Io, path_.string() + " was modified by another writer");
  std::filesystem::resize_file(path_, footer.start);

  std::fstream out(path_, std::ios::binary | std::ios::in | std::ios::out);
  out.seekp(0, std::ios::end);
  for (std::size_t i = persisted_; i < entries_.size(); ++i) {
    footer.offsets.push_back(static_cast<std::uint64_t>(out.tellp()));
    write_entry(out, entries_[i]);
  }
  const std::uint64_t start = static_cast<std::uint64_t>(out.tellp());
  io::put<std::uint8_t>(out, kFooterTag);
  io::put<std::uint64_t>(out, footer.offsets.size());
  for (auto o : footer.offsets) io::put<std::uint64_t>(out, o);
  io::put<std::uint64_t>(out, start);
  out.write(kDbEnd, sizeof(kDbEnd));
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path_.string());
  persisted_ = entries_.size();
}

void SignatureDatabase::save(const std::filesystem::path& path) {
  create(path);
  flush();
}

SignatureDatabase SignatureDatabase::subsample(std::size_t rate) const {
  if (rate < 1) throw Error(ErrorCode::InvalidArgument, "subsampling rate must be at least 1");
  std::shared_lock lock(*mutex_);
  SignatureDatabase out(G_, H_, feature_dim_, model_version_);
  for (std::size_t i = 0; i < entries_.size(); i += rate) out.insert(entries_[i]);
  return out;
}

}  // namespace geosig
