#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "geosig/dpp.hpp"
#include "geosig/feature_space.hpp"
#include "geosig/features.hpp"
#include "geosig/fisher.hpp"
#include "geosig/retrieval.hpp"
#include "geosig/scene.hpp"
#include "geosig/segmentation.hpp"
#include "geosig/validation.hpp"

namespace geosig {

enum class Variant { R, DR, VDR };

Variant parse_variant(const std::string& text);
std::string to_string(Variant v);

struct PipelineConfig {
  double normal_radius = kDefaultNormalRadius;
  SegmentationConfig segmentation;
  FeatureConfig features;
  int validation_level = 1;  // 0-based hierarchy level used for validation
  ValidationConfig validation;

  IcaOptions ica;
  GmmOptions gmm;
  int components = 64;
  std::size_t train_max_samples = 20000;

  std::size_t k = 20;  // retrieval set size
  DppConfig dpp;
  Variant variant = Variant::VDR;
  SearchMode search = SearchMode::Linear;
  std::uint64_t seed = 0;

  /// Re-derives every stage seed from `seed`.
  void apply_seed(std::uint64_t root);
  void validate() const;

  /// "key = value" lines; '#' comments. Unknown keys throw InvalidArgument.
  static PipelineConfig parse(const std::string& text);
  static PipelineConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

struct Models {
  IcaModel ica;
  GmmModel gmm;
  std::uint64_t version = 0;
};

/// Depth frame -> oriented cloud -> segmentation hierarchy.
SegmentationHierarchy segment_frame(const RangeFrame& frame, const PipelineConfig& cfg);

/// Raw per-level features of a segmented frame.
std::vector<LevelFeatures> frame_features(const SegmentationHierarchy& hier, const PipelineConfig& cfg);

/// Pools raw features, subsampled to cfg.train_max_samples.
std::vector<RawFeature> pool_training_features(const std::vector<std::vector<LevelFeatures>>& per_frame,
                                               const PipelineConfig& cfg);
IcaModel train_ica(const std::vector<RawFeature>& samples, const PipelineConfig& cfg);
GmmModel train_gmm(const std::vector<RawFeature>& samples, const IcaModel& ica, const PipelineConfig& cfg,
                   GmmFitReport* report = nullptr);
Models train_models(const std::vector<RangeFrame>& frames, const PipelineConfig& cfg);

struct ProcessedView {
  std::string frame_id;
  Signature signature;
  ValidationView validation;
  std::optional<Pose> pose;
};

ProcessedView process_frame(const RangeFrame& frame, const Models& models, const PipelineConfig& cfg);

/// The validation-level view alone, without encoding a signature.
ValidationView validation_view(const RangeFrame& frame, const SegmentationHierarchy& hier, const Models& models,
                               const PipelineConfig& cfg);
ValidationView validation_view(const RangeFrame& frame, const Models& models, const PipelineConfig& cfg);

struct RelocalizationResult {
  bool success = false;
  Pose T_world;
  std::string retrieved_id;    // frame the pose was derived from
  RetrievalSet retrieved;      // plain top-k
  RetrievalSet candidates;     // after diversification (DR, VDR)
  std::optional<ValidationResult> validation;
  std::string failure;
};

/// Signature database plus the per-frame data validation needs.
/// Poses are kept for evaluation only and never influence search or validation.
class ViewDatabase {
 public:
  ViewDatabase(const Models& models, const PipelineConfig& cfg);

  void add(ProcessedView view);
  const SignatureDatabase& signatures() const { return db_; }
  const ValidationView* view(const std::string& frame_id) const;
  std::optional<Pose> pose(const std::string& frame_id) const;
  std::size_t size() const { return db_.size(); }

  /// Every `rate`-th view in insertion order.
  ViewDatabase subsample(std::size_t rate) const;

  RelocalizationResult relocalize(const ProcessedView& query, Variant variant) const;

 private:
  const Models* models_;
  PipelineConfig cfg_;
  SignatureDatabase db_;
  std::vector<std::string> order_;
  std::unordered_map<std::string, ValidationView> views_;
};

}  // namespace geosig
