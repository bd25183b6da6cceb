#include "geosig/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

#include "geosig/error.hpp"

namespace geosig {

Variant parse_variant(const std::string& text) {
  if (text == "R") return Variant::R;
  if (text == "DR") return Variant::DR;
  if (text == "VDR") return Variant::VDR;
  throw Error(ErrorCode::InvalidArgument, "unknown variant '" + text + "' (expected R, DR or VDR)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::R: return "R";
    case Variant::DR: return "DR";
    case Variant::VDR: return "VDR";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Config file

namespace {

using FieldRef = std::variant<double*, int*, std::size_t*>;

std::vector<std::pair<std::string, FieldRef>> numeric_fields(PipelineConfig& c) {
  return {
      {"normal_radius", &c.normal_radius},
      {"seg.base_target", &c.segmentation.base_target},
      {"seg.levels", &c.segmentation.levels},
      {"seg.reduction", &c.segmentation.reduction},
      {"seg.min_points", &c.segmentation.min_points},
      {"seg.min_area", &c.segmentation.min_area},
      {"seg.kmeans_iterations", &c.segmentation.kmeans_iterations},
      {"seg.gap_abs", &c.segmentation.gap_abs},
      {"seg.gap_rel", &c.segmentation.gap_rel},
      {"seg.crease_deg", &c.segmentation.crease_deg},
      {"seg.graph_radius", &c.segmentation.graph_radius},
      {"feat.neighbor_radius", &c.features.neighbor_radius},
      {"feat.eps_theta", &c.features.eps_theta},
      {"feat.max_neighbors", &c.features.max_neighbors},
      {"feat.patch_sample_fraction", &c.features.patch_sample_fraction},
      {"feat.neighbor_sample_fraction", &c.features.neighbor_sample_fraction},
      {"val.level", &c.validation_level},
      {"val.max_residual_angle", &c.validation.max_residual_angle},
      {"val.max_residual_translation", &c.validation.max_residual_translation},
      {"val.ransac_iters", &c.validation.ransac_iters},
      {"val.inlier_dist", &c.validation.inlier_dist},
      {"val.slide_dist", &c.validation.slide_dist},
      {"val.min_inliers", &c.validation.min_inliers},
      {"val.ratio", &c.validation.ratio},
      {"val.descriptor_radius", &c.validation.descriptor_radius},
      {"val.descriptor_neighbors", &c.validation.descriptor_neighbors},
      {"val.min_support", &c.validation.min_support},
      {"val.support_dist", &c.validation.support_dist},
      {"val.support_stride", &c.validation.support_stride},
      {"ica.max_iterations", &c.ica.max_iterations},
      {"ica.tolerance", &c.ica.tolerance},
      {"gmm.components", &c.components},
      {"gmm.max_iterations", &c.gmm.max_iterations},
      {"gmm.tolerance", &c.gmm.tolerance},
      {"gmm.variance_floor", &c.gmm.variance_floor},
      {"train_max_samples", &c.train_max_samples},
      {"k", &c.k},
      {"dpp.k", &c.dpp.k},
      {"dpp.kappa", &c.dpp.kappa},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  if (!(in >> out) || !(in >> std::ws).eof())
    throw Error(ErrorCode::InvalidArgument, "bad value '" + value + "' for " + key);
  return out;
}

}  // namespace

void PipelineConfig::apply_seed(std::uint64_t root) {
  seed = root;
  const SeedStream s(root);
  segmentation.seed = s.derive("segmentation").seed();
  features.seed = s.derive("features").seed();
  validation.seed = s.derive("validation").seed();
  ica.seed = s.derive("ica").seed();
  gmm.seed = s.derive("gmm").seed();
}

void PipelineConfig::validate() const {
  if (!(normal_radius > 0.0)) throw Error(ErrorCode::InvalidArgument, "normal_radius must be positive");
  if (segmentation.levels < 1 || segmentation.base_target < 4 || !(segmentation.reduction > 1.0))
    throw Error(ErrorCode::InvalidArgument, "invalid segmentation config");
  features.validate();
  validation.validate();
  if (validation_level < 0 || validation_level >= segmentation.levels)
    throw Error(ErrorCode::InvalidArgument, "val.level must index a hierarchy level");
  if (components < 1) throw Error(ErrorCode::InvalidArgument, "gmm.components must be positive");
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  dpp.validate();
}

PipelineConfig PipelineConfig::parse(const std::string& text) {
  PipelineConfig c;
  std::optional<std::uint64_t> seed;
  std::istringstream in(text);
  std::string line;
  auto fields = numeric_fields(c);
  while (std::getline(in, line)) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "expected key = value: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "seed") {
      seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "variant") {
      c.variant = parse_variant(value);
    } else if (key == "search") {
      if (value == "linear") c.search = SearchMode::Linear;
      else if (value == "vptree") c.search = SearchMode::VpTree;
      else throw Error(ErrorCode::InvalidArgument, "search must be linear or vptree");
    } else if (key == "dpp.sigma") {
      c.dpp.sigma = parse_number<double>(key, value);
    } else if (key == "dpp.omega") {
      c.dpp.omega = parse_number<double>(key, value);
    } else {
      auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.first == key; });
      if (it == fields.end()) throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
      std::visit([&](auto* p) { *p = parse_number<std::remove_pointer_t<decltype(p)>>(key, value); }, it->second);
    }
  }
  c.apply_seed(seed.value_or(0));
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string PipelineConfig::to_text() const {
  PipelineConfig copy = *this;
  std::ostringstream out;
  out.precision(17);
  out << "seed = " << seed << '\n';
  for (const auto& [key, ref] : numeric_fields(copy))
    std::visit([&, k = key](auto* p) { out << k << " = " << *p << '\n'; }, ref);
  if (dpp.sigma) out << "dpp.sigma = " << *dpp.sigma << '\n';
  if (dpp.omega) out << "dpp.omega = " << *dpp.omega << '\n';
  out << "variant = " << to_string(variant) << '\n';
  out << "search = " << (search == SearchMode::Linear ? "linear" : "vptree") << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Stages

SegmentationHierarchy segment_frame(const RangeFrame& frame, const PipelineConfig& cfg) {
  PointCloud cloud = estimate_normals(depth_to_cloud(frame), cfg.normal_radius);
  return segment_view(cloud, cfg.segmentation, frame.frame_id);
}

std::vector<LevelFeatures> frame_features(const SegmentationHierarchy& hier, const PipelineConfig& cfg) {
  return frame_feature_sets(hier, cfg.features);
}

std::vector<RawFeature> pool_training_features(const std::vector<std::vector<LevelFeatures>>& per_frame,
                                               const PipelineConfig& cfg) {
  std::vector<RawFeature> all;
  for (const auto& frame : per_frame)
    for (const auto& level : frame) all.insert(all.end(), level.features.begin(), level.features.end());
  if (all.size() <= cfg.train_max_samples) return all;
  auto rng = SeedStream(cfg.seed).derive("training-pool").engine();
  std::vector<RawFeature> kept;
  kept.reserve(cfg.train_max_samples);
  for (std::size_t i : sample_indices(all.size(), cfg.train_max_samples, rng)) kept.push_back(all[i]);
  return kept;
}

IcaModel train_ica(const std::vector<RawFeature>& samples, const PipelineConfig& cfg) {
  return fit_ica(std::span<const RawFeature>(samples), cfg.ica);
}

GmmModel train_gmm(const std::vector<RawFeature>& samples, const IcaModel& ica, const PipelineConfig& cfg,
                   GmmFitReport* report) {
  return fit_gmm(project_all(samples, ica), cfg.components, cfg.gmm, report);
}

Models train_models(const std::vector<RangeFrame>& frames, const PipelineConfig& cfg) {
  std::vector<std::vector<LevelFeatures>> per_frame;
  per_frame.reserve(frames.size());
  for (const auto& f : frames) per_frame.push_back(frame_features(segment_frame(f, cfg), cfg));
  const auto pool = pool_training_features(per_frame, cfg);
  Models m;
  m.ica = train_ica(pool, cfg);
  m.gmm = train_gmm(pool, m.ica, cfg);
  m.version = model_version(m.ica, m.gmm);
  return m;
}

ProcessedView process_frame(const RangeFrame& frame, const Models& models, const PipelineConfig& cfg) {
  const SegmentationHierarchy hier = segment_frame(frame, cfg);
  const auto feats = frame_features(hier, cfg);
  std::vector<SampleMatrix> levels;
  levels.reserve(feats.size());
  for (const auto& lf : feats) levels.push_back(project_all(lf.features, models.ica));

  ProcessedView v;
  v.frame_id = frame.frame_id;
  v.signature = encode_view(levels, models.gmm, models.version, frame.frame_id);
  v.validation = validation_view(frame, hier, models, cfg);
  v.pose = frame.pose_gt;
  return v;
}

ValidationView validation_view(const RangeFrame& frame, const SegmentationHierarchy& hier, const Models& models,
                               const PipelineConfig& cfg) {
  const int h = std::min(cfg.validation_level, hier.height() - 1);
  ValidationView v = make_validation_view(hier.levels[h], models.ica, cfg.validation, frame.frame_id);
  if (cfg.validation.min_support > 0.0) attach_depth(v, frame, cfg.validation.support_stride);
  return v;
}

ValidationView validation_view(const RangeFrame& frame, const Models& models, const PipelineConfig& cfg) {
  return validation_view(frame, segment_frame(frame, cfg), models, cfg);
}

// ---------------------------------------------------------------------------
// Database and relocalization

ViewDatabase::ViewDatabase(const Models& models, const PipelineConfig& cfg)
    : models_(&models), cfg_(cfg), db_(models.gmm.components(), cfg.segmentation.levels, models.gmm.dim(), models.version) {}

void ViewDatabase::add(ProcessedView view) {
  db_.insert(view.frame_id, std::move(view.signature), view.pose);
  order_.push_back(view.frame_id);
  views_.emplace(view.frame_id, std::move(view.validation));
}

const ValidationView* ViewDatabase::view(const std::string& frame_id) const {
  auto it = views_.find(frame_id);
  return it == views_.end() ? nullptr : &it->second;
}

std::optional<Pose> ViewDatabase::pose(const std::string& frame_id) const {
  const DatabaseEntry* e = db_.find(frame_id);
  return e ? e->pose : std::nullopt;
}

ViewDatabase ViewDatabase::subsample(std::size_t rate) const {
  if (rate < 1) throw Error(ErrorCode::InvalidArgument, "subsampling rate must be at least 1");
  ViewDatabase out(*models_, cfg_);
  for (std::size_t i = 0; i < order_.size(); i += rate) {
    const DatabaseEntry* e = db_.find(order_[i]);
    out.db_.insert(*e);
    out.order_.push_back(order_[i]);
    out.views_.emplace(order_[i], views_.at(order_[i]));
  }
  return out;
}

RelocalizationResult ViewDatabase::relocalize(const ProcessedView& query, Variant variant) const {
  RelocalizationResult res;
  res.retrieved = db_.knn(query.signature, std::min(cfg_.k, db_.size()), cfg_.search);
  if (variant == Variant::R) {
    res.candidates.query_id = res.retrieved.query_id;
    res.candidates.hits.assign(res.retrieved.hits.begin(), res.retrieved.hits.begin() + 1);
  } else {
    DppConfig dpp = cfg_.dpp;
    // VDR walks the whole diversified ordering until a candidate validates.
    dpp.k = variant == Variant::VDR ? res.retrieved.hits.size() : std::min(dpp.k, res.retrieved.hits.size());
    res.candidates = diversify(res.retrieved, db_, query.signature, dpp);
  }

  auto world_pose = [&](const std::string& id, const RigidTransform& x_from_q) {
    const auto p = pose(id);
    if (!p) throw Error(ErrorCode::InvalidArgument, "database frame '" + id + "' has no pose");
    return *p * x_from_q;
  };

  if (variant != Variant::VDR) {
    const std::string& top = res.candidates.hits.front().frame_id;
    res.validation = two_way_validate(query.validation, *view(top), cfg_.validation);
    const RigidTransform rel = res.validation->inliers_forward > 0 ? res.validation->T : RigidTransform{};
    res.retrieved_id = top;
    res.T_world = world_pose(top, rel);
    res.success = true;
    return res;
  }

  for (const auto& hit : res.candidates.hits) {
    ValidationResult v = two_way_validate(query.validation, *view(hit.frame_id), cfg_.validation);
    if (v.accepted) {
      res.retrieved_id = hit.frame_id;
      res.T_world = world_pose(hit.frame_id, v.T);
      res.validation = std::move(v);
      res.success = true;
      return res;
    }
  }
  res.failure = "no validated candidate";
  return res;
}

}  // namespace geosig
