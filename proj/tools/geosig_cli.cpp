// geosig command line: model training, encoding, indexing, querying, evaluation
// and synthetic data generation.
//
// Frames are read from directories in the 7-scenes layout
// (frame-XXXXXX.depth.png + frame-XXXXXX.pose.txt). A frame's id is its
// directory relative to the frames root joined with its stem, e.g.
// "r0/frame-000012". An optional intrinsics.txt in the frame directory or any
// parent up to the root ("fx fy cx cy width height depth_scale") overrides the
// 7-scenes camera.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geosig/error.hpp"
#include "geosig/evaluation.hpp"
#include "geosig/pipeline.hpp"

using namespace geosig;
namespace fs = std::filesystem;

namespace {

constexpr int kConfigError = 2;
constexpr int kDataError = 3;

struct FrameRef {
  std::string id;
  fs::path dir;
  int index = 0;
  CameraIntrinsics K;
};

std::optional<CameraIntrinsics> read_intrinsics(const fs::path& file) {
  std::ifstream in(file);
  if (!in) return std::nullopt;
  CameraIntrinsics K;
  if (!(in >> K.fx >> K.fy >> K.cx >> K.cy >> K.width >> K.height >> K.depth_scale))
    throw Error(ErrorCode::UnsupportedFormat, "bad intrinsics file " + file.string());
  K.validate();
  return K;
}

void write_intrinsics(const fs::path& file, const CameraIntrinsics& K) {
  std::ofstream out(file);
  out << std::setprecision(17) << K.fx << ' ' << K.fy << ' ' << K.cx << ' ' << K.cy << ' ' << K.width << ' '
      << K.height << ' ' << K.depth_scale << '\n';
}

CameraIntrinsics intrinsics_for(const fs::path& dir, const fs::path& root) {
  for (fs::path p = dir;; p = p.parent_path()) {
    if (auto K = read_intrinsics(p / "intrinsics.txt")) return *K;
    if (p == root || p == p.parent_path() || p.empty()) break;
  }
  return CameraIntrinsics::seven_scenes();
}

/// Every frame under `root`, ordered by id.
std::vector<FrameRef> scan_frames(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error(ErrorCode::MissingFile, root.string());
  static const std::regex name(R"(frame-(\d+)\.depth\.png)");
  std::vector<FrameRef> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    std::smatch m;
    const std::string file = e.path().filename().string();
    if (!e.is_regular_file() || !std::regex_match(file, m, name)) continue;
    FrameRef f;
    f.dir = e.path().parent_path();
    f.index = std::stoi(m[1]);
    const fs::path rel = fs::relative(f.dir, root);
    const std::string stem = "frame-" + m[1].str();
    f.id = rel.empty() || rel == "." ? stem : (rel / stem).generic_string();
    f.K = intrinsics_for(f.dir, root);
    out.push_back(std::move(f));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  if (out.empty()) throw Error(ErrorCode::MissingFile, "no frame-*.depth.png under " + root.string());
  return out;
}

/// A single frame named by its depth image path.
FrameRef frame_from_path(const fs::path& depth_png) {
  static const std::regex name(R"(frame-(\d+)\.depth\.png)");
  std::smatch m;
  const std::string file = depth_png.filename().string();
  if (!std::regex_match(file, m, name))
    throw Error(ErrorCode::InvalidArgument, "expected a frame-XXXXXX.depth.png path, got " + depth_png.string());
  if (!fs::exists(depth_png)) throw Error(ErrorCode::MissingFile, depth_png.string());
  FrameRef f;
  f.dir = depth_png.parent_path();
  f.index = std::stoi(m[1]);
  f.id = (f.dir.filename() / ("frame-" + m[1].str())).generic_string();
  f.K = intrinsics_for(f.dir, f.dir);
  return f;
}

RangeFrame load(const FrameRef& f) {
  RangeFrame frame = load_sevenscenes_frame(f.dir, f.index, f.K);
  frame.frame_id = f.id;
  return frame;
}

std::vector<RangeFrame> load_all(const std::vector<fs::path>& roots, std::size_t stride = 1) {
  std::vector<RangeFrame> out;
  for (const auto& r : roots) {
    const auto refs = scan_frames(r);
    for (std::size_t i = 0; i < refs.size(); i += stride) out.push_back(load(refs[i]));
  }
  return out;
}

// Sidecar next to a database file: where each indexed frame came from, so
// validation and evaluation can reload depth and ground-truth poses.
fs::path sidecar_path(const fs::path& db) { return fs::path(db.string() + ".frames"); }

void write_sidecar(const fs::path& db, const std::vector<FrameRef>& frames, bool append) {
  std::ofstream out(sidecar_path(db), append ? std::ios::app : std::ios::trunc);
  out << std::setprecision(17);
  for (const auto& f : frames)
    out << f.id << '\t' << fs::absolute(f.dir).string() << '\t' << f.index << '\t' << f.K.fx << ' ' << f.K.fy << ' '
        << f.K.cx << ' ' << f.K.cy << ' ' << f.K.width << ' ' << f.K.height << ' ' << f.K.depth_scale << '\n';
}

std::vector<FrameRef> read_sidecar(const fs::path& db) {
  std::ifstream in(sidecar_path(db));
  if (!in) throw Error(ErrorCode::MissingFile, sidecar_path(db).string());
  std::vector<FrameRef> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    FrameRef f;
    std::string dir;
    if (!std::getline(ls, f.id, '\t') || !std::getline(ls, dir, '\t') || !(ls >> f.index) ||
        !(ls >> f.K.fx >> f.K.fy >> f.K.cx >> f.K.cy >> f.K.width >> f.K.height >> f.K.depth_scale))
      throw Error(ErrorCode::UnsupportedFormat, "bad line in " + sidecar_path(db).string());
    f.dir = dir;
    out.push_back(std::move(f));
  }
  return out;
}

// ---------------------------------------------------------------------------

struct Common {
  std::string config;
  std::string preset = "default";
  std::optional<std::uint64_t> seed;

  PipelineConfig pipeline() const {
    PipelineConfig c = !config.empty()          ? PipelineConfig::load(config)
                       : preset == "synthetic" ? synthetic_pipeline_config()
                                               : PipelineConfig{};
    if (seed) c.apply_seed(*seed);
    c.validate();
    return c;
  }
};

struct ModelPaths {
  std::string ica = "ica.bin";
  std::string gmm = "gmm.bin";

  Models load() const {
    Models m;
    m.ica = load_ica(ica);
    m.gmm = load_gmm(gmm);
    m.version = model_version(m.ica, m.gmm);
    return m;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "pipeline config file (key = value lines)");
  app->add_option("--preset", c.preset, "built-in config when no file is given")
      ->check(CLI::IsMember({"default", "synthetic"}));
  app->add_option("--seed", c.seed, "root seed for every stage");
}

void add_models(CLI::App* app, ModelPaths& m) {
  app->add_option("--ica", m.ica, "ICA model file")->capture_default_str();
  app->add_option("--gmm", m.gmm, "GMM model file")->capture_default_str();
}

/// "k[,sigma,omega,kappa]"
void apply_diversify(const std::string& spec, PipelineConfig& cfg) {
  std::vector<double> v;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "--diversify expects k[,sigma,omega,kappa], got '" + spec + "'");
    }
  }
  if (v.empty() || v.size() > 4 || v[0] < 1 || v[0] != std::floor(v[0]))
    throw Error(ErrorCode::InvalidArgument, "--diversify expects k[,sigma,omega,kappa], got '" + spec + "'");
  cfg.dpp.k = static_cast<std::size_t>(v[0]);
  if (v.size() > 1) cfg.dpp.sigma = v[1];
  if (v.size() > 2) cfg.dpp.omega = v[2];
  if (v.size() > 3) cfg.dpp.kappa = v[3];
  cfg.dpp.validate();
}

ViewDatabase rebuild_views(const fs::path& db_path, const Models& models, const PipelineConfig& cfg) {
  const auto stored = SignatureDatabase::open(db_path);
  if (stored.stats().model_version != models.version)
    throw Error(ErrorCode::ModelMismatch, db_path.string() + " was built with different models");
  ViewDatabase db(models, cfg);
  for (const auto& f : read_sidecar(db_path)) db.add(process_frame(load(f), models, cfg));
  return db;
}

void print_hits(const RetrievalSet& r, const char* label) {
  std::cout << label << '\n';
  std::cout << std::setprecision(9);
  for (std::size_t i = 0; i < r.hits.size(); ++i)
    std::cout << "  " << i + 1 << '\t' << r.hits[i].frame_id << '\t' << r.hits[i].similarity << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"geometric view signatures: train, index, query and evaluate"};
  app.require_subcommand(1);

  // train-ica
  Common ica_c;
  std::vector<std::string> ica_frames;
  std::string ica_out = "ica.bin";
  std::size_t ica_stride = 1;
  auto* train_ica_cmd = app.add_subcommand("train-ica", "fit the ICA projection on pooled raw features");
  add_common(train_ica_cmd, ica_c);
  train_ica_cmd->add_option("--frames", ica_frames, "frame directories")->required();
  train_ica_cmd->add_option("--stride", ica_stride, "use every n-th frame")->check(CLI::PositiveNumber);
  train_ica_cmd->add_option("-o,--out", ica_out, "output model file");

  // train-gmm
  Common gmm_c;
  std::vector<std::string> gmm_frames;
  std::string gmm_ica = "ica.bin", gmm_out = "gmm.bin";
  std::size_t gmm_stride = 1;
  auto* train_gmm_cmd = app.add_subcommand("train-gmm", "fit the diagonal GMM on projected features");
  add_common(train_gmm_cmd, gmm_c);
  train_gmm_cmd->add_option("--frames", gmm_frames, "frame directories")->required();
  train_gmm_cmd->add_option("--stride", gmm_stride, "use every n-th frame")->check(CLI::PositiveNumber);
  train_gmm_cmd->add_option("--ica", gmm_ica, "ICA model file");
  train_gmm_cmd->add_option("-o,--out", gmm_out, "output model file");

  // encode
  Common enc_c;
  ModelPaths enc_m;
  std::vector<std::string> enc_frames;
  std::string enc_out = "signatures";
  int enc_width = 8;
  auto* encode_cmd = app.add_subcommand("encode", "write one signature file per frame");
  add_common(encode_cmd, enc_c);
  add_models(encode_cmd, enc_m);
  encode_cmd->add_option("--frames", enc_frames, "frame directories")->required();
  encode_cmd->add_option("-o,--out", enc_out, "output directory");
  encode_cmd->add_option("--bytes", enc_width, "bytes per value")->check(CLI::IsMember({4, 8}));

  // index
  Common idx_c;
  ModelPaths idx_m;
  std::vector<std::string> idx_frames;
  std::string idx_db = "views.db";
  bool idx_append = false;
  auto* index_cmd = app.add_subcommand("index", "encode frames into a signature database");
  add_common(index_cmd, idx_c);
  add_models(index_cmd, idx_m);
  index_cmd->add_option("--frames", idx_frames, "frame directories")->required();
  index_cmd->add_option("--db", idx_db, "database file");
  index_cmd->add_flag("--append", idx_append, "add to an existing database");

  // query
  Common q_c;
  ModelPaths q_m;
  std::string q_db = "views.db", q_frame, q_variant = "R", q_div;
  std::optional<std::size_t> q_k;
  auto* query_cmd = app.add_subcommand("query", "retrieve (and optionally validate) views for one frame");
  add_common(query_cmd, q_c);
  add_models(query_cmd, q_m);
  query_cmd->add_option("--db", q_db, "database file");
  query_cmd->add_option("--frame", q_frame, "query frame-XXXXXX.depth.png")->required();
  query_cmd->add_option("--variant", q_variant, "R, DR or VDR")->check(CLI::IsMember({"R", "DR", "VDR"}));
  query_cmd->add_option("--k", q_k, "retrieval set size")->check(CLI::PositiveNumber);
  query_cmd->add_option("--diversify", q_div, "k[,sigma,omega,kappa]");

  // evaluate
  Common ev_c;
  ModelPaths ev_m;
  std::string ev_db = "views.db", ev_queries, ev_variant = "VDR", ev_div, ev_report;
  std::optional<std::size_t> ev_k;
  std::size_t ev_sparsity = 1;
  double ev_dist = 0.05, ev_deg = 5.0;
  auto* eval_cmd = app.add_subcommand("evaluate", "relocalize posed query frames and score them");
  add_common(eval_cmd, ev_c);
  add_models(eval_cmd, ev_m);
  eval_cmd->add_option("--db", ev_db, "database file");
  eval_cmd->add_option("--queries", ev_queries, "query frame directory")->required();
  eval_cmd->add_option("--variant", ev_variant, "R, DR or VDR")->check(CLI::IsMember({"R", "DR", "VDR"}));
  eval_cmd->add_option("--k", ev_k, "retrieval set size")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--diversify", ev_div, "k[,sigma,omega,kappa]");
  eval_cmd->add_option("--sparsity", ev_sparsity, "keep every n-th database frame")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--max-dist", ev_dist, "translation bound, m");
  eval_cmd->add_option("--max-deg", ev_deg, "rotation bound, degrees");
  eval_cmd->add_option("--report", ev_report, "also write the report to this file");

  // synth
  std::string syn_out = "synth";
  SyntheticSetup syn;
  auto* synth_cmd = app.add_subcommand("synth", "render synthetic rooms as posed depth frames");
  synth_cmd->add_option("-o,--out", syn_out, "output directory");
  synth_cmd->add_option("--rooms", syn.rooms)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--db-frames", syn.db_frames)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--queries", syn.queries)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--noise", syn.noise_sigma, "depth noise sigma, m")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--seed", syn.seed);

  // db stats
  std::string stats_db = "views.db";
  auto* db_cmd = app.add_subcommand("db", "database utilities");
  db_cmd->require_subcommand(1);
  auto* stats_cmd = db_cmd->add_subcommand("stats", "entry count, dimension and model version");
  stats_cmd->add_option("--db", stats_db, "database file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  if (*train_ica_cmd) {
    const auto cfg = ica_c.pipeline();
    std::vector<fs::path> roots(ica_frames.begin(), ica_frames.end());
    std::vector<std::vector<LevelFeatures>> per_frame;
    for (const auto& f : load_all(roots, ica_stride)) per_frame.push_back(frame_features(segment_frame(f, cfg), cfg));
    const auto pool = pool_training_features(per_frame, cfg);
    const IcaModel ica = train_ica(pool, cfg);
    save_ica(ica_out, ica);
    std::cout << "ica: " << pool.size() << " samples from " << per_frame.size() << " frames, "
              << (ica.converged ? "converged" : "not converged") << " -> " << ica_out << '\n';
  } else if (*train_gmm_cmd) {
    const auto cfg = gmm_c.pipeline();
    const IcaModel ica = load_ica(gmm_ica);
    std::vector<fs::path> roots(gmm_frames.begin(), gmm_frames.end());
    std::vector<std::vector<LevelFeatures>> per_frame;
    for (const auto& f : load_all(roots, gmm_stride)) per_frame.push_back(frame_features(segment_frame(f, cfg), cfg));
    const auto pool = pool_training_features(per_frame, cfg);
    GmmFitReport rep;
    const GmmModel gmm = train_gmm(pool, ica, cfg, &rep);
    save_gmm(gmm_out, gmm);
    std::cout << "gmm: " << gmm.components() << " components on " << pool.size() << " samples -> " << gmm_out
              << " (model version " << model_version(ica, gmm) << ")\n";
  } else if (*encode_cmd) {
    const auto cfg = enc_c.pipeline();
    const Models models = enc_m.load();
    fs::create_directories(enc_out);
    std::size_t n = 0;
    for (const auto& root : enc_frames)
      for (const auto& ref : scan_frames(root)) {
        const auto v = process_frame(load(ref), models, cfg);
        fs::path file = fs::path(enc_out) / (ref.id + ".sig");
        fs::create_directories(file.parent_path());
        save_signature(file, v.signature, enc_width);
        ++n;
      }
    std::cout << n << " signatures -> " << enc_out << '\n';
  } else if (*index_cmd) {
    const auto cfg = idx_c.pipeline();
    const Models models = idx_m.load();
    SignatureDatabase db = [&] {
      if (idx_append) return SignatureDatabase::open(idx_db);
      SignatureDatabase fresh(models.gmm.components(), cfg.segmentation.levels, kProjectedDim, models.version);
      fresh.create(idx_db);
      return fresh;
    }();
    std::vector<FrameRef> added;
    for (const auto& root : idx_frames)
      for (const auto& ref : scan_frames(root)) {
        auto v = process_frame(load(ref), models, cfg);
        db.insert(v.frame_id, std::move(v.signature), v.pose);
        added.push_back(ref);
      }
    db.flush();
    write_sidecar(idx_db, added, idx_append);
    const auto st = db.stats();
    std::cout << "indexed " << added.size() << " frames; " << st.entries << " entries in " << idx_db << '\n';
  } else if (*query_cmd) {
    auto cfg = q_c.pipeline();
    if (q_k) cfg.k = *q_k;
    if (!q_div.empty()) apply_diversify(q_div, cfg);
    const Variant variant = parse_variant(q_variant);
    const Models models = q_m.load();
    const auto query = process_frame(load(frame_from_path(q_frame)), models, cfg);
    if (variant == Variant::R && q_div.empty()) {
      const auto db = SignatureDatabase::open(q_db);
      print_hits(db.knn(query.signature, cfg.k, cfg.search), ("query " + query.frame_id).c_str());
      return 0;
    }
    const ViewDatabase db = rebuild_views(q_db, models, cfg);
    const auto r = db.relocalize(query, variant);
    print_hits(r.retrieved, ("query " + query.frame_id).c_str());
    if (variant != Variant::R) print_hits(r.candidates, "diversified");
    if (r.success) {
      std::cout << "pose from " << r.retrieved_id << '\n' << format_pose(r.T_world);
      if (query.pose) {
        const auto e = pose_error(r.T_world, *query.pose);
        std::cout << "error " << e.dist << " m, " << e.angle_deg << " deg\n";
      }
    } else {
      std::cout << "no pose: " << r.failure << '\n';
    }
  } else if (*eval_cmd) {
    auto cfg = ev_c.pipeline();
    if (ev_k) cfg.k = *ev_k;
    if (!ev_div.empty()) apply_diversify(ev_div, cfg);
    const Variant variant = parse_variant(ev_variant);
    const Models models = ev_m.load();
    const ViewDatabase full = rebuild_views(ev_db, models, cfg);
    const ViewDatabase db = ev_sparsity > 1 ? full.subsample(ev_sparsity) : full.subsample(1);
    std::vector<ProcessedView> queries;
    for (const auto& ref : scan_frames(ev_queries)) queries.push_back(process_frame(load(ref), models, cfg));
    const auto rep = evaluate_relocalization(db, queries, variant, ev_dist, ev_deg);
    rep.write(std::cout);
    std::cout << "database " << db.size() << " of " << full.size() << " views (sparsity " << ev_sparsity << ")\n";
    if (!ev_report.empty()) {
      std::ofstream out(ev_report);
      rep.write(out);
    }
  } else if (*synth_cmd) {
    const auto world = make_synthetic_world(syn);
    const fs::path root(syn_out);
    auto write_frames = [&](const std::vector<RangeFrame>& frames, const std::string& part, int offset) {
      std::map<std::string, int> next;
      for (const auto& f : frames) {
        const std::string room = room_of(f.frame_id);
        const fs::path dir = root / part / room;
        fs::create_directories(dir);
        const int i = offset + next[room]++;
        std::ostringstream stem;
        stem << "frame-" << std::setw(6) << std::setfill('0') << i;
        write_depth_png(dir / (stem.str() + ".depth.png"), f);
        std::ofstream(dir / (stem.str() + ".pose.txt")) << format_pose(*f.pose_gt);
      }
    };
    fs::create_directories(root);
    write_intrinsics(root / "intrinsics.txt", synthetic_intrinsics());
    // distinct numbering keeps query ids apart from database ids
    write_frames(world.database, "db", 0);
    write_frames(world.queries, "queries", 100000);
    for (std::size_t r = 0; r < world.rooms.size(); ++r)
      std::ofstream(root / ("r" + std::to_string(r) + ".scene")) << world.rooms[r].to_text();
    std::ofstream(root / "pipeline.conf") << synthetic_pipeline_config(syn.seed).to_text();
    std::cout << world.database.size() << " database and " << world.queries.size() << " query frames -> " << syn_out
              << '\n';
  } else if (*stats_cmd) {
    const auto db = SignatureDatabase::open(stats_db);
    const auto st = db.stats();
    std::cout << "entries " << st.entries << "\ndimension " << st.dimension << "\nG " << st.G << "\nH " << st.H
              << "\nmodel_version " << st.model_version << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::InvalidArgument ? kConfigError : kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
}
