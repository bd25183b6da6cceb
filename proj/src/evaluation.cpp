#include "geosig/evaluation.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <unordered_set>

#include "geosig/error.hpp"

namespace geosig {

PoseError pose_error(const RigidTransform& est, const RigidTransform& gt) {
  const RigidTransform r = est.inverse() * gt;
  return {rotation_angle(r.R) * 180.0 / std::numbers::pi, r.t.norm()};
}

DiversityStats diversity_stats(std::span<const Pose> retrieved, const Pose& query) {
  DiversityStats s;
  if (retrieved.empty()) return s;
  std::vector<double> d;
  for (const auto& p : retrieved) d.push_back((p.t - query.t).norm());
  for (double v : d) s.mean += v;
  s.mean /= static_cast<double>(d.size());
  double var = 0.0;
  for (double v : d) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(d.size()));
  return s;
}

std::size_t voxel_coverage(std::span<const RangeFrame> frames, double voxel) {
  if (!(voxel > 0.0)) throw Error(ErrorCode::InvalidArgument, "voxel edge must be positive");
  constexpr std::int64_t kOffset = std::int64_t{1} << 20;
  std::unordered_set<std::uint64_t> cells;
  for (const auto& f : frames) {
    if (!f.pose_gt) throw Error(ErrorCode::InvalidArgument, "frame '" + f.frame_id + "' has no pose");
    const PointCloud cloud = depth_to_cloud(f);
    for (const auto& p : cloud.points) {
      const Vec3 w = f.pose_gt->apply(p);
      std::uint64_t key = 0;
      for (int a = 0; a < 3; ++a) {
        const auto c = static_cast<std::int64_t>(std::floor(w(a) / voxel)) + kOffset;
        key = (key << 21) | (static_cast<std::uint64_t>(c) & 0x1FFFFF);
      }
      cells.insert(key);
    }
  }
  return cells.size();
}

std::vector<std::size_t> sparsify(std::size_t n, std::size_t rate) {
  if (rate < 1) throw Error(ErrorCode::InvalidArgument, "subsampling rate must be at least 1");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; i += rate) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic rooms

CameraIntrinsics synthetic_intrinsics() {
  CameraIntrinsics c;
  c.fx = c.fy = 140.0;
  c.cx = 79.5;
  c.cy = 59.5;
  c.width = 160;
  c.height = 120;
  c.depth_scale = 0.001;
  return c;
}

SceneSpec make_room(std::uint64_t seed) {
  auto rng = SeedStream(seed).derive("room").engine();
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  SceneSpec s;
  const double hx = uni(2.5, 3.5), hy = uni(2.0, 3.0), hz = uni(1.3, 1.6);
  s.boxes.push_back({Vec3(0, 0, hz), Vec3(hx, hy, hz)});

  // Furniture stays out of the central region the camera moves through.
  auto outside_core = [&](double x, double y) {
    const double ex = x / (0.6 * hx), ey = y / (0.6 * hy);
    return ex * ex + ey * ey >= 1.0;
  };
  const int furniture = 14 + static_cast<int>(rng() % 7);
  while (static_cast<int>(s.boxes.size()) < 1 + furniture) {
    const Vec3 half(uni(0.1, 0.5), uni(0.1, 0.5), uni(0.1, 0.9));
    const double x = uni(-hx + half.x(), hx - half.x());
    const double y = uni(-hy + half.y(), hy - half.y());
    if (!outside_core(x, y)) continue;
    // some pieces float, like tables or wall cabinets seen from below
    const double z = rng() % 4 == 0 ? uni(half.z() + 0.3, 2.0 * hz - half.z() - 0.3) : half.z();
    s.boxes.push_back({Vec3(x, y, z), half});
  }
  const int shelves = 8 + static_cast<int>(rng() % 7);
  for (int i = 0; i < shelves; ++i) {
    const int wall = static_cast<int>(rng() % 4);
    const double depth = uni(0.1, 0.35), width = uni(0.15, 0.6), height = uni(0.05, 0.4);
    const double z = uni(0.5, 2.0 * hz - 0.5);
    Vec3 c, h;
    if (wall < 2) {
      const double sx = wall == 0 ? -1.0 : 1.0;
      c = Vec3(sx * (hx - depth), uni(-hy + width, hy - width), z);
      h = Vec3(depth, width, height);
    } else {
      const double sy = wall == 2 ? -1.0 : 1.0;
      c = Vec3(uni(-hx + width, hx - width), sy * (hy - depth), z);
      h = Vec3(width, depth, height);
    }
    s.boxes.push_back({c, h});
  }
  // Tilted panels leaning against the walls break the axis-aligned symmetry.
  const int panels = 4 + static_cast<int>(rng() % 4);
  for (int i = 0; i < panels; ++i) {
    const double angle = uni(0.0, 2.0 * std::numbers::pi);
    const Vec3 dir(std::cos(angle), std::sin(angle), 0.0);
    const double reach = std::min(hx / std::max(std::abs(dir.x()), 1e-9), hy / std::max(std::abs(dir.y()), 1e-9));
    const double lean = uni(0.2, 0.8), half_v = uni(0.3, 0.8);
    const Vec3 normal = (-dir * std::cos(lean) + Vec3::UnitZ() * std::sin(lean)).normalized();
    const Vec3 center = dir * (reach - 0.3 - half_v * std::sin(lean)) + Vec3::UnitZ() * (half_v * std::cos(lean) + 0.05);
    s.planes.push_back({center, normal, uni(0.2, 0.6), half_v});
  }
  return s;
}

Pose look_pose(const Vec3& position, double yaw, double pitch) {
  const Vec3 forward(std::cos(yaw) * std::cos(pitch), std::sin(yaw) * std::cos(pitch), -std::sin(pitch));
  const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
  const Vec3 down = forward.cross(right);
  Pose p;
  p.R.col(0) = right;
  p.R.col(1) = down;
  p.R.col(2) = forward;
  p.t = position;
  return p;
}

Pose loop_pose(const SceneSpec& room, std::uint64_t seed, std::size_t i, std::size_t n) {
  if (room.boxes.empty()) throw Error(ErrorCode::EmptyScene, "room has no enclosing box");
  auto rng = SeedStream(seed).derive("loop").engine();
  const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  const Vec3 half = room.boxes.front().half_extents;
  const double theta = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
  const Vec3 pos(0.2 * half.x() * std::cos(theta), 0.2 * half.y() * std::sin(theta),
                 1.3 + 0.15 * std::sin(2.0 * theta + phase));
  const double yaw = theta + 0.35 + 0.2 * std::sin(3.0 * theta + phase);
  const double pitch = 0.25 + 0.08 * std::sin(5.0 * theta + phase);
  return look_pose(pos, yaw, pitch);
}

PipelineConfig synthetic_pipeline_config(std::uint64_t seed) {
  PipelineConfig c;
  c.normal_radius = 0.08;
  c.segmentation.base_target = 500;
  c.segmentation.levels = 4;
  c.segmentation.reduction = 2.0;
  c.segmentation.min_points = 12;
  c.segmentation.min_area = 2e-4;
  c.features.neighbor_radius = 3.0;
  c.features.max_neighbors = 48;
  // Validation runs on the finest level with wide descriptor neighborhoods:
  // the rooms are small and the coarse levels leave too few patches to match.
  c.validation_level = 0;
  c.validation.descriptor_neighbors = 300;
  c.validation.ratio = 1.0;
  c.validation.inlier_dist = 0.10;
  c.validation.slide_dist = 0.30;
  c.validation.ransac_iters = 2000;
  c.validation.min_support = 0.75;
  c.validation.support_dist = 0.03;
  c.components = 64;
  c.train_max_samples = 20000;
  c.gmm.max_iterations = 60;
  c.k = 20;
  c.dpp.k = 5;
  c.apply_seed(seed);
  return c;
}

SyntheticWorld make_synthetic_world(const SyntheticSetup& setup) {
  if (setup.rooms < 1 || setup.db_frames < 1 || setup.queries < 1)
    throw Error(ErrorCode::InvalidArgument, "synthetic setup needs rooms, database frames and queries");
  SyntheticWorld w;
  const CameraIntrinsics intr = synthetic_intrinsics();
  const SeedStream root = SeedStream(setup.seed).derive("world");
  const std::size_t total = static_cast<std::size_t>(setup.db_frames + setup.queries);
  const std::size_t stride = total / static_cast<std::size_t>(setup.queries);
  for (int r = 0; r < setup.rooms; ++r) {
    const SeedStream rs = root.derive(static_cast<std::uint64_t>(r));
    w.rooms.push_back(make_room(rs.derive("room").seed()));
    const SceneSpec& room = w.rooms.back();
    int d = 0, q = 0;
    for (std::size_t i = 0; i < total; ++i) {
      const bool is_query = q < setup.queries && i % stride == stride / 2;
      SynthOptions opt;
      opt.noise_sigma = setup.noise_sigma;
      opt.noise_seed = rs.derive("noise").derive(static_cast<std::uint64_t>(i)).seed();
      opt.frame_id = "r" + std::to_string(r) + (is_query ? "/q" + std::to_string(q++) : "/d" + std::to_string(d++));
      RangeFrame f = synth_scene(room, loop_pose(room, rs.derive("loop").seed(), i, total), intr, opt);
      (is_query ? w.queries : w.database).push_back(std::move(f));
    }
  }
  return w;
}

Pose random_room_pose(const SceneSpec& room, std::mt19937_64& rng) {
  if (room.boxes.empty()) throw Error(ErrorCode::EmptyScene, "room has no enclosing box");
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  const Vec3 half = room.boxes.front().half_extents;
  double x = 0, y = 0;
  do {
    x = uni(-1.0, 1.0);
    y = uni(-1.0, 1.0);
  } while (x * x + y * y > 1.0);
  return look_pose(Vec3(0.3 * half.x() * x, 0.3 * half.y() * y, uni(1.1, 1.5)), uni(0.0, 2.0 * std::numbers::pi),
                   uni(0.1, 0.4));
}

double view_overlap(const RangeFrame& a, const RangeFrame& b) {
  if (!a.pose_gt || !b.pose_gt) throw Error(ErrorCode::InvalidArgument, "view_overlap needs posed frames");
  const PointCloud cloud = depth_to_cloud(a);
  if (cloud.size() == 0) return 0.0;
  const RigidTransform b_from_a = b.pose_gt->inverse() * *a.pose_gt;
  const CameraIntrinsics& k = b.intrinsics;
  std::size_t seen = 0;
  for (const auto& p : cloud.points) {
    const Vec3 q = b_from_a.apply(p);
    if (q.z() <= 1e-6) continue;
    const double u = k.fx * q.x() / q.z() + k.cx, v = k.fy * q.y() / q.z() + k.cy;
    const int iu = static_cast<int>(std::lround(u)), iv = static_cast<int>(std::lround(v));
    if (iu < 0 || iv < 0 || iu >= k.width || iv >= k.height) continue;
    const std::uint16_t d = b.at(iu, iv);
    if (d == 0) continue;
    if (std::abs(d * k.depth_scale - q.z()) <= 0.05 + 0.01 * q.z()) ++seen;
  }
  return static_cast<double>(seen) / static_cast<double>(cloud.size());
}

std::vector<ViewPair> make_view_pairs(const PairSetup& setup) {
  if (setup.rooms < 2) throw Error(ErrorCode::InvalidArgument, "negative pairs need at least two rooms");
  const SeedStream root = SeedStream(setup.seed).derive("pairs");
  const CameraIntrinsics intr = synthetic_intrinsics();
  std::vector<SceneSpec> rooms;
  for (int r = 0; r < setup.rooms; ++r) rooms.push_back(make_room(root.derive("room").derive(r).seed()));
  auto rng = root.derive("poses").engine();
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  auto render = [&](int room, const Pose& pose, const std::string& id) {
    SynthOptions opt;
    opt.noise_sigma = setup.noise_sigma;
    opt.noise_seed = root.derive("noise").derive(id).seed();
    opt.frame_id = id;
    return synth_scene(rooms[room], pose, intr, opt);
  };

  std::vector<ViewPair> out;
  for (int i = 0; i < setup.positives; ++i) {
    const int room = static_cast<int>(rng() % static_cast<std::uint64_t>(setup.rooms));
    const std::string base = "r" + std::to_string(room) + "/p" + std::to_string(i);
    while (true) {
      const Pose pa = random_room_pose(rooms[room], rng);
      // relative motion: yaw-dominant rotation, free translation direction
      const double angle = uni(0.0, setup.max_angle_deg) * std::numbers::pi / 180.0;
      const Vec3 axis = Vec3(uni(-0.3, 0.3), uni(-0.3, 0.3), 1.0).normalized();
      Vec3 dir(uni(-1, 1), uni(-1, 1), uni(-0.3, 0.3));
      dir.normalize();
      Pose pb;
      pb.R = rot_exp(axis * (rng() % 2 ? angle : -angle)) * pa.R;
      pb.t = pa.t + dir * uni(0.0, setup.max_dist);
      if (pose_error(pa, pb).angle_deg > setup.max_angle_deg || (pb.t - pa.t).norm() > setup.max_dist) continue;
      ViewPair vp{render(room, pa, base + "a"), render(room, pb, base + "b"), true};
      if (std::min(view_overlap(vp.a, vp.b), view_overlap(vp.b, vp.a)) < setup.min_overlap) continue;
      out.push_back(std::move(vp));
      break;
    }
  }
  for (int i = 0; i < setup.negatives; ++i) {
    const int ra = static_cast<int>(rng() % static_cast<std::uint64_t>(setup.rooms));
    const int rb = (ra + 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(setup.rooms - 1))) % setup.rooms;
    const std::string base = "n" + std::to_string(i);
    out.push_back({render(ra, random_room_pose(rooms[ra], rng), "r" + std::to_string(ra) + "/" + base + "a"),
                   render(rb, random_room_pose(rooms[rb], rng), "r" + std::to_string(rb) + "/" + base + "b"), false});
  }
  return out;
}

std::string room_of(const std::string& frame_id) { return frame_id.substr(0, frame_id.find('/')); }

// ---------------------------------------------------------------------------
// Reports

double EvalReport::accuracy() const {
  if (records.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& r : records) ok += r.localized;
  return static_cast<double>(ok) / static_cast<double>(records.size());
}

double EvalReport::retrieval_accuracy() const {
  if (records.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& r : records) ok += r.correct_room;
  return static_cast<double>(ok) / static_cast<double>(records.size());
}

void EvalReport::write(std::ostream& out) const {
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::fixed << std::setprecision(4);
  for (const auto& r : records)
    out << "query=" << r.query_id << " top=" << (r.top_result.empty() ? "-" : r.top_result)
        << " rot_deg=" << r.pose_error_rot << " trans_m=" << r.pose_error_trans << " accepted=" << r.accepted
        << " localized=" << r.localized << " correct_room=" << r.correct_room << '\n';
  out << "\n" << std::left << std::setw(8) << "variant" << std::setw(10) << "queries" << std::setw(12) << "localized"
      << std::setw(12) << "accuracy" << "retrieval\n";
  std::size_t ok = 0;
  for (const auto& r : records) ok += r.localized;
  out << std::setw(8) << variant << std::setw(10) << records.size() << std::setw(12) << ok << std::setw(12)
      << 100.0 * accuracy() << 100.0 * retrieval_accuracy() << '\n';
  if (!voxel_counts.empty()) {
    out << "voxels";
    for (auto v : voxel_counts) out << ' ' << v;
    out << '\n';
  }
  out.flags(flags);
  out.precision(prec);
}

EvalReport evaluate_relocalization(const ViewDatabase& db, const std::vector<ProcessedView>& queries,
                                   Variant variant, double max_dist, double max_deg) {
  EvalReport report;
  report.variant = to_string(variant);
  for (const auto& q : queries) {
    QueryRecord rec;
    rec.query_id = q.frame_id;
    const RelocalizationResult res = db.relocalize(q, variant);
    if (!res.retrieved.hits.empty())
      rec.correct_room = room_of(res.retrieved.hits.front().frame_id) == room_of(q.frame_id);
    rec.top_result = res.retrieved_id;
    rec.accepted = res.success;
    if (res.success && q.pose) {
      const PoseError e = pose_error(res.T_world, *q.pose);
      rec.pose_error_rot = e.angle_deg;
      rec.pose_error_trans = e.dist;
      rec.localized = e.within(max_dist, max_deg);
    }
    report.records.push_back(rec);
  }
  return report;
}

}  // namespace geosig
