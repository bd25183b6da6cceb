#include "geosig/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include <png.h>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "geosig/error.hpp"
#include "geosig/spatial_hash.hpp"

namespace geosig {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
    throw Error(ErrorCode::InvalidArgument, "principal point outside the image");
  if (!(depth_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "depth_scale must be positive");
}

CameraIntrinsics CameraIntrinsics::seven_scenes() {
  return {585.0, 585.0, 320.0, 240.0, 640, 480, 0.001};
}

PointCloud depth_to_cloud(const RangeFrame& frame) {
  const auto& K = frame.intrinsics;
  K.validate();
  if (frame.depth.size() != static_cast<std::size_t>(K.width) * K.height)
    throw Error(ErrorCode::DimensionMismatch, "depth buffer does not match intrinsics");

  PointCloud cloud;
  cloud.intrinsics = K;
  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      const std::uint16_t d = frame.at(u, v);
      if (d == 0) continue;
      const double z = K.depth_scale * d;
      cloud.points.emplace_back(z * (u - K.cx) / K.fx, z * (v - K.cy) / K.fy, z);
      cloud.pixel_index.push_back(v * K.width + u);
    }
  }
  if (cloud.points.empty()) throw Error(ErrorCode::AllInvalidDepth, "frame '" + frame.frame_id + "' has no valid depth");
  return cloud;
}

PointCloud estimate_normals(PointCloud cloud, double radius) {
  if (cloud.size() < 3) {
    cloud.normals.clear();
    cloud.degenerate.assign(cloud.size(), 1);
    for (const Vec3& p : cloud.points) {
      const double n = p.norm();
      cloud.normals.push_back(n > 0.0 ? Vec3(-p / n) : Vec3(0, 0, -1));
    }
    return cloud;
  }

  SpatialHash grid(cloud.points, radius);
  cloud.normals.resize(cloud.size());
  cloud.degenerate.assign(cloud.size(), 0);
  std::vector<int> nbrs;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    nbrs.clear();
    grid.radius_query(p, radius, nbrs);

    bool ok = nbrs.size() >= 3;
    Vec3 n = Vec3::Zero();
    if (ok) {
      Vec3 mean = Vec3::Zero();
      for (int j : nbrs) mean += cloud.points[j];
      mean /= static_cast<double>(nbrs.size());
      Mat3 C = Mat3::Zero();
      for (int j : nbrs) {
        const Vec3 d = cloud.points[j] - mean;
        C += d * d.transpose();
      }
      Eigen::SelfAdjointEigenSolver<Mat3> es(C);
      const Vec3 ev = es.eigenvalues();
      // rank < 2: the neighborhood is a point or a line
      ok = ev(1) > 1e-10 * std::max(ev(2), 1e-30) && ev(2) > 0.0;
      n = es.eigenvectors().col(0);
    }
    if (!ok) {
      cloud.degenerate[i] = 1;
      const double pn = p.norm();
      n = pn > 0.0 ? Vec3(-p / pn) : Vec3(0, 0, -1);
    }
    n.normalize();
    if (n.dot(p) > 0.0) n = -n;
    cloud.normals[i] = n;
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Files

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

std::string frame_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame-%06d", index);
  return buf;
}

}  // namespace

std::vector<std::uint16_t> read_depth_png(const std::filesystem::path& path, int& width, int& height) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error(ErrorCode::MissingFile, path.string());

  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw Error(ErrorCode::UnsupportedFormat, path.string() + " is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::Io, "libpng initialisation failed");
  }
  std::vector<std::uint16_t> out;
  std::string failure;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": corrupt PNG");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (bit_depth != 16 || color != PNG_COLOR_TYPE_GRAY) {
    failure = path.string() + ": expected 16-bit grayscale depth, got " + std::to_string(bit_depth) + "-bit";
  } else {
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    png_set_swap(png);  // PNG stores 16-bit samples big-endian
    out.resize(static_cast<std::size_t>(width) * height);
    std::vector<png_bytep> rows(height);
    for (int v = 0; v < height; ++v) rows[v] = reinterpret_cast<png_bytep>(out.data() + static_cast<std::size_t>(v) * width);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!failure.empty()) throw Error(ErrorCode::UnsupportedFormat, failure);
  return out;
}

void write_depth_png(const std::filesystem::path& path, const RangeFrame& frame) {
  const auto& K = frame.intrinsics;
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error(ErrorCode::Io, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::Io, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::Io, "failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, K.width, K.height, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_set_swap(png);
  std::vector<std::uint16_t> row(K.width);
  for (int v = 0; v < K.height; ++v) {
    std::copy_n(frame.depth.begin() + static_cast<std::ptrdiff_t>(v) * K.width, K.width, row.begin());
    png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Pose parse_pose(const std::string& text) {
  std::istringstream in(text);
  std::vector<double> vals;
  double x = 0.0;
  while (in >> x) vals.push_back(x);
  if (!in.eof()) throw Error(ErrorCode::MalformedPose, "non-numeric token in pose");
  if (vals.size() != 16) throw Error(ErrorCode::MalformedPose, "expected 16 values, got " + std::to_string(vals.size()));

  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = vals[r * 4 + c];
  Pose pose = Pose::from_matrix(m);
  if (!pose.is_valid(1e-3)) throw Error(ErrorCode::MalformedPose, "rotation block is not orthonormal");
  // Snap to the nearest rotation so downstream code sees R^T R = I to machine precision.
  Eigen::JacobiSVD<Mat3> svd(pose.R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  pose.R = svd.matrixU() * svd.matrixV().transpose();
  return pose;
}

std::string format_pose(const Pose& pose) {
  std::ostringstream out;
  out.precision(17);
  const Eigen::Matrix4d m = pose.matrix();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) out << (c ? " " : "") << m(r, c);
    out << '\n';
  }
  return out.str();
}

RangeFrame load_sevenscenes_frame(const std::filesystem::path& dir, int index, const CameraIntrinsics& intrinsics) {
  const std::string stem = frame_stem(index);
  const auto depth_path = dir / (stem + ".depth.png");
  const auto pose_path = dir / (stem + ".pose.txt");
  if (!std::filesystem::exists(depth_path)) throw Error(ErrorCode::MissingFile, depth_path.string());
  if (!std::filesystem::exists(pose_path)) throw Error(ErrorCode::MissingFile, pose_path.string());

  RangeFrame frame;
  frame.frame_id = stem;
  int w = 0, h = 0;
  frame.depth = read_depth_png(depth_path, w, h);
  frame.intrinsics = intrinsics;
  frame.intrinsics.width = w;
  frame.intrinsics.height = h;
  frame.intrinsics.depth_scale = 0.001;
  if (w != intrinsics.width || h != intrinsics.height) {
    // keep the principal point proportional for resized streams
    frame.intrinsics.cx = intrinsics.cx * w / intrinsics.width;
    frame.intrinsics.cy = intrinsics.cy * h / intrinsics.height;
    frame.intrinsics.fx = intrinsics.fx * w / intrinsics.width;
    frame.intrinsics.fy = intrinsics.fy * h / intrinsics.height;
  }
  // 7-scenes marks missing depth with 65535
  for (auto& d : frame.depth)
    if (d == 65535) d = 0;

  std::ifstream in(pose_path);
  std::stringstream buf;
  buf << in.rdbuf();
  frame.pose_gt = parse_pose(buf.str());
  return frame;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

std::pair<Vec3, Vec3> plane_axes(const Vec3& normal) {
  const Vec3 n = normal.normalized();
  const Vec3 ref = std::abs(n.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 u = ref.cross(n).normalized();
  return {u, n.cross(u)};
}

SceneSpec SceneSpec::parse(const std::string& text) {
  SceneSpec spec;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    std::vector<double> v;
    double x = 0.0;
    while (ls >> x) v.push_back(x);
    if (kind == "plane" && v.size() == 8) {
      const Vec3 n(v[3], v[4], v[5]);
      if (n.norm() < 1e-12) throw Error(ErrorCode::InvalidArgument, "line " + std::to_string(lineno) + ": zero plane normal");
      spec.planes.push_back({Vec3(v[0], v[1], v[2]), n.normalized(), v[6], v[7]});
    } else if (kind == "box" && v.size() == 6) {
      spec.boxes.push_back({Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5]).cwiseAbs()});
    } else {
      throw Error(ErrorCode::InvalidArgument, "line " + std::to_string(lineno) + ": cannot parse '" + kind + "' primitive");
    }
  }
  return spec;
}

SceneSpec SceneSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string SceneSpec::to_text() const {
  std::ostringstream out;
  out.precision(17);
  for (const auto& p : planes)
    out << "plane " << p.center.x() << ' ' << p.center.y() << ' ' << p.center.z() << ' ' << p.normal.x() << ' '
        << p.normal.y() << ' ' << p.normal.z() << ' ' << p.half_u << ' ' << p.half_v << '\n';
  for (const auto& b : boxes)
    out << "box " << b.center.x() << ' ' << b.center.y() << ' ' << b.center.z() << ' ' << b.half_extents.x() << ' '
        << b.half_extents.y() << ' ' << b.half_extents.z() << '\n';
  return out.str();
}

namespace {

struct PreparedPlane {
  Vec3 center, normal, u, v;
  double half_u, half_v;
};

double intersect_plane(const PreparedPlane& p, const Vec3& o, const Vec3& d) {
  const double denom = p.normal.dot(d);
  if (std::abs(denom) < 1e-12) return -1.0;
  const double t = p.normal.dot(p.center - o) / denom;
  if (t <= 0.0) return -1.0;
  const Vec3 q = o + t * d - p.center;
  if (std::abs(q.dot(p.u)) > p.half_u || std::abs(q.dot(p.v)) > p.half_v) return -1.0;
  return t;
}

double intersect_box(const BoxPrimitive& b, const Vec3& o, const Vec3& d) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double lo = b.center[a] - b.half_extents[a];
    const double hi = b.center[a] + b.half_extents[a];
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo || o[a] > hi) return -1.0;
      continue;
    }
    double t0 = (lo - o[a]) / d[a];
    double t1 = (hi - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  if (t_near > t_far) return -1.0;
  if (t_near > 0.0) return t_near;
  return t_far > 0.0 ? t_far : -1.0;
}

}  // namespace

RangeFrame synth_scene(const SceneSpec& spec, const Pose& pose, const CameraIntrinsics& K, const SynthOptions& options) {
  if (spec.empty()) throw Error(ErrorCode::EmptyScene, "scene has no primitives");
  K.validate();

  std::vector<PreparedPlane> planes;
  for (const auto& p : spec.planes) {
    auto [u, v] = plane_axes(p.normal);
    planes.push_back({p.center, p.normal.normalized(), u, v, p.half_u, p.half_v});
  }

  RangeFrame frame;
  frame.intrinsics = K;
  frame.pose_gt = pose;
  frame.frame_id = options.frame_id;
  frame.depth.assign(static_cast<std::size_t>(K.width) * K.height, 0);

  std::mt19937_64 rng(SeedStream(options.noise_seed).derive("depth-noise").seed());
  std::normal_distribution<double> noise(0.0, 1.0);
  const Vec3 origin = pose.t;
  const double max_units = std::numeric_limits<std::uint16_t>::max() - 1;

  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      // camera ray with unit z, so the ray parameter is the depth
      const Vec3 dir = pose.R * Vec3((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
      double best = std::numeric_limits<double>::infinity();
      for (const auto& p : planes) {
        const double t = intersect_plane(p, origin, dir);
        if (t > 0.0 && t < best) best = t;
      }
      for (const auto& b : spec.boxes) {
        const double t = intersect_box(b, origin, dir);
        if (t > 0.0 && t < best) best = t;
      }
      double z = best;
      if (options.noise_sigma > 0.0) {
        const double e = noise(rng);  // drawn for every pixel to keep the stream aligned
        if (std::isfinite(z)) z += options.noise_sigma * e;
      }
      if (!std::isfinite(z) || z <= 0.0 || z > options.max_depth) continue;
      const double units = std::round(z / K.depth_scale);
      frame.depth[static_cast<std::size_t>(v) * K.width + u] = static_cast<std::uint16_t>(std::clamp(units, 1.0, max_units));
    }
  }
  return frame;
}

}  // namespace geosig
