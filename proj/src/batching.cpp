#include "lowcal/batching.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace lowcal {

namespace {

constexpr double kDegToRad = 3.141592653589793238462643383279502884 / 180.0;

}  // namespace

RigidTransform default_lidar_camera_mount() {
  // LiDAR x-forward/y-left/z-up to camera x-right/y-down/z-forward, with a
  // small mounting offset in the camera frame.
  Eigen::Matrix3d r;
  r << 0, -1, 0,
      0, 0, -1,
      1, 0, 0;
  RigidTransform t;
  t.rotation = quat_normalize(Quaternion(r));
  t.translation = Vec3(0.05, -0.08, -0.02);
  return t;
}

RigidTransform sample_miscalibration(const MiscalibRange& range, Rng& rng) {
  if (range.max_translation_cm <= 0.0 || range.max_rotation_deg <= 0.0) {
    throw std::invalid_argument("MiscalibRange: bounds must be positive");
  }
  const double mt = range.max_translation_cm / 100.0;  // meters
  const double mr = range.max_rotation_deg;
  RigidTransform out;
  // Draw order is fixed: translation xyz, then roll/pitch/yaw.
  out.translation = Vec3(rng.uniform(-mt, mt), rng.uniform(-mt, mt), rng.uniform(-mt, mt));
  EulerAngles e;
  e.roll = rng.uniform(-mr, mr);
  e.pitch = rng.uniform(-mr, mr);
  e.yaw = rng.uniform(-mr, mr);
  out.rotation = euler_to_quat(e);
  return out;
}

ComposedBatch compose_scl_batch(std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("compose_scl_batch: batch size must be >= 1");
  const int b = static_cast<int>(batch_size);
  ComposedBatch out;
  out.entries.reserve(batch_size * batch_size * batch_size);
  for (int k = 1; k <= b; ++k) {
    for (int i = 1; i <= b; ++i) {
      for (int j = 1; j <= b; ++j) {
        out.entries.push_back({k, i, j});
        out.rot_labels.push_back(i);
        out.trans_labels.push_back(j);
      }
    }
  }
  return out;
}

ComposedBatch compose_scl_batch(const std::vector<TrainingSample>& samples) {
  return compose_scl_batch(samples.size());
}

PointCloud apply_miscalibration(const PointCloud& cloud, const RigidTransform& gt_extrinsic,
                                const RigidTransform& miscalibration) {
  return transform_apply(transform_compose(miscalibration, gt_extrinsic), cloud);
}

// ---------------------------------------------------------------------------
// Scene generation

namespace {

struct Box {
  Vec3 lo, hi;
  double albedo;
};

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::Zero();
  double albedo = 0.0;
  bool ground = false;
  bool valid() const { return std::isfinite(t); }
};

struct Scene {
  double ground_z;
  double ground_albedo = 0.5;
  std::vector<Box> boxes;
};

Hit intersect_ground(const Scene& s, const Vec3& origin, const Vec3& dir) {
  Hit h;
  if (dir.z() >= -1e-12) return h;
  const double t = (s.ground_z - origin.z()) / dir.z();
  if (t <= 1e-6) return h;
  h.t = t;
  h.normal = Vec3::UnitZ();
  h.albedo = s.ground_albedo;
  h.ground = true;
  return h;
}

Hit intersect_box(const Box& b, const Vec3& origin, const Vec3& dir) {
  Hit h;
  double t0 = 1e-6, t1 = std::numeric_limits<double>::infinity();
  int axis = -1;
  bool from_lo = true;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-12) {
      if (origin[a] < b.lo[a] || origin[a] > b.hi[a]) return h;
      continue;
    }
    double ta = (b.lo[a] - origin[a]) / dir[a];
    double tb = (b.hi[a] - origin[a]) / dir[a];
    bool lo_side = true;
    if (ta > tb) {
      std::swap(ta, tb);
      lo_side = false;
    }
    if (ta > t0) {
      t0 = ta;
      axis = a;
      from_lo = lo_side;
    }
    t1 = std::min(t1, tb);
    if (t0 > t1) return h;
  }
  if (axis < 0) return h;  // origin inside the box
  h.t = t0;
  h.normal = Vec3::Zero();
  h.normal[axis] = from_lo ? -1.0 : 1.0;
  h.albedo = b.albedo;
  return h;
}

Hit intersect_scene(const Scene& s, const Vec3& origin, const Vec3& dir, double max_range) {
  Hit best = intersect_ground(s, origin, dir);
  for (const Box& b : s.boxes) {
    const Hit h = intersect_box(b, origin, dir);
    if (h.t < best.t) best = h;
  }
  if (best.t > max_range) return Hit{};
  return best;
}

double shade(const Hit& h, const Vec3& point) {
  static const Vec3 light = Vec3(0.35, 0.25, 0.9).normalized();
  double albedo = h.albedo;
  if (h.ground) {
    // 1 m checker keeps the ground visually localizable.
    const long long cx = static_cast<long long>(std::floor(point.x()));
    const long long cy = static_cast<long long>(std::floor(point.y()));
    albedo = ((cx + cy) & 1) ? 0.65 : 0.35;
  }
  const double lambert = std::max(0.0, h.normal.dot(light));
  return std::min(1.0, albedo * (0.25 + 0.75 * lambert));
}

Scene build_scene(const SceneConfig& cfg, Rng& rng) {
  Scene s;
  s.ground_z = -cfg.sensor_height_m;
  for (int i = 0; i < cfg.box_count; ++i) {
    const double cx = rng.uniform(2.5, 9.0);
    const double cy = rng.uniform(-3.5, 3.5);
    const double sx = rng.uniform(0.4, 1.8);
    const double sy = rng.uniform(0.4, 1.8);
    const double h = rng.uniform(0.5, 2.2);
    const double albedo = rng.uniform(0.25, 0.9);
    Box b;
    b.lo = Vec3(cx - sx / 2, cy - sy / 2, s.ground_z);
    b.hi = Vec3(cx + sx / 2, cy + sy / 2, s.ground_z + h);
    b.albedo = albedo;
    s.boxes.push_back(b);
  }
  return s;
}

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

SceneSample generate_scene(const SceneConfig& cfg) {
  if (cfg.channels < 1 || cfg.horizontal_rays < 1) {
    throw std::invalid_argument("SceneConfig: channels and horizontal_rays must be >= 1");
  }
  Rng rng(cfg.seed);
  const Scene scene = build_scene(cfg, rng);

  SceneSample out;
  out.gt_extrinsic = cfg.lidar_to_camera;

  // LiDAR sweep from the origin of the sensor frame.
  std::vector<double> pts, intens;
  for (int c = 0; c < cfg.channels; ++c) {
    const double elev_deg = cfg.vertical_center_deg - cfg.vertical_fov_deg / 2.0 +
                            (c + 0.5) * cfg.vertical_fov_deg / cfg.channels;
    const double elev = elev_deg * kDegToRad;
    for (int i = 0; i < cfg.horizontal_rays; ++i) {
      const double az = (-180.0 + (i + 0.5) * 360.0 / cfg.horizontal_rays) * kDegToRad;
      const Vec3 dir(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
                     std::sin(elev));
      const Hit h = intersect_scene(scene, Vec3::Zero(), dir, cfg.max_range_m);
      if (!h.valid()) continue;
      const Vec3 p = h.t * dir;
      // Points are quantized to float32 so the binary scan format holds them
      // losslessly.
      pts.push_back(quantize_f32(p.x()));
      pts.push_back(quantize_f32(p.y()));
      pts.push_back(quantize_f32(p.z()));
      intens.push_back(quantize_f32(shade(h, p)));
    }
  }
  const Eigen::Index n = static_cast<Eigen::Index>(intens.size());
  out.cloud.points.resize(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.cloud.points.col(i) = Vec3(pts[i * 3], pts[i * 3 + 1], pts[i * 3 + 2]);
  }
  out.cloud.intensity = Eigen::Map<const Eigen::VectorXd>(intens.data(), n);

  // Camera render of the same primitives, grayscale replicated to 3 channels.
  const CameraIntrinsics& k = cfg.camera;
  const RigidTransform cam_to_lidar = transform_inverse(cfg.lidar_to_camera);
  Eigen::VectorXd img = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(3) * k.height * k.width);
  const Vec3 origin_l = cam_to_lidar.translation;
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const Vec3 dir_cam((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      const Vec3 dir_l = (cam_to_lidar.rotation * dir_cam).normalized();
      const Hit h = intersect_scene(scene, origin_l, dir_l, cfg.max_range_m);
      const double value = h.valid() ? shade(h, origin_l + h.t * dir_l) : 0.0;
      for (int ch = 0; ch < 3; ++ch) {
        img[(static_cast<Eigen::Index>(ch) * k.height + v) * k.width + u] = value;
      }
    }
  }
  out.image = Tensor::from_values({3, k.height, k.width}, std::move(img));
  return out;
}

// ---------------------------------------------------------------------------
// File IO

namespace {

void write_f32_le(std::ostream& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  unsigned char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

float read_f32_le(std::istream& in, const std::string& path) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
    throw FormatError(path + ": truncated float payload");
  }
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

PointCloud load_cloud(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open cloud: " + path);
  const std::streamoff bytes = in.tellg();
  if (bytes % 16 != 0) {
    throw FormatError(path + ": length " + std::to_string(bytes) +
                      " is not a multiple of 16 bytes");
  }
  in.seekg(0);
  const Eigen::Index n = bytes / 16;
  PointCloud pc;
  pc.points.resize(3, n);
  pc.intensity = Eigen::VectorXd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    pc.points(0, i) = read_f32_le(in, path);
    pc.points(1, i) = read_f32_le(in, path);
    pc.points(2, i) = read_f32_le(in, path);
    (*pc.intensity)(i) = read_f32_le(in, path);
  }
  return pc;
}

void save_cloud(const PointCloud& pc, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (Eigen::Index i = 0; i < pc.size(); ++i) {
    write_f32_le(out, static_cast<float>(pc.points(0, i)));
    write_f32_le(out, static_cast<float>(pc.points(1, i)));
    write_f32_le(out, static_cast<float>(pc.points(2, i)));
    write_f32_le(out, pc.intensity ? static_cast<float>((*pc.intensity)(i)) : 0.0f);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Tensor load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw FormatError(path + ": bad magic, expected P6");
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  in.ignore(1);  // single whitespace before payload
  if (!in || w < 1 || h < 1 || maxval != 255) {
    throw FormatError(path + ": malformed PPM header");
  }
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw FormatError(path + ": truncated PPM payload");
  }
  Eigen::VectorXd img(static_cast<Eigen::Index>(3) * h * w);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      for (int c = 0; c < 3; ++c) {
        img[(static_cast<Eigen::Index>(c) * h + v) * w + u] =
            raw[(static_cast<std::size_t>(v) * w + u) * 3 + c] / 255.0;
      }
    }
  }
  return Tensor::from_values({3, h, w}, std::move(img));
}

void save_image(const Tensor& image, const std::string& path) {
  if (!image.defined() || image.shape().size() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("save_image: expected a [3, h, w] tensor");
  }
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      for (int c = 0; c < 3; ++c) {
        const double x = image.values()[(static_cast<Eigen::Index>(c) * h + v) * w + u];
        const double clamped = std::min(1.0, std::max(0.0, x));
        out.put(static_cast<char>(std::lround(clamped * 255.0)));
      }
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

SceneConfig scene_config_from_kv(const KvFile& kv) {
  SceneConfig cfg;
  cfg.channels = static_cast<int>(kv.get_int("scene.channels", cfg.channels));
  cfg.horizontal_rays = static_cast<int>(kv.get_int("scene.horizontal_rays", cfg.horizontal_rays));
  cfg.vertical_fov_deg = kv.get_double("scene.vertical_fov_deg", cfg.vertical_fov_deg);
  cfg.vertical_center_deg = kv.get_double("scene.vertical_center_deg", cfg.vertical_center_deg);
  cfg.box_count = static_cast<int>(kv.get_int("scene.box_count", cfg.box_count));
  cfg.sensor_height_m = kv.get_double("scene.sensor_height_m", cfg.sensor_height_m);
  cfg.max_range_m = kv.get_double("scene.max_range_m", cfg.max_range_m);
  cfg.seed = static_cast<std::uint64_t>(kv.get_int("scene.seed", static_cast<long long>(cfg.seed)));
  cfg.camera.fx = kv.get_double("camera.fx", cfg.camera.fx);
  cfg.camera.fy = kv.get_double("camera.fy", cfg.camera.fy);
  cfg.camera.cx = kv.get_double("camera.cx", cfg.camera.cx);
  cfg.camera.cy = kv.get_double("camera.cy", cfg.camera.cy);
  cfg.camera.width = static_cast<int>(kv.get_int("camera.width", cfg.camera.width));
  cfg.camera.height = static_cast<int>(kv.get_int("camera.height", cfg.camera.height));
  if (kv.has("mount")) {
    const auto v = kv.get_doubles("mount", {});
    if (v.size() != 7) throw FormatError("mount: expected 7 numbers (qw qx qy qz tx ty tz)");
    cfg.lidar_to_camera.rotation = quat_normalize(Quaternion(v[0], v[1], v[2], v[3]));
    cfg.lidar_to_camera.translation = Vec3(v[4], v[5], v[6]);
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "# lowcal dataset manifest\n";
  out << "camera = " << format_double(m.camera.fx) << " " << format_double(m.camera.fy) << " "
      << format_double(m.camera.cx) << " " << format_double(m.camera.cy) << " " << m.camera.width
      << " " << m.camera.height << "\n";
  out << "count = " << m.entries.size() << "\n";
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    const Quaternion& q = e.gt_extrinsic.rotation;
    const Vec3& t = e.gt_extrinsic.translation;
    out << "entry_" << i << " = " << e.cloud_path << " " << e.image_path << " "
        << format_double(q.w()) << " " << format_double(q.x()) << " " << format_double(q.y())
        << " " << format_double(q.z()) << " " << format_double(t.x()) << " "
        << format_double(t.y()) << " " << format_double(t.z()) << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Manifest read_manifest(const std::string& path) {
  const KvFile kv = KvFile::parse_file(path);
  Manifest m;
  const auto cam = kv.get_doubles("camera", {});
  if (cam.size() != 6) throw FormatError(path + ": camera line must hold 6 numbers");
  m.camera = {cam[0], cam[1], cam[2], cam[3], static_cast<int>(cam[4]),
              static_cast<int>(cam[5])};
  const long long count = kv.get_int("count", -1);
  if (count < 0) throw FormatError(path + ": missing count");
  for (long long i = 0; i < count; ++i) {
    const std::string key = "entry_" + std::to_string(i);
    std::istringstream line(kv.require_string(key));
    ManifestEntry e;
    double qw, qx, qy, qz, tx, ty, tz;
    if (!(line >> e.cloud_path >> e.image_path >> qw >> qx >> qy >> qz >> tx >> ty >> tz)) {
      throw FormatError(path + ": malformed " + key);
    }
    e.gt_extrinsic.rotation = quat_normalize(Quaternion(qw, qx, qy, qz));
    e.gt_extrinsic.translation = Vec3(tx, ty, tz);
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::vector<SceneSample> load_manifest_scenes(const std::string& manifest_path,
                                              CameraIntrinsics* camera_out) {
  const Manifest m = read_manifest(manifest_path);
  if (camera_out) *camera_out = m.camera;
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  std::vector<SceneSample> scenes;
  scenes.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    SceneSample s;
    s.cloud = load_cloud((base / e.cloud_path).string());
    s.image = load_image((base / e.image_path).string());
    s.gt_extrinsic = e.gt_extrinsic;
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace lowcal
