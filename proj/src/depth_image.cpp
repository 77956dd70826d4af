#include "lowcal/depth_image.hpp"

#include "lowcal/config.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace lowcal {

namespace {

void check_raster(const Raster& r) {
  if (r.rows() < 1 || r.cols() < 1) {
    throw std::invalid_argument("DepthImage: dimensions must be positive");
  }
  if (!(r >= 0.0).all() || !r.isFinite().all()) {
    throw std::invalid_argument("DepthImage: values must be finite and >= 0");
  }
}

void check_pool_args(const DepthImage& d, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1 || out_h > d.height() || out_w > d.width()) {
    throw std::invalid_argument("adaptive pooling: output size must be in [1, input size]");
  }
}

}  // namespace

DepthImage::DepthImage(int width, int height) {
  if (width < 1 || height < 1) {
    throw std::invalid_argument("DepthImage: dimensions must be positive");
  }
  data_ = Raster::Zero(height, width);
}

DepthImage::DepthImage(Raster data) : data_(std::move(data)) { check_raster(data_); }

PoolGeometry pool_geometry(int in_size, int out_size) {
  PoolGeometry g;
  g.stride = in_size / out_size;
  g.kernel = in_size - (out_size - 1) * g.stride;
  return g;
}

DepthImage project_cloud(const PointCloud& pc, const CameraIntrinsics& k,
                         const RigidTransform& extrinsic) {
  if (k.fx <= 0.0 || k.fy <= 0.0 || k.width < 1 || k.height < 1 || k.cx < 0.0 ||
      k.cx >= k.width || k.cy < 0.0 || k.cy >= k.height) {
    throw std::invalid_argument("project_cloud: invalid intrinsics");
  }
  DepthImage out(k.width, k.height);
  const Eigen::Matrix3d rot = extrinsic.rotation.toRotationMatrix();
  for (Eigen::Index i = 0; i < pc.size(); ++i) {
    const Vec3 p = rot * pc.points.col(i) + extrinsic.translation;
    if (p.z() <= kNearPlaneMeters) continue;
    const auto u = static_cast<long>(std::lround(k.fx * p.x() / p.z() + k.cx));
    const auto v = static_cast<long>(std::lround(k.fy * p.y() / p.z() + k.cy));
    if (u < 0 || u >= k.width || v < 0 || v >= k.height) continue;
    double& cell = out(static_cast<int>(v), static_cast<int>(u));
    if (cell == 0.0 || p.z() < cell) cell = p.z();
  }
  return out;
}

DepthImage adaptive_max_pool(const DepthImage& d, int out_h, int out_w) {
  check_pool_args(d, out_h, out_w);
  const PoolGeometry gh = pool_geometry(d.height(), out_h);
  const PoolGeometry gw = pool_geometry(d.width(), out_w);
  DepthImage out(out_w, out_h);
  for (int i = 0; i < out_h; ++i) {
    for (int j = 0; j < out_w; ++j) {
      out(i, j) = d.raster().block(i * gh.stride, j * gw.stride, gh.kernel, gw.kernel).maxCoeff();
    }
  }
  return out;
}

DepthImage adaptive_avg_pool(const DepthImage& d, int out_h, int out_w) {
  check_pool_args(d, out_h, out_w);
  const PoolGeometry gh = pool_geometry(d.height(), out_h);
  const PoolGeometry gw = pool_geometry(d.width(), out_w);
  DepthImage out(out_w, out_h);
  for (int i = 0; i < out_h; ++i) {
    for (int j = 0; j < out_w; ++j) {
      const auto window = d.raster().block(i * gh.stride, j * gw.stride, gh.kernel, gw.kernel);
      const double count = (window > 0.0).count();
      out(i, j) = count > 0.0 ? window.sum() / count : 0.0;
    }
  }
  return out;
}

namespace {

template <typename PerSource>
DepthImage sparse_fill(const DepthImage& d, double radius, PerSource combine) {
  const int h = d.height(), w = d.width();
  const int reach = static_cast<int>(std::floor(radius));
  const double r2 = radius * radius;
  DepthImage out = d;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      if (d(i, j) != 0.0) continue;
      // Scan candidate sources in absolute row-major order so distance ties
      // resolve deterministically.
      combine.reset();
      for (int di = -reach; di <= reach; ++di) {
        const int si = i + di;
        if (si < 0 || si >= h) continue;
        for (int dj = -reach; dj <= reach; ++dj) {
          const int sj = j + dj;
          if (sj < 0 || sj >= w) continue;
          const double v = d(si, sj);
          if (v == 0.0) continue;
          const double dist2 = static_cast<double>(di) * di + static_cast<double>(dj) * dj;
          if (dist2 > r2) continue;
          combine.add(v, std::sqrt(dist2));
        }
      }
      out(i, j) = combine.value();
    }
  }
  return out;
}

struct NearestCombine {
  double best = 0.0;
  double best_dist = std::numeric_limits<double>::infinity();
  void reset() {
    best = 0.0;
    best_dist = std::numeric_limits<double>::infinity();
  }
  void add(double v, double dist) {
    if (dist < best_dist) {
      best_dist = dist;
      best = v;
    }
  }
  double value() const { return best; }
};

struct InverseDistanceCombine {
  double num = 0.0;
  double den = 0.0;
  void reset() { num = den = 0.0; }
  void add(double v, double dist) {
    const double wgt = 1.0 / dist;  // dist >= 1 for any source of a zero pixel
    num += wgt * v;
    den += wgt;
  }
  double value() const { return den > 0.0 ? num / den : 0.0; }
};

}  // namespace

DepthImage interpolate_nearest(const DepthImage& d, double radius) {
  return sparse_fill(d, radius, NearestCombine{});
}

DepthImage interpolate_linear(const DepthImage& d, double radius) {
  return sparse_fill(d, radius, InverseDistanceCombine{});
}

DepthImage upsample_nearest(const DepthImage& d, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("upsample_nearest: output size must be positive");
  }
  DepthImage out(out_w, out_h);
  for (int i = 0; i < out_h; ++i) {
    const int si = static_cast<int>(static_cast<long long>(i) * d.height() / out_h);
    for (int j = 0; j < out_w; ++j) {
      const int sj = static_cast<int>(static_cast<long long>(j) * d.width() / out_w);
      out(i, j) = d(si, sj);
    }
  }
  return out;
}

double density(const DepthImage& d) {
  const auto total = static_cast<double>(d.raster().size());
  return (d.raster() > 0.0).count() / total;
}

DepthImage interpolate_for_network(const DepthImage& d, InterpolationMethod method) {
  switch (method) {
    case InterpolationMethod::MaxPool: {
      const int ph = std::max(1, d.height() / 2), pw = std::max(1, d.width() / 2);
      return upsample_nearest(adaptive_max_pool(d, ph, pw), d.height(), d.width());
    }
    case InterpolationMethod::AvgPool: {
      const int ph = std::max(1, d.height() / 2), pw = std::max(1, d.width() / 2);
      return upsample_nearest(adaptive_avg_pool(d, ph, pw), d.height(), d.width());
    }
    case InterpolationMethod::Linear:
      return interpolate_linear(d);
    case InterpolationMethod::NearestNeighbour:
      return interpolate_nearest(d);
    case InterpolationMethod::None:
      return d;
  }
  throw std::invalid_argument("interpolate_for_network: unknown method");
}

void save_depth_image(const DepthImage& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "LDI1\n" << d.width() << " " << d.height() << "\n";
  for (int i = 0; i < d.height(); ++i) {
    for (int j = 0; j < d.width(); ++j) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(d(i, j)));
      const unsigned char bytes[4] = {
          static_cast<unsigned char>(bits & 0xFF), static_cast<unsigned char>((bits >> 8) & 0xFF),
          static_cast<unsigned char>((bits >> 16) & 0xFF),
          static_cast<unsigned char>((bits >> 24) & 0xFF)};
      out.write(reinterpret_cast<const char*>(bytes), 4);
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

DepthImage load_depth_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != "LDI1") throw FormatError(path + ": bad magic, expected LDI1");
  int w = 0, h = 0;
  in >> w >> h;
  in.ignore(1);  // the newline after the header
  if (!in || w < 1 || h < 1) throw FormatError(path + ": malformed LDI1 header");
  Raster data(h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      unsigned char bytes[4];
      if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        throw FormatError(path + ": truncated LDI1 payload");
      }
      const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) |
                                 (static_cast<std::uint32_t>(bytes[1]) << 8) |
                                 (static_cast<std::uint32_t>(bytes[2]) << 16) |
                                 (static_cast<std::uint32_t>(bytes[3]) << 24);
      data(i, j) = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return DepthImage(std::move(data));
}

InterpolationMethod interpolation_from_string(const std::string& name) {
  if (name == "maxpool") return InterpolationMethod::MaxPool;
  if (name == "avgpool") return InterpolationMethod::AvgPool;
  if (name == "linear") return InterpolationMethod::Linear;
  if (name == "nearest") return InterpolationMethod::NearestNeighbour;
  if (name == "none") return InterpolationMethod::None;
  throw std::invalid_argument("unknown interpolation method: " + name);
}

std::string to_string(InterpolationMethod m) {
  switch (m) {
    case InterpolationMethod::MaxPool:
      return "maxpool";
    case InterpolationMethod::AvgPool:
      return "avgpool";
    case InterpolationMethod::Linear:
      return "linear";
    case InterpolationMethod::NearestNeighbour:
      return "nearest";
    case InterpolationMethod::None:
      return "none";
  }
  return "unknown";
}

}  // namespace lowcal
