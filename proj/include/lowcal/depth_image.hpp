#pragma once

#include <Eigen/Core>

#include <string>

#include "lowcal/geometry.hpp"

namespace lowcal {

using Raster = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Pinhole model, z forward: u = fx*x/z + cx, v = fy*y/z + cy.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
};

/// The densification candidates; None passes the raw projection through.
enum class InterpolationMethod { MaxPool, AvgPool, Linear, NearestNeighbour, None };

/// Dense raster of projected depths, meters. 0 marks pixels with no return.
class DepthImage {
 public:
  DepthImage() = default;
  DepthImage(int width, int height);
  explicit DepthImage(Raster data);

  int width() const { return static_cast<int>(data_.cols()); }
  int height() const { return static_cast<int>(data_.rows()); }
  double operator()(int row, int col) const { return data_(row, col); }
  double& operator()(int row, int col) { return data_(row, col); }
  const Raster& raster() const { return data_; }

 private:
  Raster data_;
};

inline constexpr double kNearPlaneMeters = 0.1;
inline constexpr double kFillRadiusPixels = 4.0;

/// Transforms each point by `extrinsic` into the camera frame and rasterizes
/// it. Points behind the near plane or outside the frame are dropped; pixel
/// collisions keep the smallest depth, ties keep the earlier point.
DepthImage project_cloud(const PointCloud& pc, const CameraIntrinsics& k,
                         const RigidTransform& extrinsic);

/// Adaptive pooling: stride = floor(in/out), kernel = in - (out-1)*stride,
/// per axis; window (i, j) starts at (i*stride_h, j*stride_w).
DepthImage adaptive_max_pool(const DepthImage& d, int out_h, int out_w);

/// Same windows as adaptive_max_pool; each output is the mean of the nonzero
/// entries in its window, 0 when the window has no returns.
DepthImage adaptive_avg_pool(const DepthImage& d, int out_h, int out_w);

/// Sparse fill: every zero pixel within `radius` (Euclidean, pixels) of a
/// return takes the value of the closest one; ties resolve to the first in
/// row-major order. Nonzero pixels are never modified.
DepthImage interpolate_nearest(const DepthImage& d, double radius = kFillRadiusPixels);

/// Sparse fill with inverse-distance weights over all returns within
/// `radius`. Nonzero pixels are never modified.
DepthImage interpolate_linear(const DepthImage& d, double radius = kFillRadiusPixels);

DepthImage upsample_nearest(const DepthImage& d, int out_h, int out_w);

/// Fraction of pixels holding a return.
double density(const DepthImage& d);

/// Densifies a raw projection for the network. Pooling methods pool to
/// (h/2, w/2) and upsample back so both CNN branches share resolution.
DepthImage interpolate_for_network(const DepthImage& d, InterpolationMethod method);

/// File format: magic "LDI1\n", ASCII "width height\n", then width*height
/// little-endian 32-bit floats, row-major.
void save_depth_image(const DepthImage& d, const std::string& path);
DepthImage load_depth_image(const std::string& path);

InterpolationMethod interpolation_from_string(const std::string& name);
std::string to_string(InterpolationMethod m);

/// Stride and kernel used for a pooled axis, exposed for verification.
struct PoolGeometry {
  int stride = 0;
  int kernel = 0;
};
PoolGeometry pool_geometry(int in_size, int out_size);

}  // namespace lowcal
