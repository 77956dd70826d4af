#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lowcal/config.hpp"
#include "lowcal/depth_image.hpp"
#include "lowcal/geometry.hpp"
#include "lowcal/rng.hpp"
#include "lowcal/tensor.hpp"

namespace lowcal {

/// Maximum perturbation injected onto the ground-truth extrinsic.
struct MiscalibRange {
  double max_translation_cm = 10.0;
  double max_rotation_deg = 1.0;
};

/// One training tuple: an image/cloud pair with the rotation and translation
/// parts of the miscalibration drawn for it.
struct TrainingSample {
  Tensor image;      // [3, h, w], values in [0, 1]
  PointCloud cloud;  // sensor frame
  Quaternion rot = Quaternion::Identity();
  Vec3 trans = Vec3::Zero();
};

/// Entry (k, i, j): pair k rendered under rotation i and translation j.
/// Indices and labels are 1-based; labels depend only on (i, j).
struct ComposedEntry {
  int image_index;
  int rot_index;
  int trans_index;
};

struct ComposedBatch {
  std::vector<ComposedEntry> entries;  // b^3, image-major then rotation then translation
  std::vector<int> rot_labels;
  std::vector<int> trans_labels;
};

/// A generated scene: aligned image/cloud pair plus the ground-truth
/// LiDAR-to-camera extrinsic they were rendered under.
struct SceneSample {
  Tensor image;
  PointCloud cloud;
  RigidTransform gt_extrinsic;
};

RigidTransform default_lidar_camera_mount();

/// Synthetic LiDAR/camera rig over a ground plane and random boxes. The
/// generator is deterministic per seed; box placement draws happen before
/// ray casting so channel count does not disturb the scene.
struct SceneConfig {
  int channels = 8;
  int horizontal_rays = 64;
  double vertical_fov_deg = 30.0;
  double vertical_center_deg = -10.0;
  int box_count = 6;
  double sensor_height_m = 1.2;
  double max_range_m = 30.0;
  std::uint64_t seed = 1;
  CameraIntrinsics camera{40.0, 40.0, 16.0, 16.0, 32, 32};
  RigidTransform lidar_to_camera = default_lidar_camera_mount();
};

/// Per-axis uniform translation in [-max_t, max_t] (meters after conversion)
/// and rotation from per-axis uniform Euler angles in [-max_r, max_r].
RigidTransform sample_miscalibration(const MiscalibRange& range, Rng& rng);

/// All (image, rotation, translation) combinations of a batch, keeping each
/// image paired with its cloud. Output order is image-major, then rotation,
/// then translation.
ComposedBatch compose_scl_batch(const std::vector<TrainingSample>& samples);
ComposedBatch compose_scl_batch(std::size_t batch_size);

/// Cloud expressed under compose(miscalibration, gt_extrinsic); the
/// regression target that undoes it is inverse(miscalibration).
PointCloud apply_miscalibration(const PointCloud& cloud, const RigidTransform& gt_extrinsic,
                                const RigidTransform& miscalibration);

SceneSample generate_scene(const SceneConfig& cfg);

/// Binary scan layout: packed little-endian float32 (x, y, z, intensity)
/// quadruples. A file length not divisible by 16 bytes is a format error.
PointCloud load_cloud(const std::string& path);
void save_cloud(const PointCloud& pc, const std::string& path);

/// Binary PPM (P6, maxval 255) mapped to a [3, h, w] tensor in [0, 1].
Tensor load_image(const std::string& path);
void save_image(const Tensor& image, const std::string& path);

SceneConfig scene_config_from_kv(const KvFile& kv);

/// Dataset manifest in the flat key-value format: a `camera` line, `count`,
/// and `entry_<i> = <cloud> <image> qw qx qy qz tx ty tz` lines with paths
/// relative to the manifest.
struct ManifestEntry {
  std::string cloud_path;
  std::string image_path;
  RigidTransform gt_extrinsic;
};

struct Manifest {
  CameraIntrinsics camera;
  std::vector<ManifestEntry> entries;
};

void write_manifest(const Manifest& m, const std::string& path);
Manifest read_manifest(const std::string& path);

/// Loads every manifest entry, resolving paths against the manifest dir.
std::vector<SceneSample> load_manifest_scenes(const std::string& manifest_path,
                                              CameraIntrinsics* camera_out = nullptr);

}  // namespace lowcal
