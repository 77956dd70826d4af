#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lowcal/batching.hpp"
#include "lowcal/losses.hpp"
#include "lowcal/network.hpp"

namespace lowcal {

/// How depth values enter the network. Linear multiplies meters by
/// depth_scale; Inverse feeds depth_scale/z (disparity-like), which boosts
/// the near-field depth-shift signal.
enum class DepthEncoding { Linear, Inverse };

DepthEncoding depth_encoding_from_string(const std::string& name);
std::string to_string(DepthEncoding e);

struct TrainConfig {
  MiscalibRange range;
  int epochs = 1;
  int max_steps = -1;  // cap on total optimizer steps; negative runs all epochs
  int batch_size = 4;
  double learning_rate = 1e-3;
  // Linear per-step decay toward lr_final; non-positive keeps the rate
  // constant. Only meaningful when max_steps caps the run.
  double lr_final = 0.0;
  int lr_warmup_steps = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  InterpolationMethod interp = InterpolationMethod::MaxPool;
  bool scl_enabled = false;
  LossWeights weights;
  SclConfig scl;
  std::uint64_t seed = 0;
  int cloud_loss_points = 128;  // per-entry cloud subsample for the distance term
  double depth_scale = 0.1;     // meters to network input units
  DepthEncoding depth_encoding = DepthEncoding::Linear;
};

void validate(const TrainConfig& cfg);

/// A trained (or initialized) calibrator: network weights plus the input
/// conventions they were trained with.
struct CalibrationModel {
  NetworkConfig net;
  InterpolationMethod interp = InterpolationMethod::MaxPool;
  double depth_scale = 0.1;
  DepthEncoding depth_encoding = DepthEncoding::Linear;
  ModelParams params;
};

/// Cascade description: stages ordered from the widest miscalibration range
/// to the narrowest, strictly decreasing in both components.
struct StageChain {
  struct Stage {
    MiscalibRange range;
    std::string checkpoint_path;
  };
  std::vector<Stage> stages;
};

void validate(const StageChain& chain);

struct CalibrationMetrics {
  double x_cm = 0.0;
  double y_cm = 0.0;
  double z_cm = 0.0;
  double roll_deg = 0.0;
  double pitch_deg = 0.0;
  double yaw_deg = 0.0;
  double avg_translation_cm = 0.0;
  double avg_rotation_deg = 0.0;
};

/// Per-axis values in, averages computed exactly as their arithmetic mean.
CalibrationMetrics make_metrics(double x_cm, double y_cm, double z_cm, double roll_deg,
                                double pitch_deg, double yaw_deg);

struct EvalCase {
  SceneSample scene;
  RigidTransform miscalibration;
};

using TrainLogFn = std::function<void(int epoch, int step, double loss)>;
using StepHookFn = std::function<void(int step, const CalibrationModel& model)>;

/// One optimizer stage. Per step: draw a batch, sample miscalibrations,
/// project and densify depth, optionally expand to the composed batch, run
/// forward/backward, apply Adam. Deterministic per seed. Non-finite loss
/// aborts with a diagnostic dump in the exception message.
CalibrationModel train_single_stage(const TrainConfig& cfg, const NetworkConfig& net_cfg,
                                    const std::vector<SceneSample>& scenes,
                                    const CameraIntrinsics& camera, const TrainLogFn& log = {},
                                    const StepHookFn& hook = {},
                                    const ModelParams* warm_start = nullptr);

/// One forward pass on a cloud already expressed in the (miscalibrated)
/// camera frame; returns the predicted correction.
RigidTransform calibrate_single(const CalibrationModel& model, const Tensor& image,
                                const PointCloud& cloud_camera, const CameraIntrinsics& k);

/// Applies stages in order, re-projecting the cloud under the accumulated
/// correction before each stage. A single-stage chain is bit-identical to
/// calibrate_single.
RigidTransform calibrate_multistage(const std::vector<CalibrationModel>& chain,
                                    const Tensor& image, const PointCloud& cloud_camera,
                                    const CameraIntrinsics& k);

std::vector<EvalCase> make_eval_cases(const std::vector<SceneSample>& scenes,
                                      const MiscalibRange& range, Rng& rng);

using CalibratorFn =
    std::function<RigidTransform(const Tensor& image, const PointCloud& cloud_camera)>;

/// Mean absolute per-axis errors of the predicted correction against the
/// inverse miscalibration; rotation errors from the ZYX Euler decomposition
/// of the residual pred^-1 * true.
CalibrationMetrics evaluate(const CalibratorFn& calibrator, const std::vector<EvalCase>& cases);
CalibrationMetrics evaluate_chain(const std::vector<CalibrationModel>& chain,
                                  const std::vector<EvalCase>& cases, const CameraIntrinsics& k);

/// Model checkpoints carry the trained range so chains can be validated.
void save_model(const CalibrationModel& model, const MiscalibRange& trained_range,
                const std::string& path);
CalibrationModel load_model(const std::string& path, MiscalibRange* trained_range = nullptr);
std::vector<CalibrationModel> load_chain(const std::vector<std::string>& checkpoint_paths,
                                         StageChain* chain_out = nullptr);

enum class ExperimentKind { Degradation, InterpCompare, SclAblation, Subsample };

ExperimentKind experiment_kind_from_string(const std::string& name);
std::string to_string(ExperimentKind kind);

struct ExperimentConfig {
  SceneConfig scene;
  NetworkConfig net;
  TrainConfig train;
  int train_scenes = 48;
  int eval_scenes = 12;
};

ExperimentConfig experiment_config_from_kv(const KvFile& kv);
TrainConfig train_config_from_kv(const KvFile& kv);
NetworkConfig network_config_from_kv(const KvFile& kv);

struct CsvRow {
  std::string kind;
  std::string param;
  CalibrationMetrics metrics;
};

/// Desk-scale grid for one of the study kinds; one row per cell.
std::vector<CsvRow> run_experiment(ExperimentKind kind, const ExperimentConfig& cfg);

/// Header `kind,param,x_cm,y_cm,z_cm,roll_deg,pitch_deg,yaw_deg,avg_t_cm,avg_r_deg`,
/// one data row per cell, '.' decimal separator, LF line endings.
void write_csv(const std::vector<CsvRow>& rows, std::ostream& out);
std::vector<CsvRow> read_csv(std::istream& in);

/// Adam over the parameter list; state follows the parameter order.
class AdamOptimizer {
 public:
  AdamOptimizer(ModelParams& params, double lr, double beta1, double beta2, double epsilon);
  void step();
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  ModelParams& params_;
  double lr_, beta1_, beta2_, epsilon_;
  long t_ = 0;
  std::vector<Eigen::VectorXd> m_, v_;
};

}  // namespace lowcal
