#include "lowcal/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace lowcal {

DepthEncoding depth_encoding_from_string(const std::string& name) {
  if (name == "linear") return DepthEncoding::Linear;
  if (name == "inverse") return DepthEncoding::Inverse;
  throw std::invalid_argument("unknown depth encoding: " + name);
}

std::string to_string(DepthEncoding e) {
  return e == DepthEncoding::Linear ? "linear" : "inverse";
}

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (cfg.scl_enabled && cfg.batch_size < 2) {
    throw std::invalid_argument("TrainConfig: scl_enabled requires batch_size >= 2");
  }
  if (cfg.learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (cfg.range.max_translation_cm <= 0.0 || cfg.range.max_rotation_deg <= 0.0) {
    throw std::invalid_argument("TrainConfig: miscalibration range must be positive");
  }
  if (cfg.cloud_loss_points < 1) {
    throw std::invalid_argument("TrainConfig: cloud_loss_points must be >= 1");
  }
  if (cfg.depth_scale <= 0.0) throw std::invalid_argument("TrainConfig: depth_scale must be > 0");
  if (cfg.scl.temperature <= 0.0) throw std::invalid_argument("TrainConfig: temperature must be > 0");
  validate(cfg.weights);
}

void validate(const StageChain& chain) {
  if (chain.stages.empty()) throw std::invalid_argument("StageChain: must hold at least one stage");
  for (std::size_t i = 1; i < chain.stages.size(); ++i) {
    const auto& prev = chain.stages[i - 1].range;
    const auto& cur = chain.stages[i].range;
    if (!(cur.max_translation_cm < prev.max_translation_cm &&
          cur.max_rotation_deg < prev.max_rotation_deg)) {
      throw std::invalid_argument("StageChain: ranges must strictly decrease in both components");
    }
  }
}

CalibrationMetrics make_metrics(double x_cm, double y_cm, double z_cm, double roll_deg,
                                double pitch_deg, double yaw_deg) {
  CalibrationMetrics m;
  m.x_cm = x_cm;
  m.y_cm = y_cm;
  m.z_cm = z_cm;
  m.roll_deg = roll_deg;
  m.pitch_deg = pitch_deg;
  m.yaw_deg = yaw_deg;
  m.avg_translation_cm = (x_cm + y_cm + z_cm) / 3.0;
  m.avg_rotation_deg = (roll_deg + pitch_deg + yaw_deg) / 3.0;
  return m;
}

AdamOptimizer::AdamOptimizer(ModelParams& params, double lr, double beta1, double beta2,
                             double epsilon)
    : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  m_.reserve(params.items.size());
  v_.reserve(params.items.size());
  for (const auto& [name, t] : params.items) {
    m_.push_back(Eigen::VectorXd::Zero(t.size()));
    v_.push_back(Eigen::VectorXd::Zero(t.size()));
  }
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.items.size(); ++i) {
    Tensor& p = params_.items[i].second;
    const Eigen::VectorXd& g = p.grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    p.values().array() -=
        lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + epsilon_);
  }
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct EntryInputs {
  PointCloud cloud_cam;
  DepthImage filled;
  RigidTransform target;
};

EntryInputs prepare_entry(const SceneSample& scene, const RigidTransform& mis,
                          const CameraIntrinsics& camera, InterpolationMethod interp) {
  EntryInputs e;
  e.cloud_cam = apply_miscalibration(scene.cloud, scene.gt_extrinsic, mis);
  const DepthImage raster = project_cloud(e.cloud_cam, camera, RigidTransform::identity());
  e.filled = interpolate_for_network(raster, interp);
  e.target = transform_inverse(mis);
  return e;
}

double encode_depth(double meters, double depth_scale, DepthEncoding encoding) {
  if (meters <= 0.0) return 0.0;
  return encoding == DepthEncoding::Linear ? depth_scale * meters : depth_scale / meters;
}

void fill_batch_slot(Eigen::VectorXd& rgb, Eigen::VectorXd& depth, int slot, const Tensor& image,
                     const DepthImage& filled, double depth_scale, DepthEncoding encoding, int h,
                     int w) {
  rgb.segment(static_cast<Eigen::Index>(slot) * 3 * h * w, 3 * h * w) = image.values();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      depth[(static_cast<Eigen::Index>(slot) * h + r) * w + c] =
          encode_depth(filled(r, c), depth_scale, encoding);
    }
  }
}

std::string diagnostic_dump(const ModelParams& params, int epoch, int step, double loss) {
  std::ostringstream out;
  out << "training diverged at epoch " << epoch << " step " << step << " loss " << loss << "\n";
  for (const auto& [name, t] : params.items) {
    out << "  " << name << " |max|=" << t.values().cwiseAbs().maxCoeff() << "\n";
  }
  return out.str();
}

}  // namespace

CalibrationModel train_single_stage(const TrainConfig& cfg, const NetworkConfig& net_cfg,
                                    const std::vector<SceneSample>& scenes,
                                    const CameraIntrinsics& camera, const TrainLogFn& log,
                                    const StepHookFn& hook, const ModelParams* warm_start) {
  validate(cfg);
  const int b = cfg.batch_size;
  if (static_cast<int>(scenes.size()) < b) {
    throw std::invalid_argument("train_single_stage: need at least batch_size scenes");
  }
  const int h = net_cfg.input_height, w = net_cfg.input_width;
  for (const SceneSample& s : scenes) {
    if (s.image.shape() != std::vector<int>{3, h, w}) {
      throw std::invalid_argument("train_single_stage: scene image does not match network input");
    }
  }

  Rng rng(cfg.seed);
  CalibrationModel model;
  model.net = net_cfg;
  model.interp = cfg.interp;
  model.depth_scale = cfg.depth_scale;
  model.depth_encoding = cfg.depth_encoding;
  model.params = warm_start ? clone_params(*warm_start) : init_params(net_cfg, rng);
  AdamOptimizer adam(model.params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                     cfg.adam_epsilon);

  const int steps_per_epoch = static_cast<int>(scenes.size()) / b;
  int global_step = 0;
  std::vector<int> order(scenes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (int s = 0; s < steps_per_epoch; ++s) {
      if (cfg.max_steps >= 0 && global_step >= cfg.max_steps) return model;

      std::vector<TrainingSample> samples;
      std::vector<const SceneSample*> batch_scenes;
      samples.reserve(b);
      for (int k = 0; k < b; ++k) {
        const SceneSample& scene = scenes[static_cast<std::size_t>(order[s * b + k])];
        const RigidTransform mis = sample_miscalibration(cfg.range, rng);
        samples.push_back({scene.image, scene.cloud, mis.rotation, mis.translation});
        batch_scenes.push_back(&scene);
      }

      ComposedBatch batch;
      if (cfg.scl_enabled) {
        batch = compose_scl_batch(samples);
      } else {
        for (int k = 1; k <= b; ++k) {
          batch.entries.push_back({k, k, k});
          batch.rot_labels.push_back(k);
          batch.trans_labels.push_back(k);
        }
      }

      const int e = static_cast<int>(batch.entries.size());
      Eigen::VectorXd rgb(static_cast<Eigen::Index>(e) * 3 * h * w);
      Eigen::VectorXd depth(static_cast<Eigen::Index>(e) * h * w);
      std::vector<PointCloud> clouds;
      std::vector<RigidTransform> targets;
      std::vector<Quaternion> gt_q;
      std::vector<Vec3> gt_t;
      clouds.reserve(e);
      targets.reserve(e);
      for (int i = 0; i < e; ++i) {
        const ComposedEntry& entry = batch.entries[i];
        RigidTransform mis;
        mis.rotation = samples[entry.rot_index - 1].rot;
        mis.translation = samples[entry.trans_index - 1].trans;
        const EntryInputs inputs =
            prepare_entry(*batch_scenes[entry.image_index - 1], mis, camera, cfg.interp);
        fill_batch_slot(rgb, depth, i, samples[entry.image_index - 1].image, inputs.filled,
                        cfg.depth_scale, cfg.depth_encoding, h, w);
        const int rate =
            std::max(1, static_cast<int>((inputs.cloud_cam.size() + cfg.cloud_loss_points - 1) /
                                         cfg.cloud_loss_points));
        clouds.push_back(subsample_uniform(inputs.cloud_cam, rate));
        targets.push_back(inputs.target);
        gt_q.push_back(inputs.target.rotation);
        gt_t.push_back(inputs.target.translation);
      }

      const Tensor rgb_t = Tensor::from_values({e, 3, h, w}, std::move(rgb));
      const Tensor depth_t = Tensor::from_values({e, 1, h, w}, std::move(depth));
      const NetworkOutput out = forward(model.params, net_cfg, rgb_t, depth_t);

      const Tensor calib = calibration_loss(out.quat, out.trans, gt_q, gt_t, cfg.weights.lambda_q);
      const Tensor cloud = cloud_distance_loss_batch(clouds, out.quat, out.trans, targets);
      Tensor scl_rot = Tensor::scalar(0.0);
      Tensor scl_trans = Tensor::scalar(0.0);
      if (cfg.scl_enabled) {
        scl_rot = supervised_contrastive_loss(out.rot_feature, batch.rot_labels, cfg.scl);
        scl_trans = supervised_contrastive_loss(out.trans_feature, batch.trans_labels, cfg.scl);
      }
      Tensor loss = total_loss(calib, cloud, scl_rot, scl_trans, cfg.weights);

      const double loss_value = loss.scalar_value();
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error(diagnostic_dump(model.params, epoch, global_step, loss_value));
      }
      model.params.zero_grad();
      loss.backward();
      double lr = cfg.learning_rate;
      if (cfg.lr_final > 0.0 && cfg.max_steps > 0) {
        const double frac = static_cast<double>(global_step) / cfg.max_steps;
        lr += frac * (cfg.lr_final - cfg.learning_rate);
      }
      if (cfg.lr_warmup_steps > 0 && global_step < cfg.lr_warmup_steps) {
        lr *= static_cast<double>(global_step + 1) / cfg.lr_warmup_steps;
      }
      adam.set_learning_rate(lr);
      adam.step();
      ++global_step;
      if (log) log(epoch, global_step, loss_value);
      if (hook) hook(global_step, model);
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Inference and evaluation

RigidTransform calibrate_single(const CalibrationModel& model, const Tensor& image,
                                const PointCloud& cloud_camera, const CameraIntrinsics& k) {
  const int h = model.net.input_height, w = model.net.input_width;
  if (!image.defined() || image.shape() != std::vector<int>{3, h, w}) {
    throw std::invalid_argument("calibrate_single: image does not match the model input size");
  }
  const DepthImage raster = project_cloud(cloud_camera, k, RigidTransform::identity());
  const DepthImage filled = interpolate_for_network(raster, model.interp);
  Eigen::VectorXd rgb = image.values();
  Eigen::VectorXd depth(static_cast<Eigen::Index>(h) * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      depth[static_cast<Eigen::Index>(r) * w + c] =
          encode_depth(filled(r, c), model.depth_scale, model.depth_encoding);
    }
  }
  const NetworkOutput out = forward(model.params, model.net, Tensor::from_values({1, 3, h, w}, std::move(rgb)),
                                    Tensor::from_values({1, 1, h, w}, std::move(depth)));
  RigidTransform correction;
  correction.rotation = quat_normalize(Quaternion(out.quat.values()[0], out.quat.values()[1],
                                                  out.quat.values()[2], out.quat.values()[3]));
  correction.translation =
      Vec3(out.trans.values()[0], out.trans.values()[1], out.trans.values()[2]);
  return correction;
}

RigidTransform calibrate_multistage(const std::vector<CalibrationModel>& chain,
                                    const Tensor& image, const PointCloud& cloud_camera,
                                    const CameraIntrinsics& k) {
  if (chain.empty()) throw std::invalid_argument("calibrate_multistage: empty chain");
  RigidTransform accumulated = calibrate_single(chain[0], image, cloud_camera, k);
  for (std::size_t s = 1; s < chain.size(); ++s) {
    const PointCloud refined = transform_apply(accumulated, cloud_camera);
    const RigidTransform correction = calibrate_single(chain[s], image, refined, k);
    accumulated = transform_compose(correction, accumulated);
  }
  return accumulated;
}

std::vector<EvalCase> make_eval_cases(const std::vector<SceneSample>& scenes,
                                      const MiscalibRange& range, Rng& rng) {
  std::vector<EvalCase> cases;
  cases.reserve(scenes.size());
  for (const SceneSample& s : scenes) {
    cases.push_back({s, sample_miscalibration(range, rng)});
  }
  return cases;
}

CalibrationMetrics evaluate(const CalibratorFn& calibrator, const std::vector<EvalCase>& cases) {
  if (cases.empty()) throw std::invalid_argument("evaluate: empty test set");
  double sx = 0, sy = 0, sz = 0, sroll = 0, spitch = 0, syaw = 0;
  for (const EvalCase& c : cases) {
    const PointCloud cloud_cam =
        apply_miscalibration(c.scene.cloud, c.scene.gt_extrinsic, c.miscalibration);
    const RigidTransform pred = calibrator(c.scene.image, cloud_cam);
    const RigidTransform target = transform_inverse(c.miscalibration);
    sx += std::abs(pred.translation.x() - target.translation.x()) * 100.0;
    sy += std::abs(pred.translation.y() - target.translation.y()) * 100.0;
    sz += std::abs(pred.translation.z() - target.translation.z()) * 100.0;
    const Quaternion residual =
        quat_normalize(pred.rotation.conjugate() * target.rotation);
    const EulerAngles e = quat_to_euler(residual);
    sroll += std::abs(e.roll);
    spitch += std::abs(e.pitch);
    syaw += std::abs(e.yaw);
  }
  const double n = static_cast<double>(cases.size());
  return make_metrics(sx / n, sy / n, sz / n, sroll / n, spitch / n, syaw / n);
}

CalibrationMetrics evaluate_chain(const std::vector<CalibrationModel>& chain,
                                  const std::vector<EvalCase>& cases, const CameraIntrinsics& k) {
  return evaluate(
      [&](const Tensor& image, const PointCloud& cloud) {
        return calibrate_multistage(chain, image, cloud, k);
      },
      cases);
}

// ---------------------------------------------------------------------------
// Model IO

namespace {

std::string format17(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

void save_model(const CalibrationModel& model, const MiscalibRange& trained_range,
                const std::string& path) {
  auto lines = network_config_lines(model.net);
  lines.emplace_back("interp", to_string(model.interp));
  lines.emplace_back("depth_scale", format17(model.depth_scale));
  lines.emplace_back("depth_encoding", to_string(model.depth_encoding));
  lines.emplace_back("range_cm", format17(trained_range.max_translation_cm));
  lines.emplace_back("range_deg", format17(trained_range.max_rotation_deg));
  save_checkpoint(path, lines, model.params);
}

CalibrationModel load_model(const std::string& path, MiscalibRange* trained_range) {
  const Checkpoint ckpt = load_checkpoint(path);
  CalibrationModel model;
  model.net = network_config_from_lines(ckpt.config_lines);
  MiscalibRange range;
  for (const auto& [key, value] : ckpt.config_lines) {
    if (key == "interp") model.interp = interpolation_from_string(value);
    else if (key == "depth_scale") model.depth_scale = std::stod(value);
    else if (key == "depth_encoding") model.depth_encoding = depth_encoding_from_string(value);
    else if (key == "range_cm") range.max_translation_cm = std::stod(value);
    else if (key == "range_deg") range.max_rotation_deg = std::stod(value);
  }
  model.params = ckpt.params;
  if (trained_range) *trained_range = range;
  return model;
}

std::vector<CalibrationModel> load_chain(const std::vector<std::string>& checkpoint_paths,
                                         StageChain* chain_out) {
  if (checkpoint_paths.empty()) throw std::invalid_argument("load_chain: no checkpoints given");
  std::vector<CalibrationModel> models;
  StageChain chain;
  for (const std::string& path : checkpoint_paths) {
    MiscalibRange range;
    models.push_back(load_model(path, &range));
    chain.stages.push_back({range, path});
  }
  validate(chain);
  if (chain_out) *chain_out = chain;
  return models;
}

// ---------------------------------------------------------------------------
// Experiments

ExperimentKind experiment_kind_from_string(const std::string& name) {
  if (name == "degradation") return ExperimentKind::Degradation;
  if (name == "interp_compare") return ExperimentKind::InterpCompare;
  if (name == "scl_ablation") return ExperimentKind::SclAblation;
  if (name == "subsample") return ExperimentKind::Subsample;
  throw std::invalid_argument("unknown experiment kind: " + name);
}

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Degradation:
      return "degradation";
    case ExperimentKind::InterpCompare:
      return "interp_compare";
    case ExperimentKind::SclAblation:
      return "scl_ablation";
    case ExperimentKind::Subsample:
      return "subsample";
  }
  return "unknown";
}

TrainConfig train_config_from_kv(const KvFile& kv) {
  TrainConfig cfg;
  cfg.range.max_translation_cm = kv.get_double("train.range_cm", cfg.range.max_translation_cm);
  cfg.range.max_rotation_deg = kv.get_double("train.range_deg", cfg.range.max_rotation_deg);
  cfg.epochs = static_cast<int>(kv.get_int("train.epochs", cfg.epochs));
  cfg.max_steps = static_cast<int>(kv.get_int("train.steps", cfg.max_steps));
  cfg.batch_size = static_cast<int>(kv.get_int("train.batch_size", cfg.batch_size));
  cfg.learning_rate = kv.get_double("train.learning_rate", cfg.learning_rate);
  cfg.lr_final = kv.get_double("train.lr_final", cfg.lr_final);
  cfg.lr_warmup_steps = static_cast<int>(kv.get_int("train.lr_warmup_steps", cfg.lr_warmup_steps));
  cfg.adam_beta1 = kv.get_double("train.adam_beta1", cfg.adam_beta1);
  cfg.adam_beta2 = kv.get_double("train.adam_beta2", cfg.adam_beta2);
  cfg.adam_epsilon = kv.get_double("train.adam_epsilon", cfg.adam_epsilon);
  cfg.interp = interpolation_from_string(kv.get_string("train.interp", to_string(cfg.interp)));
  cfg.scl_enabled = kv.get_bool("train.scl", cfg.scl_enabled);
  cfg.weights.w_calib = kv.get_double("train.w_calib", cfg.weights.w_calib);
  cfg.weights.w_cloud = kv.get_double("train.w_cloud", cfg.weights.w_cloud);
  cfg.weights.w_scl = kv.get_double("train.w_scl", cfg.weights.w_scl);
  cfg.weights.lambda_q = kv.get_double("train.lambda_q", cfg.weights.lambda_q);
  cfg.scl.temperature = kv.get_double("train.tau", cfg.scl.temperature);
  cfg.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", static_cast<long long>(cfg.seed)));
  cfg.cloud_loss_points =
      static_cast<int>(kv.get_int("train.cloud_loss_points", cfg.cloud_loss_points));
  cfg.depth_scale = kv.get_double("train.depth_scale", cfg.depth_scale);
  cfg.depth_encoding =
      depth_encoding_from_string(kv.get_string("train.depth_encoding", to_string(cfg.depth_encoding)));
  return cfg;
}

NetworkConfig network_config_from_kv(const KvFile& kv) {
  NetworkConfig cfg;
  cfg.input_height = static_cast<int>(kv.get_int("net.input_height", cfg.input_height));
  cfg.input_width = static_cast<int>(kv.get_int("net.input_width", cfg.input_width));
  cfg.branch_channels = kv.get_ints("net.branch_channels", cfg.branch_channels);
  cfg.branch_strides = kv.get_ints("net.branch_strides", cfg.branch_strides);
  cfg.kernel_size = static_cast<int>(kv.get_int("net.kernel_size", cfg.kernel_size));
  cfg.max_displacement = static_cast<int>(kv.get_int("net.max_displacement", cfg.max_displacement));
  cfg.post_channels = static_cast<int>(kv.get_int("net.post_channels", cfg.post_channels));
  cfg.feature_dim = static_cast<int>(kv.get_int("net.feature_dim", cfg.feature_dim));
  return cfg;
}

ExperimentConfig experiment_config_from_kv(const KvFile& kv) {
  ExperimentConfig cfg;
  cfg.scene = scene_config_from_kv(kv);
  cfg.net = network_config_from_kv(kv);
  cfg.train = train_config_from_kv(kv);
  cfg.train_scenes = static_cast<int>(kv.get_int("experiment.train_scenes", cfg.train_scenes));
  cfg.eval_scenes = static_cast<int>(kv.get_int("experiment.eval_scenes", cfg.eval_scenes));
  return cfg;
}

namespace {

std::vector<SceneSample> generate_scene_set(SceneConfig cfg, std::uint64_t seed_base, int count) {
  std::vector<SceneSample> scenes;
  scenes.reserve(count);
  for (int i = 0; i < count; ++i) {
    cfg.seed = seed_base + static_cast<std::uint64_t>(i);
    scenes.push_back(generate_scene(cfg));
  }
  return scenes;
}

CsvRow run_cell(const ExperimentConfig& cfg, const SceneConfig& scene_cfg,
                const TrainConfig& tcfg, const std::string& kind, const std::string& param,
                int eval_subsample_rate = 1) {
  const auto train_set = generate_scene_set(scene_cfg, scene_cfg.seed, cfg.train_scenes);
  auto eval_set = generate_scene_set(scene_cfg, scene_cfg.seed + 100000, cfg.eval_scenes);
  if (eval_subsample_rate > 1) {
    for (SceneSample& s : eval_set) s.cloud = subsample_uniform(s.cloud, eval_subsample_rate);
  }
  const CalibrationModel model =
      train_single_stage(tcfg, cfg.net, train_set, scene_cfg.camera);
  Rng eval_rng(tcfg.seed + 0x5eedULL);
  const auto cases = make_eval_cases(eval_set, tcfg.range, eval_rng);
  return {kind, param, evaluate_chain({model}, cases, scene_cfg.camera)};
}

}  // namespace

std::vector<CsvRow> run_experiment(ExperimentKind kind, const ExperimentConfig& cfg) {
  std::vector<CsvRow> rows;
  switch (kind) {
    case ExperimentKind::Degradation: {
      for (int channels : {64, 32}) {
        SceneConfig sc = cfg.scene;
        sc.channels = channels;
        rows.push_back(run_cell(cfg, sc, cfg.train, "degradation", std::to_string(channels)));
      }
      break;
    }
    case ExperimentKind::InterpCompare: {
      for (InterpolationMethod m :
           {InterpolationMethod::None, InterpolationMethod::Linear, InterpolationMethod::AvgPool,
            InterpolationMethod::MaxPool, InterpolationMethod::NearestNeighbour}) {
        TrainConfig tc = cfg.train;
        tc.interp = m;
        rows.push_back(run_cell(cfg, cfg.scene, tc, "interp_compare", to_string(m)));
      }
      break;
    }
    case ExperimentKind::SclAblation: {
      for (bool scl : {false, true}) {
        TrainConfig tc = cfg.train;
        tc.scl_enabled = scl;
        rows.push_back(run_cell(cfg, cfg.scene, tc, "scl_ablation", scl ? "mpscl" : "mp"));
      }
      break;
    }
    case ExperimentKind::Subsample: {
      for (int rate : {2, 4, 8}) {
        rows.push_back(
            run_cell(cfg, cfg.scene, cfg.train, "subsample", std::to_string(rate), rate));
      }
      break;
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

constexpr const char* kCsvHeader =
    "kind,param,x_cm,y_cm,z_cm,roll_deg,pitch_deg,yaw_deg,avg_t_cm,avg_r_deg";

std::string format_cell(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

void write_csv(const std::vector<CsvRow>& rows, std::ostream& out) {
  out << kCsvHeader << "\n";
  for (const CsvRow& r : rows) {
    out << r.kind << "," << r.param << "," << format_cell(r.metrics.x_cm) << ","
        << format_cell(r.metrics.y_cm) << "," << format_cell(r.metrics.z_cm) << ","
        << format_cell(r.metrics.roll_deg) << "," << format_cell(r.metrics.pitch_deg) << ","
        << format_cell(r.metrics.yaw_deg) << "," << format_cell(r.metrics.avg_translation_cm)
        << "," << format_cell(r.metrics.avg_rotation_deg) << "\n";
  }
}

std::vector<CsvRow> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw FormatError("csv: missing or unexpected header");
  }
  std::vector<CsvRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
      const auto comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (cells.size() != 10) throw FormatError("csv: expected 10 cells per row");
    CsvRow r;
    r.kind = cells[0];
    r.param = cells[1];
    // Averages are read back, not recomputed, so a round trip is bit-exact.
    r.metrics.x_cm = std::stod(cells[2]);
    r.metrics.y_cm = std::stod(cells[3]);
    r.metrics.z_cm = std::stod(cells[4]);
    r.metrics.roll_deg = std::stod(cells[5]);
    r.metrics.pitch_deg = std::stod(cells[6]);
    r.metrics.yaw_deg = std::stod(cells[7]);
    r.metrics.avg_translation_cm = std::stod(cells[8]);
    r.metrics.avg_rotation_deg = std::stod(cells[9]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace lowcal
