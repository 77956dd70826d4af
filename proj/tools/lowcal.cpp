#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lowcal/batching.hpp"
#include "lowcal/gradcheck.hpp"
#include "lowcal/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lowcal;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("LOWCAL_SEED");
  if (!v || !*v) return std::nullopt;
  return std::strtoull(v, nullptr, 10);
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

KvFile load_kv_or_default(const std::string& path) {
  if (path.empty()) return KvFile{};
  return KvFile::parse_file(path);
}

struct SynthArgs {
  std::string scene_config;
  std::string out_dir;
  int count = 0;
};

int run_synth(const SynthArgs& args, std::optional<std::uint64_t> seed) {
  SceneConfig scene = scene_config_from_kv(load_kv_or_default(args.scene_config));
  if (seed) scene.seed = *seed;
  fs::create_directories(args.out_dir);

  Manifest manifest;
  manifest.camera = scene.camera;
  for (int i = 0; i < args.count; ++i) {
    SceneConfig cfg = scene;
    cfg.seed = scene.seed + static_cast<std::uint64_t>(i);
    const SceneSample sample = generate_scene(cfg);
    char cloud_name[32], image_name[32];
    std::snprintf(cloud_name, sizeof cloud_name, "cloud_%04d.bin", i);
    std::snprintf(image_name, sizeof image_name, "image_%04d.ppm", i);
    save_cloud(sample.cloud, (fs::path(args.out_dir) / cloud_name).string());
    save_image(sample.image, (fs::path(args.out_dir) / image_name).string());
    manifest.entries.push_back({cloud_name, image_name, sample.gt_extrinsic});
  }
  const std::string manifest_path = (fs::path(args.out_dir) / "manifest.txt").string();
  write_manifest(manifest, manifest_path);
  std::cout << manifest_path << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string out_ckpt;
};

int run_train(const TrainArgs& args, std::optional<std::uint64_t> seed) {
  const KvFile kv = KvFile::parse_file(args.config);
  SceneConfig scene = scene_config_from_kv(kv);
  TrainConfig train = train_config_from_kv(kv);
  const NetworkConfig net = network_config_from_kv(kv);
  const int n_train = static_cast<int>(kv.get_int("train.scenes", 64));
  const int n_holdout = static_cast<int>(kv.get_int("train.holdout", 0));
  if (seed) {
    train.seed = *seed;
    scene.seed = *seed + 1000003ULL;
  }

  std::vector<SceneSample> scenes, holdout;
  for (int i = 0; i < n_train; ++i) {
    SceneConfig cfg = scene;
    cfg.seed = scene.seed + static_cast<std::uint64_t>(i);
    scenes.push_back(generate_scene(cfg));
  }
  for (int i = 0; i < n_holdout; ++i) {
    SceneConfig cfg = scene;
    cfg.seed = scene.seed + 500000ULL + static_cast<std::uint64_t>(i);
    holdout.push_back(generate_scene(cfg));
  }

  const int steps_per_epoch = std::max(1, n_train / train.batch_size);
  StepHookFn hook;
  if (!holdout.empty()) {
    hook = [&](int step, const CalibrationModel& model) {
      if (step % steps_per_epoch != 0) return;
      Rng eval_rng(train.seed + 0xE7A1ULL);
      const auto cases = make_eval_cases(holdout, train.range, eval_rng);
      const CalibrationMetrics m = evaluate_chain({model}, cases, scene.camera);
      std::cerr << "# step " << step << " holdout avg_t_cm=" << m.avg_translation_cm
                << " avg_r_deg=" << m.avg_rotation_deg << "\n";
    };
  }
  const CalibrationModel model = train_single_stage(
      train, net, scenes, scene.camera,
      [](int epoch, int step, double loss) {
        std::cout << epoch << "," << step << "," << format_number(loss) << "\n";
      },
      hook);
  save_model(model, train.range, args.out_ckpt);
  std::cerr << "# checkpoint written to " << args.out_ckpt << "\n";
  return 0;
}

std::vector<std::string> split_chain(const std::vector<std::string>& chain_args) {
  std::vector<std::string> paths;
  for (const std::string& arg : chain_args) {
    std::size_t pos = 0;
    while (pos <= arg.size()) {
      const auto comma = arg.find(',', pos);
      const std::string part = arg.substr(pos, comma - pos);
      if (!part.empty()) paths.push_back(part);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  return paths;
}

struct CalibrateArgs {
  std::vector<std::string> chain;
  std::string cloud_path;
  std::string image_path;
  std::string camera_config;
};

int run_calibrate(const CalibrateArgs& args) {
  const auto models = load_chain(split_chain(args.chain));
  const CameraIntrinsics camera =
      scene_config_from_kv(load_kv_or_default(args.camera_config)).camera;
  const PointCloud cloud = load_cloud(args.cloud_path);
  const Tensor image = load_image(args.image_path);
  const RigidTransform c = calibrate_multistage(models, image, cloud, camera);
  std::cout << format_number(c.rotation.w()) << " " << format_number(c.rotation.x()) << " "
            << format_number(c.rotation.y()) << " " << format_number(c.rotation.z()) << " "
            << format_number(c.translation.x()) << " " << format_number(c.translation.y()) << " "
            << format_number(c.translation.z()) << "\n";
  return 0;
}

struct EvalArgs {
  std::vector<std::string> chain;
  std::string manifest;
  double range_cm = 10.0;
  double range_deg = 1.0;
  std::string out_csv;
};

int run_eval(const EvalArgs& args, std::optional<std::uint64_t> seed) {
  const auto models = load_chain(split_chain(args.chain));
  CameraIntrinsics camera;
  const auto scenes = load_manifest_scenes(args.manifest, &camera);
  const MiscalibRange range{args.range_cm, args.range_deg};
  Rng rng(seed.value_or(0));
  const auto cases = make_eval_cases(scenes, range, rng);
  const CalibrationMetrics m = evaluate_chain(models, cases, camera);
  char param[64];
  std::snprintf(param, sizeof param, "%gcm%gdeg", args.range_cm, args.range_deg);
  const std::vector<CsvRow> rows = {{"eval", param, m}};
  write_csv(rows, std::cout);
  if (!args.out_csv.empty()) {
    std::ofstream out(args.out_csv, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + args.out_csv);
    write_csv(rows, out);
  }
  return 0;
}

struct ExperimentArgs {
  std::string kind;
  std::string config;
  std::string out_csv;
};

int run_experiment_cmd(const ExperimentArgs& args, std::optional<std::uint64_t> seed) {
  const KvFile kv = KvFile::parse_file(args.config);
  ExperimentConfig cfg = experiment_config_from_kv(kv);
  if (seed) {
    cfg.train.seed = *seed;
    cfg.scene.seed = *seed + 1000003ULL;
  }
  const auto rows = run_experiment(experiment_kind_from_string(args.kind), cfg);
  write_csv(rows, std::cout);
  const std::string out_path =
      !args.out_csv.empty() ? args.out_csv : kv.get_string("experiment.out", "");
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + out_path);
    write_csv(rows, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lowcal: targetless LiDAR-camera calibration on low-resolution scans"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed_flag;
  app.add_option("--seed", seed_flag, "seed override (falls back to LOWCAL_SEED)");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic scene triples");
  synth_cmd->add_option("--scene", synth.scene_config, "scene config file");
  synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
  synth_cmd->add_option("--count", synth.count, "number of triples")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a single-stage model");
  train_cmd->add_option("--config", train.config, "training config file")->required();
  train_cmd->add_option("--out", train.out_ckpt, "checkpoint output path")->required();

  CalibrateArgs calibrate;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "predict a correction for one pair");
  calibrate_cmd->add_option("--chain", calibrate.chain, "checkpoints, widest range first")
      ->required();
  calibrate_cmd->add_option("--cloud", calibrate.cloud_path, "binary cloud file")->required();
  calibrate_cmd->add_option("--image", calibrate.image_path, "P6 PPM image")->required();
  calibrate_cmd->add_option("--camera", calibrate.camera_config, "camera config file");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a chain on a dataset manifest");
  eval_cmd->add_option("--chain", eval.chain, "checkpoints, widest range first")->required();
  eval_cmd->add_option("--data", eval.manifest, "dataset manifest")->required();
  eval_cmd->add_option("--range-cm", eval.range_cm, "miscalibration range, cm");
  eval_cmd->add_option("--range-deg", eval.range_deg, "miscalibration range, degrees");
  eval_cmd->add_option("--out", eval.out_csv, "also write the CSV here");

  ExperimentArgs experiment;
  auto* experiment_cmd = app.add_subcommand("experiment", "run a study grid");
  experiment_cmd
      ->add_option("--kind", experiment.kind,
                   "degradation | interp_compare | scl_ablation | subsample")
      ->required();
  experiment_cmd->add_option("--config", experiment.config, "experiment config file")->required();
  experiment_cmd->add_option("--out", experiment.out_csv, "also write the CSV here");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  const std::optional<std::uint64_t> seed = seed_flag ? seed_flag : env_seed();
  try {
    if (synth_cmd->parsed()) return run_synth(synth, seed);
    if (train_cmd->parsed()) return run_train(train, seed);
    if (calibrate_cmd->parsed()) return run_calibrate(calibrate);
    if (eval_cmd->parsed()) return run_eval(eval, seed);
    if (experiment_cmd->parsed()) return run_experiment_cmd(experiment, seed);
    if (gradcheck_cmd->parsed()) return run_gradient_check_suite(std::cout) ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
