#include "lowcal/gradcheck.hpp"

#include "lowcal/detail/tensor_node.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>

#include "lowcal/batching.hpp"
#include "lowcal/losses.hpp"
#include "lowcal/network.hpp"

namespace lowcal {

GradCheckResult gradient_check(const std::function<Tensor()>& forward_loss,
                               const std::vector<Tensor>& leaves, int probes, Rng& rng,
                               double step, double tolerance) {
  GradCheckResult result;
  if (leaves.empty() || probes < 1) return result;

  for (const Tensor& leaf : leaves) leaf.node()->grad.resize(0);
  Tensor loss = forward_loss();
  loss.backward();
  std::vector<Eigen::VectorXd> analytic;
  analytic.reserve(leaves.size());
  for (const Tensor& leaf : leaves) analytic.push_back(leaf.grad());

  for (int p = 0; p < probes; ++p) {
    const auto li =
        static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(leaves.size()) - 1));
    Tensor leaf = leaves[li];
    const auto ci = static_cast<Eigen::Index>(rng.uniform_int(0, leaf.size() - 1));
    const double saved = leaf.values()[ci];
    leaf.values()[ci] = saved + step;
    const double up = forward_loss().scalar_value();
    leaf.values()[ci] = saved - step;
    const double down = forward_loss().scalar_value();
    leaf.values()[ci] = saved;

    const double numeric = (up - down) / (2.0 * step);
    const double exact = analytic[li][ci];
    const double denom = std::max(std::abs(numeric), std::abs(exact));
    const double rel = denom < 1e-7 ? 0.0 : std::abs(numeric - exact) / denom;
    result.max_rel_error = std::max(result.max_rel_error, rel);
    ++result.probes;
    if (rel >= tolerance || !std::isfinite(numeric) || !std::isfinite(exact)) ++result.failures;
  }
  return result;
}

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Eigen::Index n = 1;
  for (int d : shape) n *= d;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

/// Values bounded away from zero, for ops with kinks at the origin.
Tensor random_tensor_offset(std::vector<int> shape, Rng& rng, double min_mag = 0.15) {
  Eigen::Index n = 1;
  for (int d : shape) n *= d;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mag = rng.uniform(min_mag, 1.0);
    v[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

/// Fixed random direction; dotting reductions against it keeps per-element
/// gradients distinct across probes.
Tensor direction(const std::vector<int>& shape, Rng& rng) {
  Eigen::Index n = 1;
  for (int d : shape) n *= d;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(-1.0, 1.0);
  return Tensor::from_values(shape, std::move(v));
}

Tensor proj(const Tensor& x, const Tensor& dir) { return sum(mul(x, dir)); }

Quaternion random_quat(Rng& rng) {
  const Quaternion q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return quat_normalize(q);
}

GradCheckResult full_pipeline_case(Rng& rng) {
  // 2-sample toy batch expanded to 8 composed entries, run through the
  // default network and all three losses. Central differences at step 1e-4
  // measure the kink, not the derivative, whenever a ReLU pre-activation
  // falls inside the probe window; the probe point below (damped weights,
  // positive biases, small inputs) keeps every pre-activation clear of its
  // kink so the check reads gradient correctness alone.
  NetworkConfig ncfg;
  Rng prng(11);
  ModelParams params = init_params(ncfg, prng);
  for (auto& [name, t] : params.items) {
    const bool is_bias = t.shape().size() == 1;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      if (is_bias) {
        t.values()[i] += 0.4 + 0.05 * prng.uniform(-1.0, 1.0);
      } else {
        t.values()[i] = 0.3 * t.values()[i];
      }
    }
  }
  for (const char* name : {"rot_out_w", "trans_out_w"}) {
    Tensor& t = params.at(name);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.values()[i] += 0.05 * prng.uniform(-1.0, 1.0);
  }

  const ComposedBatch batch = compose_scl_batch(2);
  const int e = static_cast<int>(batch.entries.size());
  const int h = ncfg.input_height, w = ncfg.input_width;
  Rng drng(42);
  Eigen::VectorXd rgb(static_cast<Eigen::Index>(e) * 3 * h * w);
  Eigen::VectorXd depth(static_cast<Eigen::Index>(e) * h * w);
  for (Eigen::Index i = 0; i < rgb.size(); ++i) rgb[i] = drng.uniform(0.0, 0.2);
  for (Eigen::Index i = 0; i < depth.size(); ++i) depth[i] = drng.uniform(0.0, 0.2);
  const Tensor rgb_t = Tensor::from_values({e, 3, h, w}, std::move(rgb));
  const Tensor depth_t = Tensor::from_values({e, 1, h, w}, std::move(depth));

  Rng grng(7);
  std::vector<PointCloud> clouds;
  std::vector<RigidTransform> targets;
  std::vector<Quaternion> gt_q;
  std::vector<Vec3> gt_t;
  for (int i = 0; i < e; ++i) {
    PointCloud pc;
    pc.points.resize(3, 6);
    for (int j = 0; j < 6; ++j) {
      pc.points.col(j) = Vec3(grng.uniform(-2, 2), grng.uniform(-2, 2), grng.uniform(1, 5));
    }
    clouds.push_back(pc);
    RigidTransform gt;
    gt.rotation = euler_to_quat(
        {grng.uniform(-2, 2), grng.uniform(-2, 2), grng.uniform(-2, 2)});
    gt.translation =
        Vec3(grng.uniform(-0.2, 0.2), grng.uniform(-0.2, 0.2), grng.uniform(-0.2, 0.2));
    targets.push_back(gt);
    gt_q.push_back(gt.rotation);
    gt_t.push_back(gt.translation);
  }

  LossWeights weights;
  SclConfig scl;
  auto loss_fn = [&]() {
    const NetworkOutput out = forward(params, ncfg, rgb_t, depth_t);
    const Tensor calib = calibration_loss(out.quat, out.trans, gt_q, gt_t, weights.lambda_q);
    const Tensor cloud = cloud_distance_loss_batch(clouds, out.quat, out.trans, targets);
    const Tensor scl_rot = supervised_contrastive_loss(out.rot_feature, batch.rot_labels, scl);
    const Tensor scl_trans =
        supervised_contrastive_loss(out.trans_feature, batch.trans_labels, scl);
    return total_loss(calib, cloud, scl_rot, scl_trans, weights);
  };
  std::vector<Tensor> leaves;
  for (auto& [name, t] : params.items) leaves.push_back(t);
  return gradient_check(loss_fn, leaves, 100, rng);
}

}  // namespace

bool run_gradient_check_suite(std::ostream& out) {
  bool all_ok = true;
  Rng rng(20240817);
  auto report = [&](const std::string& name, const GradCheckResult& r) {
    out << (r.ok() ? "ok   " : "FAIL ") << std::left << std::setw(26) << name
        << " probes=" << r.probes << " failures=" << r.failures
        << " max_rel=" << std::scientific << std::setprecision(2) << r.max_rel_error
        << std::defaultfloat << "\n";
    if (!r.ok()) all_ok = false;
  };

  {
    Tensor a = random_tensor({3, 5}, rng), b = random_tensor({3, 5}, rng);
    const Tensor d = direction({3, 5}, rng);
    report("add", gradient_check([&] { return proj(add(a, b), d); }, {a, b}, 60, rng));
    report("sub", gradient_check([&] { return proj(sub(a, b), d); }, {a, b}, 60, rng));
    report("mul", gradient_check([&] { return proj(mul(a, b), d); }, {a, b}, 60, rng));
    report("scale+add_scalar", gradient_check(
        [&] { return proj(add_scalar(scale(a, 1.7), 0.3), d); }, {a}, 40, rng));
    report("mean", gradient_check([&] { return mean(mul(a, d)); }, {a}, 40, rng));
  }
  {
    Tensor a = random_tensor_offset({4, 5}, rng);
    const Tensor d = direction({4, 5}, rng);
    report("abs", gradient_check([&] { return proj(abs(a), d); }, {a}, 60, rng));
    report("relu", gradient_check([&] { return proj(relu(a), d); }, {a}, 60, rng));
  }
  {
    Tensor a = random_tensor({3, 4}, rng);
    const Tensor d = direction({3, 4}, rng);
    report("exp", gradient_check([&] { return proj(exp(a), d); }, {a}, 60, rng));
  }
  {
    Tensor a = random_tensor({3, 4}, rng, 0.5, 2.0);
    const Tensor d = direction({3, 4}, rng);
    report("log", gradient_check([&] { return proj(log(a), d); }, {a}, 60, rng));
  }
  {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
    const Tensor d = direction({3, 5}, rng);
    report("matmul", gradient_check([&] { return proj(matmul(a, b), d); }, {a, b}, 60, rng));
  }
  {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({5, 4}, rng);
    const Tensor d = direction({3, 5}, rng);
    report("matmul_nt", gradient_check([&] { return proj(matmul_nt(a, b), d); }, {a, b}, 60, rng));
  }
  {
    Tensor a = random_tensor({4, 6}, rng);
    Tensor v = random_tensor({4}, rng);
    const Tensor dr = direction({4}, rng);
    const Tensor dm = direction({4, 6}, rng);
    report("row_sum", gradient_check([&] { return proj(row_sum(a), dr); }, {a}, 40, rng));
    report("sub_colvec",
           gradient_check([&] { return proj(sub_colvec(a, v), dm); }, {a, v}, 60, rng));
  }
  {
    Tensor x = random_tensor({3, 4}, rng), w = random_tensor({5, 4}, rng),
           b = random_tensor({5}, rng);
    const Tensor d = direction({3, 5}, rng);
    report("linear", gradient_check([&] { return proj(linear(x, w, b), d); }, {x, w, b}, 60, rng));
  }
  {
    Tensor a = random_tensor_offset({3, 4}, rng);
    const Tensor d = direction({3, 4}, rng);
    report("l2_normalize_rows",
           gradient_check([&] { return proj(l2_normalize_rows(a), d); }, {a}, 60, rng));
  }
  {
    Tensor x = random_tensor({2, 3, 6, 6}, rng), w = random_tensor({4, 3, 3, 3}, rng),
           b = random_tensor({4}, rng);
    const Tensor d = direction({2, 4, 6, 6}, rng);
    report("conv2d stride1",
           gradient_check([&] { return proj(conv2d(x, w, b, 1), d); }, {x, w, b}, 80, rng));
  }
  {
    Tensor x = random_tensor({2, 3, 7, 7}, rng), w = random_tensor({4, 3, 3, 3}, rng),
           b = random_tensor({4}, rng);
    const Tensor d = direction({2, 4, 4, 4}, rng);
    report("conv2d stride2",
           gradient_check([&] { return proj(conv2d(x, w, b, 2), d); }, {x, w, b}, 80, rng));
  }
  {
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    const Tensor d = direction({2, 3, 3, 3}, rng);
    report("maxpool2d", gradient_check([&] { return proj(maxpool2d(x), d); }, {x}, 60, rng));
  }
  {
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    const Tensor d = direction({2, 3}, rng);
    report("global_avg_pool",
           gradient_check([&] { return proj(global_avg_pool(x), d); }, {x}, 40, rng));
  }
  {
    Tensor a = random_tensor({2, 2, 3, 3}, rng), b = random_tensor({2, 3, 3, 3}, rng);
    const Tensor d = direction({2, 5, 3, 3}, rng);
    report("concat_channels",
           gradient_check([&] { return proj(concat_channels({a, b}), d); }, {a, b}, 60, rng));
  }
  {
    Tensor f1 = random_tensor({2, 3, 6, 6}, rng), f2 = random_tensor({2, 3, 6, 6}, rng);
    const Tensor d = direction({2, 25, 6, 6}, rng);
    report("correlation", gradient_check(
        [&] { return proj(correlation(f1, f2, 2), d); }, {f1, f2}, 80, rng));
  }
  {
    // calibration loss through the quaternion normalization
    Tensor raw_q = random_tensor_offset({3, 4}, rng);
    Tensor pred_t = random_tensor({3, 3}, rng);
    std::vector<Quaternion> gt_q;
    std::vector<Vec3> gt_t;
    Rng grng(rng.next_u64());
    for (int i = 0; i < 3; ++i) {
      gt_q.push_back(random_quat(grng));
      gt_t.push_back(Vec3(grng.uniform(-1, 1), grng.uniform(-1, 1), grng.uniform(-1, 1)));
    }
    report("calibration_loss", gradient_check(
        [&] {
          return calibration_loss(l2_normalize_rows(raw_q), pred_t, gt_q, gt_t, 0.5);
        },
        {raw_q, pred_t}, 60, rng));
  }
  {
    Tensor raw_q = random_tensor_offset({2, 4}, rng);
    Tensor pred_t = random_tensor({2, 3}, rng);
    Rng grng(rng.next_u64());
    std::vector<PointCloud> clouds;
    std::vector<RigidTransform> gts;
    for (int e = 0; e < 2; ++e) {
      PointCloud pc;
      pc.points.resize(3, 5);
      for (int j = 0; j < 5; ++j) {
        pc.points.col(j) =
            Vec3(grng.uniform(-2, 2), grng.uniform(-2, 2), grng.uniform(1, 4));
      }
      clouds.push_back(pc);
      RigidTransform gt;
      gt.rotation = random_quat(grng);
      gt.translation = Vec3(grng.uniform(-1, 1), grng.uniform(-1, 1), grng.uniform(-1, 1));
      gts.push_back(gt);
    }
    report("cloud_distance_loss", gradient_check(
        [&] {
          return cloud_distance_loss_batch(clouds, l2_normalize_rows(raw_q), pred_t, gts);
        },
        {raw_q, pred_t}, 60, rng));
  }
  {
    Tensor features = random_tensor_offset({6, 5}, rng);
    const std::vector<int> labels = {1, 1, 2, 2, 3, 3};
    SclConfig warm{0.5}, cold{0.07};
    report("scl tau=0.5", gradient_check(
        [&] { return supervised_contrastive_loss(features, labels, warm); }, {features}, 60, rng));
    report("scl tau=0.07", gradient_check(
        [&] { return supervised_contrastive_loss(features, labels, cold); }, {features}, 60, rng));
  }
  {
    Tensor calib = Tensor::from_values({1}, Eigen::VectorXd::Constant(1, 0.7), true);
    Tensor cloud = Tensor::from_values({1}, Eigen::VectorXd::Constant(1, 0.4), true);
    Tensor sr = Tensor::from_values({1}, Eigen::VectorXd::Constant(1, 1.2), true);
    Tensor st = Tensor::from_values({1}, Eigen::VectorXd::Constant(1, 0.9), true);
    LossWeights w;
    report("total_loss", gradient_check(
        [&] { return total_loss(calib, cloud, sr, st, w); }, {calib, cloud, sr, st}, 40, rng));
  }

  report("full pipeline (8 entries)", full_pipeline_case(rng));
  return all_ok;
}

}  // namespace lowcal
