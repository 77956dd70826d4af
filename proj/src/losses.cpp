#include "lowcal/losses.hpp"

#include "lowcal/detail/tensor_node.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace lowcal {

void validate(const LossWeights& w) {
  if (w.w_calib < 0.0 || w.w_cloud < 0.0 || w.w_scl < 0.0) {
    throw std::invalid_argument("LossWeights: weights must be non-negative");
  }
  if (w.w_calib == 0.0 && w.w_cloud == 0.0 && w.w_scl == 0.0) {
    throw std::invalid_argument("LossWeights: at least one weight must be positive");
  }
  if (w.lambda_q < 0.0 || w.lambda_q > 1.0) {
    throw std::invalid_argument("LossWeights: lambda_q must lie in [0, 1]");
  }
}

Tensor calibration_loss(const Tensor& pred_q, const Tensor& pred_t,
                        const std::vector<Quaternion>& gt_q, const std::vector<Vec3>& gt_t,
                        double lambda_q) {
  if (!pred_q.defined() || !pred_t.defined() || pred_q.shape().size() != 2 ||
      pred_t.shape().size() != 2 || pred_q.dim(1) != 4 || pred_t.dim(1) != 3) {
    throw std::invalid_argument("calibration_loss: expected [b,4] quaternions and [b,3] translations");
  }
  const int b = pred_q.dim(0);
  if (pred_t.dim(0) != b || static_cast<int>(gt_q.size()) != b ||
      static_cast<int>(gt_t.size()) != b) {
    throw std::invalid_argument("calibration_loss: batch size mismatch");
  }
  Eigen::VectorXd qv(b * 4), tv(b * 3);
  for (int i = 0; i < b; ++i) {
    qv[i * 4 + 0] = gt_q[i].w();
    qv[i * 4 + 1] = gt_q[i].x();
    qv[i * 4 + 2] = gt_q[i].y();
    qv[i * 4 + 3] = gt_q[i].z();
    tv.segment(i * 3, 3) = gt_t[i];
  }
  const Tensor gtq = Tensor::from_values({b, 4}, std::move(qv));
  const Tensor gtt = Tensor::from_values({b, 3}, std::move(tv));

  // 1 - mean|<q, q_gt>| equals mean(1 - |dot|) and is sign invariant.
  const Tensor dots = row_sum(mul(pred_q, gtq));
  const Tensor rot_term = add_scalar(scale(mean(abs(dots)), -1.0), 1.0);
  const Tensor trans_term = mean(abs(sub(pred_t, gtt)));
  return add(scale(rot_term, lambda_q), scale(trans_term, 1.0 - lambda_q));
}

namespace {

Eigen::Matrix3d quat_poly_rotation(double w, double x, double y, double z) {
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

// d(quat_poly_rotation)/dq, one 3x3 per component of q = (w, x, y, z).
void quat_poly_jacobians(double w, double x, double y, double z, Eigen::Matrix3d j[4]) {
  j[0] << 0, -z, y, z, 0, -x, -y, x, 0;
  j[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
  j[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
  j[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
  for (int k = 0; k < 4; ++k) j[k] *= 2.0;
}

}  // namespace

Tensor cloud_distance_loss_batch(const std::vector<PointCloud>& clouds, const Tensor& pred_q,
                                 const Tensor& pred_t, const std::vector<RigidTransform>& gts) {
  if (!pred_q.defined() || !pred_t.defined() || pred_q.shape().size() != 2 ||
      pred_t.shape().size() != 2 || pred_q.dim(1) != 4 || pred_t.dim(1) != 3) {
    throw std::invalid_argument("cloud_distance_loss: expected [b,4] and [b,3] predictions");
  }
  const int b = pred_q.dim(0);
  if (pred_t.dim(0) != b || static_cast<int>(clouds.size()) != b ||
      static_cast<int>(gts.size()) != b) {
    throw std::invalid_argument("cloud_distance_loss: batch size mismatch");
  }

  auto points = std::make_shared<std::vector<Eigen::Matrix3Xd>>();
  auto targets = std::make_shared<std::vector<Eigen::Matrix3Xd>>();
  points->reserve(clouds.size());
  targets->reserve(clouds.size());
  for (int e = 0; e < b; ++e) {
    points->push_back(clouds[e].points);
    targets->push_back((gts[e].rotation.toRotationMatrix() * clouds[e].points).colwise() +
                       gts[e].translation);
  }

  double total = 0.0;
  for (int e = 0; e < b; ++e) {
    const auto& p = (*points)[e];
    if (p.cols() == 0) continue;
    const Eigen::Matrix3d r = quat_poly_rotation(pred_q.values()[e * 4], pred_q.values()[e * 4 + 1],
                                                 pred_q.values()[e * 4 + 2],
                                                 pred_q.values()[e * 4 + 3]);
    const Vec3 t = pred_t.values().segment(e * 3, 3);
    const Eigen::Matrix3Xd diff = ((r * p).colwise() + t) - (*targets)[e];
    total += diff.colwise().norm().mean();
  }
  total /= b;

  auto qn = pred_q.node();
  auto tn = pred_t.node();
  return detail::make_node(
      {1}, Eigen::VectorXd::Constant(1, total), {pred_q, pred_t},
      [qn, tn, points, targets, b](detail::TensorNode& self) {
        const double g = self.grad[0];
        if (qn->requires_grad) qn->ensure_grad();
        if (tn->requires_grad) tn->ensure_grad();
        for (int e = 0; e < b; ++e) {
          const auto& p = (*points)[e];
          if (p.cols() == 0) continue;
          const double w = qn->values[e * 4], x = qn->values[e * 4 + 1],
                       y = qn->values[e * 4 + 2], z = qn->values[e * 4 + 3];
          const Eigen::Matrix3d r = quat_poly_rotation(w, x, y, z);
          const Vec3 t = tn->values.segment(e * 3, 3);
          const double scale = g / (static_cast<double>(b) * static_cast<double>(p.cols()));
          Eigen::Matrix3d dr = Eigen::Matrix3d::Zero();
          Vec3 dt = Vec3::Zero();
          for (Eigen::Index j = 0; j < p.cols(); ++j) {
            const Vec3 diff = r * p.col(j) + t - (*targets)[e].col(j);
            const double norm = diff.norm();
            if (norm < 1e-15) continue;  // subgradient 0 at the kink
            const Vec3 u = diff / norm;
            dt += scale * u;
            dr += scale * u * p.col(j).transpose();
          }
          if (tn->requires_grad) tn->grad.segment(e * 3, 3) += dt;
          if (qn->requires_grad) {
            Eigen::Matrix3d jac[4];
            quat_poly_jacobians(w, x, y, z, jac);
            for (int k = 0; k < 4; ++k) {
              qn->grad[e * 4 + k] += dr.cwiseProduct(jac[k]).sum();
            }
          }
        }
      });
}

Tensor cloud_distance_loss(const PointCloud& cloud, const Tensor& pred_q, const Tensor& pred_t,
                           const RigidTransform& gt) {
  return cloud_distance_loss_batch({cloud}, pred_q, pred_t, {gt});
}

Tensor supervised_contrastive_loss(const Tensor& features, const std::vector<int>& labels,
                                   const SclConfig& cfg) {
  if (cfg.temperature <= 0.0) {
    throw std::invalid_argument("supervised_contrastive_loss: temperature must be positive");
  }
  if (!features.defined() || features.shape().size() != 2) {
    throw std::invalid_argument("supervised_contrastive_loss: features must be [n, f]");
  }
  const int n = features.dim(0);
  if (n < 2) throw std::invalid_argument("supervised_contrastive_loss: need at least 2 samples");
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("supervised_contrastive_loss: one label per sample required");
  }

  // Constant masks: off-diagonal anchors A(i), positives P(i), and the
  // -1/|P(i)| row weights (0 when a sample has no positives).
  Eigen::VectorXd offdiag(n * n), positives(n * n), weights(n);
  int with_positives = 0;
  for (int i = 0; i < n; ++i) {
    int count = 0;
    for (int j = 0; j < n; ++j) {
      const bool anchor = i != j;
      offdiag[i * n + j] = anchor ? 1.0 : 0.0;
      const bool pos = anchor && labels[i] == labels[j];
      positives[i * n + j] = pos ? 1.0 : 0.0;
      if (pos) ++count;
    }
    weights[i] = count > 0 ? -1.0 / count : 0.0;
    if (count > 0) ++with_positives;
  }
  if (with_positives == 0) {
    std::cerr << "supervised_contrastive_loss: batch has no positive pairs, loss is 0\n";
  }

  const Tensor z = l2_normalize_rows(features);
  const Tensor sim = scale(matmul_nt(z, z), 1.0 / cfg.temperature);
  const Tensor denom = row_sum(mul(exp(sim), Tensor::from_values({n, n}, std::move(offdiag))));
  const Tensor log_prob = sub_colvec(sim, log(denom));
  const Tensor pos_terms = row_sum(mul(log_prob, Tensor::from_values({n, n}, std::move(positives))));
  return sum(mul(pos_terms, Tensor::from_values({n}, std::move(weights))));
}

Tensor total_loss(const Tensor& calib, const Tensor& cloud, const Tensor& scl_rot,
                  const Tensor& scl_trans, const LossWeights& w) {
  validate(w);
  for (const Tensor* part : {&calib, &cloud, &scl_rot, &scl_trans}) {
    if (!part->defined() || part->size() != 1) {
      throw std::invalid_argument("total_loss: every part must be a defined scalar");
    }
  }
  return add(add(scale(calib, w.w_calib), scale(cloud, w.w_cloud)),
             scale(add(scl_rot, scl_trans), w.w_scl));
}

}  // namespace lowcal
