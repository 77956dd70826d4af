#pragma once

#include <vector>

#include "lowcal/geometry.hpp"
#include "lowcal/tensor.hpp"

namespace lowcal {

struct SclConfig {
  double temperature = 0.07;
};

/// Mixing weights for the total training objective. lambda_q balances the
/// rotation and translation terms inside the calibration loss.
struct LossWeights {
  double w_calib = 1.0;
  double w_cloud = 0.5;
  double w_scl = 0.1;
  double lambda_q = 0.5;
};

void validate(const LossWeights& w);

/// lambda_q * mean_b(1 - |<pred_q, gt_q>|) + (1 - lambda_q) * mean|pred_t - gt_t|.
/// Zero iff predictions match ground truth up to quaternion sign.
Tensor calibration_loss(const Tensor& pred_q, const Tensor& pred_t,
                        const std::vector<Quaternion>& gt_q, const std::vector<Vec3>& gt_t,
                        double lambda_q);

/// Mean over points of ||apply(pred, p) - apply(gt, p)||. Empty cloud -> 0.
Tensor cloud_distance_loss(const PointCloud& cloud, const Tensor& pred_q, const Tensor& pred_t,
                           const RigidTransform& gt);

/// Batched form: entry e uses clouds[e] and gts[e] with row e of the
/// predictions; the result is the mean of the per-entry means.
Tensor cloud_distance_loss_batch(const std::vector<PointCloud>& clouds, const Tensor& pred_q,
                                 const Tensor& pred_t, const std::vector<RigidTransform>& gts);

/// Supervised contrastive loss over L2-normalized features. Samples with no
/// positive partner are skipped; a batch where every sample is skipped
/// yields 0 and a stderr warning.
Tensor supervised_contrastive_loss(const Tensor& features, const std::vector<int>& labels,
                                   const SclConfig& cfg);

/// w_calib*calib + w_cloud*cloud + w_scl*(scl_rot + scl_trans).
Tensor total_loss(const Tensor& calib, const Tensor& cloud, const Tensor& scl_rot,
                  const Tensor& scl_trans, const LossWeights& w);

}  // namespace lowcal
