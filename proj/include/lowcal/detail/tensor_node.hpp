#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <vector>

#include "lowcal/tensor.hpp"

namespace lowcal::detail {

/// Graph node behind a Tensor. Ops outside tensor.cpp that need a custom
/// backward (fused losses) build nodes through make_node.
struct TensorNode {
  std::vector<int> shape;
  Eigen::VectorXd values;
  Eigen::VectorXd grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != values.size()) grad = Eigen::VectorXd::Zero(values.size());
  }
};

/// Wraps values into a node whose requires_grad is inherited from parents;
/// backward_fn is dropped when no parent needs gradients.
Tensor make_node(std::vector<int> shape, Eigen::VectorXd values, std::vector<Tensor> parents,
                 std::function<void(TensorNode&)> backward_fn);

}  // namespace lowcal::detail
