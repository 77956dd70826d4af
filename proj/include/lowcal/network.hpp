#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lowcal/rng.hpp"
#include "lowcal/tensor.hpp"

namespace lowcal {

/// Compact two-branch regression network: per-branch conv stacks, a cost
/// volume between the branch features, a shared post-correlation stack, and
/// two heads emitting a unit quaternion and a translation vector.
struct NetworkConfig {
  int input_height = 32;
  int input_width = 32;
  std::vector<int> branch_channels = {8, 16, 32};
  // Last conv keeps stride 1 so the default cost volume displacement stays
  // valid at the default input size.
  std::vector<int> branch_strides = {2, 2, 1};
  int kernel_size = 3;
  int max_displacement = 4;
  int post_channels = 32;
  int feature_dim = 64;
};

/// Named parameter tensors in a fixed order; the order defines the
/// checkpoint layout and the optimizer walk.
struct ModelParams {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  Eigen::Index total_size() const;
  void zero_grad();
};

ModelParams clone_params(const ModelParams& params);

struct NetworkOutput {
  Tensor rot_feature;    // [batch, feature_dim]
  Tensor trans_feature;  // [batch, feature_dim]
  Tensor quat;           // [batch, 4], rows unit-norm
  Tensor trans;          // [batch, 3], meters
};

/// Kaiming fan-in init for conv/linear weights, zero biases. The final head
/// layers start at zero weights with the rotation bias at the identity
/// quaternion, so an untrained model predicts the identity correction.
ModelParams init_params(const NetworkConfig& cfg, Rng& rng);

NetworkOutput forward(const ModelParams& params, const NetworkConfig& cfg, const Tensor& rgb,
                      const Tensor& depth);

inline Tensor correlation_layer(const Tensor& f1, const Tensor& f2, int max_displacement) {
  return correlation(f1, f2, max_displacement);
}

/// Checkpoint format: magic "LCKPT1\n"; ASCII header of `config k v...`
/// lines and `param name dims...` lines terminated by "end\n"; then
/// little-endian 64-bit floats per parameter in header order. Round trips
/// bit-exactly.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& config_lines,
                     const ModelParams& params);

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> config_lines;
  ModelParams params;
};
Checkpoint load_checkpoint(const std::string& path);

std::vector<std::pair<std::string, std::string>> network_config_lines(const NetworkConfig& cfg);
NetworkConfig network_config_from_lines(
    const std::vector<std::pair<std::string, std::string>>& lines);

}  // namespace lowcal
