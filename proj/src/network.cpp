#include "lowcal/network.hpp"

#include "lowcal/config.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lowcal {

Tensor& ModelParams::at(const std::string& name) {
  for (auto& [n, t] : items) {
    if (n == name) return t;
  }
  throw std::invalid_argument("ModelParams: no parameter named " + name);
}

const Tensor& ModelParams::at(const std::string& name) const {
  for (const auto& [n, t] : items) {
    if (n == name) return t;
  }
  throw std::invalid_argument("ModelParams: no parameter named " + name);
}

Eigen::Index ModelParams::total_size() const {
  Eigen::Index n = 0;
  for (const auto& [name, t] : items) n += t.size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : items) t.zero_grad();
}

ModelParams clone_params(const ModelParams& params) {
  ModelParams out;
  out.items.reserve(params.items.size());
  for (const auto& [name, t] : params.items) out.items.emplace_back(name, t.clone());
  return out;
}

namespace {

void validate_config(const NetworkConfig& cfg) {
  if (cfg.input_height < 4 || cfg.input_width < 4) {
    throw std::invalid_argument("NetworkConfig: input size too small");
  }
  if (cfg.branch_channels.empty() || cfg.branch_channels.size() != cfg.branch_strides.size()) {
    throw std::invalid_argument("NetworkConfig: branch channels/strides must match and be non-empty");
  }
  if (cfg.max_displacement < 1) {
    throw std::invalid_argument("NetworkConfig: max_displacement must be >= 1");
  }
  if (cfg.feature_dim < 2) throw std::invalid_argument("NetworkConfig: feature_dim must be >= 2");
  if (cfg.kernel_size < 1 || cfg.kernel_size % 2 == 0) {
    throw std::invalid_argument("NetworkConfig: kernel size must be odd and positive");
  }
}

Tensor kaiming_conv(int cout, int cin, int k, Rng& rng) {
  const int n = cout * cin * k * k;
  Eigen::VectorXd v(n);
  const double stddev = std::sqrt(2.0 / (cin * k * k));
  for (int i = 0; i < n; ++i) v[i] = stddev * rng.normal();
  return Tensor::from_values({cout, cin, k, k}, std::move(v), true);
}

Tensor kaiming_linear(int out, int in, Rng& rng) {
  Eigen::VectorXd v(out * in);
  const double stddev = std::sqrt(2.0 / in);
  for (int i = 0; i < v.size(); ++i) v[i] = stddev * rng.normal();
  return Tensor::from_values({out, in}, std::move(v), true);
}

std::string branch_param(const std::string& branch, std::size_t layer, const char* kind) {
  return branch + "_conv" + std::to_string(layer) + "_" + kind;
}

}  // namespace

ModelParams init_params(const NetworkConfig& cfg, Rng& rng) {
  validate_config(cfg);
  ModelParams p;
  for (const std::string branch : {"rgb", "depth"}) {
    int cin = branch == "rgb" ? 3 : 1;
    for (std::size_t l = 0; l < cfg.branch_channels.size(); ++l) {
      const int cout = cfg.branch_channels[l];
      p.items.emplace_back(branch_param(branch, l, "w"),
                           kaiming_conv(cout, cin, cfg.kernel_size, rng));
      p.items.emplace_back(branch_param(branch, l, "b"), Tensor::zeros({cout}, true));
      cin = cout;
    }
  }
  const int span = 2 * cfg.max_displacement + 1;
  p.items.emplace_back("post_conv0_w",
                       kaiming_conv(cfg.post_channels, span * span, cfg.kernel_size, rng));
  p.items.emplace_back("post_conv0_b", Tensor::zeros({cfg.post_channels}, true));

  p.items.emplace_back("rot_fc_w", kaiming_linear(cfg.feature_dim, cfg.post_channels, rng));
  p.items.emplace_back("rot_fc_b", Tensor::zeros({cfg.feature_dim}, true));
  p.items.emplace_back("rot_out_w", Tensor::zeros({4, cfg.feature_dim}, true));
  Eigen::VectorXd rot_bias = Eigen::VectorXd::Zero(4);
  rot_bias[0] = 1.0;  // identity quaternion
  p.items.emplace_back("rot_out_b", Tensor::from_values({4}, std::move(rot_bias), true));

  p.items.emplace_back("trans_fc_w", kaiming_linear(cfg.feature_dim, cfg.post_channels, rng));
  p.items.emplace_back("trans_fc_b", Tensor::zeros({cfg.feature_dim}, true));
  p.items.emplace_back("trans_out_w", Tensor::zeros({3, cfg.feature_dim}, true));
  p.items.emplace_back("trans_out_b", Tensor::zeros({3}, true));
  return p;
}

namespace {

Tensor run_branch(const ModelParams& params, const NetworkConfig& cfg, const std::string& branch,
                  const Tensor& input) {
  Tensor x = input;
  for (std::size_t l = 0; l < cfg.branch_channels.size(); ++l) {
    x = relu(conv2d(x, params.at(branch_param(branch, l, "w")),
                    params.at(branch_param(branch, l, "b")), cfg.branch_strides[l]));
  }
  return x;
}

}  // namespace

NetworkOutput forward(const ModelParams& params, const NetworkConfig& cfg, const Tensor& rgb,
                      const Tensor& depth) {
  validate_config(cfg);
  if (!rgb.defined() || !depth.defined() || rgb.shape().size() != 4 || depth.shape().size() != 4) {
    throw std::invalid_argument("forward: rgb and depth must be 4-d tensors");
  }
  if (rgb.dim(1) != 3 || depth.dim(1) != 1 || rgb.dim(0) != depth.dim(0) ||
      rgb.dim(2) != cfg.input_height || rgb.dim(3) != cfg.input_width ||
      depth.dim(2) != cfg.input_height || depth.dim(3) != cfg.input_width) {
    throw std::invalid_argument("forward: input shapes do not match the network config");
  }

  const Tensor f_rgb = run_branch(params, cfg, "rgb", rgb);
  const Tensor f_depth = run_branch(params, cfg, "depth", depth);
  const Tensor cost = correlation(f_rgb, f_depth, cfg.max_displacement);
  const Tensor y = relu(conv2d(cost, params.at("post_conv0_w"), params.at("post_conv0_b"), 2));
  const Tensor pooled = global_avg_pool(y);

  NetworkOutput out;
  out.rot_feature = relu(linear(pooled, params.at("rot_fc_w"), params.at("rot_fc_b")));
  out.quat = l2_normalize_rows(linear(out.rot_feature, params.at("rot_out_w"), params.at("rot_out_b")));
  out.trans_feature = relu(linear(pooled, params.at("trans_fc_w"), params.at("trans_fc_b")));
  out.trans = linear(out.trans_feature, params.at("trans_out_w"), params.at("trans_out_b"));

  if (!out.quat.values().allFinite() || !out.trans.values().allFinite()) {
    throw std::runtime_error("forward: non-finite network output");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

void write_f64_le(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double read_f64_le(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
    throw FormatError("checkpoint: truncated payload");
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& config_lines,
                     const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "LCKPT1\n";
  for (const auto& [key, value] : config_lines) out << "config " << key << " " << value << "\n";
  for (const auto& [name, t] : params.items) {
    out << "param " << name;
    for (int d : t.shape()) out << " " << d;
    out << "\n";
  }
  out << "end\n";
  for (const auto& [name, t] : params.items) {
    for (Eigen::Index i = 0; i < t.size(); ++i) write_f64_le(out, t.values()[i]);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != "LCKPT1") throw FormatError(path + ": bad magic, expected LCKPT1");

  Checkpoint ckpt;
  std::vector<std::pair<std::string, std::vector<int>>> layout;
  std::string line;
  while (std::getline(in, line)) {
    if (line == "end") break;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "config") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ckpt.config_lines.emplace_back(key, value);
    } else if (tag == "param") {
      std::string name;
      ls >> name;
      std::vector<int> shape;
      int d;
      while (ls >> d) shape.push_back(d);
      if (name.empty() || shape.empty()) throw FormatError(path + ": malformed param line");
      layout.emplace_back(name, std::move(shape));
    } else {
      throw FormatError(path + ": unexpected header line `" + line + "`");
    }
  }
  if (line != "end") throw FormatError(path + ": missing end-of-header marker");

  for (auto& [name, shape] : layout) {
    Eigen::Index n = 1;
    for (int d : shape) n *= d;
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = read_f64_le(in);
    ckpt.params.items.emplace_back(name, Tensor::from_values(shape, std::move(v), true));
  }
  return ckpt;
}

std::vector<std::pair<std::string, std::string>> network_config_lines(const NetworkConfig& cfg) {
  auto join = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += " ";
      s += std::to_string(v[i]);
    }
    return s;
  };
  return {
      {"input_height", std::to_string(cfg.input_height)},
      {"input_width", std::to_string(cfg.input_width)},
      {"branch_channels", join(cfg.branch_channels)},
      {"branch_strides", join(cfg.branch_strides)},
      {"kernel_size", std::to_string(cfg.kernel_size)},
      {"max_displacement", std::to_string(cfg.max_displacement)},
      {"post_channels", std::to_string(cfg.post_channels)},
      {"feature_dim", std::to_string(cfg.feature_dim)},
  };
}

NetworkConfig network_config_from_lines(
    const std::vector<std::pair<std::string, std::string>>& lines) {
  NetworkConfig cfg;
  auto ints = [](const std::string& s) {
    std::istringstream in(s);
    std::vector<int> out;
    int v;
    while (in >> v) out.push_back(v);
    return out;
  };
  for (const auto& [key, value] : lines) {
    if (key == "input_height") cfg.input_height = std::stoi(value);
    else if (key == "input_width") cfg.input_width = std::stoi(value);
    else if (key == "branch_channels") cfg.branch_channels = ints(value);
    else if (key == "branch_strides") cfg.branch_strides = ints(value);
    else if (key == "kernel_size") cfg.kernel_size = std::stoi(value);
    else if (key == "max_displacement") cfg.max_displacement = std::stoi(value);
    else if (key == "post_channels") cfg.post_channels = std::stoi(value);
    else if (key == "feature_dim") cfg.feature_dim = std::stoi(value);
  }
  return cfg;
}

}  // namespace lowcal
