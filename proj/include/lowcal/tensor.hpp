#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <vector>

namespace lowcal {

namespace detail {
struct TensorNode;
}

/// Reverse-mode autodiff array. Values are stored flat in row-major (C)
/// order. Each op appends a node to a per-forward-call graph; backward()
/// runs the recorded closures in reverse topological order. Graphs are not
/// shared across threads.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor constant(std::vector<int> shape, double fill);
  static Tensor from_values(std::vector<int> shape, Eigen::VectorXd values,
                            bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int dim(int axis) const;
  Eigen::Index size() const;
  bool requires_grad() const;

  Eigen::VectorXd& values();
  const Eigen::VectorXd& values() const;

  /// Gradient buffer, zero-allocated on first access.
  Eigen::VectorXd& grad();
  const Eigen::VectorXd& grad() const;
  void zero_grad();

  double scalar_value() const;

  /// Reverse-mode accumulation from this scalar. Throws std::logic_error on
  /// a tensor with no graph behind it.
  void backward();

  /// Deep copy of values only; the copy is a fresh leaf.
  Tensor clone() const;

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Elementwise and reduction ops. All inputs must be defined; shape
// mismatches throw std::invalid_argument.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);

// 2-D ops; [m, n] row-major semantics.
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n] -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T -> [m,n]
Tensor row_sum(const Tensor& a);                     // [m,n] -> [m]
Tensor sub_colvec(const Tensor& a, const Tensor& v); // out[i,j] = a[i,j] - v[i]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);  // x[b,i], w[o,i] -> [b,o]
Tensor l2_normalize_rows(const Tensor& a);

// 4-D ops; [batch, channels, height, width].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride);  // same padding
Tensor maxpool2d(const Tensor& x);  // 2x2 window, stride 2
Tensor global_avg_pool(const Tensor& x);
Tensor concat_channels(const std::vector<Tensor>& xs);

/// Cost volume between two aligned feature maps. Output channel
/// (dy+d)*(2d+1)+(dx+d) at (i,j) holds (1/c) * sum_c f1[c,i,j]*f2[c,i+dy,j+dx],
/// with out-of-bounds shifted positions contributing 0.
Tensor correlation(const Tensor& f1, const Tensor& f2, int max_displacement);

}  // namespace lowcal
