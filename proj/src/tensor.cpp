#include "lowcal/tensor.hpp"

#include "lowcal/detail/tensor_node.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace lowcal {

using detail::TensorNode;

namespace detail {

Tensor make_node(std::vector<int> shape, Eigen::VectorXd values, std::vector<Tensor> parents,
                 std::function<void(TensorNode&)> backward_fn) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  for (const Tensor& p : parents) {
    node->parents.push_back(p.node());
    if (p.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) node->backward_fn = std::move(backward_fn);
  return Tensor(std::move(node));
}

}  // namespace detail

namespace {

using detail::make_node;

Eigen::Index shape_size(const std::vector<int>& shape) {
  Eigen::Index n = 1;
  for (int d : shape) {
    if (d < 1) throw std::invalid_argument("Tensor: shape entries must be positive");
    n *= d;
  }
  return n;
}

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using PlaneMap = Eigen::Map<Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstPlaneMap =
    Eigen::Map<const Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

void require_rank(const Tensor& t, int rank, const char* op) {
  require_defined(t, op);
  if (static_cast<int>(t.shape().size()) != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank));
  }
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  const Eigen::Index n = shape_size(shape);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = Eigen::VectorXd::Zero(n);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::constant(std::vector<int> shape, double fill) {
  const Eigen::Index n = shape_size(shape);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = Eigen::VectorXd::Constant(n, fill);
  return Tensor(std::move(node));
}

Tensor Tensor::from_values(std::vector<int> shape, Eigen::VectorXd values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw std::invalid_argument("Tensor::from_values: size does not match shape");
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) {
  return from_values({1}, Eigen::VectorXd::Constant(1, value));
}

const std::vector<int>& Tensor::shape() const { return node_->shape; }

int Tensor::dim(int axis) const { return node_->shape.at(static_cast<std::size_t>(axis)); }

Eigen::Index Tensor::size() const { return node_->values.size(); }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Eigen::VectorXd& Tensor::values() { return node_->values; }
const Eigen::VectorXd& Tensor::values() const { return node_->values; }

Eigen::VectorXd& Tensor::grad() {
  node_->ensure_grad();
  return node_->grad;
}

const Eigen::VectorXd& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->grad.size() == node_->values.size()) node_->grad.setZero();
}

double Tensor::scalar_value() const {
  if (size() != 1) throw std::invalid_argument("scalar_value: tensor is not a scalar");
  return node_->values[0];
}

Tensor Tensor::clone() const {
  return from_values(shape(), node_->values, node_->requires_grad);
}

void Tensor::backward() {
  if (!node_) throw std::logic_error("backward: undefined tensor");
  if (size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  if (node_->parents.empty() && !node_->requires_grad) {
    throw std::logic_error("backward: tensor has no graph behind it");
  }
  // Post-order DFS, then replay in reverse.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      TensorNode* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto an = a.node();
  auto bn = b.node();
  return make_node(a.shape(), a.values() + b.values(), {a, b}, [an, bn](TensorNode& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      an->grad += self.grad;
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      bn->grad += self.grad;
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto an = a.node();
  auto bn = b.node();
  return make_node(a.shape(), a.values() - b.values(), {a, b}, [an, bn](TensorNode& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      an->grad += self.grad;
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      bn->grad -= self.grad;
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto an = a.node();
  auto bn = b.node();
  return make_node(a.shape(), a.values().cwiseProduct(b.values()), {a, b},
                   [an, bn](TensorNode& self) {
                     if (an->requires_grad) {
                       an->ensure_grad();
                       an->grad.array() += self.grad.array() * bn->values.array();
                     }
                     if (bn->requires_grad) {
                       bn->ensure_grad();
                       bn->grad.array() += self.grad.array() * an->values.array();
                     }
                   });
}

Tensor scale(const Tensor& a, double s) {
  require_defined(a, "scale");
  auto an = a.node();
  return make_node(a.shape(), a.values() * s, {a}, [an, s](TensorNode& self) {
    an->ensure_grad();
    an->grad += self.grad * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  require_defined(a, "add_scalar");
  auto an = a.node();
  return make_node(a.shape(), a.values().array() + s, {a}, [an](TensorNode& self) {
    an->ensure_grad();
    an->grad += self.grad;
  });
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  auto an = a.node();
  return make_node({1}, Eigen::VectorXd::Constant(1, a.values().sum()), {a},
                   [an](TensorNode& self) {
                     an->ensure_grad();
                     an->grad.array() += self.grad[0];
                   });
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  auto an = a.node();
  const double inv_n = 1.0 / static_cast<double>(a.size());
  return make_node({1}, Eigen::VectorXd::Constant(1, a.values().mean()), {a},
                   [an, inv_n](TensorNode& self) {
                     an->ensure_grad();
                     an->grad.array() += self.grad[0] * inv_n;
                   });
}

Tensor abs(const Tensor& a) {
  require_defined(a, "abs");
  auto an = a.node();
  return make_node(a.shape(), a.values().cwiseAbs(), {a}, [an](TensorNode& self) {
    an->ensure_grad();
    an->grad.array() += self.grad.array() * an->values.array().sign();
  });
}

Tensor exp(const Tensor& a) {
  require_defined(a, "exp");
  auto an = a.node();
  Eigen::VectorXd out = a.values().array().exp();
  return make_node(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    an->ensure_grad();
    an->grad.array() += self.grad.array() * self.values.array();
  });
}

Tensor log(const Tensor& a) {
  require_defined(a, "log");
  auto an = a.node();
  Eigen::VectorXd out = a.values().array().log();
  return make_node(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    an->ensure_grad();
    an->grad.array() += self.grad.array() / an->values.array();
  });
}

Tensor relu(const Tensor& a) {
  require_defined(a, "relu");
  auto an = a.node();
  return make_node(a.shape(), a.values().cwiseMax(0.0), {a}, [an](TensorNode& self) {
    an->ensure_grad();
    an->grad.array() +=
        self.grad.array() * (an->values.array() > 0.0).cast<double>();
  });
}

// ---------------------------------------------------------------------------
// 2-D ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw std::invalid_argument("matmul: inner dimensions differ");
  Eigen::VectorXd out(m * n);
  ConstMatMap am(a.values().data(), m, k);
  ConstMatMap bm(b.values().data(), k, n);
  MatMap(out.data(), m, n).noalias() = am * bm;
  auto an = a.node();
  auto bn = b.node();
  return make_node({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode& self) {
    ConstMatMap g(self.grad.data(), m, n);
    if (an->requires_grad) {
      an->ensure_grad();
      MatMap(an->grad.data(), m, k).noalias() += g * ConstMatMap(bn->values.data(), k, n).transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      MatMap(bn->grad.data(), k, n).noalias() += ConstMatMap(an->values.data(), m, k).transpose() * g;
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) throw std::invalid_argument("matmul_nt: inner dimensions differ");
  Eigen::VectorXd out(m * n);
  ConstMatMap am(a.values().data(), m, k);
  ConstMatMap bm(b.values().data(), n, k);
  MatMap(out.data(), m, n).noalias() = am * bm.transpose();
  auto an = a.node();
  auto bn = b.node();
  return make_node({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode& self) {
    ConstMatMap g(self.grad.data(), m, n);
    if (an->requires_grad) {
      an->ensure_grad();
      MatMap(an->grad.data(), m, k).noalias() += g * ConstMatMap(bn->values.data(), n, k);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      MatMap(bn->grad.data(), n, k).noalias() += g.transpose() * ConstMatMap(an->values.data(), m, k);
    }
  });
}

Tensor row_sum(const Tensor& a) {
  require_rank(a, 2, "row_sum");
  const int m = a.dim(0), n = a.dim(1);
  Eigen::VectorXd out = ConstMatMap(a.values().data(), m, n).rowwise().sum();
  auto an = a.node();
  return make_node({m}, std::move(out), {a}, [an, m, n](TensorNode& self) {
    an->ensure_grad();
    MatMap g(an->grad.data(), m, n);
    g.colwise() += Eigen::Map<const Eigen::VectorXd>(self.grad.data(), m);
  });
}

Tensor sub_colvec(const Tensor& a, const Tensor& v) {
  require_rank(a, 2, "sub_colvec");
  require_rank(v, 1, "sub_colvec");
  const int m = a.dim(0), n = a.dim(1);
  if (v.dim(0) != m) throw std::invalid_argument("sub_colvec: vector length must match rows");
  Eigen::VectorXd out(m * n);
  MatMap om(out.data(), m, n);
  om = ConstMatMap(a.values().data(), m, n);
  om.colwise() -= Eigen::Map<const Eigen::VectorXd>(v.values().data(), m);
  auto an = a.node();
  auto vn = v.node();
  return make_node({m, n}, std::move(out), {a, v}, [an, vn, m, n](TensorNode& self) {
    ConstMatMap g(self.grad.data(), m, n);
    if (an->requires_grad) {
      an->ensure_grad();
      MatMap(an->grad.data(), m, n) += g;
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      Eigen::Map<Eigen::VectorXd>(vn->grad.data(), m) -= g.rowwise().sum();
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  require_rank(bias, 1, "linear");
  const int b = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in || bias.dim(0) != out_dim) {
    throw std::invalid_argument("linear: weight/bias shapes do not match input");
  }
  Eigen::VectorXd out(b * out_dim);
  MatMap om(out.data(), b, out_dim);
  om.noalias() = ConstMatMap(x.values().data(), b, in) *
                 ConstMatMap(w.values().data(), out_dim, in).transpose();
  om.rowwise() += Eigen::Map<const Eigen::VectorXd>(bias.values().data(), out_dim).transpose();
  auto xn = x.node();
  auto wn = w.node();
  auto bn = bias.node();
  return make_node({b, out_dim}, std::move(out), {x, w, bias},
                   [xn, wn, bn, b, in, out_dim](TensorNode& self) {
                     ConstMatMap g(self.grad.data(), b, out_dim);
                     if (xn->requires_grad) {
                       xn->ensure_grad();
                       MatMap(xn->grad.data(), b, in).noalias() +=
                           g * ConstMatMap(wn->values.data(), out_dim, in);
                     }
                     if (wn->requires_grad) {
                       wn->ensure_grad();
                       MatMap(wn->grad.data(), out_dim, in).noalias() +=
                           g.transpose() * ConstMatMap(xn->values.data(), b, in);
                     }
                     if (bn->requires_grad) {
                       bn->ensure_grad();
                       Eigen::Map<Eigen::VectorXd>(bn->grad.data(), out_dim) +=
                           g.colwise().sum().transpose();
                     }
                   });
}

Tensor l2_normalize_rows(const Tensor& a) {
  require_rank(a, 2, "l2_normalize_rows");
  const int m = a.dim(0), n = a.dim(1);
  Eigen::VectorXd out(m * n);
  Eigen::VectorXd norms(m);
  ConstMatMap am(a.values().data(), m, n);
  MatMap om(out.data(), m, n);
  for (int i = 0; i < m; ++i) {
    const double norm = am.row(i).norm();
    if (norm < 1e-300) throw std::invalid_argument("l2_normalize_rows: zero row");
    norms[i] = norm;
    om.row(i) = am.row(i) / norm;
  }
  auto an = a.node();
  return make_node({m, n}, std::move(out), {a}, [an, norms, m, n](TensorNode& self) {
    an->ensure_grad();
    ConstMatMap g(self.grad.data(), m, n);
    ConstMatMap y(self.values.data(), m, n);
    MatMap ag(an->grad.data(), m, n);
    for (int i = 0; i < m; ++i) {
      const double gy = g.row(i).dot(y.row(i));
      ag.row(i) += (g.row(i) - gy * y.row(i)) / norms[i];
    }
  });
}

// ---------------------------------------------------------------------------
// 4-D ops

namespace {

struct ConvGeometry {
  int out_h, out_w, pad_top, pad_left;
};

ConvGeometry conv_geometry(int h, int w, int kh, int kw, int stride) {
  ConvGeometry g;
  g.out_h = (h + stride - 1) / stride;
  g.out_w = (w + stride - 1) / stride;
  const int pad_h = std::max((g.out_h - 1) * stride + kh - h, 0);
  const int pad_w = std::max((g.out_w - 1) * stride + kw - w, 0);
  g.pad_top = pad_h / 2;
  g.pad_left = pad_w / 2;
  return g;
}

// col is [cin*kh*kw, out_h*out_w], one column per output position.
void im2col(const double* x, int cin, int h, int w, int kh, int kw, int stride,
            const ConvGeometry& g, Eigen::MatrixXd& col) {
  col.setZero();
  for (int c = 0; c < cin; ++c) {
    const double* plane = x + static_cast<std::ptrdiff_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const int row = (c * kh + ki) * kw + kj;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * stride - g.pad_top + ki;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * stride - g.pad_left + kj;
            if (ix < 0 || ix >= w) continue;
            col(row, oy * g.out_w + ox) = plane[iy * w + ix];
          }
        }
      }
    }
  }
}

void col2im_add(const Eigen::MatrixXd& col, int cin, int h, int w, int kh, int kw, int stride,
                const ConvGeometry& g, double* dx) {
  for (int c = 0; c < cin; ++c) {
    double* plane = dx + static_cast<std::ptrdiff_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const int row = (c * kh + ki) * kw + kj;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * stride - g.pad_top + ki;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * stride - g.pad_left + kj;
            if (ix < 0 || ix >= w) continue;
            plane[iy * w + ix] += col(row, oy * g.out_w + ox);
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) throw std::invalid_argument("conv2d: channel mismatch");
  if (bias.dim(0) != cout) throw std::invalid_argument("conv2d: bias size mismatch");
  const ConvGeometry g = conv_geometry(h, ww, kh, kw, stride);
  const int patch = cin * kh * kw;
  const int opix = g.out_h * g.out_w;

  Eigen::VectorXd out(static_cast<Eigen::Index>(batch) * cout * opix);
  Eigen::MatrixXd col(patch, opix);
  ConstMatMap wm(w.values().data(), cout, patch);
  const Eigen::Map<const Eigen::VectorXd> bv(bias.values().data(), cout);
  for (int b = 0; b < batch; ++b) {
    im2col(x.values().data() + static_cast<std::ptrdiff_t>(b) * cin * h * ww, cin, h, ww, kh, kw,
           stride, g, col);
    MatMap om(out.data() + static_cast<std::ptrdiff_t>(b) * cout * opix, cout, opix);
    om.noalias() = wm * col;
    om.colwise() += bv;
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = bias.node();
  return make_node(
      {batch, cout, g.out_h, g.out_w}, std::move(out), {x, w, bias},
      [xn, wn, bn, batch, cin, h, ww, cout, kh, kw, stride, g, patch, opix](TensorNode& self) {
        Eigen::MatrixXd col(patch, opix);
        Eigen::MatrixXd dcol(patch, opix);
        for (int b = 0; b < batch; ++b) {
          ConstMatMap gm(self.grad.data() + static_cast<std::ptrdiff_t>(b) * cout * opix, cout,
                         opix);
          if (wn->requires_grad || xn->requires_grad) {
            im2col(xn->values.data() + static_cast<std::ptrdiff_t>(b) * cin * h * ww, cin, h, ww,
                   kh, kw, stride, g, col);
          }
          if (wn->requires_grad) {
            wn->ensure_grad();
            MatMap(wn->grad.data(), cout, patch).noalias() += gm * col.transpose();
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            Eigen::Map<Eigen::VectorXd>(bn->grad.data(), cout) += gm.rowwise().sum();
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            dcol.noalias() = ConstMatMap(wn->values.data(), cout, patch).transpose() * gm;
            col2im_add(dcol, cin, h, ww, kh, kw, stride, g,
                       xn->grad.data() + static_cast<std::ptrdiff_t>(b) * cin * h * ww);
          }
        }
      });
}

Tensor maxpool2d(const Tensor& x) {
  require_rank(x, 4, "maxpool2d");
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2) throw std::invalid_argument("maxpool2d: input must be at least 2x2");
  const int oh = h / 2, ow = w / 2;
  Eigen::VectorXd out(static_cast<Eigen::Index>(batch) * c * oh * ow);
  auto argmax = std::make_shared<std::vector<Eigen::Index>>(out.size());
  const double* src = x.values().data();
  Eigen::Index oi = 0;
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::ptrdiff_t base = (static_cast<std::ptrdiff_t>(b) * c + ch) * h * w;
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          Eigen::Index best_idx = base + (2 * i) * w + 2 * j;
          double best = src[best_idx];
          // first maximum in window row-major order wins ties
          for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
              const Eigen::Index idx = base + (2 * i + di) * w + 2 * j + dj;
              if (src[idx] > best) {
                best = src[idx];
                best_idx = idx;
              }
            }
          }
          out[oi] = best;
          (*argmax)[oi] = best_idx;
          ++oi;
        }
      }
    }
  }
  auto xn = x.node();
  return make_node({batch, c, oh, ow}, std::move(out), {x}, [xn, argmax](TensorNode& self) {
    xn->ensure_grad();
    for (Eigen::Index i = 0; i < self.grad.size(); ++i) {
      xn->grad[(*argmax)[i]] += self.grad[i];
    }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int pix = h * w;
  Eigen::VectorXd out(static_cast<Eigen::Index>(batch) * c);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out[i] = x.values().segment(i * pix, pix).mean();
  }
  auto xn = x.node();
  return make_node({batch, c}, std::move(out), {x}, [xn, pix](TensorNode& self) {
    xn->ensure_grad();
    const double inv = 1.0 / pix;
    for (Eigen::Index i = 0; i < self.grad.size(); ++i) {
      xn->grad.segment(i * pix, pix).array() += self.grad[i] * inv;
    }
  });
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
  for (const Tensor& t : xs) require_rank(t, 4, "concat_channels");
  const int batch = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  int total_c = 0;
  for (const Tensor& t : xs) {
    if (t.dim(0) != batch || t.dim(2) != h || t.dim(3) != w) {
      throw std::invalid_argument("concat_channels: batch/spatial dims differ");
    }
    total_c += t.dim(1);
  }
  const int pix = h * w;
  Eigen::VectorXd out(static_cast<Eigen::Index>(batch) * total_c * pix);
  for (int b = 0; b < batch; ++b) {
    Eigen::Index off = static_cast<Eigen::Index>(b) * total_c * pix;
    for (const Tensor& t : xs) {
      const Eigen::Index len = static_cast<Eigen::Index>(t.dim(1)) * pix;
      out.segment(off, len) = t.values().segment(static_cast<Eigen::Index>(b) * len, len);
      off += len;
    }
  }
  std::vector<std::shared_ptr<TensorNode>> nodes;
  for (const Tensor& t : xs) nodes.push_back(t.node());
  return make_node({batch, total_c, h, w}, std::move(out), xs,
                   [nodes, batch, total_c, pix](TensorNode& self) {
                     for (int b = 0; b < batch; ++b) {
                       Eigen::Index off = static_cast<Eigen::Index>(b) * total_c * pix;
                       for (const auto& n : nodes) {
                         const Eigen::Index len = n->values.size() / batch;
                         if (n->requires_grad) {
                           n->ensure_grad();
                           n->grad.segment(static_cast<Eigen::Index>(b) * len, len) +=
                               self.grad.segment(off, len);
                         }
                         off += len;
                       }
                     }
                   });
}

Tensor correlation(const Tensor& f1, const Tensor& f2, int max_displacement) {
  require_same_shape(f1, f2, "correlation");
  require_rank(f1, 4, "correlation");
  const int batch = f1.dim(0), c = f1.dim(1), h = f1.dim(2), w = f1.dim(3);
  const int d = max_displacement;
  if (d < 1) throw std::invalid_argument("correlation: max_displacement must be >= 1");
  if (d >= std::min(h, w)) {
    throw std::invalid_argument("correlation: max_displacement must be < min(h, w)");
  }
  const int span = 2 * d + 1;
  const int vol = span * span;
  const double inv_c = 1.0 / c;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(batch) * vol * h * w);

  auto plane = [&](const Eigen::VectorXd& buf, int b, int channels, int ch) {
    return ConstPlaneMap(buf.data() + (static_cast<std::ptrdiff_t>(b) * channels + ch) * h * w, h,
                         w);
  };

  for (int b = 0; b < batch; ++b) {
    for (int dy = -d; dy <= d; ++dy) {
      const int r0 = std::max(0, -dy), r1 = std::min(h, h - dy);
      for (int dx = -d; dx <= d; ++dx) {
        const int c0 = std::max(0, -dx), c1 = std::min(w, w - dx);
        const int ch = (dy + d) * span + (dx + d);
        PlaneMap op(out.data() + (static_cast<std::ptrdiff_t>(b) * vol + ch) * h * w, h, w);
        for (int k = 0; k < c; ++k) {
          op.block(r0, c0, r1 - r0, c1 - c0) +=
              plane(f1.values(), b, c, k).block(r0, c0, r1 - r0, c1 - c0) *
              plane(f2.values(), b, c, k).block(r0 + dy, c0 + dx, r1 - r0, c1 - c0);
        }
        op.block(r0, c0, r1 - r0, c1 - c0) *= inv_c;
      }
    }
  }

  auto n1 = f1.node();
  auto n2 = f2.node();
  return make_node(
      {batch, vol, h, w}, std::move(out), {f1, f2},
      [n1, n2, batch, c, h, w, d, span, vol, inv_c](TensorNode& self) {
        auto cplane = [&](const Eigen::VectorXd& buf, int b, int channels, int ch) {
          return ConstPlaneMap(buf.data() + (static_cast<std::ptrdiff_t>(b) * channels + ch) * h * w,
                               h, w);
        };
        auto mplane = [&](Eigen::VectorXd& buf, int b, int channels, int ch) {
          return PlaneMap(buf.data() + (static_cast<std::ptrdiff_t>(b) * channels + ch) * h * w, h,
                          w);
        };
        if (n1->requires_grad) n1->ensure_grad();
        if (n2->requires_grad) n2->ensure_grad();
        for (int b = 0; b < batch; ++b) {
          for (int dy = -d; dy <= d; ++dy) {
            const int r0 = std::max(0, -dy), r1 = std::min(h, h - dy);
            for (int dx = -d; dx <= d; ++dx) {
              const int c0 = std::max(0, -dx), c1 = std::min(w, w - dx);
              const int ch = (dy + d) * span + (dx + d);
              const auto g = cplane(self.grad, b, vol, ch);
              for (int k = 0; k < c; ++k) {
                if (n1->requires_grad) {
                  mplane(n1->grad, b, c, k).block(r0, c0, r1 - r0, c1 - c0) +=
                      inv_c * g.block(r0, c0, r1 - r0, c1 - c0) *
                      cplane(n2->values, b, c, k).block(r0 + dy, c0 + dx, r1 - r0, c1 - c0);
                }
                if (n2->requires_grad) {
                  mplane(n2->grad, b, c, k).block(r0 + dy, c0 + dx, r1 - r0, c1 - c0) +=
                      inv_c * g.block(r0, c0, r1 - r0, c1 - c0) *
                      cplane(n1->values, b, c, k).block(r0, c0, r1 - r0, c1 - c0);
                }
              }
            }
          }
        }
      });
}

}  // namespace lowcal
