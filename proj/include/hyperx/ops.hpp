#pragma once

// Differentiable operations used by the hypercomplex layers and the H2 model.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "hyperx/errors.hpp"
#include "hyperx/tensor.hpp"

namespace hyperx {

namespace debug {
/// When set, the matmul/linear input-gradient rule is deliberately scaled
/// wrong. Only the gradient-check harness self-test uses this.
inline std::atomic<bool>& corrupt_backward() {
  static std::atomic<bool> flag{false};
  return flag;
}
}  // namespace debug

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMatrix>;
using ConstMatrixView = Eigen::Map<const RowMatrix>;

inline ConstMatrixView view(const Buffer& v, std::size_t rows, std::size_t cols,
                            std::size_t offset = 0) {
  return ConstMatrixView(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline MatrixView view(Buffer& v, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MatrixView(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw RankError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                    shape_str(t.shape()));
}

inline double backward_skew() { return debug::corrupt_backward().load() ? 1.5 : 1.0; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  Buffer out(m * p);
  detail::view(out, m, p).noalias() = detail::view(a.node()->data, m, k) * detail::view(b.node()->data, k, p);
  auto an = a.node(), bn = b.node();
  return detail::record({m, p}, std::move(out), {&a, &b}, [an, bn, m, k, p](detail::Node& self) {
    auto dy = detail::view(self.grad, m, p);
    if (auto* ga = detail::grad_sink(an))
      detail::view(*ga, m, k).noalias() += detail::backward_skew() * (dy * detail::view(bn->data, k, p).transpose());
    if (auto* gb = detail::grad_sink(bn))
      detail::view(*gb, k, p).noalias() += detail::view(an->data, m, k).transpose() * dy;
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Buffer out(m * n);
  detail::view(out, n, m) = detail::view(a.node()->data, m, n).transpose();
  auto an = a.node();
  return detail::record({n, m}, std::move(out), {&a}, [an, m, n](detail::Node& self) {
    if (auto* g = detail::grad_sink(an)) detail::view(*g, m, n) += detail::view(self.grad, n, m).transpose();
  });
}

/// y = x · wᵀ + b for x [B, in], w [out, in], b [out] (b may be undefined).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor()) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(w, 2, "linear");
  const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in)
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != out_dim))
    throw DimensionError("linear: bias " + shape_str(b.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  Buffer out(batch * out_dim);
  auto y = detail::view(out, batch, out_dim);
  y.noalias() = detail::view(x.node()->data, batch, in) * detail::view(w.node()->data, out_dim, in).transpose();
  if (b.defined()) {
    Eigen::Map<const Eigen::RowVectorXd> bias(b.node()->data.data(), static_cast<Eigen::Index>(out_dim));
    y.rowwise() += bias;
  }
  auto xn = x.node(), wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  return detail::record({batch, out_dim}, std::move(out), {&x, &w, &b},
                        [xn, wn, bn, batch, in, out_dim](detail::Node& self) {
                          auto dy = detail::view(self.grad, batch, out_dim);
                          if (auto* gx = detail::grad_sink(xn))
                            detail::view(*gx, batch, in).noalias() +=
                                detail::backward_skew() * (dy * detail::view(wn->data, out_dim, in));
                          if (auto* gw = detail::grad_sink(wn))
                            detail::view(*gw, out_dim, in).noalias() +=
                                dy.transpose() * detail::view(xn->data, batch, in);
                          if (auto* gb = detail::grad_sink(bn)) {
                            Eigen::Map<Eigen::RowVectorXd> db(gb->data(), static_cast<Eigen::Index>(out_dim));
                            db += dy.colwise().sum();
                          }
                        });
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node(), bn = b.node();
  return detail::record(a.shape(), std::move(out), {&a, &b}, [an, bn](detail::Node& self) {
    for (auto* g : {detail::grad_sink(an), detail::grad_sink(bn)})
      if (g)
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto an = a.node(), bn = b.node();
  return detail::record(a.shape(), std::move(out), {&a, &b}, [an, bn](detail::Node& self) {
    if (auto* g = detail::grad_sink(an))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = detail::grad_sink(bn))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

/// Elementwise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node(), bn = b.node();
  return detail::record(a.shape(), std::move(out), {&a, &b}, [an, bn](detail::Node& self) {
    if (auto* g = detail::grad_sink(an))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bn->data[i];
    if (auto* g = detail::grad_sink(bn))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * an->data[i];
  });
}

inline Tensor scale(const Tensor& a, double s) {
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  auto an = a.node();
  return detail::record(a.shape(), std::move(out), {&a}, [an, s](detail::Node& self) {
    if (auto* g = detail::grad_sink(an))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * s;
  });
}

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  auto an = a.node();
  return detail::record({}, {total}, {&a}, [an](detail::Node& self) {
    if (auto* g = detail::grad_sink(an))
      for (double& v : *g) v += self.grad[0];
  });
}

inline Tensor relu(const Tensor& x) {
  Buffer out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  auto xn = x.node();
  return detail::record(x.shape(), std::move(out), {&x}, [xn](detail::Node& self) {
    if (auto* g = detail::grad_sink(xn))
      for (std::size_t i = 0; i < g->size(); ++i)
        if (xn->data[i] > 0.0) (*g)[i] += self.grad[i];
  });
}

/// Copies values into a new shape with the same element count.
inline Tensor reshape(const Tensor& x, Shape shape) {
  detail::check_shape(shape);
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto xn = x.node();
  return detail::record(std::move(shape), xn->data, {&x}, [xn](detail::Node& self) {
    if (auto* g = detail::grad_sink(xn))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

/// [B, ...] -> [B, prod(...)].
inline Tensor flatten(const Tensor& x) {
  if (x.rank() < 2) throw RankError("flatten: expected rank >= 2, got " + shape_str(x.shape()));
  return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

/// Slice index i along axis 0.
inline Tensor select(const Tensor& x, std::size_t i) {
  if (x.rank() < 1) throw RankError("select: scalar input");
  if (i >= x.dim(0))
    throw DimensionError("select: index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t stride = shape_numel(shape);
  Buffer out(x.data().begin() + static_cast<std::ptrdiff_t>(i * stride),
                          x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
  auto xn = x.node();
  return detail::record(std::move(shape), std::move(out), {&x}, [xn, i, stride](detail::Node& self) {
    if (auto* g = detail::grad_sink(xn))
      for (std::size_t j = 0; j < stride; ++j) (*g)[i * stride + j] += self.grad[j];
  });
}

/// Concatenates along axis 1; all other dimensions must agree.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (first.size() < 2) throw RankError("concat: expected rank >= 2, got " + shape_str(first));
  const std::size_t outer = first[0];
  Shape tail(first.begin() + 2, first.end());
  const std::size_t inner = shape_numel(tail);
  std::size_t total_axis = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size() || p.dim(0) != outer ||
        !std::equal(tail.begin(), tail.end(), p.shape().begin() + 2))
      throw DimensionError("concat: " + shape_str(p.shape()) + " incompatible with " + shape_str(first));
    total_axis += p.dim(1);
  }
  Shape shape = first;
  shape[1] = total_axis;
  Buffer out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t width = p.dim(1) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(o * width), width,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total_axis * inner + offset));
    offset += width;
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.dim(1) * inner);
  }
  auto rule = [nodes, widths, offsets, outer, row = total_axis * inner](detail::Node& self) {
    for (std::size_t k = 0; k < nodes.size(); ++k)
      if (auto* g = detail::grad_sink(nodes[k]))
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < widths[k]; ++j) (*g)[o * widths[k] + j] += self.grad[o * row + offsets[k] + j];
  };
  // record() takes a fixed initializer list; wire a variable number of parents by hand.
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(out);
  node->seq = detail::next_seq();
  bool track = detail::grad_mode() &&
               std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->parents = nodes;
    node->backward = std::move(rule);
  }
  return Tensor::from_node(std::move(node));
}

/// Mean over the last axis: [B, C, L] -> [B, C].
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require_rank(x, 3, "global_avg_pool");
  const std::size_t bc = x.dim(0) * x.dim(1), len = x.dim(2);
  Buffer out(bc);
  for (std::size_t i = 0; i < bc; ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < len; ++t) s += x[i * len + t];
    out[i] = s / static_cast<double>(len);
  }
  auto xn = x.node();
  return detail::record({x.dim(0), x.dim(1)}, std::move(out), {&x}, [xn, bc, len](detail::Node& self) {
    if (auto* g = detail::grad_sink(xn)) {
      const double inv = 1.0 / static_cast<double>(len);
      for (std::size_t i = 0; i < bc; ++i)
        for (std::size_t t = 0; t < len; ++t) (*g)[i * len + t] += self.grad[i] * inv;
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

struct Conv1dGeometry {
  std::size_t batch, in_channels, length, out_channels, kernel, stride, padding, out_length;
};

inline Conv1dGeometry conv1d_geometry(const Shape& x, const Shape& w, std::size_t stride, std::size_t padding) {
  if (x.size() != 3) throw RankError("conv1d: input must be [B,Cin,L], got " + shape_str(x));
  if (w.size() != 3) throw RankError("conv1d: weight must be [Cout,Cin,K], got " + shape_str(w));
  if (stride == 0) throw ConfigError("conv1d: stride must be >= 1");
  if (w[1] != x[1])
    throw DimensionError("conv1d: input " + shape_str(x) + " has " + std::to_string(x[1]) +
                         " channels but weight " + shape_str(w) + " expects " + std::to_string(w[1]));
  if (w[2] > x[2] + 2 * padding)
    throw DimensionError("conv1d: kernel " + std::to_string(w[2]) + " exceeds padded input length " +
                         std::to_string(x[2] + 2 * padding));
  return {x[0], x[1], x[2], w[0], w[2], stride, padding, (x[2] + 2 * padding - w[2]) / stride + 1};
}

/// Cross-correlation of x [B,Cin,L] with w [Cout,Cin,K]; bias [Cout] optional.
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t padding) {
  const auto g = conv1d_geometry(x.shape(), w.shape(), stride, padding);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != g.out_channels))
    throw DimensionError("conv1d: bias " + shape_str(b.shape()) + " does not match " +
                         std::to_string(g.out_channels) + " output channels");
  const std::size_t rows = g.in_channels * g.kernel;
  const std::size_t cols = g.batch * g.out_length;

  // im2col over the whole batch: column (b, o) holds the receptive field of output o.
  auto col = std::make_shared<Buffer>(rows * cols, 0.0);
  const auto& xd = x.node()->data;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci)
    for (std::size_t t = 0; t < g.kernel; ++t) {
      double* row = col->data() + (ci * g.kernel + t) * cols;
      for (std::size_t bi = 0; bi < g.batch; ++bi) {
        const double* src = xd.data() + (bi * g.in_channels + ci) * g.length;
        for (std::size_t o = 0; o < g.out_length; ++o) {
          const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(o * g.stride + t) - static_cast<std::ptrdiff_t>(g.padding);
          if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(g.length)) row[bi * g.out_length + o] = src[idx];
        }
      }
    }

  Buffer ymat(g.out_channels * cols);
  detail::view(ymat, g.out_channels, cols).noalias() =
      detail::view(w.node()->data, g.out_channels, rows) * detail::view(*col, rows, cols);

  Buffer out(g.batch * g.out_channels * g.out_length);
  for (std::size_t bi = 0; bi < g.batch; ++bi)
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      const double bias = b.defined() ? b[co] : 0.0;
      const double* src = ymat.data() + co * cols + bi * g.out_length;
      double* dst = out.data() + (bi * g.out_channels + co) * g.out_length;
      for (std::size_t o = 0; o < g.out_length; ++o) dst[o] = src[o] + bias;
    }

  auto xn = x.node(), wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  if (!wn->requires_grad) col.reset();
  return detail::record(
      {g.batch, g.out_channels, g.out_length}, std::move(out), {&x, &w, &b},
      [xn, wn, bn, col, g, rows, cols](detail::Node& self) {
        Buffer dy(g.out_channels * cols);
        for (std::size_t bi = 0; bi < g.batch; ++bi)
          for (std::size_t co = 0; co < g.out_channels; ++co)
            std::copy_n(self.grad.data() + (bi * g.out_channels + co) * g.out_length, g.out_length,
                        dy.data() + co * cols + bi * g.out_length);
        auto dyv = detail::view(dy, g.out_channels, cols);
        if (auto* gb = detail::grad_sink(bn)) {
          Eigen::VectorXd s = dyv.rowwise().sum();
          for (std::size_t co = 0; co < g.out_channels; ++co) (*gb)[co] += s[static_cast<Eigen::Index>(co)];
        }
        if (auto* gw = detail::grad_sink(wn))
          detail::view(*gw, g.out_channels, rows).noalias() += dyv * detail::view(*col, rows, cols).transpose();
        if (auto* gx = detail::grad_sink(xn)) {
          Buffer dcol(rows * cols);
          detail::view(dcol, rows, cols).noalias() =
              detail::view(wn->data, g.out_channels, rows).transpose() * dyv;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t t = 0; t < g.kernel; ++t) {
              const double* row = dcol.data() + (ci * g.kernel + t) * cols;
              for (std::size_t bi = 0; bi < g.batch; ++bi) {
                double* dst = gx->data() + (bi * g.in_channels + ci) * g.length;
                for (std::size_t o = 0; o < g.out_length; ++o) {
                  const std::ptrdiff_t idx =
                      static_cast<std::ptrdiff_t>(o * g.stride + t) - static_cast<std::ptrdiff_t>(g.padding);
                  if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(g.length)) dst[idx] += row[bi * g.out_length + o];
                }
              }
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization and regularization

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization of [B,C] or [B,C,L] over the batch and length
/// axes. In training mode the running statistics are updated in place
/// (unbiased variance), in eval mode they are used instead of batch stats.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                         Tensor& running_var, const BatchNormOptions& opt) {
  if (x.rank() != 2 && x.rank() != 3)
    throw RankError("batch_norm: expected [B,C] or [B,C,L], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1), len = x.rank() == 3 ? x.dim(2) : 1;
  for (const Tensor* p : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var})
    if (p->rank() != 1 || p->dim(0) != channels)
      throw DimensionError("batch_norm: per-channel tensor " + shape_str(p->shape()) + " does not match " +
                           std::to_string(channels) + " channels");
  if (opt.training && batch < 2)
    throw DegenerateBatchError("batch_norm: training mode needs at least 2 samples per batch, got " +
                               std::to_string(batch));
  const std::size_t count = batch * len;
  auto at = [&](std::size_t bi, std::size_t c, std::size_t t) { return (bi * channels + c) * len + t; };

  Buffer mean(channels), inv_std(channels);
  if (opt.training) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t t = 0; t < len; ++t) s += x[at(bi, c, t)];
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t t = 0; t < len; ++t) {
          const double d = x[at(bi, c, t)] - mu;
          ss += d * d;
        }
      const double var = ss / static_cast<double>(count);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + opt.eps);
      running_mean[c] = (1.0 - opt.momentum) * running_mean[c] + opt.momentum * mu;
      running_var[c] = (1.0 - opt.momentum) * running_var[c] +
                       opt.momentum * ss / static_cast<double>(count - 1);
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(running_var[c] + opt.eps);
    }
  }

  auto normalized = std::make_shared<Buffer>(x.numel());
  Buffer out(x.numel());
  for (std::size_t bi = 0; bi < batch; ++bi)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t i = at(bi, c, t);
        (*normalized)[i] = (x[i] - mean[c]) * inv_std[c];
        out[i] = gamma[c] * (*normalized)[i] + beta[c];
      }

  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  const bool training = opt.training;
  return detail::record(x.shape(), std::move(out), {&x, &gamma, &beta},
                        [xn, gn, bn, normalized, inv_std, batch, channels, len, count, training](detail::Node& self) {
                          const auto& dy = self.grad;
                          const auto& xh = *normalized;
                          auto at = [&](std::size_t bi, std::size_t c, std::size_t t) {
                            return (bi * channels + c) * len + t;
                          };
                          auto* gx = detail::grad_sink(xn);
                          auto* gg = detail::grad_sink(gn);
                          auto* gb = detail::grad_sink(bn);
                          for (std::size_t c = 0; c < channels; ++c) {
                            double sum_dy = 0.0, sum_dy_xh = 0.0;
                            for (std::size_t bi = 0; bi < batch; ++bi)
                              for (std::size_t t = 0; t < len; ++t) {
                                const std::size_t i = at(bi, c, t);
                                sum_dy += dy[i];
                                sum_dy_xh += dy[i] * xh[i];
                              }
                            if (gg) (*gg)[c] += sum_dy_xh;
                            if (gb) (*gb)[c] += sum_dy;
                            if (!gx) continue;
                            const double k = gn->data[c] * inv_std[c];
                            const double n = static_cast<double>(count);
                            for (std::size_t bi = 0; bi < batch; ++bi)
                              for (std::size_t t = 0; t < len; ++t) {
                                const std::size_t i = at(bi, c, t);
                                if (training)
                                  (*gx)[i] += k * (dy[i] - sum_dy / n - xh[i] * sum_dy_xh / n);
                                else
                                  (*gx)[i] += k * dy[i];
                              }
                          }
                        });
}

/// Inverted dropout. In eval mode (or p == 0) the input is returned as is.
inline Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<Buffer>(x.numel());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Buffer out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = u(rng) >= p ? keep_scale : 0.0;
    out[i] = x[i] * (*mask)[i];
  }
  auto xn = x.node();
  return detail::record(x.shape(), std::move(out), {&x}, [xn, mask](detail::Node& self) {
    if (auto* g = detail::grad_sink(xn))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------
// Loss

/// Mean over the batch of -log softmax(logits)[label].
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  detail::require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw LabelError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes - 1) + "]");
  auto probs = std::make_shared<Buffer>(batch * classes);
  double total = 0.0;
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const double* z = logits.data().data() + bi * classes;
    const double zmax = *std::max_element(z, z + classes);
    double s = 0.0;
    for (std::size_t k = 0; k < classes; ++k) s += std::exp(z[k] - zmax);
    const double lse = zmax + std::log(s);
    for (std::size_t k = 0; k < classes; ++k) (*probs)[bi * classes + k] = std::exp(z[k] - lse);
    total += lse - z[labels[bi]];
  }
  auto ln = logits.node();
  std::vector<int> ys(labels.begin(), labels.end());
  return detail::record({}, {total / static_cast<double>(batch)}, {&logits},
                        [ln, probs, ys, batch, classes](detail::Node& self) {
                          if (auto* g = detail::grad_sink(ln)) {
                            const double s = self.grad[0] / static_cast<double>(batch);
                            for (std::size_t bi = 0; bi < batch; ++bi)
                              for (std::size_t k = 0; k < classes; ++k) {
                                const double target = static_cast<std::size_t>(ys[bi]) == k ? 1.0 : 0.0;
                                (*g)[bi * classes + k] += s * ((*probs)[bi * classes + k] - target);
                              }
                          }
                        });
}

/// Row-wise argmax of a [B, K] tensor.
inline std::vector<int> argmax_rows(const Tensor& logits) {
  detail::require_rank(logits, 2, "argmax_rows");
  std::vector<int> out(logits.dim(0));
  const std::size_t k = logits.dim(1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = logits.data().data() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kronecker products

/// Standard Kronecker product of two matrices.
inline Tensor kron(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "kron");
  detail::require_rank(b, 2, "kron");
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(0), s = b.dim(1);
  Buffer out(p * r * q * s);
  const std::size_t width = q * s;
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) {
      const double aij = a[i * q + j];
      for (std::size_t k = 0; k < r; ++k)
        for (std::size_t l = 0; l < s; ++l) out[(i * r + k) * width + j * s + l] = aij * b[k * s + l];
    }
  auto an = a.node(), bn = b.node();
  return detail::record({p * r, q * s}, std::move(out), {&a, &b}, [an, bn, p, q, r, s](detail::Node& self) {
    auto* ga = detail::grad_sink(an);
    auto* gb = detail::grad_sink(bn);
    const std::size_t width = q * s;
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < q; ++j)
        for (std::size_t k = 0; k < r; ++k)
          for (std::size_t l = 0; l < s; ++l) {
            const double dy = self.grad[(i * r + k) * width + j * s + l];
            if (ga) (*ga)[i * q + j] += dy * bn->data[k * s + l];
            if (gb) (*gb)[k * s + l] += dy * an->data[i * q + j];
          }
  });
}

/// Σᵢ Aᵢ ⊗ Fᵢ for A [n,n,n] and F [n, p, q, tail...].
///
/// The Kronecker product is taken on the (p, q) block of each Fᵢ and applied
/// independently to every trailing index, so the result has shape
/// [n·p, n·q, tail...]. With a rank-3 F this is the dense PHM weight; with a
/// rank-4 F [n, Cout/n, Cin/n, K] it is the per-tap PHC kernel.
inline Tensor kron_sum(const Tensor& algebra, const Tensor& filters) {
  detail::require_rank(algebra, 3, "kron_sum (algebra)");
  const std::size_t n = algebra.dim(0);
  if (algebra.dim(1) != n || algebra.dim(2) != n)
    throw DimensionError("kron_sum: algebra must be [n,n,n], got " + shape_str(algebra.shape()));
  if (filters.rank() < 3)
    throw RankError("kron_sum: filters must be [n,p,q,...], got " + shape_str(filters.shape()));
  if (filters.dim(0) != n)
    throw DimensionError("kron_sum: filters " + shape_str(filters.shape()) + " do not hold n=" + std::to_string(n) +
                         " blocks");
  const std::size_t p = filters.dim(1);
  const std::size_t block = filters.numel() / n;  // p * q * tail
  const std::size_t qt = block / p;               // q * tail: one filter row

  // M[(a,b), (r,c)] = Σᵢ A[i,a,b] F[i,r,c]
  Buffer m(n * n * block);
  detail::view(m, n * n, block).noalias() =
      detail::view(algebra.node()->data, n, n * n).transpose() * detail::view(filters.node()->data, n, block);

  Shape shape = filters.shape();
  shape.erase(shape.begin());
  shape[0] = n * p;
  shape[1] *= n;
  Buffer out(n * n * block);
  const std::size_t out_row = n * qt;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t r = 0; r < p; ++r)
        std::copy_n(m.data() + (a * n + b) * block + r * qt, qt, out.data() + (a * p + r) * out_row + b * qt);

  auto an = algebra.node(), fn = filters.node();
  return detail::record(std::move(shape), std::move(out), {&algebra, &filters},
                        [an, fn, n, p, block, qt](detail::Node& self) {
                          auto* ga = detail::grad_sink(an);
                          auto* gf = detail::grad_sink(fn);
                          if (!ga && !gf) return;
                          Buffer dm(n * n * block);
                          const std::size_t out_row = n * qt;
                          for (std::size_t a = 0; a < n; ++a)
                            for (std::size_t b = 0; b < n; ++b)
                              for (std::size_t r = 0; r < p; ++r)
                                std::copy_n(self.grad.data() + (a * p + r) * out_row + b * qt, qt,
                                            dm.data() + (a * n + b) * block + r * qt);
                          auto dmv = detail::view(dm, n * n, block);
                          if (ga)
                            detail::view(*ga, n, n * n).noalias() +=
                                detail::view(fn->data, n, block) * dmv.transpose();
                          if (gf) detail::view(*gf, n, block).noalias() += detail::view(an->data, n, n * n) * dmv;
                        });
}

}  // namespace hyperx
