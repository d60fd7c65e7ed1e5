#include "sarnas/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sarnas/error.hpp"

namespace sarnas {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a.rank() != b.rank()) {
    throw DimensionError(std::string(what) + ": rank mismatch " + a.str() + " vs " + b.str());
  }
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (a[i] != b[i]) {
      throw DimensionError(std::string(what) + ": axis " + std::to_string(i) + " differs, " + a.str() + " vs " +
                           b.str());
    }
  }
}

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride_h, stride_w, pad_h, pad_w, dil_h, dil_w;
  std::size_t groups, out_h, out_w;

  std::size_t in_per_group() const { return in_channels / groups; }
  std::size_t out_per_group() const { return out_channels / groups; }
  std::size_t col_rows() const { return in_per_group() * kernel_h * kernel_w; }
  std::size_t out_plane() const { return out_h * out_w; }
  std::size_t col_cols() const { return batch * out_plane(); }
};

// Unfolds the receptive fields of one channel group into a
// (Cin_g*kh*kw) x (B*Ho*Wo) matrix.
template <typename T>
void im2col(const T* input, const ConvGeometry& g, std::size_t group, T* col) {
  const std::size_t cols = g.col_cols();
  const std::size_t plane = g.height * g.width;
  for (std::size_t c = 0; c < g.in_per_group(); ++c) {
    const std::size_t channel = group * g.in_per_group() + c;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        T* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * cols;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* src = input + (b * g.in_channels + channel) * plane;
          T* dst = row + b * g.out_plane();
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride_h + ki * g.dil_h) -
                            static_cast<std::ptrdiff_t>(g.pad_h);
            T* out = dst + oh * g.out_w;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) {
              std::fill(out, out + g.out_w, T(0));
              continue;
            }
            const T* line = src + static_cast<std::size_t>(ih) * g.width;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride_w + kj * g.dil_w) -
                              static_cast<std::ptrdiff_t>(g.pad_w);
              out[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) ? T(0) : line[iw];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds the column matrix back onto the input grad.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, std::size_t group, T* input_grad) {
  const std::size_t cols = g.col_cols();
  const std::size_t plane = g.height * g.width;
  for (std::size_t c = 0; c < g.in_per_group(); ++c) {
    const std::size_t channel = group * g.in_per_group() + c;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const T* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * cols;
        for (std::size_t b = 0; b < g.batch; ++b) {
          T* dst = input_grad + (b * g.in_channels + channel) * plane;
          const T* src = row + b * g.out_plane();
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride_h + ki * g.dil_h) -
                            static_cast<std::ptrdiff_t>(g.pad_h);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
            T* line = dst + static_cast<std::size_t>(ih) * g.width;
            const T* in = src + oh * g.out_w;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride_w + kj * g.dil_w) -
                              static_cast<std::ptrdiff_t>(g.pad_w);
              if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.width)) line[iw] += in[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t window_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                                 std::size_t dilation, const char* axis) {
  if (stride == 0 || dilation == 0 || kernel == 0) {
    throw ConfigError(std::string("zero stride, dilation or kernel on axis ") + axis);
  }
  const std::size_t span = dilation * (kernel - 1) + 1;
  if (in + 2 * padding < span) {
    throw DimensionError(std::string("kernel span ") + std::to_string(span) + " exceeds padded " + axis +
                         " extent " + std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - span) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Conv2dOptions& options) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  const std::size_t groups = options.groups;
  if (groups == 0 || xs[kChannel] % groups != 0 || ws[0] % groups != 0) {
    throw ConfigError("conv2d: groups=" + std::to_string(groups) + " must divide in channels " +
                      std::to_string(xs[kChannel]) + " and out channels " + std::to_string(ws[0]));
  }
  if (ws[1] != xs[kChannel] / groups) {
    throw DimensionError("conv2d: channel axis mismatch, input " + xs.str() + " vs weight " + ws.str() +
                         " with groups=" + std::to_string(groups));
  }

  ConvGeometry g{};
  g.batch = xs[kBatch];
  g.in_channels = xs[kChannel];
  g.height = xs[kFrame];
  g.width = xs[kJoint];
  g.out_channels = ws[0];
  g.kernel_h = ws[2];
  g.kernel_w = ws[3];
  g.stride_h = options.stride.first;
  g.stride_w = options.stride.second;
  g.pad_h = options.padding.first;
  g.pad_w = options.padding.second;
  g.dil_h = options.dilation.first;
  g.dil_w = options.dilation.second;
  g.groups = groups;
  g.out_h = window_output_extent(g.height, g.kernel_h, g.stride_h, g.pad_h, g.dil_h, "frame");
  g.out_w = window_output_extent(g.width, g.kernel_w, g.stride_w, g.pad_w, g.dil_w, "joint");

  auto out = make_result<T>(Shape{g.batch, g.out_channels, g.out_h, g.out_w}, "conv2d", {&input, &weight});

  const std::size_t rows = g.col_rows();
  const std::size_t cols = g.col_cols();
  const std::size_t cout_g = g.out_per_group();
  std::vector<T> col(rows * cols);
  std::vector<T> prod(cout_g * cols);
  const T* x = input.values().data();
  const T* w = weight.values().data();
  for (std::size_t grp = 0; grp < groups; ++grp) {
    im2col(x, g, grp, col.data());
    ConstMatrixMap<T> wm(w + grp * cout_g * rows, cout_g, rows);
    ConstMatrixMap<T> cm(col.data(), rows, cols);
    MatrixMap<T> pm(prod.data(), cout_g, cols);
    pm.noalias() = wm * cm;
    for (std::size_t o = 0; o < cout_g; ++o) {
      for (std::size_t b = 0; b < g.batch; ++b) {
        const T* src = prod.data() + o * cols + b * g.out_plane();
        std::copy(src, src + g.out_plane(),
                  out->value.data() + (b * g.out_channels + grp * cout_g + o) * g.out_plane());
      }
    }
  }

  if (out->requires_grad) {
    out->backward = [g](TapeNode<T>& self) {
      auto& in_node = *self.parents[0];
      auto& w_node = *self.parents[1];
      const std::size_t rows = g.col_rows();
      const std::size_t cols = g.col_cols();
      const std::size_t cout_g = g.out_per_group();
      std::vector<T> col(rows * cols);
      std::vector<T> dprod(cout_g * cols);
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        for (std::size_t o = 0; o < cout_g; ++o) {
          for (std::size_t b = 0; b < g.batch; ++b) {
            const T* src = self.grad.data() + (b * g.out_channels + grp * cout_g + o) * g.out_plane();
            std::copy(src, src + g.out_plane(), dprod.data() + o * cols + b * g.out_plane());
          }
        }
        ConstMatrixMap<T> dm(dprod.data(), cout_g, cols);
        if (w_node.requires_grad) {
          im2col(in_node.value.data(), g, grp, col.data());
          ConstMatrixMap<T> cm(col.data(), rows, cols);
          MatrixMap<T> dw(w_node.grad_buffer().data() + grp * cout_g * rows, cout_g, rows);
          dw.noalias() += dm * cm.transpose();
        }
        if (in_node.requires_grad) {
          ConstMatrixMap<T> wm(w_node.value.data() + grp * cout_g * rows, cout_g, rows);
          MatrixMap<T> cm(col.data(), rows, cols);
          cm.noalias() = wm.transpose() * dm;
          col2im(col.data(), g, grp, in_node.grad_buffer().data());
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, PoolMode mode, std::size_t stride, std::size_t kernel,
                 std::size_t padding) {
  require_rank(input.shape(), 4, "pool2d input");
  if (stride != 1 && stride != 2) throw ConfigError("pool2d: stride must be 1 or 2");
  const Shape& xs = input.shape();
  const std::size_t B = xs[kBatch], C = xs[kChannel], H = xs[kFrame], W = xs[kJoint];
  const std::size_t Ho = window_output_extent(H, kernel, stride, padding, 1, "frame");
  const std::size_t Wo = window_output_extent(W, kernel, stride, padding, 1, "joint");
  auto out = make_result<T>(Shape{B, C, Ho, Wo}, mode == PoolMode::Max ? "max_pool2d" : "avg_pool2d", {&input});

  const T* x = input.values().data();
  T* y = out->value.data();
  const bool track = out->requires_grad;
  // Max: flat argmax index per output. Average: in-bounds count per output cell.
  std::vector<std::size_t> argmax;
  if (track && mode == PoolMode::Max) argmax.resize(out->value.size());
  std::vector<T> counts(Ho * Wo);

  auto window = [stride, padding](std::size_t o, std::size_t k, std::size_t limit) {
    const auto start = static_cast<std::ptrdiff_t>(o * stride + k) - static_cast<std::ptrdiff_t>(padding);
    return std::pair<bool, std::size_t>{start >= 0 && start < static_cast<std::ptrdiff_t>(limit),
                                        static_cast<std::size_t>(std::max<std::ptrdiff_t>(start, 0))};
  };

  for (std::size_t oh = 0; oh < Ho; ++oh) {
    for (std::size_t ow = 0; ow < Wo; ++ow) {
      std::size_t n = 0;
      for (std::size_t ki = 0; ki < kernel; ++ki) {
        for (std::size_t kj = 0; kj < kernel; ++kj) {
          if (window(oh, ki, H).first && window(ow, kj, W).first) ++n;
        }
      }
      counts[oh * Wo + ow] = static_cast<T>(n);
    }
  }

  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* plane = x + bc * H * W;
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        T acc = mode == PoolMode::Max ? -std::numeric_limits<T>::infinity() : T(0);
        std::size_t best = 0;
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          auto [row_ok, ih] = window(oh, ki, H);
          if (!row_ok) continue;
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            auto [col_ok, iw] = window(ow, kj, W);
            if (!col_ok) continue;
            const T v = plane[ih * W + iw];
            if (mode == PoolMode::Max) {
              if (v > acc) {
                acc = v;
                best = bc * H * W + ih * W + iw;
              }
            } else {
              acc += v;
            }
          }
        }
        const std::size_t flat = bc * Ho * Wo + oh * Wo + ow;
        if (mode == PoolMode::Max) {
          y[flat] = acc;
          if (track) argmax[flat] = best;
        } else {
          y[flat] = acc / counts[oh * Wo + ow];
        }
      }
    }
  }

  if (track) {
    if (mode == PoolMode::Max) {
      out->backward = [argmax = std::move(argmax)](TapeNode<T>& self) {
        auto& in = *self.parents[0];
        auto& gx = in.grad_buffer();
        for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += self.grad[i];
      };
    } else {
      out->backward = [=, counts = std::move(counts)](TapeNode<T>& self) {
        auto& in = *self.parents[0];
        auto& gx = in.grad_buffer();
        for (std::size_t bc = 0; bc < B * C; ++bc) {
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            for (std::size_t ow = 0; ow < Wo; ++ow) {
              const T share = self.grad[bc * Ho * Wo + oh * Wo + ow] / counts[oh * Wo + ow];
              for (std::size_t ki = 0; ki < kernel; ++ki) {
                auto [row_ok, ih] = window(oh, ki, H);
                if (!row_ok) continue;
                for (std::size_t kj = 0; kj < kernel; ++kj) {
                  auto [col_ok, iw] = window(ow, kj, W);
                  if (col_ok) gx[bc * H * W + ih * W + iw] += share;
                }
              }
            }
          }
        }
      };
    }
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift,
                      RunningStats<T>& stats, NormMode mode, T eps, T momentum) {
  require_rank(input.shape(), 4, "batchnorm2d input");
  const Shape& xs = input.shape();
  const std::size_t B = xs[kBatch], C = xs[kChannel], P = xs[kFrame] * xs[kJoint];
  if (scale.numel() != C || shift.numel() != C || stats.mean.size() != C || stats.var.size() != C) {
    throw DimensionError("batchnorm2d: channel axis " + std::to_string(C) + " does not match scale/shift/stats");
  }
  const std::size_t M = B * P;
  if (mode == NormMode::Train && M < 2) {
    throw InputError("batchnorm2d: degenerate batch, B*T*N = " + std::to_string(M) + " < 2 in train mode");
  }
  auto out = make_result<T>(xs, "batchnorm2d", {&input, &scale, &shift});
  const T* x = input.values().data();
  const T* gamma = scale.values().data();
  const T* beta = shift.values().data();
  T* y = out->value.data();

  std::vector<T> inv_std(C);
  std::vector<T> xhat(out->requires_grad ? input.numel() : 0);
  for (std::size_t c = 0; c < C; ++c) {
    T mean, var;
    if (mode == NormMode::Train) {
      double s = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = x + (b * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(M);
      double ss = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = x + (b * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      mean = static_cast<T>(m);
      var = static_cast<T>(ss / static_cast<double>(M));
      const T unbiased = static_cast<T>(ss / static_cast<double>(M - 1));
      stats.mean[c] = (T(1) - momentum) * stats.mean[c] + momentum * mean;
      stats.var[c] = (T(1) - momentum) * stats.var[c] + momentum * unbiased;
    } else {
      mean = stats.mean[c];
      var = stats.var[c];
    }
    inv_std[c] = T(1) / std::sqrt(var + eps);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) {
        const T h = (x[base + i] - mean) * inv_std[c];
        if (!xhat.empty()) xhat[base + i] = h;
        y[base + i] = gamma[c] * h + beta[c];
      }
    }
  }

  if (out->requires_grad) {
    out->backward = [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](TapeNode<T>& self) {
      auto& in = *self.parents[0];
      auto& sc = *self.parents[1];
      auto& sh = *self.parents[2];
      const T* dy = self.grad.data();
      for (std::size_t c = 0; c < C; ++c) {
        double sum_dy = 0, sum_dy_xhat = 0;
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t base = (b * C + c) * P;
          for (std::size_t i = 0; i < P; ++i) {
            sum_dy += dy[base + i];
            sum_dy_xhat += dy[base + i] * xhat[base + i];
          }
        }
        if (sc.requires_grad) sc.grad_buffer()[c] += static_cast<T>(sum_dy_xhat);
        if (sh.requires_grad) sh.grad_buffer()[c] += static_cast<T>(sum_dy);
        if (!in.requires_grad) continue;
        auto& gx = in.grad_buffer();
        const T g = sc.value[c] * inv_std[c];
        if (mode == NormMode::Train) {
          const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(M));
          const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(M));
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t base = (b * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) {
              gx[base + i] += g * (dy[base + i] - mean_dy - xhat[base + i] * mean_dy_xhat);
            }
          }
        } else {
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t base = (b * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) gx[base + i] += g * dy[base + i];
          }
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  auto out = make_result<T>(input.shape(), "relu", {&input});
  const auto x = input.values();
  for (std::size_t i = 0; i < x.size(); ++i) out->value[i] = x[i] > T(0) ? x[i] : T(0);
  if (out->requires_grad) {
    out->backward = [](TapeNode<T>& self) {
      auto& in = *self.parents[0];
      auto& gx = in.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (in.value[i] > T(0)) gx[i] += self.grad[i];
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  auto out = make_result<T>(input.shape(), "sigmoid", {&input});
  const auto x = input.values();
  for (std::size_t i = 0; i < x.size(); ++i) out->value[i] = T(1) / (T(1) + std::exp(-x[i]));
  if (out->requires_grad) {
    out->backward = [](TapeNode<T>& self) {
      auto& gx = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const T y = self.value[i];
        gx[i] += self.grad[i] * y * (T(1) - y);
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(input.shape(), 2, "linear input");
  require_rank(weight.shape(), 2, "linear weight");
  const std::size_t B = input.shape()[0], F = input.shape()[1], G = weight.shape()[0];
  if (weight.shape()[1] != F) {
    throw DimensionError("linear: feature axis mismatch, input " + input.shape().str() + " vs weight " +
                         weight.shape().str());
  }
  if (bias.numel() != G) {
    throw DimensionError("linear: bias has " + std::to_string(bias.numel()) + " entries, expected " +
                         std::to_string(G));
  }
  auto out = make_result<T>(Shape{B, G}, "linear", {&input, &weight, &bias});
  ConstMatrixMap<T> xm(input.values().data(), B, F);
  ConstMatrixMap<T> wm(weight.values().data(), G, F);
  MatrixMap<T> ym(out->value.data(), B, G);
  ym.noalias() = xm * wm.transpose();
  const T* b = bias.values().data();
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < G; ++j) ym(i, j) += b[j];
  }
  if (out->requires_grad) {
    out->backward = [B, F, G](TapeNode<T>& self) {
      auto& in = *self.parents[0];
      auto& w = *self.parents[1];
      auto& bias_node = *self.parents[2];
      ConstMatrixMap<T> dy(self.grad.data(), B, G);
      if (in.requires_grad) {
        MatrixMap<T> dx(in.grad_buffer().data(), B, F);
        dx.noalias() += dy * ConstMatrixMap<T>(w.value.data(), G, F);
      }
      if (w.requires_grad) {
        MatrixMap<T> dw(w.grad_buffer().data(), G, F);
        dw.noalias() += dy.transpose() * ConstMatrixMap<T>(in.value.data(), B, F);
      }
      if (bias_node.requires_grad) {
        auto& db = bias_node.grad_buffer();
        for (std::size_t i = 0; i < B; ++i) {
          for (std::size_t j = 0; j < G; ++j) db[j] += dy(i, j);
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> global_avg_spatial(const Tensor<T>& input) {
  require_rank(input.shape(), 4, "global_avg_spatial input");
  const Shape& xs = input.shape();
  const std::size_t BC = xs[kBatch] * xs[kChannel], P = xs[kFrame] * xs[kJoint];
  auto out = make_result<T>(Shape{xs[kBatch], xs[kChannel]}, "global_avg_spatial", {&input});
  const T* x = input.values().data();
  for (std::size_t i = 0; i < BC; ++i) {
    T s = 0;
    for (std::size_t p = 0; p < P; ++p) s += x[i * P + p];
    out->value[i] = s / static_cast<T>(P);
  }
  if (out->requires_grad) {
    out->backward = [BC, P](TapeNode<T>& self) {
      auto& gx = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < BC; ++i) {
        const T share = self.grad[i] / static_cast<T>(P);
        for (std::size_t p = 0; p < P; ++p) gx[i * P + p] += share;
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  auto out = make_result<T>(Shape{1}, "sum", {&input});
  T s = 0;
  for (T v : input.values()) s += v;
  out->value[0] = s;
  if (out->requires_grad) {
    out->backward = [](TapeNode<T>& self) {
      auto& gx = self.parents[0]->grad_buffer();
      for (auto& g : gx) g += self.grad[0];
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> channel_concat(const std::vector<Tensor<T>>& inputs) {
  if (inputs.empty()) throw DimensionError("channel_concat: no inputs");
  const Shape& first = inputs.front().shape();
  require_rank(first, 4, "channel_concat input");
  std::size_t channels = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    require_rank(s, 4, "channel_concat input");
    for (std::size_t axis : {kBatch, kFrame, kJoint}) {
      if (s[axis] != first[axis]) {
        throw DimensionError("channel_concat: axis " + std::to_string(axis) + " differs, " + first.str() + " vs " +
                             s.str());
      }
    }
    channels += s[kChannel];
  }
  const std::size_t B = first[kBatch], P = first[kFrame] * first[kJoint];
  auto out = make_result<T>(Shape{B, channels, first[kFrame], first[kJoint]}, "channel_concat", inputs);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& t : inputs) {
    const std::size_t ci = t.shape()[kChannel];
    for (std::size_t b = 0; b < B; ++b) {
      const T* src = t.values().data() + b * ci * P;
      std::copy(src, src + ci * P, out->value.data() + (b * channels + offset) * P);
    }
    offsets.push_back(offset);
    offset += ci;
  }
  if (out->requires_grad) {
    out->backward = [B, P, channels, offsets = std::move(offsets)](TapeNode<T>& self) {
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        auto& in = *self.parents[k];
        if (!in.requires_grad) continue;
        const std::size_t ci = in.shape[kChannel];
        auto& gx = in.grad_buffer();
        for (std::size_t b = 0; b < B; ++b) {
          const T* src = self.grad.data() + (b * channels + offsets[k]) * P;
          T* dst = gx.data() + b * ci * P;
          for (std::size_t i = 0; i < ci * P; ++i) dst[i] += src[i];
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  auto out = make_result<T>(a.shape(), "add", {&a, &b});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.values()[i] + b.values()[i];
  if (out->requires_grad) {
    out->backward = [](TapeNode<T>& self) {
      for (auto& p : self.parents) {
        if (!p->requires_grad) continue;
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  auto out = make_result<T>(a.shape(), "sub", {&a, &b});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.values()[i] - b.values()[i];
  if (out->requires_grad) {
    out->backward = [](TapeNode<T>& self) {
      if (self.parents[0]->requires_grad) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (self.parents[1]->requires_grad) {
        auto& g = self.parents[1]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  auto out = make_result<T>(a.shape(), "mul", {&a, &b});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.values()[i] * b.values()[i];
  if (out->requires_grad) {
    out->backward = [](TapeNode<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        auto& g = pa.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
      }
      if (pb.requires_grad) {
        auto& g = pb.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& input, T factor) {
  auto out = make_result<T>(input.shape(), "scale", {&input});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = input.values()[i] * factor;
  if (out->requires_grad) {
    out->backward = [factor](TapeNode<T>& self) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> channel_scale(const Tensor<T>& input, const Tensor<T>& gate) {
  require_rank(input.shape(), 4, "channel_scale input");
  require_rank(gate.shape(), 2, "channel_scale gate");
  const Shape& xs = input.shape();
  if (gate.shape()[0] != xs[kBatch] || gate.shape()[1] != xs[kChannel]) {
    throw DimensionError("channel_scale: gate " + gate.shape().str() + " does not match (B,C) of " + xs.str());
  }
  const std::size_t BC = xs[kBatch] * xs[kChannel], P = xs[kFrame] * xs[kJoint];
  auto out = make_result<T>(xs, "channel_scale", {&input, &gate});
  const T* x = input.values().data();
  const T* s = gate.values().data();
  for (std::size_t i = 0; i < BC; ++i) {
    for (std::size_t p = 0; p < P; ++p) out->value[i * P + p] = x[i * P + p] * s[i];
  }
  if (out->requires_grad) {
    out->backward = [BC, P](TapeNode<T>& self) {
      auto& in = *self.parents[0];
      auto& gate_node = *self.parents[1];
      for (std::size_t i = 0; i < BC; ++i) {
        if (in.requires_grad) {
          auto& gx = in.grad_buffer();
          for (std::size_t p = 0; p < P; ++p) gx[i * P + p] += self.grad[i * P + p] * gate_node.value[i];
        }
        if (gate_node.requires_grad) {
          T acc = 0;
          for (std::size_t p = 0; p < P; ++p) acc += self.grad[i * P + p] * in.value[i * P + p];
          gate_node.grad_buffer()[i] += acc;
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> shift_spatial(const Tensor<T>& input) {
  require_rank(input.shape(), 4, "shift_spatial input");
  const Shape& xs = input.shape();
  const std::size_t BC = xs[kBatch] * xs[kChannel], H = xs[kFrame], W = xs[kJoint];
  auto out = make_result<T>(xs, "shift_spatial", {&input});
  const T* x = input.values().data();
  for (std::size_t i = 0; i < BC; ++i) {
    for (std::size_t h = 0; h + 1 < H; ++h) {
      for (std::size_t w = 0; w + 1 < W; ++w) out->value[(i * H + h) * W + w] = x[(i * H + h + 1) * W + w + 1];
    }
  }
  if (out->requires_grad) {
    out->backward = [BC, H, W](TapeNode<T>& self) {
      auto& gx = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < BC; ++i) {
        for (std::size_t h = 0; h + 1 < H; ++h) {
          for (std::size_t w = 0; w + 1 < W; ++w) gx[(i * H + h + 1) * W + w + 1] += self.grad[(i * H + h) * W + w];
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& input) {
  require_rank(input.shape(), 2, "softmax_rows input");
  const std::size_t R = input.shape()[0], K = input.shape()[1];
  auto out = make_result<T>(input.shape(), "softmax_rows", {&input});
  const T* x = input.values().data();
  for (std::size_t r = 0; r < R; ++r) {
    const T* row = x + r * K;
    const T peak = *std::max_element(row, row + K);
    T total = 0;
    for (std::size_t k = 0; k < K; ++k) {
      out->value[r * K + k] = std::exp(row[k] - peak);
      total += out->value[r * K + k];
    }
    for (std::size_t k = 0; k < K; ++k) out->value[r * K + k] /= total;
  }
  if (out->requires_grad) {
    out->backward = [R, K](TapeNode<T>& self) {
      auto& gx = self.parents[0]->grad_buffer();
      for (std::size_t r = 0; r < R; ++r) {
        T dot = 0;
        for (std::size_t k = 0; k < K; ++k) dot += self.grad[r * K + k] * self.value[r * K + k];
        for (std::size_t k = 0; k < K; ++k) {
          gx[r * K + k] += self.value[r * K + k] * (self.grad[r * K + k] - dot);
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> weighted_sum(const std::vector<Tensor<T>>& terms, const Tensor<T>& weights, std::size_t offset) {
  if (terms.empty()) throw DimensionError("weighted_sum: no terms");
  if (offset + terms.size() > weights.numel()) {
    throw DimensionError("weighted_sum: weights have " + std::to_string(weights.numel()) + " entries, need " +
                         std::to_string(offset + terms.size()));
  }
  const Shape& shape = terms.front().shape();
  for (const auto& t : terms) require_same_shape(shape, t.shape(), "weighted_sum");
  std::vector<Tensor<T>> inputs = terms;
  inputs.push_back(weights);
  auto out = make_result<T>(shape, "weighted_sum", inputs);
  const auto w = weights.values();
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const T wk = w[offset + k];
    const auto v = terms[k].values();
    for (std::size_t i = 0; i < v.size(); ++i) out->value[i] += wk * v[i];
  }
  if (out->requires_grad) {
    const std::size_t count = terms.size();
    out->backward = [count, offset](TapeNode<T>& self) {
      auto& wnode = *self.parents[count];
      for (std::size_t k = 0; k < count; ++k) {
        auto& term = *self.parents[k];
        if (term.requires_grad) {
          const T wk = wnode.value[offset + k];
          auto& g = term.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += wk * self.grad[i];
        }
        if (wnode.requires_grad) {
          T acc = 0;
          for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * term.value[i];
          wnode.grad_buffer()[offset + k] += acc;
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy logits");
  const std::size_t B = logits.shape()[0], K = logits.shape()[1];
  if (labels.size() != B) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch axis " +
                         std::to_string(B));
  }
  for (std::size_t i = 0; i < B; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= K) {
      throw InputError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                       std::to_string(i) + " outside [0," + std::to_string(K) + ")");
    }
  }
  std::vector<T> probs(B * K);
  double total = 0;
  const T* z = logits.values().data();
  for (std::size_t i = 0; i < B; ++i) {
    const T* row = z + i * K;
    const T peak = *std::max_element(row, row + K);
    double denom = 0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(static_cast<double>(row[k] - peak));
    const double log_denom = std::log(denom);
    for (std::size_t k = 0; k < K; ++k) {
      probs[i * K + k] = static_cast<T>(std::exp(static_cast<double>(row[k] - peak) - log_denom));
    }
    total += log_denom - static_cast<double>(row[labels[i]] - peak);
  }
  auto out = make_result<T>(Shape{1}, "softmax_cross_entropy", {&logits});
  out->value[0] = static_cast<T>(total / static_cast<double>(B));
  if (out->requires_grad) {
    std::vector<int> owned(labels.begin(), labels.end());
    out->backward = [B, K, probs, owned = std::move(owned)](TapeNode<T>& self) {
      auto& gx = self.parents[0]->grad_buffer();
      const T s = self.grad[0] / static_cast<T>(B);
      for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
          const T onehot = static_cast<std::size_t>(owned[i]) == k ? T(1) : T(0);
          gx[i * K + k] += s * (probs[i * K + k] - onehot);
        }
      }
    };
  }
  return {Tensor<T>(out), std::move(probs)};
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

#define SARNAS_INSTANTIATE_OPS(T)                                                                            \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Conv2dOptions&);                       \
  template Tensor<T> pool2d(const Tensor<T>&, PoolMode, std::size_t, std::size_t, std::size_t);              \
  template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, RunningStats<T>&,     \
                                 NormMode, T, T);                                                            \
  template Tensor<T> relu(const Tensor<T>&);                                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                              \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> global_avg_spatial(const Tensor<T>&);                                                   \
  template Tensor<T> sum(const Tensor<T>&);                                                                  \
  template Tensor<T> channel_concat(const std::vector<Tensor<T>>&);                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                                             \
  template Tensor<T> channel_scale(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> shift_spatial(const Tensor<T>&);                                                        \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                         \
  template Tensor<T> weighted_sum(const std::vector<Tensor<T>>&, const Tensor<T>&, std::size_t);             \
  template CrossEntropyResult<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);              \
  template bool all_finite(const Tensor<T>&);

SARNAS_INSTANTIATE_OPS(float)
SARNAS_INSTANTIATE_OPS(double)

}  // namespace sarnas
