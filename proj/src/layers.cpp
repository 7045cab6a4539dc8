#include "softdiamond/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace softdiamond::net {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeMismatch(what);
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  require(a.shape() == b.shape(), std::string(what) + ": " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, stride, pad, oh, ow;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, std::size_t stride,
                           std::size_t padding) {
  require(x.rank() == 4, "conv2d expects [N, C, H, W] input, got " + shape_string(x.shape()));
  require(w.rank() == 4 && w.dim(2) == w.dim(3), "conv2d expects a square [O, C, k, k] kernel");
  require(w.dim(1) == x.dim(1), "conv2d channel mismatch");
  require(stride >= 1, "conv2d stride must be >= 1");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, padding, 0, 0};
  require(g.h + 2 * padding >= g.k && g.w + 2 * padding >= g.k, "conv2d kernel larger than input");
  g.oh = (g.h + 2 * padding - g.k) / stride + 1;
  g.ow = (g.w + 2 * padding - g.k) / stride + 1;
  return g;
}

// Column matrix [C*k*k, N*OH*OW] for the whole batch.
RowMat im2col(const Tensor& x, const ConvGeometry& g) {
  const std::size_t spatial = g.oh * g.ow;
  RowMat cols = RowMat::Zero(static_cast<Eigen::Index>(g.c * g.k * g.k),
                             static_cast<Eigen::Index>(g.n * spatial));
  const double* xp = x.ptr();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = cols.row(static_cast<Eigen::Index>((ch * g.k + ki) * g.k + kj)).data();
        for (std::size_t n = 0; n < g.n; ++n) {
          const double* plane = xp + (n * g.c + ch) * g.h * g.w;
          double* out = row + n * spatial;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              out[oy * g.ow + ox] = plane[static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const RowMat& cols, const ConvGeometry& g, Tensor& dx) {
  const std::size_t spatial = g.oh * g.ow;
  double* dp = dx.ptr();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = cols.row(static_cast<Eigen::Index>((ch * g.k + ki) * g.k + kj)).data();
        for (std::size_t n = 0; n < g.n; ++n) {
          double* plane = dp + (n * g.c + ch) * g.h * g.w;
          const double* in = row + n * spatial;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              plane[static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)] += in[oy * g.ow + ox];
            }
          }
        }
      }
    }
  }
}

// Channel layout helpers shared by batchnorm on [N, C] and [N, C, H, W].
struct ChannelLayout {
  std::size_t n, c, inner;
};

ChannelLayout channel_layout(const Tensor& x) {
  require(x.rank() == 2 || x.rank() == 4, "batchnorm expects [N, C] or [N, C, H, W]");
  return {x.dim(0), x.dim(1), x.rank() == 4 ? x.dim(2) * x.dim(3) : 1};
}

}  // namespace

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) require(d >= 1, "tensor extents must be >= 1");
  values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto d : shape_) require(d >= 1, "tensor extents must be >= 1");
  require(shape_size(shape_) == values_.size(),
          "tensor shape " + shape_string(shape_) + " does not match " +
              std::to_string(values_.size()) + " values");
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "Dense";
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::MaxPool: return "MaxPool";
    case LayerKind::ResidualAdd: return "ResidualAdd";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::Softmax: return "Softmax";
  }
  return "Unknown";
}

namespace ops {

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 2 && w.rank() == 2 && w.dim(1) == x.dim(1),
          "dense: input " + shape_string(x.shape()) + " vs weight " + shape_string(w.shape()));
  require(b.size() == w.dim(0), "dense: bias width");
  Tensor y({x.dim(0), w.dim(0)});
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto in = static_cast<Eigen::Index>(x.dim(1));
  const auto out = static_cast<Eigen::Index>(w.dim(0));
  MapMat ym(y.ptr(), n, out);
  ym.noalias() = ConstMapMat(x.ptr(), n, in) * ConstMapMat(w.ptr(), out, in).transpose();
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.ptr(), out);
  return y;
}

DenseGrads dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  require(dy.rank() == 2 && dy.dim(0) == x.dim(0) && dy.dim(1) == w.dim(0), "dense backward: dy");
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto in = static_cast<Eigen::Index>(x.dim(1));
  const auto out = static_cast<Eigen::Index>(w.dim(0));
  DenseGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({w.dim(0)})};
  ConstMapMat dym(dy.ptr(), n, out);
  MapMat(g.dx.ptr(), n, in).noalias() = dym * ConstMapMat(w.ptr(), out, in);
  MapMat(g.dw.ptr(), out, in).noalias() = dym.transpose() * ConstMapMat(x.ptr(), n, in);
  Eigen::Map<Eigen::RowVectorXd>(g.db.ptr(), out) = dym.colwise().sum();
  return g;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                      std::size_t padding) {
  const ConvGeometry g = conv_geometry(x, w, stride, padding);
  require(b.size() == g.o, "conv2d: bias width");
  const RowMat cols = im2col(x, g);
  const std::size_t spatial = g.oh * g.ow;
  const RowMat out = ConstMapMat(w.ptr(), static_cast<Eigen::Index>(g.o),
                                 static_cast<Eigen::Index>(g.c * g.k * g.k)) * cols;
  Tensor y({g.n, g.o, g.oh, g.ow});
  double* yp = y.ptr();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      const double* src = out.row(static_cast<Eigen::Index>(o)).data() + n * spatial;
      double* dst = yp + (n * g.o + o) * spatial;
      for (std::size_t p = 0; p < spatial; ++p) dst[p] = src[p] + b[o];
    }
  }
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, std::size_t stride,
                          std::size_t padding) {
  const ConvGeometry g = conv_geometry(x, w, stride, padding);
  require(dy.shape() == Shape({g.n, g.o, g.oh, g.ow}), "conv2d backward: dy shape");
  const std::size_t spatial = g.oh * g.ow;
  RowMat dym(static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(g.n * spatial));
  const double* dp = dy.ptr();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      std::copy_n(dp + (n * g.o + o) * spatial, spatial,
                  dym.row(static_cast<Eigen::Index>(o)).data() + n * spatial);
    }
  }
  const RowMat cols = im2col(x, g);
  ConvGrads grads{Tensor(x.shape()), Tensor(w.shape()), Tensor({g.o})};
  const auto kk = static_cast<Eigen::Index>(g.c * g.k * g.k);
  const auto oo = static_cast<Eigen::Index>(g.o);
  MapMat(grads.dw.ptr(), oo, kk).noalias() = dym * cols.transpose();
  Eigen::Map<Eigen::VectorXd>(grads.db.ptr(), oo) = dym.rowwise().sum();
  const RowMat dcols = ConstMapMat(w.ptr(), oo, kk).transpose() * dym;
  col2im(dcols, g, grads.dx);
  return grads;
}

BatchNormResult batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                  double eps, bool training, const Tensor& running_mean,
                                  const Tensor& running_var) {
  const ChannelLayout l = channel_layout(x);
  require(gamma.size() == l.c && beta.size() == l.c && running_mean.size() == l.c &&
              running_var.size() == l.c,
          "batchnorm: parameter width");
  BatchNormResult r{Tensor(x.shape()), {Tensor(x.shape()), {}, {}, {}}};
  auto& cache = r.cache;
  cache.mean.assign(l.c, 0.0);
  cache.var.assign(l.c, 0.0);
  cache.inv_std.assign(l.c, 0.0);
  const double count = static_cast<double>(l.n * l.inner);
  const double* xp = x.ptr();
  for (std::size_t ch = 0; ch < l.c; ++ch) {
    double mean = running_mean[ch];
    double var = running_var[ch];
    if (training) {
      double sum = 0.0;
      for (std::size_t n = 0; n < l.n; ++n) {
        const double* p = xp + (n * l.c + ch) * l.inner;
        for (std::size_t i = 0; i < l.inner; ++i) sum += p[i];
      }
      mean = sum / count;
      double sq = 0.0;
      for (std::size_t n = 0; n < l.n; ++n) {
        const double* p = xp + (n * l.c + ch) * l.inner;
        for (std::size_t i = 0; i < l.inner; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / count;
    }
    const double inv_std = 1.0 / std::sqrt(var + eps);
    cache.mean[ch] = mean;
    cache.var[ch] = var;
    cache.inv_std[ch] = inv_std;
    for (std::size_t n = 0; n < l.n; ++n) {
      const std::size_t off = (n * l.c + ch) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) {
        const double xh = (xp[off + i] - mean) * inv_std;
        cache.x_hat[off + i] = xh;
        r.y[off + i] = gamma[ch] * xh + beta[ch];
      }
    }
  }
  return r;
}

BatchNormGrads batchnorm_backward(const Tensor& dy, const Tensor& gamma,
                                  const BatchNormCache& cache, bool training) {
  require_same(dy, cache.x_hat, "batchnorm backward");
  const ChannelLayout l = channel_layout(dy);
  BatchNormGrads g{Tensor(dy.shape()), Tensor({l.c}), Tensor({l.c})};
  const double count = static_cast<double>(l.n * l.inner);
  for (std::size_t ch = 0; ch < l.c; ++ch) {
    double sum_dy = 0.0;
    double sum_dy_xh = 0.0;
    for (std::size_t n = 0; n < l.n; ++n) {
      const std::size_t off = (n * l.c + ch) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xh += dy[off + i] * cache.x_hat[off + i];
      }
    }
    g.dbeta[ch] = sum_dy;
    g.dgamma[ch] = sum_dy_xh;
    const double scale = gamma[ch] * cache.inv_std[ch];
    for (std::size_t n = 0; n < l.n; ++n) {
      const std::size_t off = (n * l.c + ch) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) {
        if (training) {
          g.dx[off + i] = scale * (dy[off + i] - sum_dy / count -
                                   cache.x_hat[off + i] * sum_dy_xh / count);
        } else {
          g.dx[off + i] = scale * dy[off + i];
        }
      }
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  require_same(x, dy, "relu backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

MaxPoolResult maxpool_forward(const Tensor& x, std::size_t pool, std::size_t stride) {
  require(x.rank() == 4, "maxpool expects [N, C, H, W]");
  require(pool >= 1 && stride >= 1, "maxpool window and stride must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h >= pool && w >= pool, "maxpool window larger than input");
  const std::size_t oh = (h - pool) / stride + 1;
  const std::size_t ow = (w - pool) / stride + 1;
  MaxPoolResult r{Tensor({n, c, oh, ow}), std::vector<std::size_t>(n * c * oh * ow)};
  std::size_t out = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++out) {
        std::size_t best = base + (oy * stride) * w + ox * stride;
        for (std::size_t i = 0; i < pool; ++i) {
          for (std::size_t j = 0; j < pool; ++j) {
            const std::size_t idx = base + (oy * stride + i) * w + ox * stride + j;
            if (x[idx] > x[best]) best = idx;
          }
        }
        r.y[out] = x[best];
        r.argmax[out] = best;
      }
    }
  }
  return r;
}

Tensor maxpool_backward(const Shape& x_shape, const std::vector<std::size_t>& argmax,
                        const Tensor& dy) {
  require(argmax.size() == dy.size(), "maxpool backward: argmax size");
  Tensor dx(x_shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
  return dx;
}

Tensor residual_add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "residual add");
  Tensor y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

Tensor softmax_forward(const Tensor& logits) {
  require(logits.rank() == 2, "softmax expects [N, K]");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor y(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double* in = logits.ptr() + r * k;
    double* out = y.ptr() + r * k;
    const double m = *std::max_element(in, in + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[j] = std::exp(in[j] - m);
      sum += out[j];
    }
    for (std::size_t j = 0; j < k; ++j) out[j] /= sum;
  }
  return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& dy) {
  require_same(y, dy, "softmax backward");
  const std::size_t n = y.dim(0), k = y.dim(1);
  Tensor dx(y.shape());
  for (std::size_t r = 0; r < n; ++r) {
    double dot = 0.0;
    for (std::size_t j = 0; j < k; ++j) dot += y[r * k + j] * dy[r * k + j];
    for (std::size_t j = 0; j < k; ++j) dx[r * k + j] = y[r * k + j] * (dy[r * k + j] - dot);
  }
  return dx;
}

}  // namespace ops

}  // namespace softdiamond::net
