#pragma once

// Minimal CPU layer library: explicit forward/backward per layer, caffe
// style. Convolutions go through im2col + Eigen GEMM; everything is
// templated on the scalar type so training runs in float and the
// finite-difference checks run in double.

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Dense>

#include <algorithm>
#include <cstring>
#include <map>
#include <memory>
#include <optional>

#include "gebd/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gebd::nn {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapM = Eigen::Map<const MatRM<T>>;

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <class T>
void ensure_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) throw PipelineError(std::string(what) + ": non-finite values");
}

// ---------------------------------------------------------------------------
// Affine: y = W x + b on vectors or row batches [N, in].

template <class T>
struct AffineCtx {
  Tensor<T> x;
};

template <class T>
struct Affine {
  int in = 0, out = 0;
  Tensor<T> w, b, gw, gb;

  void build(int in_, int out_, std::mt19937& rng) {
    in = in_;
    out = out_;
    w = Tensor<T>({out, in});
    b = Tensor<T>({out});
    gw = Tensor<T>({out, in});
    gb = Tensor<T>({out});
    fill_normal(w, rng, std::sqrt(1.0 / in));
  }

  void collect(const std::string& p, ParamList<T>& out_list) {
    out_list.push_back({join_name(p, "weight"), &w, &gw});
    out_list.push_back({join_name(p, "bias"), &b, &gb});
  }

  int64_t param_count() const { return w.numel() + b.numel(); }
  int64_t macs(int64_t rows) const { return rows * static_cast<int64_t>(in) * out; }

  Tensor<T> forward(const Tensor<T>& x, AffineCtx<T>* ctx) const {
    const int64_t n = x.numel() / in;
    Tensor<T> y({n, out});
    CMapM<T> xm(x.data(), n, in);
    CMapM<T> wm(w.data(), out, in);
    MapM<T> ym(y.data(), n, out);
    ym.noalias() = xm * wm.transpose();
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data(), out);
    if (x.rank() == 1) y.reshape({out});
    if (ctx) ctx->x = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const AffineCtx<T>& ctx) {
    const int64_t n = dy.numel() / out;
    CMapM<T> dym(dy.data(), n, out);
    CMapM<T> xm(ctx.x.data(), n, in);
    MapM<T> gwm(gw.data(), out, in);
    gwm.noalias() += dym.transpose() * xm;
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gbm(gb.data(), out);
    gbm.noalias() += dym.colwise().sum().transpose();
    Tensor<T> dx(ctx.x.shape);
    MapM<T> dxm(dx.data(), n, in);
    CMapM<T> wm(w.data(), out, in);
    dxm.noalias() = dym * wm;
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Pointwise nonlinearities.

template <class T>
struct ActCtx {
  Tensor<T> y;
};

template <class T>
Tensor<T> relu(const Tensor<T>& x, ActCtx<T>* ctx) {
  Tensor<T> y = x;
  for (auto& v : y.v) v = v > T(0) ? v : T(0);
  if (ctx) ctx->y = y;
  return y;
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& dy, const ActCtx<T>& ctx) {
  Tensor<T> dx = dy;
  for (int64_t i = 0; i < dx.numel(); ++i)
    if (ctx.y[i] <= T(0)) dx[i] = T(0);
  return dx;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x, ActCtx<T>* ctx) {
  Tensor<T> y = x;
  for (auto& v : y.v) v = T(1) / (T(1) + std::exp(-v));
  if (ctx) ctx->y = y;
  return y;
}

template <class T>
Tensor<T> sigmoid_backward(const Tensor<T>& dy, const ActCtx<T>& ctx) {
  Tensor<T> dx = dy;
  for (int64_t i = 0; i < dx.numel(); ++i) dx[i] *= ctx.y[i] * (T(1) - ctx.y[i]);
  return dx;
}

// ---------------------------------------------------------------------------
// Conv2d on [N, C, H, W], zero padding, square kernels.

template <class T>
struct Conv2dCtx {
  Tensor<T> x;
};

template <class T>
struct Conv2d {
  int ci = 0, co = 0, k = 1, stride = 1, pad = 0;
  bool with_bias = true;
  Tensor<T> w, b, gw, gb;

  void build(int ci_, int co_, int k_, int stride_, int pad_, std::mt19937& rng,
             bool bias = true) {
    ci = ci_;
    co = co_;
    k = k_;
    stride = stride_;
    pad = pad_;
    with_bias = bias;
    w = Tensor<T>({co, ci, k, k});
    gw = Tensor<T>({co, ci, k, k});
    fill_normal(w, rng, std::sqrt(2.0 / (ci * k * k)));
    if (with_bias) {
      b = Tensor<T>({co});
      gb = Tensor<T>({co});
    }
  }

  void collect(const std::string& p, ParamList<T>& out_list) {
    out_list.push_back({join_name(p, "weight"), &w, &gw});
    if (with_bias) out_list.push_back({join_name(p, "bias"), &b, &gb});
  }

  int64_t param_count() const { return w.numel() + b.numel(); }
  int64_t macs(int h_in, int w_in) const {
    int64_t ho = conv_out_dim(h_in, k, stride, pad);
    int64_t wo = conv_out_dim(w_in, k, stride, pad);
    return static_cast<int64_t>(k) * k * ci * co * ho * wo;
  }

  void im2col(const T* img, int h, int wdt, int ho, int wo, T* cols) const {
    // cols: [ci*k*k, ho*wo]
    for (int c = 0; c < ci; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          T* dst = cols + ((static_cast<int64_t>(c) * k + ky) * k + kx) * ho * wo;
          for (int oy = 0; oy < ho; ++oy) {
            int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) {
              std::fill(dst, dst + wo, T(0));
              dst += wo;
              continue;
            }
            const T* src = img + (static_cast<int64_t>(c) * h + iy) * wdt;
            for (int ox = 0; ox < wo; ++ox) {
              int ix = ox * stride + kx - pad;
              *dst++ = (ix >= 0 && ix < wdt) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }

  void col2im(const T* cols, int h, int wdt, int ho, int wo, T* img) const {
    for (int c = 0; c < ci; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const T* src = cols + ((static_cast<int64_t>(c) * k + ky) * k + kx) * ho * wo;
          for (int oy = 0; oy < ho; ++oy) {
            int iy = oy * stride + ky - pad;
            if (iy >= 0 && iy < h) {
              T* dst = img + (static_cast<int64_t>(c) * h + iy) * wdt;
              for (int ox = 0; ox < wo; ++ox) {
                int ix = ox * stride + kx - pad;
                if (ix >= 0 && ix < wdt) dst[ix] += src[ox];
              }
            }
            src += wo;
          }
        }
      }
    }
  }

  Tensor<T> forward(const Tensor<T>& x, Conv2dCtx<T>* ctx) const {
    const int n = static_cast<int>(x.dim(0));
    const int h = static_cast<int>(x.dim(2));
    const int wdt = static_cast<int>(x.dim(3));
    const int ho = conv_out_dim(h, k, stride, pad);
    const int wo = conv_out_dim(wdt, k, stride, pad);
    if (ho <= 0 || wo <= 0)
      throw ValidationError("conv2d: input smaller than kernel/stride footprint");
    Tensor<T> y({n, co, ho, wo});
    const int64_t ckk = static_cast<int64_t>(ci) * k * k;
    const int64_t opix = static_cast<int64_t>(ho) * wo;
#ifdef _OPENMP
#pragma omp parallel
#endif
    {
      std::vector<T> cols(static_cast<size_t>(ckk * opix));
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
      for (int i = 0; i < n; ++i) {
        im2col(x.data() + static_cast<int64_t>(i) * ci * h * wdt, h, wdt, ho, wo, cols.data());
        CMapM<T> wm(w.data(), co, ckk);
        CMapM<T> cm(cols.data(), ckk, opix);
        MapM<T> ym(y.data() + static_cast<int64_t>(i) * co * opix, co, opix);
        ym.noalias() = wm * cm;
        if (with_bias)
          for (int c = 0; c < co; ++c) ym.row(c).array() += b[c];
      }
    }
    if (ctx) ctx->x = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const Conv2dCtx<T>& ctx) {
    const Tensor<T>& x = ctx.x;
    const int n = static_cast<int>(x.dim(0));
    const int h = static_cast<int>(x.dim(2));
    const int wdt = static_cast<int>(x.dim(3));
    const int ho = static_cast<int>(dy.dim(2));
    const int wo = static_cast<int>(dy.dim(3));
    const int64_t ckk = static_cast<int64_t>(ci) * k * k;
    const int64_t opix = static_cast<int64_t>(ho) * wo;
    Tensor<T> dx(x.shape);

    int nth = 1;
#ifdef _OPENMP
    nth = omp_get_max_threads();
#endif
    std::vector<Tensor<T>> gw_part(static_cast<size_t>(nth), Tensor<T>({co, ci, k, k}));
    std::vector<Tensor<T>> gb_part(static_cast<size_t>(nth), Tensor<T>({co}));

#ifdef _OPENMP
#pragma omp parallel
#endif
    {
      int tid = 0;
#ifdef _OPENMP
      tid = omp_get_thread_num();
#endif
      std::vector<T> cols(static_cast<size_t>(ckk * opix));
      std::vector<T> dcols(static_cast<size_t>(ckk * opix));
      MapM<T> gwm(gw_part[static_cast<size_t>(tid)].data(), co, ckk);
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gbm(gb_part[static_cast<size_t>(tid)].data(), co);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
      for (int i = 0; i < n; ++i) {
        im2col(x.data() + static_cast<int64_t>(i) * ci * h * wdt, h, wdt, ho, wo, cols.data());
        CMapM<T> dym(dy.data() + static_cast<int64_t>(i) * co * opix, co, opix);
        CMapM<T> cm(cols.data(), ckk, opix);
        gwm.noalias() += dym * cm.transpose();
        if (with_bias) gbm.noalias() += dym.rowwise().sum();
        CMapM<T> wm(w.data(), co, ckk);
        MapM<T> dcm(dcols.data(), ckk, opix);
        dcm.noalias() = wm.transpose() * dym;
        col2im(dcols.data(), h, wdt, ho, wo, dx.data() + static_cast<int64_t>(i) * ci * h * wdt);
      }
    }
    // Fixed reduction order keeps gradients bitwise reproducible.
    for (int t = 0; t < nth; ++t) {
      for (int64_t j = 0; j < gw.numel(); ++j) gw[j] += gw_part[static_cast<size_t>(t)][j];
      if (with_bias)
        for (int64_t j = 0; j < gb.numel(); ++j) gb[j] += gb_part[static_cast<size_t>(t)][j];
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// MaxPool2d on [N, C, H, W].

template <class T>
struct MaxPool2dCtx {
  std::vector<int32_t> argmax;
  std::vector<int64_t> in_shape;
};

template <class T>
struct MaxPool2d {
  int k = 2, stride = 2, pad = 0;

  int64_t out_dim(int in) const { return conv_out_dim(in, k, stride, pad); }

  Tensor<T> forward(const Tensor<T>& x, MaxPool2dCtx<T>* ctx) const {
    const int n = static_cast<int>(x.dim(0)), c = static_cast<int>(x.dim(1));
    const int h = static_cast<int>(x.dim(2)), wdt = static_cast<int>(x.dim(3));
    const int ho = conv_out_dim(h, k, stride, pad), wo = conv_out_dim(wdt, k, stride, pad);
    Tensor<T> y({n, c, ho, wo});
    if (ctx) {
      ctx->argmax.assign(static_cast<size_t>(y.numel()), 0);
      ctx->in_shape = x.shape;
    }
    for (int i = 0; i < n * c; ++i) {
      const T* plane = x.data() + static_cast<int64_t>(i) * h * wdt;
      T* out = y.data() + static_cast<int64_t>(i) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          int32_t best_idx = 0;
          for (int ky = 0; ky < k; ++ky) {
            int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= wdt) continue;
              T val = plane[iy * wdt + ix];
              if (val > best) {
                best = val;
                best_idx = iy * wdt + ix;
              }
            }
          }
          out[oy * wo + ox] = best;
          if (ctx) ctx->argmax[static_cast<size_t>((static_cast<int64_t>(i) * ho + oy) * wo + ox)] = best_idx;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const MaxPool2dCtx<T>& ctx) const {
    Tensor<T> dx(ctx.in_shape);
    const int h = static_cast<int>(ctx.in_shape[2]), wdt = static_cast<int>(ctx.in_shape[3]);
    const int planes = static_cast<int>(ctx.in_shape[0] * ctx.in_shape[1]);
    const int64_t opix = dy.numel() / planes;
    for (int i = 0; i < planes; ++i) {
      T* dplane = dx.data() + static_cast<int64_t>(i) * h * wdt;
      const T* dout = dy.data() + static_cast<int64_t>(i) * opix;
      const int32_t* am = ctx.argmax.data() + static_cast<int64_t>(i) * opix;
      for (int64_t p = 0; p < opix; ++p) dplane[am[p]] += dout[p];
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// BatchNorm over layouts that put the channel second: [N, C, S] with S the
// flattened spatial (or spatiotemporal) extent. Rank-4 [N,C,H,W] and rank-5
// [B,C,T,H,W] inputs are handled by flattening everything after the channel.

template <class T>
struct BatchNormCtx {
  Tensor<T> xhat;
  std::vector<T> invstd;  // per channel
  std::vector<int64_t> nsc;  // N, C, S
};

template <class T>
struct BatchNorm {
  int c = 0;
  T momentum = T(0.1), eps = T(1e-5);
  Tensor<T> w, b, gw, gb;           // gamma, beta
  Tensor<T> running_mean, running_var;

  void build(int c_, std::mt19937&) {
    c = c_;
    w = Tensor<T>({c}, T(1));
    b = Tensor<T>({c});
    gw = Tensor<T>({c});
    gb = Tensor<T>({c});
    running_mean = Tensor<T>({c});
    running_var = Tensor<T>({c}, T(1));
  }

  void collect(const std::string& p, ParamList<T>& out_list) {
    out_list.push_back({join_name(p, "gamma"), &w, &gw});
    out_list.push_back({join_name(p, "beta"), &b, &gb});
  }
  void collect_buffers(const std::string& p, std::vector<std::pair<std::string, Tensor<T>*>>& out_list) {
    out_list.push_back({join_name(p, "running_mean"), &running_mean});
    out_list.push_back({join_name(p, "running_var"), &running_var});
  }
  int64_t param_count() const { return w.numel() + b.numel(); }

  static void dims_of(const Tensor<T>& x, int c, int64_t& n, int64_t& s) {
    if (x.rank() < 2 || x.dim(1) != c) throw ValidationError("batchnorm: channel mismatch");
    n = x.dim(0);
    s = 1;
    for (int i = 2; i < x.rank(); ++i) s *= x.dim(i);
  }

  Tensor<T> forward(const Tensor<T>& x, BatchNormCtx<T>* ctx, bool training) {
    int64_t n, s;
    dims_of(x, c, n, s);
    const int64_t m = n * s;
    Tensor<T> y(x.shape);
    if (!training) {
      for (int ch = 0; ch < c; ++ch) {
        const T inv = T(1) / std::sqrt(running_var[ch] + eps);
        const T mu = running_mean[ch], g = w[ch], bb = b[ch];
        for (int64_t i = 0; i < n; ++i) {
          const T* xs = x.data() + (i * c + ch) * s;
          T* ys = y.data() + (i * c + ch) * s;
          for (int64_t j = 0; j < s; ++j) ys[j] = g * ((xs[j] - mu) * inv) + bb;
        }
      }
      return y;
    }
    // m == 1 degenerates to y = beta with zero input gradient; still exact.
    if (ctx) {
      ctx->xhat = Tensor<T>(x.shape);
      ctx->invstd.assign(static_cast<size_t>(c), T(0));
      ctx->nsc = {n, static_cast<int64_t>(c), s};
    }
    for (int ch = 0; ch < c; ++ch) {
      T mean = 0, var = 0;
      for (int64_t i = 0; i < n; ++i) {
        const T* xs = x.data() + (i * c + ch) * s;
        for (int64_t j = 0; j < s; ++j) mean += xs[j];
      }
      mean /= T(m);
      for (int64_t i = 0; i < n; ++i) {
        const T* xs = x.data() + (i * c + ch) * s;
        for (int64_t j = 0; j < s; ++j) {
          T d = xs[j] - mean;
          var += d * d;
        }
      }
      var /= T(m);
      const T inv = T(1) / std::sqrt(var + eps);
      const T g = w[ch], bb = b[ch];
      for (int64_t i = 0; i < n; ++i) {
        const T* xs = x.data() + (i * c + ch) * s;
        T* ys = y.data() + (i * c + ch) * s;
        T* xh = ctx ? ctx->xhat.data() + (i * c + ch) * s : nullptr;
        for (int64_t j = 0; j < s; ++j) {
          T v = (xs[j] - mean) * inv;
          if (xh) xh[j] = v;
          ys[j] = g * v + bb;
        }
      }
      if (ctx) ctx->invstd[static_cast<size_t>(ch)] = inv;
      running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * mean;
      const T unbiased = m > 1 ? var * T(m) / T(m - 1) : var;
      running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * unbiased;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const BatchNormCtx<T>& ctx) {
    const int64_t n = ctx.nsc[0], s = ctx.nsc[2];
    const int64_t m = n * s;
    Tensor<T> dx(dy.shape);
    for (int ch = 0; ch < c; ++ch) {
      T sum_dy = 0, sum_dy_xhat = 0;
      for (int64_t i = 0; i < n; ++i) {
        const T* dys = dy.data() + (i * c + ch) * s;
        const T* xh = ctx.xhat.data() + (i * c + ch) * s;
        for (int64_t j = 0; j < s; ++j) {
          sum_dy += dys[j];
          sum_dy_xhat += dys[j] * xh[j];
        }
      }
      gw[ch] += sum_dy_xhat;
      gb[ch] += sum_dy;
      const T g = w[ch], inv = ctx.invstd[static_cast<size_t>(ch)];
      const T k1 = g * inv / T(m);
      for (int64_t i = 0; i < n; ++i) {
        const T* dys = dy.data() + (i * c + ch) * s;
        const T* xh = ctx.xhat.data() + (i * c + ch) * s;
        T* dxs = dx.data() + (i * c + ch) * s;
        for (int64_t j = 0; j < s; ++j)
          dxs[j] = k1 * (T(m) * dys[j] - sum_dy - xh[j] * sum_dy_xhat);
      }
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// BatchNorm over feature tracks laid out [T, C] (channel last).

template <class T>
struct BatchNormTrackCtx {
  Tensor<T> xhat;
  std::vector<T> invstd;
};

template <class T>
struct BatchNormTrack {
  int c = 0;
  T momentum = T(0.1), eps = T(1e-5);
  Tensor<T> w, b, gw, gb, running_mean, running_var;

  void build(int c_, std::mt19937&) {
    c = c_;
    w = Tensor<T>({c}, T(1));
    b = Tensor<T>({c});
    gw = Tensor<T>({c});
    gb = Tensor<T>({c});
    running_mean = Tensor<T>({c});
    running_var = Tensor<T>({c}, T(1));
  }
  void collect(const std::string& p, ParamList<T>& out_list) {
    out_list.push_back({join_name(p, "gamma"), &w, &gw});
    out_list.push_back({join_name(p, "beta"), &b, &gb});
  }
  void collect_buffers(const std::string& p, std::vector<std::pair<std::string, Tensor<T>*>>& out_list) {
    out_list.push_back({join_name(p, "running_mean"), &running_mean});
    out_list.push_back({join_name(p, "running_var"), &running_var});
  }
  int64_t param_count() const { return w.numel() + b.numel(); }

  Tensor<T> forward(const Tensor<T>& x, BatchNormTrackCtx<T>* ctx, bool training) {
    const int64_t t = x.dim(0);
    if (x.dim(1) != c) throw ValidationError("batchnorm_track: channel mismatch");
    Tensor<T> y(x.shape);
    if (!training) {
      for (int ch = 0; ch < c; ++ch) {
        const T inv = T(1) / std::sqrt(running_var[ch] + eps);
        for (int64_t i = 0; i < t; ++i)
          y[i * c + ch] = w[ch] * ((x[i * c + ch] - running_mean[ch]) * inv) + b[ch];
      }
      return y;
    }
    if (t < 2) throw PipelineError("batchnorm_track: need at least 2 timesteps in training");
    if (ctx) {
      ctx->xhat = Tensor<T>(x.shape);
      ctx->invstd.assign(static_cast<size_t>(c), T(0));
    }
    for (int ch = 0; ch < c; ++ch) {
      T mean = 0, var = 0;
      for (int64_t i = 0; i < t; ++i) mean += x[i * c + ch];
      mean /= T(t);
      for (int64_t i = 0; i < t; ++i) {
        T d = x[i * c + ch] - mean;
        var += d * d;
      }
      var /= T(t);
      const T inv = T(1) / std::sqrt(var + eps);
      for (int64_t i = 0; i < t; ++i) {
        T v = (x[i * c + ch] - mean) * inv;
        if (ctx) ctx->xhat[i * c + ch] = v;
        y[i * c + ch] = w[ch] * v + b[ch];
      }
      if (ctx) ctx->invstd[static_cast<size_t>(ch)] = inv;
      running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * mean;
      const T unbiased = t > 1 ? var * T(t) / T(t - 1) : var;
      running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * unbiased;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const BatchNormTrackCtx<T>& ctx) {
    const int64_t t = dy.dim(0);
    Tensor<T> dx(dy.shape);
    for (int ch = 0; ch < c; ++ch) {
      T sum_dy = 0, sum_dy_xhat = 0;
      for (int64_t i = 0; i < t; ++i) {
        sum_dy += dy[i * c + ch];
        sum_dy_xhat += dy[i * c + ch] * ctx.xhat[i * c + ch];
      }
      gw[ch] += sum_dy_xhat;
      gb[ch] += sum_dy;
      const T k1 = w[ch] * ctx.invstd[static_cast<size_t>(ch)] / T(t);
      for (int64_t i = 0; i < t; ++i)
        dx[i * c + ch] =
            k1 * (T(t) * dy[i * c + ch] - sum_dy - ctx.xhat[i * c + ch] * sum_dy_xhat);
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Temporal convolution on tracks [T, Cin] -> [T, Cout], zero padded to keep
// the length ("same" padding, odd kernel).

template <class T>
struct Conv1dCtx {
  Tensor<T> x;
};

template <class T>
struct Conv1dTrack {
  int ci = 0, co = 0, k = 3;
  Tensor<T> w, b, gw, gb;  // w: [co, ci, k]

  void build(int ci_, int co_, int k_, std::mt19937& rng) {
    ci = ci_;
    co = co_;
    k = k_;
    w = Tensor<T>({co, ci, k});
    gw = Tensor<T>({co, ci, k});
    b = Tensor<T>({co});
    gb = Tensor<T>({co});
    fill_normal(w, rng, std::sqrt(2.0 / (ci * k)));
  }
  void collect(const std::string& p, ParamList<T>& out_list) {
    out_list.push_back({join_name(p, "weight"), &w, &gw});
    out_list.push_back({join_name(p, "bias"), &b, &gb});
  }
  int64_t param_count() const { return w.numel() + b.numel(); }
  int64_t macs(int64_t t) const { return t * k * ci * co; }

  Tensor<T> forward(const Tensor<T>& x, Conv1dCtx<T>* ctx) const {
    const int64_t t = x.dim(0);
    if (t < k) throw ValidationError("conv1d: track shorter than kernel");
    const int off = (k - 1) / 2;
    Tensor<T> y({t, co});
    for (int64_t i = 0; i < t; ++i) {
      for (int o = 0; o < co; ++o) {
        T acc = b[o];
        for (int dt = 0; dt < k; ++dt) {
          const int64_t j = i + dt - off;
          if (j < 0 || j >= t) continue;
          const T* xr = x.data() + j * ci;
          const T* wr = w.data() + (static_cast<int64_t>(o) * ci) * k + dt;
          for (int cch = 0; cch < ci; ++cch) acc += wr[static_cast<int64_t>(cch) * k] * xr[cch];
        }
        y[i * co + o] = acc;
      }
    }
    if (ctx) ctx->x = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const Conv1dCtx<T>& ctx) {
    const Tensor<T>& x = ctx.x;
    const int64_t t = x.dim(0);
    const int off = (k - 1) / 2;
    Tensor<T> dx(x.shape);
    for (int64_t i = 0; i < t; ++i) {
      for (int o = 0; o < co; ++o) {
        const T g = dy[i * co + o];
        gb[o] += g;
        for (int dt = 0; dt < k; ++dt) {
          const int64_t j = i + dt - off;
          if (j < 0 || j >= t) continue;
          const T* xr = x.data() + j * ci;
          T* dxr = dx.data() + j * ci;
          T* gwr = gw.data() + (static_cast<int64_t>(o) * ci) * k + dt;
          const T* wr = w.data() + (static_cast<int64_t>(o) * ci) * k + dt;
          for (int cch = 0; cch < ci; ++cch) {
            gwr[static_cast<int64_t>(cch) * k] += g * xr[cch];
            dxr[cch] += g * wr[static_cast<int64_t>(cch) * k];
          }
        }
      }
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Global average pool [N, C, H, W] -> [N, C].

template <class T>
struct GapCtx {
  std::vector<int64_t> in_shape;
};

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x, GapCtx<T>* ctx) {
  const int64_t n = x.dim(0), c = x.dim(1), s = x.numel() / (n * c);
  Tensor<T> y({n, c});
  for (int64_t i = 0; i < n * c; ++i) {
    T acc = 0;
    const T* xs = x.data() + i * s;
    for (int64_t j = 0; j < s; ++j) acc += xs[j];
    y[i] = acc / T(s);
  }
  if (ctx) ctx->in_shape = x.shape;
  return y;
}

template <class T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, const GapCtx<T>& ctx) {
  Tensor<T> dx(ctx.in_shape);
  const int64_t nc = dy.numel();
  const int64_t s = dx.numel() / nc;
  for (int64_t i = 0; i < nc; ++i) {
    const T g = dy[i] / T(s);
    T* dxs = dx.data() + i * s;
    for (int64_t j = 0; j < s; ++j) dxs[j] = g;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Factorized 3D convolution pieces on clips [C, T, H, W] (channel-separated
// style: depthwise 3x3x3 followed by pointwise 1x1x1).

template <class T>
struct Depthwise3dCtx {
  Tensor<T> x;
};

template <class T>
struct DepthwiseConv3d {
  int c = 0, k = 3, stride_hw = 1;  // temporal stride is always 1
  Tensor<T> w, b, gw, gb;           // w: [c, k, k, k]

  void build(int c_, int stride_hw_, std::mt19937& rng) {
    c = c_;
    stride_hw = stride_hw_;
    w = Tensor<T>({c, k, k, k});
    gw = Tensor<T>({c, k, k, k});
    b = Tensor<T>({c});
    gb = Tensor<T>({c});
    fill_normal(w, rng, std::sqrt(2.0 / (k * k * k)));
  }
  void collect(const std::string& p, ParamList<T>& out_list) {
    out_list.push_back({join_name(p, "weight"), &w, &gw});
    out_list.push_back({join_name(p, "bias"), &b, &gb});
  }
  int64_t param_count() const { return w.numel() + b.numel(); }
  int64_t macs(int t, int h, int wdt) const {
    int64_t ho = conv_out_dim(h, k, stride_hw, 1), wo = conv_out_dim(wdt, k, stride_hw, 1);
    return static_cast<int64_t>(k) * k * k * c * t * ho * wo;
  }

  Tensor<T> forward(const Tensor<T>& x, Depthwise3dCtx<T>* ctx) const {
    const int t = static_cast<int>(x.dim(1)), h = static_cast<int>(x.dim(2)),
              wdt = static_cast<int>(x.dim(3));
    const int ho = conv_out_dim(h, k, stride_hw, 1), wo = conv_out_dim(wdt, k, stride_hw, 1);
    Tensor<T> y({c, t, ho, wo});
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int ch = 0; ch < c; ++ch) {
      const T* xc = x.data() + static_cast<int64_t>(ch) * t * h * wdt;
      T* yc = y.data() + static_cast<int64_t>(ch) * t * ho * wo;
      const T* wc = w.data() + static_cast<int64_t>(ch) * k * k * k;
      for (int ot = 0; ot < t; ++ot)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            T acc = b[ch];
            for (int kt = 0; kt < k; ++kt) {
              const int it = ot + kt - 1;
              if (it < 0 || it >= t) continue;
              for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * stride_hw + ky - 1;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = ox * stride_hw + kx - 1;
                  if (ix < 0 || ix >= wdt) continue;
                  acc += wc[(kt * k + ky) * k + kx] * xc[(static_cast<int64_t>(it) * h + iy) * wdt + ix];
                }
              }
            }
            yc[(static_cast<int64_t>(ot) * ho + oy) * wo + ox] = acc;
          }
    }
    if (ctx) ctx->x = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const Depthwise3dCtx<T>& ctx) {
    const Tensor<T>& x = ctx.x;
    const int t = static_cast<int>(x.dim(1)), h = static_cast<int>(x.dim(2)),
              wdt = static_cast<int>(x.dim(3));
    const int ho = static_cast<int>(dy.dim(2)), wo = static_cast<int>(dy.dim(3));
    Tensor<T> dx(x.shape);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int ch = 0; ch < c; ++ch) {
      const T* xc = x.data() + static_cast<int64_t>(ch) * t * h * wdt;
      T* dxc = dx.data() + static_cast<int64_t>(ch) * t * h * wdt;
      const T* dyc = dy.data() + static_cast<int64_t>(ch) * t * ho * wo;
      T* gwc = gw.data() + static_cast<int64_t>(ch) * k * k * k;
      const T* wc = w.data() + static_cast<int64_t>(ch) * k * k * k;
      T gbias = 0;
      for (int ot = 0; ot < t; ++ot)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const T g = dyc[(static_cast<int64_t>(ot) * ho + oy) * wo + ox];
            gbias += g;
            for (int kt = 0; kt < k; ++kt) {
              const int it = ot + kt - 1;
              if (it < 0 || it >= t) continue;
              for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * stride_hw + ky - 1;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = ox * stride_hw + kx - 1;
                  if (ix < 0 || ix >= wdt) continue;
                  const int64_t xi = (static_cast<int64_t>(it) * h + iy) * wdt + ix;
                  gwc[(kt * k + ky) * k + kx] += g * xc[xi];
                  dxc[xi] += g * wc[(kt * k + ky) * k + kx];
                }
              }
            }
          }
      gb[ch] += gbias;
    }
    return dx;
  }
};

template <class T>
struct Pointwise3dCtx {
  Tensor<T> x;
};

template <class T>
struct PointwiseConv3d {
  int ci = 0, co = 0;
  Tensor<T> w, b, gw, gb;  // w: [co, ci]

  void build(int ci_, int co_, std::mt19937& rng) {
    ci = ci_;
    co = co_;
    w = Tensor<T>({co, ci});
    gw = Tensor<T>({co, ci});
    b = Tensor<T>({co});
    gb = Tensor<T>({co});
    fill_normal(w, rng, std::sqrt(2.0 / ci));
  }
  void collect(const std::string& p, ParamList<T>& out_list) {
    out_list.push_back({join_name(p, "weight"), &w, &gw});
    out_list.push_back({join_name(p, "bias"), &b, &gb});
  }
  int64_t param_count() const { return w.numel() + b.numel(); }
  int64_t macs(int64_t voxels) const { return voxels * ci * co; }

  Tensor<T> forward(const Tensor<T>& x, Pointwise3dCtx<T>* ctx) const {
    const int64_t s = x.numel() / ci;
    Tensor<T> y({co, x.dim(1), x.dim(2), x.dim(3)});
    CMapM<T> xm(x.data(), ci, s);
    CMapM<T> wm(w.data(), co, ci);
    MapM<T> ym(y.data(), co, s);
    ym.noalias() = wm * xm;
    for (int o = 0; o < co; ++o) ym.row(o).array() += b[o];
    if (ctx) ctx->x = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const Pointwise3dCtx<T>& ctx) {
    const int64_t s = ctx.x.numel() / ci;
    CMapM<T> dym(dy.data(), co, s);
    CMapM<T> xm(ctx.x.data(), ci, s);
    MapM<T> gwm(gw.data(), co, ci);
    gwm.noalias() += dym * xm.transpose();
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gbm(gb.data(), co);
    gbm.noalias() += dym.rowwise().sum();
    Tensor<T> dx(ctx.x.shape);
    MapM<T> dxm(dx.data(), ci, s);
    CMapM<T> wm(w.data(), co, ci);
    dxm.noalias() = wm.transpose() * dym;
    return dx;
  }
};

// Spatial mean over a clip volume [C, T, H, W] -> track [T, C].
template <class T>
struct Pool3dCtx {
  std::vector<int64_t> in_shape;
};

template <class T>
Tensor<T> spatial_pool_to_track(const Tensor<T>& x, Pool3dCtx<T>* ctx) {
  const int64_t c = x.dim(0), t = x.dim(1), s = x.dim(2) * x.dim(3);
  Tensor<T> y({t, c});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < t; ++i) {
      const T* xs = x.data() + (ch * t + i) * s;
      T acc = 0;
      for (int64_t j = 0; j < s; ++j) acc += xs[j];
      y[i * c + ch] = acc / T(s);
    }
  if (ctx) ctx->in_shape = x.shape;
  return y;
}

template <class T>
Tensor<T> spatial_pool_to_track_backward(const Tensor<T>& dy, const Pool3dCtx<T>& ctx) {
  Tensor<T> dx(ctx.in_shape);
  const int64_t c = ctx.in_shape[0], t = ctx.in_shape[1], s = ctx.in_shape[2] * ctx.in_shape[3];
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < t; ++i) {
      const T g = dy[i * c + ch] / T(s);
      T* dxs = dx.data() + (ch * t + i) * s;
      for (int64_t j = 0; j < s; ++j) dxs[j] = g;
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Adam with step decay. State is kept per parameter index, matching the
// order of the ParamList it was built from.

template <class T>
struct Adam {
  T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
  int64_t t = 0;
  std::vector<Tensor<T>> m, v;

  void attach(const ParamList<T>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.w->shape);
      v.emplace_back(p.w->shape);
    }
    t = 0;
  }

  void step(const ParamList<T>& params, T lr) {
    ++t;
    const T bc1 = T(1) - std::pow(beta1, T(t));
    const T bc2 = T(1) - std::pow(beta2, T(t));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& w = *params[i].w;
      Tensor<T>& g = *params[i].g;
      for (int64_t j = 0; j < w.numel(); ++j) {
        m[i][j] = beta1 * m[i][j] + (T(1) - beta1) * g[j];
        v[i][j] = beta2 * v[i][j] + (T(1) - beta2) * g[j] * g[j];
        const T mhat = m[i][j] / bc1;
        const T vhat = v[i][j] / bc2;
        w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

template <class T>
void zero_grads(const ParamList<T>& params) {
  for (const auto& p : params) p.g->zero();
}

}  // namespace gebd::nn
