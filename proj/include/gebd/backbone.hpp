#pragma once

// Backbones: tiny/standard 2D residual nets with stage truncation (L1..L4)
// and multi-level (L*) pooled outputs, plus a small factorized 3D network
// (channel-separated style) for joint spatiotemporal modeling.

#include <array>
#include <optional>

#include "gebd/core_types.hpp"
#include "gebd/nn.hpp"

namespace gebd {

struct StageSpec {
  int blocks = 1;
  int width = 0;
};

struct BackboneSpec {
  std::string family;  // residual2d_tiny | residual2d_standard | residual3d_tiny
  std::array<StageSpec, 4> stages;
  std::optional<std::string> pretrained;

  static BackboneSpec tiny2d(const std::vector<int>& widths = {16, 32, 64, 128}) {
    BackboneSpec s;
    s.family = "residual2d_tiny";
    for (int i = 0; i < 4; ++i) s.stages[static_cast<size_t>(i)] = {1, widths[static_cast<size_t>(i)]};
    return s;
  }
  // Bottleneck layout matching the ubiquitous 4-stage / (3,4,6,3) residual
  // net; kept for multiply-accumulate verification at 224x224.
  static BackboneSpec standard2d() {
    BackboneSpec s;
    s.family = "residual2d_standard";
    s.stages = {StageSpec{3, 256}, StageSpec{4, 512}, StageSpec{6, 1024}, StageSpec{3, 2048}};
    return s;
  }
  static BackboneSpec tiny3d(const std::vector<int>& widths = {16, 32, 64, 128}) {
    BackboneSpec s;
    s.family = "residual3d_tiny";
    for (int i = 0; i < 4; ++i) s.stages[static_cast<size_t>(i)] = {1, widths[static_cast<size_t>(i)]};
    return s;
  }

  void validate() const {
    for (const auto& st : stages)
      if (st.blocks < 1 || st.width < 1) throw ValidationError("backbone spec: bad stage");
    for (size_t i = 1; i < 4; ++i)
      if (stages[i].width <= stages[i - 1].width)
        throw ValidationError("backbone spec: widths must be strictly increasing");
  }
};

struct LayerProfile {
  std::string name;
  int64_t macs = 0;
  int64_t params = 0;
};

// ---------------------------------------------------------------------------
// 2D residual blocks.

template <class T>
struct BasicBlock2dCtx {
  nn::Conv2dCtx<T> c1, c2, sk;
  nn::BatchNormCtx<T> b1, b2, bsk;
  nn::ActCtx<T> a1, a2;
  nn::Tensor<T> skip_out;  // saved to re-split the residual sum
};

template <class T>
struct BasicBlock2d {
  int cin = 0, cout = 0, stride = 1;
  bool projected = false;
  nn::Conv2d<T> conv1, conv2, skip_conv;
  nn::BatchNorm<T> bn1, bn2, skip_bn;

  void build(int cin_, int cout_, int stride_, std::mt19937& rng) {
    cin = cin_;
    cout = cout_;
    stride = stride_;
    projected = (cin != cout) || (stride != 1);
    conv1.build(cin, cout, 3, stride, 1, rng, false);
    bn1.build(cout, rng);
    conv2.build(cout, cout, 3, 1, 1, rng, false);
    bn2.build(cout, rng);
    if (projected) {
      skip_conv.build(cin, cout, 1, stride, 0, rng, false);
      skip_bn.build(cout, rng);
    }
  }

  void collect(const std::string& p, nn::ParamList<T>& out) {
    conv1.collect(nn::join_name(p, "conv1"), out);
    bn1.collect(nn::join_name(p, "bn1"), out);
    conv2.collect(nn::join_name(p, "conv2"), out);
    bn2.collect(nn::join_name(p, "bn2"), out);
    if (projected) {
      skip_conv.collect(nn::join_name(p, "conv_skip"), out);
      skip_bn.collect(nn::join_name(p, "bn_skip"), out);
    }
  }
  void collect_buffers(const std::string& p, std::vector<std::pair<std::string, nn::Tensor<T>*>>& out) {
    bn1.collect_buffers(nn::join_name(p, "bn1"), out);
    bn2.collect_buffers(nn::join_name(p, "bn2"), out);
    if (projected) skip_bn.collect_buffers(nn::join_name(p, "bn_skip"), out);
  }

  void profile(const std::string& p, int h, int w, std::vector<LayerProfile>& out) const {
    out.push_back({nn::join_name(p, "conv1"), conv1.macs(h, w),
                   conv1.param_count() + bn1.param_count()});
    const int ho = nn::conv_out_dim(h, 3, stride, 1), wo = nn::conv_out_dim(w, 3, stride, 1);
    out.push_back({nn::join_name(p, "conv2"), conv2.macs(ho, wo),
                   conv2.param_count() + bn2.param_count()});
    if (projected)
      out.push_back({nn::join_name(p, "conv_skip"), skip_conv.macs(h, w),
                     skip_conv.param_count() + skip_bn.param_count()});
  }
  void out_dims(int h, int w, int& ho, int& wo) const {
    ho = nn::conv_out_dim(h, 3, stride, 1);
    wo = nn::conv_out_dim(w, 3, stride, 1);
  }

  nn::Tensor<T> forward(const nn::Tensor<T>& x, BasicBlock2dCtx<T>* ctx, bool training) {
    auto y = conv1.forward(x, ctx ? &ctx->c1 : nullptr);
    y = bn1.forward(y, ctx ? &ctx->b1 : nullptr, training);
    y = nn::relu(y, ctx ? &ctx->a1 : nullptr);
    y = conv2.forward(y, ctx ? &ctx->c2 : nullptr);
    y = bn2.forward(y, ctx ? &ctx->b2 : nullptr, training);
    nn::Tensor<T> skip = x;
    if (projected) {
      skip = skip_conv.forward(x, ctx ? &ctx->sk : nullptr);
      skip = skip_bn.forward(skip, ctx ? &ctx->bsk : nullptr, training);
    }
    for (int64_t i = 0; i < y.numel(); ++i) y[i] += skip[i];
    y = nn::relu(y, ctx ? &ctx->a2 : nullptr);
    return y;
  }

  nn::Tensor<T> backward(const nn::Tensor<T>& dy, BasicBlock2dCtx<T>& ctx) {
    auto d = nn::relu_backward(dy, ctx.a2);
    nn::Tensor<T> dskip = d;  // residual sum fans out
    auto dpath = bn2.backward(d, ctx.b2);
    dpath = conv2.backward(dpath, ctx.c2);
    dpath = nn::relu_backward(dpath, ctx.a1);
    dpath = bn1.backward(dpath, ctx.b1);
    dpath = conv1.backward(dpath, ctx.c1);
    if (projected) {
      auto ds = skip_bn.backward(dskip, ctx.bsk);
      ds = skip_conv.backward(ds, ctx.sk);
      for (int64_t i = 0; i < dpath.numel(); ++i) dpath[i] += ds[i];
    } else {
      for (int64_t i = 0; i < dpath.numel(); ++i) dpath[i] += dskip[i];
    }
    return dpath;
  }
};

// Bottleneck block (1x1 down, 3x3, 1x1 up; expansion 4). Used by the
// standard profile backbone.
template <class T>
struct BottleneckBlock2dCtx {
  nn::Conv2dCtx<T> c1, c2, c3, sk;
  nn::BatchNormCtx<T> b1, b2, b3, bsk;
  nn::ActCtx<T> a1, a2, a3;
};

template <class T>
struct BottleneckBlock2d {
  int cin = 0, cout = 0, cmid = 0, stride = 1;
  bool projected = false;
  nn::Conv2d<T> conv1, conv2, conv3, skip_conv;
  nn::BatchNorm<T> bn1, bn2, bn3, skip_bn;

  void build(int cin_, int cout_, int stride_, std::mt19937& rng) {
    cin = cin_;
    cout = cout_;
    cmid = cout / 4;
    stride = stride_;
    projected = (cin != cout) || (stride != 1);
    conv1.build(cin, cmid, 1, 1, 0, rng, false);
    bn1.build(cmid, rng);
    conv2.build(cmid, cmid, 3, stride, 1, rng, false);
    bn2.build(cmid, rng);
    conv3.build(cmid, cout, 1, 1, 0, rng, false);
    bn3.build(cout, rng);
    if (projected) {
      skip_conv.build(cin, cout, 1, stride, 0, rng, false);
      skip_bn.build(cout, rng);
    }
  }

  void collect(const std::string& p, nn::ParamList<T>& out) {
    conv1.collect(nn::join_name(p, "conv1"), out);
    bn1.collect(nn::join_name(p, "bn1"), out);
    conv2.collect(nn::join_name(p, "conv2"), out);
    bn2.collect(nn::join_name(p, "bn2"), out);
    conv3.collect(nn::join_name(p, "conv3"), out);
    bn3.collect(nn::join_name(p, "bn3"), out);
    if (projected) {
      skip_conv.collect(nn::join_name(p, "conv_skip"), out);
      skip_bn.collect(nn::join_name(p, "bn_skip"), out);
    }
  }
  void collect_buffers(const std::string& p, std::vector<std::pair<std::string, nn::Tensor<T>*>>& out) {
    bn1.collect_buffers(nn::join_name(p, "bn1"), out);
    bn2.collect_buffers(nn::join_name(p, "bn2"), out);
    bn3.collect_buffers(nn::join_name(p, "bn3"), out);
    if (projected) skip_bn.collect_buffers(nn::join_name(p, "bn_skip"), out);
  }

  void profile(const std::string& p, int h, int w, std::vector<LayerProfile>& out) const {
    out.push_back({nn::join_name(p, "conv1"), conv1.macs(h, w),
                   conv1.param_count() + bn1.param_count()});
    out.push_back({nn::join_name(p, "conv2"), conv2.macs(h, w),
                   conv2.param_count() + bn2.param_count()});
    const int ho = nn::conv_out_dim(h, 3, stride, 1), wo = nn::conv_out_dim(w, 3, stride, 1);
    out.push_back({nn::join_name(p, "conv3"), conv3.macs(ho, wo),
                   conv3.param_count() + bn3.param_count()});
    if (projected)
      out.push_back({nn::join_name(p, "conv_skip"), skip_conv.macs(h, w),
                     skip_conv.param_count() + skip_bn.param_count()});
  }
  void out_dims(int h, int w, int& ho, int& wo) const {
    ho = nn::conv_out_dim(h, 3, stride, 1);
    wo = nn::conv_out_dim(w, 3, stride, 1);
  }

  nn::Tensor<T> forward(const nn::Tensor<T>& x, BottleneckBlock2dCtx<T>* ctx, bool training) {
    auto y = conv1.forward(x, ctx ? &ctx->c1 : nullptr);
    y = bn1.forward(y, ctx ? &ctx->b1 : nullptr, training);
    y = nn::relu(y, ctx ? &ctx->a1 : nullptr);
    y = conv2.forward(y, ctx ? &ctx->c2 : nullptr);
    y = bn2.forward(y, ctx ? &ctx->b2 : nullptr, training);
    y = nn::relu(y, ctx ? &ctx->a2 : nullptr);
    y = conv3.forward(y, ctx ? &ctx->c3 : nullptr);
    y = bn3.forward(y, ctx ? &ctx->b3 : nullptr, training);
    nn::Tensor<T> skip = x;
    if (projected) {
      skip = skip_conv.forward(x, ctx ? &ctx->sk : nullptr);
      skip = skip_bn.forward(skip, ctx ? &ctx->bsk : nullptr, training);
    }
    for (int64_t i = 0; i < y.numel(); ++i) y[i] += skip[i];
    y = nn::relu(y, ctx ? &ctx->a3 : nullptr);
    return y;
  }

  nn::Tensor<T> backward(const nn::Tensor<T>& dy, BottleneckBlock2dCtx<T>& ctx) {
    auto d = nn::relu_backward(dy, ctx.a3);
    nn::Tensor<T> dskip = d;
    auto dpath = bn3.backward(d, ctx.b3);
    dpath = conv3.backward(dpath, ctx.c3);
    dpath = nn::relu_backward(dpath, ctx.a2);
    dpath = bn2.backward(dpath, ctx.b2);
    dpath = conv2.backward(dpath, ctx.c2);
    dpath = nn::relu_backward(dpath, ctx.a1);
    dpath = bn1.backward(dpath, ctx.b1);
    dpath = conv1.backward(dpath, ctx.c1);
    if (projected) {
      auto ds = skip_bn.backward(dskip, ctx.bsk);
      ds = skip_conv.backward(ds, ctx.sk);
      for (int64_t i = 0; i < dpath.numel(); ++i) dpath[i] += ds[i];
    } else {
      for (int64_t i = 0; i < dpath.numel(); ++i) dpath[i] += dskip[i];
    }
    return dpath;
  }
};

// ---------------------------------------------------------------------------
// 2D backbone: stem + 4 stages; forward yields spatially pooled per-frame
// vectors for the requested stages.

template <class T>
struct Backbone2dCtx {
  nn::Conv2dCtx<T> stem_conv;
  nn::BatchNormCtx<T> stem_bn;
  nn::ActCtx<T> stem_act;
  nn::MaxPool2dCtx<T> stem_pool;
  std::vector<BasicBlock2dCtx<T>> basic;
  std::vector<BottleneckBlock2dCtx<T>> bottleneck;
  std::vector<nn::GapCtx<T>> gaps;  // one per emitted level
};

template <class T>
struct Backbone2d {
  BackboneSpec spec;
  bool bottleneck_blocks = false;
  int stem_width = 0, stem_kernel = 3, stem_stride = 2, stem_pad = 1;
  int pool_kernel = 2, pool_stride = 2, pool_pad = 0;
  nn::Conv2d<T> stem_conv;
  nn::BatchNorm<T> stem_bn;
  nn::MaxPool2d<T> stem_pool;
  std::vector<BasicBlock2d<T>> basic;
  std::vector<BottleneckBlock2d<T>> bottleneck;
  std::vector<std::pair<int, int>> stage_range;  // [begin, end) indices per stage

  void build(const BackboneSpec& sp, std::mt19937& rng) {
    spec = sp;
    spec.validate();
    bottleneck_blocks = (sp.family == "residual2d_standard");
    if (bottleneck_blocks) {
      stem_width = 64;
      stem_kernel = 7;
      stem_stride = 2;
      stem_pad = 3;
      pool_kernel = 3;
      pool_stride = 2;
      pool_pad = 1;
    } else {
      stem_width = sp.stages[0].width;
      stem_kernel = 3;
      stem_stride = 2;
      stem_pad = 1;
      pool_kernel = 2;
      pool_stride = 2;
      pool_pad = 0;
    }
    stem_conv.build(3, stem_width, stem_kernel, stem_stride, stem_pad, rng, false);
    stem_bn.build(stem_width, rng);
    stem_pool.k = pool_kernel;
    stem_pool.stride = pool_stride;
    stem_pool.pad = pool_pad;
    int cin = stem_width;
    for (int s = 0; s < 4; ++s) {
      const int begin = bottleneck_blocks ? static_cast<int>(bottleneck.size())
                                          : static_cast<int>(basic.size());
      for (int bidx = 0; bidx < spec.stages[static_cast<size_t>(s)].blocks; ++bidx) {
        const int stride = (s > 0 && bidx == 0) ? 2 : 1;
        const int cout = spec.stages[static_cast<size_t>(s)].width;
        if (bottleneck_blocks) {
          bottleneck.emplace_back();
          bottleneck.back().build(cin, cout, stride, rng);
        } else {
          basic.emplace_back();
          basic.back().build(cin, cout, stride, rng);
        }
        cin = cout;
      }
      const int end = bottleneck_blocks ? static_cast<int>(bottleneck.size())
                                        : static_cast<int>(basic.size());
      stage_range.emplace_back(begin, end);
    }
  }

  int level_width(int level) const { return spec.stages[static_cast<size_t>(level - 1)].width; }

  void collect(const std::string& p, nn::ParamList<T>& out) {
    stem_conv.collect(nn::join_name(p, "stem.conv"), out);
    stem_bn.collect(nn::join_name(p, "stem.bn"), out);
    for (int s = 0; s < 4; ++s)
      for (int i = stage_range[static_cast<size_t>(s)].first; i < stage_range[static_cast<size_t>(s)].second; ++i) {
        const std::string name =
            nn::join_name(p, "stage" + std::to_string(s + 1) + ".block" +
                                 std::to_string(i - stage_range[static_cast<size_t>(s)].first));
        if (bottleneck_blocks)
          bottleneck[static_cast<size_t>(i)].collect(name, out);
        else
          basic[static_cast<size_t>(i)].collect(name, out);
      }
  }
  void collect_buffers(const std::string& p, std::vector<std::pair<std::string, nn::Tensor<T>*>>& out) {
    stem_bn.collect_buffers(nn::join_name(p, "stem.bn"), out);
    for (int s = 0; s < 4; ++s)
      for (int i = stage_range[static_cast<size_t>(s)].first; i < stage_range[static_cast<size_t>(s)].second; ++i) {
        const std::string name =
            nn::join_name(p, "stage" + std::to_string(s + 1) + ".block" +
                                 std::to_string(i - stage_range[static_cast<size_t>(s)].first));
        if (bottleneck_blocks)
          bottleneck[static_cast<size_t>(i)].collect_buffers(name, out);
        else
          basic[static_cast<size_t>(i)].collect_buffers(name, out);
      }
  }

  // Analytic multiply-accumulates per frame, truncated at `level`.
  std::vector<LayerProfile> profile(int h, int w, int level) const {
    std::vector<LayerProfile> out;
    out.push_back({"stem.conv", stem_conv.macs(h, w), stem_conv.param_count() + stem_bn.param_count()});
    int ch = nn::conv_out_dim(h, stem_kernel, stem_stride, stem_pad);
    int cw = nn::conv_out_dim(w, stem_kernel, stem_stride, stem_pad);
    ch = nn::conv_out_dim(ch, pool_kernel, pool_stride, pool_pad);
    cw = nn::conv_out_dim(cw, pool_kernel, pool_stride, pool_pad);
    for (int s = 0; s < 4 && s < level; ++s) {
      for (int i = stage_range[static_cast<size_t>(s)].first; i < stage_range[static_cast<size_t>(s)].second; ++i) {
        const std::string name = "stage" + std::to_string(s + 1) + ".block" +
                                 std::to_string(i - stage_range[static_cast<size_t>(s)].first);
        if (bottleneck_blocks) {
          bottleneck[static_cast<size_t>(i)].profile(name, ch, cw, out);
          bottleneck[static_cast<size_t>(i)].out_dims(ch, cw, ch, cw);
        } else {
          basic[static_cast<size_t>(i)].profile(name, ch, cw, out);
          basic[static_cast<size_t>(i)].out_dims(ch, cw, ch, cw);
        }
      }
    }
    return out;
  }

  // x: [N, 3, H, W]. Returns pooled per-frame features for the requested
  // levels: multi_level=false -> one tensor [N, C_level]; true -> one per
  // stage 1..level.
  std::vector<nn::Tensor<T>> forward(const nn::Tensor<T>& x, int level, bool multi_level,
                                     Backbone2dCtx<T>* ctx, bool training) {
    if (level < 1 || level > 4) throw ValidationError("backbone: truncation level out of range");
    if (ctx) {
      ctx->basic.resize(basic.size());
      ctx->bottleneck.resize(bottleneck.size());
      ctx->gaps.resize(static_cast<size_t>(multi_level ? level : 1));
    }
    auto y = stem_conv.forward(x, ctx ? &ctx->stem_conv : nullptr);
    y = stem_bn.forward(y, ctx ? &ctx->stem_bn : nullptr, training);
    y = nn::relu(y, ctx ? &ctx->stem_act : nullptr);
    y = stem_pool.forward(y, ctx ? &ctx->stem_pool : nullptr);
    std::vector<nn::Tensor<T>> pooled;
    for (int s = 0; s < level; ++s) {
      for (int i = stage_range[static_cast<size_t>(s)].first; i < stage_range[static_cast<size_t>(s)].second; ++i) {
        if (bottleneck_blocks)
          y = bottleneck[static_cast<size_t>(i)].forward(
              y, ctx ? &ctx->bottleneck[static_cast<size_t>(i)] : nullptr, training);
        else
          y = basic[static_cast<size_t>(i)].forward(
              y, ctx ? &ctx->basic[static_cast<size_t>(i)] : nullptr, training);
      }
      if (multi_level || s == level - 1) {
        const size_t gi = pooled.size();
        pooled.push_back(nn::global_avg_pool(y, ctx ? &ctx->gaps[gi] : nullptr));
      }
    }
    return pooled;
  }

  // dpooled aligns with the tensors returned by forward.
  nn::Tensor<T> backward(const std::vector<nn::Tensor<T>>& dpooled, int level, bool multi_level,
                         Backbone2dCtx<T>& ctx) {
    nn::Tensor<T> d;
    int gi = static_cast<int>(dpooled.size()) - 1;
    for (int s = level - 1; s >= 0; --s) {
      const bool emitted = multi_level || s == level - 1;
      if (emitted) {
        auto dg = nn::global_avg_pool_backward(dpooled[static_cast<size_t>(gi)],
                                               ctx.gaps[static_cast<size_t>(gi)]);
        if (d.numel() == 0)
          d = std::move(dg);
        else
          for (int64_t i = 0; i < d.numel(); ++i) d[i] += dg[i];
        --gi;
      }
      for (int i = stage_range[static_cast<size_t>(s)].second - 1;
           i >= stage_range[static_cast<size_t>(s)].first; --i) {
        if (bottleneck_blocks)
          d = bottleneck[static_cast<size_t>(i)].backward(d, ctx.bottleneck[static_cast<size_t>(i)]);
        else
          d = basic[static_cast<size_t>(i)].backward(d, ctx.basic[static_cast<size_t>(i)]);
      }
    }
    d = stem_pool.backward(d, ctx.stem_pool);
    d = nn::relu_backward(d, ctx.stem_act);
    d = stem_bn.backward(d, ctx.stem_bn);
    d = stem_conv.backward(d, ctx.stem_conv);
    return d;
  }
};

// ---------------------------------------------------------------------------
// 3D blocks (depthwise 3x3x3 + pointwise) over clips [C, T, H, W]. Spatial
// downsampling between stages is a 2x2 average pool; temporal length is
// preserved throughout.

template <class T>
struct AvgPoolHWCtx {
  std::vector<int64_t> in_shape;
};

template <class T>
nn::Tensor<T> avg_pool_hw(const nn::Tensor<T>& x, AvgPoolHWCtx<T>* ctx) {
  const int64_t c = x.dim(0), t = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t ho = h / 2, wo = w / 2;
  nn::Tensor<T> y({c, t, ho, wo});
  for (int64_t ct = 0; ct < c * t; ++ct) {
    const T* in = x.data() + ct * h * w;
    T* out = y.data() + ct * ho * wo;
    for (int64_t oy = 0; oy < ho; ++oy)
      for (int64_t ox = 0; ox < wo; ++ox)
        out[oy * wo + ox] = (in[(2 * oy) * w + 2 * ox] + in[(2 * oy) * w + 2 * ox + 1] +
                             in[(2 * oy + 1) * w + 2 * ox] + in[(2 * oy + 1) * w + 2 * ox + 1]) /
                            T(4);
  }
  if (ctx) ctx->in_shape = x.shape;
  return y;
}

template <class T>
nn::Tensor<T> avg_pool_hw_backward(const nn::Tensor<T>& dy, const AvgPoolHWCtx<T>& ctx) {
  nn::Tensor<T> dx(ctx.in_shape);
  const int64_t c = ctx.in_shape[0], t = ctx.in_shape[1], h = ctx.in_shape[2], w = ctx.in_shape[3];
  const int64_t ho = h / 2, wo = w / 2;
  for (int64_t ct = 0; ct < c * t; ++ct) {
    T* dxp = dx.data() + ct * h * w;
    const T* dyp = dy.data() + ct * ho * wo;
    for (int64_t oy = 0; oy < ho; ++oy)
      for (int64_t ox = 0; ox < wo; ++ox) {
        const T g = dyp[oy * wo + ox] / T(4);
        dxp[(2 * oy) * w + 2 * ox] += g;
        dxp[(2 * oy) * w + 2 * ox + 1] += g;
        dxp[(2 * oy + 1) * w + 2 * ox] += g;
        dxp[(2 * oy + 1) * w + 2 * ox + 1] += g;
      }
  }
  return dx;
}

template <class T>
struct SepBlock3dCtx {
  nn::Depthwise3dCtx<T> d1, d2;
  nn::Pointwise3dCtx<T> p1, p2, sk;
  nn::BatchNormCtx<T> b1, b2, bsk;
  nn::ActCtx<T> a1, a2;
};

template <class T>
struct SepBlock3d {
  int cin = 0, cout = 0;
  bool projected = false;
  nn::DepthwiseConv3d<T> dw1, dw2;
  nn::PointwiseConv3d<T> pw1, pw2, skip_pw;
  nn::BatchNorm<T> bn1, bn2, skip_bn;

  void build(int cin_, int cout_, std::mt19937& rng) {
    cin = cin_;
    cout = cout_;
    projected = cin != cout;
    dw1.build(cin, 1, rng);
    pw1.build(cin, cout, rng);
    bn1.build(cout, rng);
    dw2.build(cout, 1, rng);
    pw2.build(cout, cout, rng);
    bn2.build(cout, rng);
    if (projected) {
      skip_pw.build(cin, cout, rng);
      skip_bn.build(cout, rng);
    }
  }

  void collect(const std::string& p, nn::ParamList<T>& out) {
    dw1.collect(nn::join_name(p, "dw1"), out);
    pw1.collect(nn::join_name(p, "pw1"), out);
    bn1.collect(nn::join_name(p, "bn1"), out);
    dw2.collect(nn::join_name(p, "dw2"), out);
    pw2.collect(nn::join_name(p, "pw2"), out);
    bn2.collect(nn::join_name(p, "bn2"), out);
    if (projected) {
      skip_pw.collect(nn::join_name(p, "pw_skip"), out);
      skip_bn.collect(nn::join_name(p, "bn_skip"), out);
    }
  }
  void collect_buffers(const std::string& p, std::vector<std::pair<std::string, nn::Tensor<T>*>>& out) {
    bn1.collect_buffers(nn::join_name(p, "bn1"), out);
    bn2.collect_buffers(nn::join_name(p, "bn2"), out);
    if (projected) skip_bn.collect_buffers(nn::join_name(p, "bn_skip"), out);
  }

  void profile(const std::string& p, int t, int h, int w, std::vector<LayerProfile>& out) const {
    out.push_back({nn::join_name(p, "dw1"), dw1.macs(t, h, w), dw1.param_count()});
    out.push_back({nn::join_name(p, "pw1"), pw1.macs(static_cast<int64_t>(t) * h * w),
                   pw1.param_count() + bn1.param_count()});
    out.push_back({nn::join_name(p, "dw2"), dw2.macs(t, h, w), dw2.param_count()});
    out.push_back({nn::join_name(p, "pw2"), pw2.macs(static_cast<int64_t>(t) * h * w),
                   pw2.param_count() + bn2.param_count()});
    if (projected)
      out.push_back({nn::join_name(p, "pw_skip"), skip_pw.macs(static_cast<int64_t>(t) * h * w),
                     skip_pw.param_count() + skip_bn.param_count()});
  }

  nn::Tensor<T> forward(const nn::Tensor<T>& x, SepBlock3dCtx<T>* ctx, bool training) {
    // BatchNorm sees a single clip: the channel-first [C,T,H,W] volume is
    // normalized per channel over T*H*W by prepending a unit batch axis.
    auto y = dw1.forward(x, ctx ? &ctx->d1 : nullptr);
    y = pw1.forward(y, ctx ? &ctx->p1 : nullptr);
    {
      auto shape = y.shape;
      y.reshape({1, shape[0], shape[1] * shape[2] * shape[3]});
      y = bn1.forward(y, ctx ? &ctx->b1 : nullptr, training);
      y.reshape(shape);
    }
    y = nn::relu(y, ctx ? &ctx->a1 : nullptr);
    y = dw2.forward(y, ctx ? &ctx->d2 : nullptr);
    y = pw2.forward(y, ctx ? &ctx->p2 : nullptr);
    {
      auto shape = y.shape;
      y.reshape({1, shape[0], shape[1] * shape[2] * shape[3]});
      y = bn2.forward(y, ctx ? &ctx->b2 : nullptr, training);
      y.reshape(shape);
    }
    nn::Tensor<T> skip = x;
    if (projected) {
      skip = skip_pw.forward(x, ctx ? &ctx->sk : nullptr);
      auto shape = skip.shape;
      skip.reshape({1, shape[0], shape[1] * shape[2] * shape[3]});
      skip = skip_bn.forward(skip, ctx ? &ctx->bsk : nullptr, training);
      skip.reshape(shape);
    }
    for (int64_t i = 0; i < y.numel(); ++i) y[i] += skip[i];
    y = nn::relu(y, ctx ? &ctx->a2 : nullptr);
    return y;
  }

  nn::Tensor<T> backward(const nn::Tensor<T>& dy, SepBlock3dCtx<T>& ctx) {
    auto d = nn::relu_backward(dy, ctx.a2);
    nn::Tensor<T> dskip = d;
    auto shape = d.shape;
    d.reshape({1, shape[0], shape[1] * shape[2] * shape[3]});
    d = bn2.backward(d, ctx.b2);
    d.reshape(shape);
    d = pw2.backward(d, ctx.p2);
    d = dw2.backward(d, ctx.d2);
    d = nn::relu_backward(d, ctx.a1);
    auto shape1 = d.shape;
    d.reshape({1, shape1[0], shape1[1] * shape1[2] * shape1[3]});
    d = bn1.backward(d, ctx.b1);
    d.reshape(shape1);
    d = pw1.backward(d, ctx.p1);
    d = dw1.backward(d, ctx.d1);
    if (projected) {
      auto dshape = dskip.shape;
      dskip.reshape({1, dshape[0], dshape[1] * dshape[2] * dshape[3]});
      dskip = skip_bn.backward(dskip, ctx.bsk);
      dskip.reshape(dshape);
      dskip = skip_pw.backward(dskip, ctx.sk);
    }
    for (int64_t i = 0; i < d.numel(); ++i) d[i] += dskip[i];
    return d;
  }
};

template <class T>
struct Backbone3dCtx {
  nn::Depthwise3dCtx<T> stem_dw;
  nn::Pointwise3dCtx<T> stem_pw;
  nn::BatchNormCtx<T> stem_bn;
  nn::ActCtx<T> stem_act;
  std::vector<AvgPoolHWCtx<T>> pools;
  std::vector<SepBlock3dCtx<T>> blocks;
  std::vector<nn::Pool3dCtx<T>> track_pools;
};

template <class T>
struct Backbone3d {
  BackboneSpec spec;
  nn::DepthwiseConv3d<T> stem_dw;   // on RGB, spatial stride 2
  nn::PointwiseConv3d<T> stem_pw;
  nn::BatchNorm<T> stem_bn;
  std::vector<SepBlock3d<T>> blocks;
  std::vector<std::pair<int, int>> stage_range;

  void build(const BackboneSpec& sp, std::mt19937& rng) {
    spec = sp;
    spec.validate();
    stem_dw.build(3, 2, rng);
    stem_pw.build(3, sp.stages[0].width, rng);
    stem_bn.build(sp.stages[0].width, rng);
    int cin = sp.stages[0].width;
    for (int s = 0; s < 4; ++s) {
      const int begin = static_cast<int>(blocks.size());
      for (int b = 0; b < sp.stages[static_cast<size_t>(s)].blocks; ++b) {
        blocks.emplace_back();
        blocks.back().build(cin, sp.stages[static_cast<size_t>(s)].width, rng);
        cin = sp.stages[static_cast<size_t>(s)].width;
      }
      stage_range.emplace_back(begin, static_cast<int>(blocks.size()));
    }
  }

  int level_width(int level) const { return spec.stages[static_cast<size_t>(level - 1)].width; }

  void collect(const std::string& p, nn::ParamList<T>& out) {
    stem_dw.collect(nn::join_name(p, "stem.dw"), out);
    stem_pw.collect(nn::join_name(p, "stem.pw"), out);
    stem_bn.collect(nn::join_name(p, "stem.bn"), out);
    for (int s = 0; s < 4; ++s)
      for (int i = stage_range[static_cast<size_t>(s)].first; i < stage_range[static_cast<size_t>(s)].second; ++i)
        blocks[static_cast<size_t>(i)].collect(
            nn::join_name(p, "stage" + std::to_string(s + 1) + ".block" +
                                 std::to_string(i - stage_range[static_cast<size_t>(s)].first)),
            out);
  }
  void collect_buffers(const std::string& p, std::vector<std::pair<std::string, nn::Tensor<T>*>>& out) {
    stem_bn.collect_buffers(nn::join_name(p, "stem.bn"), out);
    for (int s = 0; s < 4; ++s)
      for (int i = stage_range[static_cast<size_t>(s)].first; i < stage_range[static_cast<size_t>(s)].second; ++i)
        blocks[static_cast<size_t>(i)].collect_buffers(
            nn::join_name(p, "stage" + std::to_string(s + 1) + ".block" +
                                 std::to_string(i - stage_range[static_cast<size_t>(s)].first)),
            out);
  }

  std::vector<LayerProfile> profile(int t, int h, int w, int level) const {
    std::vector<LayerProfile> out;
    out.push_back({"stem.dw", stem_dw.macs(t, h, w), stem_dw.param_count()});
    int ch = nn::conv_out_dim(h, 3, 2, 1), cw = nn::conv_out_dim(w, 3, 2, 1);
    out.push_back({"stem.pw", stem_pw.macs(static_cast<int64_t>(t) * ch * cw),
                   stem_pw.param_count() + stem_bn.param_count()});
    for (int s = 0; s < level; ++s) {
      if (s > 0) {
        ch /= 2;
        cw /= 2;
      }
      for (int i = stage_range[static_cast<size_t>(s)].first; i < stage_range[static_cast<size_t>(s)].second; ++i)
        blocks[static_cast<size_t>(i)].profile("stage" + std::to_string(s + 1) + ".block" +
                                                   std::to_string(i - stage_range[static_cast<size_t>(s)].first),
                                               t, ch, cw, out);
    }
    return out;
  }

  // x: one clip [3, T, H, W]. Returns tracks [T, C_i] per requested level.
  std::vector<nn::Tensor<T>> forward(const nn::Tensor<T>& x, int level, bool multi_level,
                                     Backbone3dCtx<T>* ctx, bool training) {
    if (level < 1 || level > 4) throw ValidationError("backbone3d: truncation level out of range");
    if (ctx) {
      ctx->blocks.resize(blocks.size());
      ctx->pools.resize(3);
      ctx->track_pools.resize(static_cast<size_t>(multi_level ? level : 1));
    }
    auto y = stem_dw.forward(x, ctx ? &ctx->stem_dw : nullptr);
    y = stem_pw.forward(y, ctx ? &ctx->stem_pw : nullptr);
    {
      auto shape = y.shape;
      y.reshape({1, shape[0], shape[1] * shape[2] * shape[3]});
      y = stem_bn.forward(y, ctx ? &ctx->stem_bn : nullptr, training);
      y.reshape(shape);
    }
    y = nn::relu(y, ctx ? &ctx->stem_act : nullptr);
    std::vector<nn::Tensor<T>> tracks;
    for (int s = 0; s < level; ++s) {
      if (s > 0) y = avg_pool_hw(y, ctx ? &ctx->pools[static_cast<size_t>(s - 1)] : nullptr);
      for (int i = stage_range[static_cast<size_t>(s)].first; i < stage_range[static_cast<size_t>(s)].second; ++i)
        y = blocks[static_cast<size_t>(i)].forward(
            y, ctx ? &ctx->blocks[static_cast<size_t>(i)] : nullptr, training);
      if (multi_level || s == level - 1) {
        const size_t gi = tracks.size();
        tracks.push_back(nn::spatial_pool_to_track(y, ctx ? &ctx->track_pools[gi] : nullptr));
      }
    }
    return tracks;
  }

  nn::Tensor<T> backward(const std::vector<nn::Tensor<T>>& dtracks, int level, bool multi_level,
                         Backbone3dCtx<T>& ctx) {
    nn::Tensor<T> d;
    int gi = static_cast<int>(dtracks.size()) - 1;
    for (int s = level - 1; s >= 0; --s) {
      const bool emitted = multi_level || s == level - 1;
      if (emitted) {
        auto dg = nn::spatial_pool_to_track_backward(dtracks[static_cast<size_t>(gi)],
                                                     ctx.track_pools[static_cast<size_t>(gi)]);
        if (d.numel() == 0)
          d = std::move(dg);
        else
          for (int64_t i = 0; i < d.numel(); ++i) d[i] += dg[i];
        --gi;
      }
      for (int i = stage_range[static_cast<size_t>(s)].second - 1;
           i >= stage_range[static_cast<size_t>(s)].first; --i)
        d = blocks[static_cast<size_t>(i)].backward(d, ctx.blocks[static_cast<size_t>(i)]);
      if (s > 0) d = avg_pool_hw_backward(d, ctx.pools[static_cast<size_t>(s - 1)]);
    }
    auto shape = d.shape;
    d.reshape({1, shape[0], shape[1] * shape[2] * shape[3]});
    d = stem_bn.backward(d, ctx.stem_bn);
    d.reshape(shape);
    d = stem_pw.backward(d, ctx.stem_pw);
    d = stem_dw.backward(d, ctx.stem_dw);
    return d;
  }
};

// ---------------------------------------------------------------------------
// Level concatenation: project each level's pooled track to a common width
// with a 1x1 transform, then concatenate channel-wise.

template <class T>
struct LevelConcatCtx {
  std::vector<nn::AffineCtx<T>> proj;
};

template <class T>
struct LevelConcat {
  int n_levels = 0, common = 0;
  std::vector<nn::Affine<T>> proj;

  void build(const std::vector<int>& in_widths, int common_width, std::mt19937& rng) {
    n_levels = static_cast<int>(in_widths.size());
    common = common_width;
    proj.resize(static_cast<size_t>(n_levels));
    for (int i = 0; i < n_levels; ++i)
      proj[static_cast<size_t>(i)].build(in_widths[static_cast<size_t>(i)], common, rng);
  }
  void collect(const std::string& p, nn::ParamList<T>& out) {
    for (int i = 0; i < n_levels; ++i)
      proj[static_cast<size_t>(i)].collect(nn::join_name(p, "proj" + std::to_string(i + 1)), out);
  }
  int out_width() const { return common * n_levels; }
  int64_t macs(int64_t t) const {
    int64_t m = 0;
    for (const auto& a : proj) m += a.macs(t);
    return m;
  }
  int64_t param_count() const {
    int64_t m = 0;
    for (const auto& a : proj) m += a.param_count();
    return m;
  }

  // tracks: per level [T, C_i] -> [T, common * n_levels]
  nn::Tensor<T> forward(const std::vector<nn::Tensor<T>>& tracks, LevelConcatCtx<T>* ctx) const {
    if (tracks.empty()) throw ValidationError("concat_levels: zero tracks");
    if (static_cast<int>(tracks.size()) != n_levels)
      throw ValidationError("concat_levels: track count mismatch");
    const int64_t t = tracks[0].dim(0);
    for (const auto& tr : tracks)
      if (tr.dim(0) != t) throw ValidationError("concat_levels: mismatched T");
    if (ctx) ctx->proj.resize(static_cast<size_t>(n_levels));
    nn::Tensor<T> out({t, static_cast<int64_t>(common) * n_levels});
    for (int l = 0; l < n_levels; ++l) {
      auto p = proj[static_cast<size_t>(l)].forward(tracks[static_cast<size_t>(l)],
                                                    ctx ? &ctx->proj[static_cast<size_t>(l)] : nullptr);
      for (int64_t i = 0; i < t; ++i)
        std::copy(p.data() + i * common, p.data() + (i + 1) * common,
                  out.data() + i * (static_cast<int64_t>(common) * n_levels) + static_cast<int64_t>(l) * common);
    }
    return out;
  }

  std::vector<nn::Tensor<T>> backward(const nn::Tensor<T>& dy, LevelConcatCtx<T>& ctx) {
    const int64_t t = dy.dim(0);
    std::vector<nn::Tensor<T>> dtracks;
    for (int l = 0; l < n_levels; ++l) {
      nn::Tensor<T> dp({t, static_cast<int64_t>(common)});
      for (int64_t i = 0; i < t; ++i)
        std::copy(dy.data() + i * (static_cast<int64_t>(common) * n_levels) + static_cast<int64_t>(l) * common,
                  dy.data() + i * (static_cast<int64_t>(common) * n_levels) + (static_cast<int64_t>(l) + 1) * common,
                  dp.data() + i * common);
      dtracks.push_back(proj[static_cast<size_t>(l)].backward(dp, ctx.proj[static_cast<size_t>(l)]));
    }
    return dtracks;
  }
};

// ---------------------------------------------------------------------------
// Spec-level convenience ops over domain types (inference on a freshly
// built or loaded backbone).

std::vector<FeatureTrack> extract_features(const FrameSequence& video, const BackboneSpec& spec,
                                           int level, bool multi_level, uint32_t seed = 0);
FeatureTrack concat_levels(const std::vector<FeatureTrack>& tracks, int common_width,
                           uint32_t seed = 0);

}  // namespace gebd
