#pragma once

// Fusion of the encoder's local (median-frame) features with the decoder's
// global representation, and the boundary classifier.

#include "gebd/core_types.hpp"
#include "gebd/nn.hpp"

namespace gebd {

// BN over the fused track, then a kernel-3 temporal convolution evaluated at
// the median row only, then ReLU. Producing just the median output keeps the
// cost at 3*Cin*Cout multiply-accumulates.
template <class T>
struct LocalSummaryCtx {
  nn::BatchNormTrackCtx<T> bn;
  nn::Tensor<T> xbn;  // normalized track
  nn::ActCtx<T> act;
};

template <class T>
struct LocalSummary {
  int cin = 0, cout = 0;
  nn::BatchNormTrack<T> bn;
  nn::Tensor<T> w, b, gw, gb;  // w: [cout, cin, 3]

  void build(int cin_, int cout_, std::mt19937& rng) {
    cin = cin_;
    cout = cout_;
    bn.build(cin, rng);
    w = nn::Tensor<T>({cout, cin, 3});
    gw = nn::Tensor<T>({cout, cin, 3});
    b = nn::Tensor<T>({cout});
    gb = nn::Tensor<T>({cout});
    nn::fill_normal(w, rng, std::sqrt(2.0 / (cin * 3)));
  }
  void collect(const std::string& p, nn::ParamList<T>& out) {
    bn.collect(nn::join_name(p, "bn"), out);
    out.push_back({nn::join_name(p, "conv.weight"), &w, &gw});
    out.push_back({nn::join_name(p, "conv.bias"), &b, &gb});
  }
  void collect_buffers(const std::string& p, std::vector<std::pair<std::string, nn::Tensor<T>*>>& out) {
    bn.collect_buffers(nn::join_name(p, "bn"), out);
  }
  int64_t macs() const { return static_cast<int64_t>(3) * cin * cout; }
  int64_t param_count() const { return bn.param_count() + w.numel() + b.numel(); }

  nn::Tensor<T> forward(const nn::Tensor<T>& track, LocalSummaryCtx<T>* ctx, bool training) {
    const int64_t k = track.dim(0);
    if (k % 2 == 0) throw ValidationError("local_summary: clip length must be odd");
    if (k < 3) throw ValidationError("local_summary: clip length must be >= 3");
    auto xbn = bn.forward(track, ctx ? &ctx->bn : nullptr, training);
    const int64_t m = (k - 1) / 2;
    nn::Tensor<T> y({cout});
    for (int o = 0; o < cout; ++o) {
      T acc = b[o];
      for (int dt = 0; dt < 3; ++dt) {
        const T* xr = xbn.data() + (m + dt - 1) * cin;
        const T* wr = w.data() + (static_cast<int64_t>(o) * cin) * 3 + dt;
        for (int ch = 0; ch < cin; ++ch) acc += wr[static_cast<int64_t>(ch) * 3] * xr[ch];
      }
      y[o] = acc;
    }
    if (ctx) ctx->xbn = std::move(xbn);
    return nn::relu(y, ctx ? &ctx->act : nullptr);
  }

  nn::Tensor<T> backward(const nn::Tensor<T>& dy, LocalSummaryCtx<T>& ctx) {
    auto d = nn::relu_backward(dy, ctx.act);
    const int64_t k = ctx.xbn.dim(0);
    const int64_t m = (k - 1) / 2;
    nn::Tensor<T> dxbn({k, static_cast<int64_t>(cin)});
    for (int o = 0; o < cout; ++o) {
      const T g = d[o];
      gb[o] += g;
      for (int dt = 0; dt < 3; ++dt) {
        const T* xr = ctx.xbn.data() + (m + dt - 1) * cin;
        T* dxr = dxbn.data() + (m + dt - 1) * cin;
        T* gwr = gw.data() + (static_cast<int64_t>(o) * cin) * 3 + dt;
        const T* wr = w.data() + (static_cast<int64_t>(o) * cin) * 3 + dt;
        for (int ch = 0; ch < cin; ++ch) {
          gwr[static_cast<int64_t>(ch) * 3] += g * xr[ch];
          dxr[ch] += g * wr[static_cast<int64_t>(ch) * 3];
        }
      }
    }
    return bn.backward(dxbn, ctx.bn);
  }
};

// Squeeze-and-excitation gate on a vector: bottleneck transform, expansion,
// sigmoid. Bottleneck ratio 4.
template <class T>
struct SEGateCtx {
  nn::AffineCtx<T> down, up;
  nn::ActCtx<T> mid, out;
};

template <class T>
struct SEGate {
  nn::Affine<T> down, up;

  void build(int c, std::mt19937& rng, int ratio = 4) {
    const int mid = std::max(1, c / ratio);
    down.build(c, mid, rng);
    up.build(mid, c, rng);
  }
  void collect(const std::string& p, nn::ParamList<T>& out) {
    down.collect(nn::join_name(p, "down"), out);
    up.collect(nn::join_name(p, "up"), out);
  }
  int64_t macs() const { return down.macs(1) + up.macs(1); }
  int64_t param_count() const { return down.param_count() + up.param_count(); }

  nn::Tensor<T> forward(const nn::Tensor<T>& v, SEGateCtx<T>* ctx) {
    auto z = down.forward(v, ctx ? &ctx->down : nullptr);
    z = nn::relu(z, ctx ? &ctx->mid : nullptr);
    z = up.forward(z, ctx ? &ctx->up : nullptr);
    return nn::sigmoid(z, ctx ? &ctx->out : nullptr);
  }
  nn::Tensor<T> backward(const nn::Tensor<T>& dy, SEGateCtx<T>& ctx) {
    auto d = nn::sigmoid_backward(dy, ctx.out);
    d = up.backward(d, ctx.up);
    d = nn::relu_backward(d, ctx.mid);
    return down.backward(d, ctx.down);
  }
};

// Cross-attention fusion: SE(local) gates the global vector, SE(global)
// gates the local vector, gated vectors are summed. Widths are equalized by
// an affine projection on the local branch when needed.
template <class T>
struct CrossAttentionFuseCtx {
  nn::AffineCtx<T> proj;
  SEGateCtx<T> se_l, se_g;
  nn::Tensor<T> local_p, global_v, gate_l, gate_g;
};

template <class T>
struct CrossAttentionFuse {
  int cl = 0, cg = 0;
  bool project = false;
  nn::Affine<T> proj_local;
  SEGate<T> se_local, se_global;

  void build(int cl_, int cg_, std::mt19937& rng) {
    cl = cl_;
    cg = cg_;
    project = cl != cg;
    if (project) proj_local.build(cl, cg, rng);
    se_local.build(cg, rng);
    se_global.build(cg, rng);
  }
  void collect(const std::string& p, nn::ParamList<T>& out) {
    if (project) proj_local.collect(nn::join_name(p, "proj_local"), out);
    se_local.collect(nn::join_name(p, "se_local"), out);
    se_global.collect(nn::join_name(p, "se_global"), out);
  }
  int out_width() const { return cg; }
  int64_t macs() const {
    return (project ? proj_local.macs(1) : 0) + se_local.macs() + se_global.macs() + 2 * cg;
  }
  int64_t param_count() const {
    return (project ? proj_local.param_count() : 0) + se_local.param_count() + se_global.param_count();
  }

  nn::Tensor<T> forward(const nn::Tensor<T>& local, const nn::Tensor<T>& global_v,
                        CrossAttentionFuseCtx<T>* ctx) {
    nn::Tensor<T> lp = local;
    if (project) lp = proj_local.forward(local, ctx ? &ctx->proj : nullptr);
    auto gl = se_local.forward(lp, ctx ? &ctx->se_l : nullptr);   // gates global
    auto gg = se_global.forward(global_v, ctx ? &ctx->se_g : nullptr);  // gates local
    nn::Tensor<T> out({static_cast<int64_t>(cg)});
    for (int i = 0; i < cg; ++i) out[i] = gg[i] * lp[i] + gl[i] * global_v[i];
    if (ctx) {
      ctx->local_p = std::move(lp);
      ctx->global_v = global_v;
      ctx->gate_l = std::move(gl);
      ctx->gate_g = std::move(gg);
    }
    return out;
  }

  void backward(const nn::Tensor<T>& dy, CrossAttentionFuseCtx<T>& ctx, nn::Tensor<T>& dlocal,
                nn::Tensor<T>& dglobal) {
    nn::Tensor<T> dgl({static_cast<int64_t>(cg)}), dgg({static_cast<int64_t>(cg)});
    nn::Tensor<T> dlp({static_cast<int64_t>(cg)});
    dglobal = nn::Tensor<T>({static_cast<int64_t>(cg)});
    for (int i = 0; i < cg; ++i) {
      dgg[i] = dy[i] * ctx.local_p[i];
      dlp[i] = dy[i] * ctx.gate_g[i];
      dgl[i] = dy[i] * ctx.global_v[i];
      dglobal[i] = dy[i] * ctx.gate_l[i];
    }
    auto dlp2 = se_local.backward(dgl, ctx.se_l);
    for (int i = 0; i < cg; ++i) dlp[i] += dlp2[i];
    auto dg2 = se_global.backward(dgg, ctx.se_g);
    for (int i = 0; i < cg; ++i) dglobal[i] += dg2[i];
    dlocal = project ? proj_local.backward(dlp, ctx.proj) : dlp;
  }
};

// Affine map to a scalar logit plus sigmoid.
template <class T>
struct ClassifierCtx {
  nn::AffineCtx<T> aff;
  T prob = 0;
};

template <class T>
struct Classifier {
  nn::Affine<T> aff;

  void build(int cin, std::mt19937& rng) { aff.build(cin, 1, rng); }
  void collect(const std::string& p, nn::ParamList<T>& out) { aff.collect(p, out); }
  int64_t macs() const { return aff.macs(1); }
  int64_t param_count() const { return aff.param_count(); }

  T forward(const nn::Tensor<T>& v, ClassifierCtx<T>* ctx) {
    auto z = aff.forward(v, ctx ? &ctx->aff : nullptr);
    const T p = T(1) / (T(1) + std::exp(-z[0]));
    if (ctx) ctx->prob = p;
    return p;
  }
  // dlogit in, dv out (probability -> logit conversion happens in the loss).
  nn::Tensor<T> backward_logit(T dlogit, ClassifierCtx<T>& ctx) {
    nn::Tensor<T> dz({1});
    dz[0] = dlogit;
    return aff.backward(dz, ctx.aff);
  }
};

// Spec-level ops over plain vectors (inference on seeded weights).
std::vector<double> local_summary(const FeatureTrack& fused_track, uint32_t seed = 0);
std::vector<double> concat_fuse(const std::vector<double>& local, const std::vector<double>& global_v);
std::vector<double> cross_attention_fuse(const std::vector<double>& local,
                                         const std::vector<double>& global_v, uint32_t seed = 0);
std::vector<double> cross_attention_fuse_with_gates(const std::vector<double>& local,
                                                    const std::vector<double>& global_v,
                                                    const std::vector<double>& gate_on_global,
                                                    const std::vector<double>& gate_on_local);
double classify(const std::vector<double>& fused, uint32_t seed = 0);

}  // namespace gebd
