#pragma once

// Temporal encoders: the baseline 1-d convolutional encoder (BN-Conv(k=3)-
// ReLU) and the DiffMixer, which runs kernel-1 conv branches over the raw
// track and its adjacent-frame difference track and sums them.

#include "gebd/core_types.hpp"
#include "gebd/nn.hpp"

namespace gebd {

// X^D_t = X_t - X_{t+1} with X_1 padded at the front (1-indexed), so the
// output keeps the input length. Row 0 is X_1 verbatim.
template <class T>
nn::Tensor<T> temporal_difference_fwd(const nn::Tensor<T>& x) {
  const int64_t t = x.dim(0), c = x.dim(1);
  if (t < 2) throw ValidationError("temporal_difference: T >= 2 required");
  nn::Tensor<T> d({t, c});
  std::copy(x.data(), x.data() + c, d.data());
  for (int64_t j = 1; j < t; ++j)
    for (int64_t ch = 0; ch < c; ++ch) d[j * c + ch] = x[(j - 1) * c + ch] - x[j * c + ch];
  return d;
}

template <class T>
nn::Tensor<T> temporal_difference_bwd(const nn::Tensor<T>& dy) {
  const int64_t t = dy.dim(0), c = dy.dim(1);
  nn::Tensor<T> dx({t, c});
  for (int64_t ch = 0; ch < c; ++ch) {
    dx[ch] = dy[ch] + (t > 1 ? dy[c + ch] : T(0));
    for (int64_t j = 1; j < t; ++j)
      dx[j * c + ch] = (j + 1 < t ? dy[(j + 1) * c + ch] : T(0)) - dy[j * c + ch];
  }
  return dx;
}

template <class T>
struct EncoderOut {
  nn::Tensor<T> identity;    // X^I' (empty for conv1d)
  nn::Tensor<T> difference;  // X^D' (empty for conv1d)
  nn::Tensor<T> fused;       // track consumed downstream
};

template <class T>
struct Conv1dEncoderCtx {
  nn::BatchNormTrackCtx<T> bn;
  nn::Conv1dCtx<T> conv;
  nn::ActCtx<T> act;
};

template <class T>
struct Conv1dEncoder {
  nn::BatchNormTrack<T> bn;
  nn::Conv1dTrack<T> conv;

  void build(int cin, int cout, std::mt19937& rng) {
    bn.build(cin, rng);
    conv.build(cin, cout, 3, rng);
  }
  void collect(const std::string& p, nn::ParamList<T>& out) {
    bn.collect(nn::join_name(p, "bn"), out);
    conv.collect(nn::join_name(p, "conv"), out);
  }
  void collect_buffers(const std::string& p, std::vector<std::pair<std::string, nn::Tensor<T>*>>& out) {
    bn.collect_buffers(nn::join_name(p, "bn"), out);
  }
  int64_t macs(int64_t t) const { return conv.macs(t); }
  int64_t param_count() const { return bn.param_count() + conv.param_count(); }

  EncoderOut<T> forward(const nn::Tensor<T>& x, Conv1dEncoderCtx<T>* ctx, bool training) {
    if (x.dim(0) < 3) throw ValidationError("conv1d_encode: T >= 3 required");
    auto y = bn.forward(x, ctx ? &ctx->bn : nullptr, training);
    y = conv.forward(y, ctx ? &ctx->conv : nullptr);
    y = nn::relu(y, ctx ? &ctx->act : nullptr);
    EncoderOut<T> out;
    out.fused = std::move(y);
    return out;
  }

  nn::Tensor<T> backward(const nn::Tensor<T>& dfused, Conv1dEncoderCtx<T>& ctx) {
    auto d = nn::relu_backward(dfused, ctx.act);
    d = conv.backward(d, ctx.conv);
    d = bn.backward(d, ctx.bn);
    return d;
  }
};

template <class T>
struct DiffMixerCtx {
  nn::BatchNormTrackCtx<T> bn_i, bn_d;
  nn::Conv1dCtx<T> conv_i, conv_d;
  nn::ActCtx<T> act_i, act_d;
};

// One Diff Mixer: X^I' = ReLU(Conv1(BN(X))), X^D' = ReLU(Conv1(BN(D(X)))),
// fused = X^I' + X^D' (element-wise sum; both branches stay exposed for
// diagnostics).
template <class T>
struct DiffMixer {
  nn::BatchNormTrack<T> bn_i, bn_d;
  nn::Conv1dTrack<T> conv_i, conv_d;

  void build(int cin, int cout, std::mt19937& rng) {
    bn_i.build(cin, rng);
    conv_i.build(cin, cout, 1, rng);
    bn_d.build(cin, rng);
    conv_d.build(cin, cout, 1, rng);
  }
  void collect(const std::string& p, nn::ParamList<T>& out) {
    bn_i.collect(nn::join_name(p, "identity.bn"), out);
    conv_i.collect(nn::join_name(p, "identity.conv"), out);
    bn_d.collect(nn::join_name(p, "difference.bn"), out);
    conv_d.collect(nn::join_name(p, "difference.conv"), out);
  }
  void collect_buffers(const std::string& p, std::vector<std::pair<std::string, nn::Tensor<T>*>>& out) {
    bn_i.collect_buffers(nn::join_name(p, "identity.bn"), out);
    bn_d.collect_buffers(nn::join_name(p, "difference.bn"), out);
  }
  int64_t macs(int64_t t) const { return conv_i.macs(t) + conv_d.macs(t); }
  int64_t param_count() const {
    return bn_i.param_count() + conv_i.param_count() + bn_d.param_count() + conv_d.param_count();
  }

  EncoderOut<T> forward(const nn::Tensor<T>& x, DiffMixerCtx<T>* ctx, bool training) {
    if (x.dim(0) < 2) throw ValidationError("diff_mixer_encode: T >= 2 required");
    EncoderOut<T> out;
    {
      auto y = bn_i.forward(x, ctx ? &ctx->bn_i : nullptr, training);
      y = conv_i.forward(y, ctx ? &ctx->conv_i : nullptr);
      out.identity = nn::relu(y, ctx ? &ctx->act_i : nullptr);
    }
    {
      auto d = temporal_difference_fwd(x);
      d = bn_d.forward(d, ctx ? &ctx->bn_d : nullptr, training);
      d = conv_d.forward(d, ctx ? &ctx->conv_d : nullptr);
      out.difference = nn::relu(d, ctx ? &ctx->act_d : nullptr);
    }
    out.fused = out.identity;
    for (int64_t i = 0; i < out.fused.numel(); ++i) out.fused[i] += out.difference[i];
    return out;
  }

  nn::Tensor<T> backward(const nn::Tensor<T>& dfused, DiffMixerCtx<T>& ctx) {
    auto di = nn::relu_backward(dfused, ctx.act_i);
    di = conv_i.backward(di, ctx.conv_i);
    di = bn_i.backward(di, ctx.bn_i);
    auto dd = nn::relu_backward(dfused, ctx.act_d);
    dd = conv_d.backward(dd, ctx.conv_d);
    dd = bn_d.backward(dd, ctx.bn_d);
    dd = temporal_difference_bwd(dd);
    for (int64_t i = 0; i < di.numel(); ++i) di[i] += dd[i];
    return di;
  }
};

// Spec-level ops over domain types (inference on seeded weights).
struct EncoderOutput {
  std::optional<FeatureTrack> identity_branch;
  std::optional<FeatureTrack> difference_branch;
  FeatureTrack fused;
};

FeatureTrack temporal_difference(const FeatureTrack& x);
EncoderOutput conv1d_encode(const FeatureTrack& x, int out_width, uint32_t seed = 0);
EncoderOutput diff_mixer_encode(const FeatureTrack& x, int out_width, uint32_t seed = 0);

}  // namespace gebd
