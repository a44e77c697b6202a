#pragma once

// Cosine self-similarity map over a clip's feature track, and the mini
// fully-convolutional residual decoder that turns the k x k map into a
// global boundary representation.

#include "gebd/backbone.hpp"
#include "gebd/core_types.hpp"
#include "gebd/nn.hpp"

namespace gebd {

inline constexpr double kCosineEps = 1e-8;

// M[i][j] = <x_i, x_j> / (max(|x_i|, eps) * max(|x_j|, eps)).
template <class T>
struct CosineMapCtx {
  nn::Tensor<T> u;            // normalized rows [k, C]
  std::vector<T> norm;        // per row, pre-clamp
  std::vector<uint8_t> live;  // norm > eps (normalization differentiable)
};

template <class T>
nn::Tensor<T> cosine_map_fwd(const nn::Tensor<T>& x, CosineMapCtx<T>* ctx) {
  const int64_t k = x.dim(0), c = x.dim(1);
  if (k < 2) throw ValidationError("cosine_similarity_map: k >= 2 required");
  nn::Tensor<T> u({k, c});
  std::vector<T> norms(static_cast<size_t>(k));
  std::vector<uint8_t> live(static_cast<size_t>(k));
  for (int64_t i = 0; i < k; ++i) {
    T acc = 0;
    for (int64_t ch = 0; ch < c; ++ch) acc += x[i * c + ch] * x[i * c + ch];
    const T n = std::sqrt(acc);
    norms[static_cast<size_t>(i)] = n;
    live[static_cast<size_t>(i)] = n > T(kCosineEps);
    const T denom = std::max(n, T(kCosineEps));
    for (int64_t ch = 0; ch < c; ++ch) u[i * c + ch] = x[i * c + ch] / denom;
  }
  nn::Tensor<T> m({k, k});
  nn::CMapM<T> um(u.data(), k, c);
  nn::MapM<T> mm(m.data(), k, k);
  mm.noalias() = um * um.transpose();
  if (ctx) {
    ctx->u = std::move(u);
    ctx->norm = std::move(norms);
    ctx->live = std::move(live);
  }
  return m;
}

template <class T>
nn::Tensor<T> cosine_map_bwd(const nn::Tensor<T>& dm, const CosineMapCtx<T>& ctx) {
  const int64_t k = ctx.u.dim(0), c = ctx.u.dim(1);
  // dL/du_i = sum_j (g_ij + g_ji) u_j, then through u = x / max(|x|, eps).
  nn::Tensor<T> du({k, c});
  nn::CMapM<T> um(ctx.u.data(), k, c);
  nn::CMapM<T> gm(dm.data(), k, k);
  nn::MapM<T> dum(du.data(), k, c);
  dum.noalias() = (gm + gm.transpose()) * um;
  nn::Tensor<T> dx({k, c});
  for (int64_t i = 0; i < k; ++i) {
    const T n = ctx.norm[static_cast<size_t>(i)];
    if (ctx.live[static_cast<size_t>(i)]) {
      T dot = 0;
      for (int64_t ch = 0; ch < c; ++ch) dot += ctx.u[i * c + ch] * du[i * c + ch];
      for (int64_t ch = 0; ch < c; ++ch)
        dx[i * c + ch] = (du[i * c + ch] - ctx.u[i * c + ch] * dot) / n;
    } else {
      for (int64_t ch = 0; ch < c; ++ch) dx[i * c + ch] = du[i * c + ch] / T(kCosineEps);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// FCN decoder: stem conv + 4 residual stages (1 block each for res10, 2 for
// res18) + global average pool.

template <class T>
struct FcnDecoderCtx {
  nn::Conv2dCtx<T> stem_conv;
  nn::BatchNormCtx<T> stem_bn;
  nn::ActCtx<T> stem_act;
  std::vector<BasicBlock2dCtx<T>> blocks;
  nn::GapCtx<T> gap;
};

template <class T>
struct FcnDecoder {
  int blocks_per_stage = 1;  // 1 = res10, 2 = res18
  std::vector<int> widths = {16, 32, 64, 128};
  std::vector<int> strides = {1, 2, 2, 2};
  nn::Conv2d<T> stem_conv;
  nn::BatchNorm<T> stem_bn;
  std::vector<BasicBlock2d<T>> blocks;

  void build(int blocks_per_stage_, const std::vector<int>& widths_,
             const std::vector<int>& strides_, std::mt19937& rng) {
    blocks_per_stage = blocks_per_stage_;
    widths = widths_;
    strides = strides_;
    stem_conv.build(1, widths[0], 3, 1, 1, rng, false);
    stem_bn.build(widths[0], rng);
    int cin = widths[0];
    for (int s = 0; s < 4; ++s)
      for (int b = 0; b < blocks_per_stage; ++b) {
        blocks.emplace_back();
        blocks.back().build(cin, widths[static_cast<size_t>(s)],
                            b == 0 ? strides[static_cast<size_t>(s)] : 1, rng);
        cin = widths[static_cast<size_t>(s)];
      }
  }

  int out_width() const { return widths[3]; }

  void collect(const std::string& p, nn::ParamList<T>& out) {
    stem_conv.collect(nn::join_name(p, "stem.conv"), out);
    stem_bn.collect(nn::join_name(p, "stem.bn"), out);
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(nn::join_name(p, "layer" + std::to_string(i / static_cast<size_t>(blocks_per_stage) + 1) +
                                             ".block" + std::to_string(i % static_cast<size_t>(blocks_per_stage))),
                        out);
  }
  void collect_buffers(const std::string& p, std::vector<std::pair<std::string, nn::Tensor<T>*>>& out) {
    stem_bn.collect_buffers(nn::join_name(p, "stem.bn"), out);
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect_buffers(nn::join_name(p, "layer" + std::to_string(i / static_cast<size_t>(blocks_per_stage) + 1) +
                                                     ".block" + std::to_string(i % static_cast<size_t>(blocks_per_stage))),
                                out);
  }

  std::vector<LayerProfile> profile(int k) const {
    std::vector<LayerProfile> out;
    out.push_back({"stem.conv", stem_conv.macs(k, k), stem_conv.param_count() + stem_bn.param_count()});
    int h = k, w = k;
    for (size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].profile("layer" + std::to_string(i / static_cast<size_t>(blocks_per_stage) + 1) + ".block" +
                            std::to_string(i % static_cast<size_t>(blocks_per_stage)),
                        h, w, out);
      blocks[i].out_dims(h, w, h, w);
    }
    return out;
  }

  // map: [1, 1, k, k] -> global vector [1, widths[3]]
  nn::Tensor<T> forward(const nn::Tensor<T>& map, FcnDecoderCtx<T>* ctx, bool training) {
    int extent = static_cast<int>(map.dim(2));
    if (extent < 2)
      throw ValidationError("fcn_decode: clip too short for the downsampling schedule");
    for (int s = 0; s < 4; ++s) extent = nn::conv_out_dim(extent, 3, strides[static_cast<size_t>(s)], 1);
    if (extent < 1)
      throw ValidationError("fcn_decode: clip too short for the downsampling schedule");
    if (ctx) ctx->blocks.resize(blocks.size());
    auto y = stem_conv.forward(map, ctx ? &ctx->stem_conv : nullptr);
    y = stem_bn.forward(y, ctx ? &ctx->stem_bn : nullptr, training);
    y = nn::relu(y, ctx ? &ctx->stem_act : nullptr);
    for (size_t i = 0; i < blocks.size(); ++i)
      y = blocks[i].forward(y, ctx ? &ctx->blocks[i] : nullptr, training);
    return nn::global_avg_pool(y, ctx ? &ctx->gap : nullptr);
  }

  nn::Tensor<T> backward(const nn::Tensor<T>& dy, FcnDecoderCtx<T>& ctx) {
    auto d = nn::global_avg_pool_backward(dy, ctx.gap);
    for (size_t i = blocks.size(); i-- > 0;) d = blocks[i].backward(d, ctx.blocks[i]);
    d = nn::relu_backward(d, ctx.stem_act);
    d = stem_bn.backward(d, ctx.stem_bn);
    d = stem_conv.backward(d, ctx.stem_conv);
    return d;
  }
};

// Spec-level ops over domain types.
struct SimilarityMap {
  int k = 0;
  std::vector<double> values;  // row-major k x k
  double at(int i, int j) const { return values[static_cast<size_t>(i) * k + j]; }
};

SimilarityMap cosine_similarity_map(const FeatureTrack& x);
std::vector<double> fcn_decode(const SimilarityMap& map, DecoderKind variant, int base_width = 16,
                               uint32_t seed = 0);

}  // namespace gebd
