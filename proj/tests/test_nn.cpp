#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gebd/backbone.hpp"
#include "gebd/fusion_head.hpp"
#include "gebd/simmap_decoder.hpp"
#include "gebd/temporal_encoder.hpp"
#include "test_util.hpp"

using namespace gebd;
using namespace gebd::nn;
using gebd::testutil::gradcheck;

namespace {

// Sum of y * coef as a scalar loss so that dL/dy = coef.
template <class MakeOut>
double weighted_sum(const Tensor<double>& coef, MakeOut&& out) {
  const Tensor<double> y = out();
  double acc = 0;
  for (int64_t i = 0; i < y.numel(); ++i) acc += coef[i] * y[i];
  return acc;
}

}  // namespace

TEST_CASE("affine gradcheck") {
  std::mt19937 rng(1);
  Affine<double> aff;
  aff.build(5, 3, rng);
  Tensor<double> x({4, 5});
  fill_normal(x, rng, 1.0);
  Tensor<double> coef({4, 3});
  fill_normal(coef, rng, 1.0);
  ParamList<double> params;
  aff.collect("aff", params);
  AffineCtx<double> ctx;
  auto loss_only = [&] { return weighted_sum(coef, [&] { return aff.forward(x, nullptr); }); };
  auto loss_grads = [&] {
    zero_grads(params);
    auto y = aff.forward(x, &ctx);
    double acc = 0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += coef[i] * y[i];
    aff.backward(coef, ctx);
    return acc;
  };
  CHECK(gradcheck(params, loss_grads, loss_only, 6, rng) < 1e-7);

  // Input gradient.
  loss_grads();
  auto dx = aff.backward(coef, ctx);
  for (int trial = 0; trial < 5; ++trial) {
    std::uniform_int_distribution<int64_t> pick(0, x.numel() - 1);
    const int64_t j = pick(rng);
    const double numeric = testutil::numeric_derivative(&x[j], loss_only);
    CHECK(testutil::rel_err(dx[j], numeric) < 1e-7);
  }
}

TEST_CASE("conv2d gradcheck with stride and padding") {
  std::mt19937 rng(2);
  Conv2d<double> conv;
  conv.build(3, 4, 3, 2, 1, rng, true);
  Tensor<double> x({2, 3, 7, 7});
  fill_normal(x, rng, 1.0);
  auto y0 = conv.forward(x, nullptr);
  CHECK(y0.shape == std::vector<int64_t>{2, 4, 4, 4});
  Tensor<double> coef(y0.shape);
  fill_normal(coef, rng, 1.0);
  ParamList<double> params;
  conv.collect("conv", params);
  Conv2dCtx<double> ctx;
  auto loss_only = [&] { return weighted_sum(coef, [&] { return conv.forward(x, nullptr); }); };
  auto loss_grads = [&] {
    zero_grads(params);
    auto y = conv.forward(x, &ctx);
    double acc = 0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += coef[i] * y[i];
    conv.backward(coef, ctx);
    return acc;
  };
  CHECK(gradcheck(params, loss_grads, loss_only, 8, rng) < 1e-7);
  loss_grads();
  zero_grads(params);
  auto dx = conv.backward(coef, ctx);
  for (int trial = 0; trial < 8; ++trial) {
    std::uniform_int_distribution<int64_t> pick(0, x.numel() - 1);
    const int64_t j = pick(rng);
    CHECK(testutil::rel_err(dx[j], testutil::numeric_derivative(&x[j], loss_only)) < 1e-7);
  }
}

TEST_CASE("batchnorm training-mode gradcheck") {
  std::mt19937 rng(3);
  BatchNorm<double> bn;
  bn.build(3, rng);
  fill_normal(bn.w, rng, 0.3, 1.0);
  fill_normal(bn.b, rng, 0.3);
  Tensor<double> x({4, 3, 2, 2});
  fill_normal(x, rng, 1.5);
  Tensor<double> coef(x.shape);
  fill_normal(coef, rng, 1.0);
  ParamList<double> params;
  bn.collect("bn", params);
  BatchNormCtx<double> ctx;
  // Running stats mutate on every call; irrelevant to gradients.
  auto loss_only = [&] {
    return weighted_sum(coef, [&] { return bn.forward(x, nullptr, true); });
  };
  auto loss_grads = [&] {
    zero_grads(params);
    auto y = bn.forward(x, &ctx, true);
    double acc = 0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += coef[i] * y[i];
    bn.backward(coef, ctx);
    return acc;
  };
  CHECK(gradcheck(params, loss_grads, loss_only, 6, rng) < 1e-6);
  loss_grads();
  zero_grads(params);
  auto dx = bn.backward(coef, ctx);
  for (int trial = 0; trial < 8; ++trial) {
    std::uniform_int_distribution<int64_t> pick(0, x.numel() - 1);
    const int64_t j = pick(rng);
    CHECK(testutil::rel_err(dx[j], testutil::numeric_derivative(&x[j], loss_only)) < 1e-6);
  }
  SUBCASE("eval mode uses running stats and matches the closed form") {
    bn.running_mean[0] = 0.5;
    bn.running_var[0] = 4.0;
    auto y = bn.forward(x, nullptr, false);
    const double expect = bn.w[0] * ((x[0] - 0.5) / std::sqrt(4.0 + bn.eps)) + bn.b[0];
    CHECK(y[0] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("batchnorm_track gradcheck") {
  std::mt19937 rng(4);
  BatchNormTrack<double> bn;
  bn.build(4, rng);
  fill_normal(bn.w, rng, 0.3, 1.0);
  Tensor<double> x({6, 4});
  fill_normal(x, rng, 1.0);
  Tensor<double> coef(x.shape);
  fill_normal(coef, rng, 1.0);
  ParamList<double> params;
  bn.collect("bnt", params);
  BatchNormTrackCtx<double> ctx;
  auto loss_only = [&] {
    return weighted_sum(coef, [&] { return bn.forward(x, nullptr, true); });
  };
  auto loss_grads = [&] {
    zero_grads(params);
    auto y = bn.forward(x, &ctx, true);
    double acc = 0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += coef[i] * y[i];
    bn.backward(coef, ctx);
    return acc;
  };
  CHECK(gradcheck(params, loss_grads, loss_only, 6, rng) < 1e-6);
  loss_grads();
  auto dx = bn.backward(coef, ctx);
  for (int trial = 0; trial < 6; ++trial) {
    std::uniform_int_distribution<int64_t> pick(0, x.numel() - 1);
    const int64_t j = pick(rng);
    CHECK(testutil::rel_err(dx[j], testutil::numeric_derivative(&x[j], loss_only)) < 1e-6);
  }
}

TEST_CASE("conv1d track gradcheck and zero-input bias broadcast") {
  std::mt19937 rng(5);
  Conv1dTrack<double> conv;
  conv.build(3, 2, 3, rng);
  Tensor<double> x({7, 3});
  fill_normal(x, rng, 1.0);
  Tensor<double> coef({7, 2});
  fill_normal(coef, rng, 1.0);
  ParamList<double> params;
  conv.collect("c1", params);
  Conv1dCtx<double> ctx;
  auto loss_only = [&] { return weighted_sum(coef, [&] { return conv.forward(x, nullptr); }); };
  auto loss_grads = [&] {
    zero_grads(params);
    auto y = conv.forward(x, &ctx);
    double acc = 0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += coef[i] * y[i];
    conv.backward(coef, ctx);
    return acc;
  };
  CHECK(gradcheck(params, loss_grads, loss_only, 8, rng) < 1e-7);
  loss_grads();
  auto dx = conv.backward(coef, ctx);
  for (int trial = 0; trial < 6; ++trial) {
    std::uniform_int_distribution<int64_t> pick(0, x.numel() - 1);
    const int64_t j = pick(rng);
    CHECK(testutil::rel_err(dx[j], testutil::numeric_derivative(&x[j], loss_only)) < 1e-7);
  }

  SUBCASE("zero input maps every row to the bias") {
    Tensor<double> z({5, 3});
    auto y = conv.forward(z, nullptr);
    for (int64_t i = 0; i < 5; ++i)
      for (int64_t o = 0; o < 2; ++o) CHECK(y[i * 2 + o] == doctest::Approx(conv.b[o]));
  }
}

TEST_CASE("maxpool and gap backward") {
  std::mt19937 rng(6);
  MaxPool2d<double> pool;
  pool.k = 2;
  pool.stride = 2;
  Tensor<double> x({1, 2, 4, 4});
  fill_normal(x, rng, 1.0);
  MaxPool2dCtx<double> pctx;
  auto y = pool.forward(x, &pctx);
  CHECK(y.shape == std::vector<int64_t>{1, 2, 2, 2});
  Tensor<double> coef(y.shape);
  fill_normal(coef, rng, 1.0);
  auto loss_only = [&] { return weighted_sum(coef, [&] { return pool.forward(x, nullptr); }); };
  auto dx = pool.backward(coef, pctx);
  for (int trial = 0; trial < 10; ++trial) {
    std::uniform_int_distribution<int64_t> pick(0, x.numel() - 1);
    const int64_t j = pick(rng);
    CHECK(testutil::rel_err(dx[j], testutil::numeric_derivative(&x[j], loss_only, 1e-7)) < 1e-5);
  }

  GapCtx<double> gctx;
  auto g = global_avg_pool(x, &gctx);
  CHECK(g.shape == std::vector<int64_t>{1, 2});
  Tensor<double> gc(g.shape);
  fill_normal(gc, rng, 1.0);
  auto gloss = [&] { return weighted_sum(gc, [&] { return global_avg_pool(x, static_cast<GapCtx<double>*>(nullptr)); }); };
  auto gdx = global_avg_pool_backward(gc, gctx);
  for (int trial = 0; trial < 6; ++trial) {
    std::uniform_int_distribution<int64_t> pick(0, x.numel() - 1);
    const int64_t j = pick(rng);
    CHECK(testutil::rel_err(gdx[j], testutil::numeric_derivative(&x[j], gloss)) < 1e-7);
  }
}

TEST_CASE("3d depthwise/pointwise gradcheck") {
  std::mt19937 rng(7);
  DepthwiseConv3d<double> dw;
  dw.build(2, 2, rng);
  PointwiseConv3d<double> pw;
  pw.build(2, 3, rng);
  Tensor<double> x({2, 4, 6, 6});
  fill_normal(x, rng, 1.0);
  Depthwise3dCtx<double> dctx;
  Pointwise3dCtx<double> pctx;
  auto fwd = [&](Depthwise3dCtx<double>* dc, Pointwise3dCtx<double>* pc) {
    auto y = dw.forward(x, dc);
    return pw.forward(y, pc);
  };
  auto y0 = fwd(nullptr, nullptr);
  CHECK(y0.shape == std::vector<int64_t>{3, 4, 3, 3});
  Tensor<double> coef(y0.shape);
  fill_normal(coef, rng, 1.0);
  ParamList<double> params;
  dw.collect("dw", params);
  pw.collect("pw", params);
  auto loss_only = [&] { return weighted_sum(coef, [&] { return fwd(nullptr, nullptr); }); };
  auto loss_grads = [&] {
    zero_grads(params);
    auto y = fwd(&dctx, &pctx);
    double acc = 0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += coef[i] * y[i];
    auto d = pw.backward(coef, pctx);
    dw.backward(d, dctx);
    return acc;
  };
  CHECK(gradcheck(params, loss_grads, loss_only, 8, rng) < 1e-7);
  loss_grads();
  zero_grads(params);
  auto d = pw.backward(coef, pctx);
  auto dx = dw.backward(d, dctx);
  for (int trial = 0; trial < 8; ++trial) {
    std::uniform_int_distribution<int64_t> pick(0, x.numel() - 1);
    const int64_t j = pick(rng);
    CHECK(testutil::rel_err(dx[j], testutil::numeric_derivative(&x[j], loss_only)) < 1e-7);
  }
}

TEST_CASE("cosine map backward") {
  std::mt19937 rng(8);
  Tensor<double> x({5, 4});
  fill_normal(x, rng, 1.0);
  CosineMapCtx<double> ctx;
  auto m0 = cosine_map_fwd(x, &ctx);
  Tensor<double> coef(m0.shape);
  fill_normal(coef, rng, 1.0);
  auto loss_only = [&] {
    return weighted_sum(coef, [&] { return cosine_map_fwd(x, static_cast<CosineMapCtx<double>*>(nullptr)); });
  };
  auto dx = cosine_map_bwd(coef, ctx);
  for (int trial = 0; trial < 12; ++trial) {
    std::uniform_int_distribution<int64_t> pick(0, x.numel() - 1);
    const int64_t j = pick(rng);
    CHECK(testutil::rel_err(dx[j], testutil::numeric_derivative(&x[j], loss_only)) < 1e-6);
  }
}

TEST_CASE("temporal difference forward/backward") {
  Tensor<double> x({3, 1});
  x[0] = 1;
  x[1] = 2;
  x[2] = 4;
  auto d = temporal_difference_fwd(x);
  CHECK(d[0] == 1);
  CHECK(d[1] == -1);
  CHECK(d[2] == -2);

  std::mt19937 rng(9);
  Tensor<double> y({6, 3});
  fill_normal(y, rng, 1.0);
  Tensor<double> coef({6, 3});
  fill_normal(coef, rng, 1.0);
  auto loss_only = [&] { return weighted_sum(coef, [&] { return temporal_difference_fwd(y); }); };
  auto dx = temporal_difference_bwd(coef);
  for (int64_t j = 0; j < y.numel(); ++j)
    CHECK(testutil::rel_err(dx[j], testutil::numeric_derivative(&y[j], loss_only)) < 1e-8);
}

TEST_CASE("SE gate and local summary gradcheck") {
  std::mt19937 rng(10);
  SEGate<double> se;
  se.build(8, rng);
  Tensor<double> v({8});
  fill_normal(v, rng, 1.0);
  Tensor<double> coef({8});
  fill_normal(coef, rng, 1.0);
  ParamList<double> params;
  se.collect("se", params);
  SEGateCtx<double> ctx;
  auto loss_only = [&] { return weighted_sum(coef, [&] { return se.forward(v, nullptr); }); };
  auto loss_grads = [&] {
    zero_grads(params);
    auto y = se.forward(v, &ctx);
    double acc = 0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += coef[i] * y[i];
    se.backward(coef, ctx);
    return acc;
  };
  CHECK(gradcheck(params, loss_grads, loss_only, 6, rng) < 1e-7);
  auto g = se.forward(v, nullptr);
  for (int64_t i = 0; i < g.numel(); ++i) {
    CHECK(g[i] > 0.0);
    CHECK(g[i] < 1.0);
  }

  LocalSummary<double> ls;
  ls.build(4, 5, rng);
  Tensor<double> track({7, 4});
  fill_normal(track, rng, 1.0);
  Tensor<double> lcoef({5});
  fill_normal(lcoef, rng, 1.0);
  ParamList<double> lparams;
  ls.collect("ls", lparams);
  LocalSummaryCtx<double> lctx;
  auto lloss_only = [&] {
    return weighted_sum(lcoef, [&] { return ls.forward(track, nullptr, true); });
  };
  auto lloss_grads = [&] {
    zero_grads(lparams);
    auto y = ls.forward(track, &lctx, true);
    double acc = 0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += lcoef[i] * y[i];
    ls.backward(lcoef, lctx);
    return acc;
  };
  CHECK(gradcheck(lparams, lloss_grads, lloss_only, 6, rng) < 1e-6);
  lloss_grads();
  auto dtr = ls.backward(lcoef, lctx);
  for (int trial = 0; trial < 8; ++trial) {
    std::uniform_int_distribution<int64_t> pick(0, track.numel() - 1);
    const int64_t j = pick(rng);
    CHECK(testutil::rel_err(dtr[j], testutil::numeric_derivative(&track[j], lloss_only)) < 1e-6);
  }
}

TEST_CASE("basic residual block gradcheck") {
  std::mt19937 rng(11);
  BasicBlock2d<double> blk;
  blk.build(3, 5, 2, rng);
  Tensor<double> x({2, 3, 6, 6});
  fill_normal(x, rng, 1.0);
  BasicBlock2dCtx<double> ctx;
  auto y0 = blk.forward(x, &ctx, true);
  CHECK(y0.shape == std::vector<int64_t>{2, 5, 3, 3});
  Tensor<double> coef(y0.shape);
  fill_normal(coef, rng, 1.0);
  ParamList<double> params;
  blk.collect("blk", params);
  auto loss_only = [&] {
    return weighted_sum(coef, [&] { return blk.forward(x, nullptr, true); });
  };
  auto loss_grads = [&] {
    zero_grads(params);
    auto y = blk.forward(x, &ctx, true);
    double acc = 0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += coef[i] * y[i];
    blk.backward(coef, ctx);
    return acc;
  };
  CHECK(gradcheck(params, loss_grads, loss_only, 4, rng, 1e-5) < 1e-5);
}

TEST_CASE("adam deterministic step") {
  std::mt19937 rng(12);
  Affine<double> aff;
  aff.build(3, 1, rng);
  ParamList<double> params;
  aff.collect("aff", params);
  Adam<double> opt;
  opt.attach(params);
  for (auto& g : aff.gw.v) g = 0.5;
  aff.gb[0] = -0.25;
  auto w_before = aff.w.v;
  opt.step(params, 0.1);
  // First step moves every coordinate by about lr (bias-corrected).
  for (size_t i = 0; i < aff.w.v.size(); ++i)
    CHECK(std::abs(aff.w.v[i] - (w_before[i] - 0.1)) < 1e-6);
}
