#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gebd/fusion_head.hpp"

using namespace gebd;

namespace {

FeatureTrack constant_track(int t, int c, double val) {
  FeatureTrack tr;
  tr.t = t;
  tr.c = c;
  tr.values.assign(static_cast<size_t>(t) * c, val);
  return tr;
}

}  // namespace

TEST_CASE("local_summary") {
  SUBCASE("k=17 selects row index 8 and keeps the width contract") {
    // Track whose rows differ only at the median neighborhood; a constant
    // track must give the same output as any row selection.
    auto tr = constant_track(17, 6, 0.4);
    auto v = local_summary(tr, 1);
    CHECK(v.size() == 6);

    // Constant track: every window is identical, so the local vector equals
    // the one computed from any other odd-length constant track of equal
    // width (row choice irrelevant).
    auto tr2 = constant_track(9, 6, 0.4);
    auto v2 = local_summary(tr2, 1);
    for (size_t i = 0; i < v.size(); ++i)
      CHECK(v[i] == doctest::Approx(v2[i]).epsilon(1e-9));
  }
  SUBCASE("median sensitivity: only rows 7..9 affect the k=17 output") {
    FeatureTrack tr = constant_track(17, 4, 0.1);
    auto base = local_summary(tr, 2);
    FeatureTrack far = tr;
    far.values[0] = 5.0;  // row 0 changes BN stats only
    auto moved = local_summary(far, 2);
    // Row 0 shifts the batch statistics, so outputs may move slightly, but a
    // direct change at the median row must move the output far more.
    FeatureTrack med = tr;
    med.values[8 * 4 + 1] = 5.0;
    auto med_out = local_summary(med, 2);
    double far_dev = 0, med_dev = 0;
    for (size_t i = 0; i < base.size(); ++i) {
      far_dev = std::max(far_dev, std::abs(moved[i] - base[i]));
      med_dev = std::max(med_dev, std::abs(med_out[i] - base[i]));
    }
    CHECK(med_dev > far_dev);
  }
  SUBCASE("even k errors") {
    auto tr = constant_track(8, 4, 0.2);
    CHECK_THROWS_AS(local_summary(tr, 1), ValidationError);
  }
}

TEST_CASE("concat_fuse") {
  std::vector<double> local = {1, 2, 3};
  std::vector<double> global_v = {4, 5};
  auto out = concat_fuse(local, global_v);
  REQUIRE(out.size() == 5);
  // Order is (local, global), fixed.
  CHECK(out == std::vector<double>{1, 2, 3, 4, 5});

  SUBCASE("zero local zeroes the first half") {
    auto z = concat_fuse({0, 0, 0}, {7, 8});
    CHECK(z[0] == 0);
    CHECK(z[2] == 0);
    CHECK(z[3] == 7);
  }
  SUBCASE("128 + 128 -> 256") {
    std::vector<double> a(128, 0.5), b(128, -0.5);
    CHECK(concat_fuse(a, b).size() == 256);
  }
}

TEST_CASE("cross_attention_fuse") {
  SUBCASE("identity gates -> local + global") {
    std::vector<double> l = {1, 2, 3}, g = {10, 20, 30};
    auto out = cross_attention_fuse_with_gates(l, g, {1, 1, 1}, {1, 1, 1});
    CHECK(out == std::vector<double>{11, 22, 33});
  }
  SUBCASE("zero gates -> zero output") {
    std::vector<double> l = {1, 2, 3}, g = {10, 20, 30};
    auto out = cross_attention_fuse_with_gates(l, g, {0, 0, 0}, {0, 0, 0});
    CHECK(out == std::vector<double>{0, 0, 0});
  }
  SUBCASE("asymmetric in its arguments with distinct SE weights") {
    std::vector<double> l(16), g(16);
    for (int i = 0; i < 16; ++i) {
      l[static_cast<size_t>(i)] = std::sin(i * 0.7);
      g[static_cast<size_t>(i)] = std::cos(i * 0.4);
    }
    auto ab = cross_attention_fuse(l, g, 9);
    auto ba = cross_attention_fuse(g, l, 9);
    double dev = 0;
    for (size_t i = 0; i < ab.size(); ++i) dev = std::max(dev, std::abs(ab[i] - ba[i]));
    CHECK(dev > 1e-6);
  }
  SUBCASE("width mismatch is projected first") {
    std::vector<double> l(8, 0.5), g(12, 0.25);
    auto out = cross_attention_fuse(l, g, 3);
    CHECK(out.size() == 12);
  }
  SUBCASE("parameter count at paper widths is the same order as 0.8M") {
    std::mt19937 rng(5);
    // Fusion block at paper widths: local conv (median output), SE pair,
    // classifier.
    LocalSummary<double> ls;
    ls.build(512, 512, rng);
    CrossAttentionFuse<double> fuse;
    fuse.build(512, 512, rng);
    Classifier<double> cls;
    cls.build(512, rng);
    const double total = static_cast<double>(ls.macs() + fuse.macs() + cls.macs());
    CHECK(total / 0.8e6 > 1.0 / 3.0);
    CHECK(total / 0.8e6 < 3.0);
  }
}

TEST_CASE("classify") {
  SUBCASE("zero input and zero weights -> 0.5") {
    std::vector<double> zeros(8, 0.0);
    // With zero input the affine map yields only the bias, which is zero-
    // initialized, so any seed gives sigmoid(0).
    CHECK(classify(zeros, 3) == doctest::Approx(0.5));
  }
  SUBCASE("output in (0,1) and monotone in the logit direction") {
    std::vector<double> v(8, 0.0);
    const double base = classify(v, 7);
    CHECK(base > 0);
    CHECK(base < 1);
    // Push the input along the classifier weight direction: probability
    // must increase.
    std::mt19937 rng(7 ^ 0xc1a55u);
    Classifier<double> cls;
    cls.build(8, rng);
    nn::Tensor<double> x({8});
    for (int i = 0; i < 8; ++i) x[i] = cls.aff.w[i];
    const double hi = cls.forward(x, nullptr);
    nn::Tensor<double> zero({8});
    const double mid = cls.forward(zero, nullptr);
    CHECK(hi > mid);
  }
}

TEST_CASE("SE gate outputs stay strictly inside (0,1)") {
  std::mt19937 rng(11);
  SEGate<double> se;
  se.build(12, rng);
  nn::Tensor<double> v({12});
  nn::fill_normal(v, rng, 3.0);
  auto g = se.forward(v, nullptr);
  for (int64_t i = 0; i < g.numel(); ++i) {
    CHECK(g[i] > 0.0);
    CHECK(g[i] < 1.0);
  }
}
