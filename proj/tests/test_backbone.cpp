#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "gebd/backbone.hpp"
#include "gebd/pipeline.hpp"

using namespace gebd;

namespace {

FrameSequence random_video(int t, int h, int w, uint32_t seed) {
  FrameSequence v;
  v.video_id = "rv";
  v.t = t;
  v.h = h;
  v.w = w;
  v.fps = 10;
  v.duration_s = t / 10.0;
  v.frames.resize(static_cast<size_t>(t) * h * w * 3);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> unit(0.f, 1.f);
  for (auto& x : v.frames) x = unit(rng);
  return v;
}

int64_t total_macs(const std::vector<LayerProfile>& layers) {
  int64_t m = 0;
  for (const auto& l : layers) m += l.macs;
  return m;
}

}  // namespace

TEST_CASE("image-mode shape contract: 17 frames 64x64 L2 -> 17 x C_L2") {
  auto video = random_video(17, 64, 64, 1);
  auto tracks = extract_features(video, BackboneSpec::tiny2d(), 2, false, 3);
  REQUIRE(tracks.size() == 1);
  CHECK(tracks[0].t == 17);
  CHECK(tracks[0].c == 32);
  CHECK(tracks[0].level_tag == FeatureLevel::L2);

  SUBCASE("multi-level returns one pooled track per stage") {
    auto multi = extract_features(video, BackboneSpec::tiny2d(), 2, true, 3);
    REQUIRE(multi.size() == 2);
    CHECK(multi[0].c == 16);
    CHECK(multi[1].c == 32);
    CHECK(multi[0].t == 17);
  }
}

TEST_CASE("identical frames give identical feature rows (image mode)") {
  auto video = random_video(1, 32, 32, 2);
  FrameSequence rep;
  rep.video_id = "rep";
  rep.t = 6;
  rep.h = 32;
  rep.w = 32;
  rep.fps = 10;
  rep.duration_s = 0.6;
  for (int i = 0; i < 6; ++i)
    rep.frames.insert(rep.frames.end(), video.frames.begin(), video.frames.end());
  auto tracks = extract_features(rep, BackboneSpec::tiny2d({8, 16, 32, 64}), 2, false, 5);
  const auto& tr = tracks[0];
  for (int i = 1; i < tr.t; ++i)
    for (int c = 0; c < tr.c; ++c)
      CHECK(tr.row(i)[c] == doctest::Approx(tr.row(0)[c]).epsilon(1e-6));
}

TEST_CASE("image-mode temporal equivariance: permuting frames permutes rows") {
  auto video = random_video(7, 32, 32, 3);
  auto base = extract_features(video, BackboneSpec::tiny2d({8, 16, 32, 64}), 2, false, 7)[0];
  // Reverse the frames.
  FrameSequence rev = video;
  for (int i = 0; i < video.t; ++i)
    std::copy(video.frame(video.t - 1 - i), video.frame(video.t - 1 - i) + video.frame_stride(),
              rev.frame(i));
  auto revd = extract_features(rev, BackboneSpec::tiny2d({8, 16, 32, 64}), 2, false, 7)[0];
  for (int i = 0; i < base.t; ++i)
    for (int c = 0; c < base.c; ++c)
      CHECK(revd.row(i)[c] == doctest::Approx(base.row(base.t - 1 - i)[c]).epsilon(1e-9));
}

TEST_CASE("video mode is not temporally equivariant") {
  auto video = random_video(9, 32, 32, 4);
  FrameSequence rev = video;
  for (int i = 0; i < video.t; ++i)
    std::copy(video.frame(video.t - 1 - i), video.frame(video.t - 1 - i) + video.frame_stride(),
              rev.frame(i));
  auto spec = BackboneSpec::tiny3d({8, 16, 32, 64});
  auto base = extract_features(video, spec, 2, false, 9)[0];
  auto revd = extract_features(rev, spec, 2, false, 9)[0];
  // If 3D features were equivariant, revd would be base reversed; assert a
  // clear deviation somewhere.
  double max_dev = 0;
  for (int i = 0; i < base.t; ++i)
    for (int c = 0; c < base.c; ++c)
      max_dev = std::max(max_dev, std::abs(revd.row(i)[c] - base.row(base.t - 1 - i)[c]));
  CHECK(max_dev > 1e-4);
}

TEST_CASE("3d mode keeps one vector per frame position") {
  auto video = random_video(11, 32, 32, 5);
  auto tracks = extract_features(video, BackboneSpec::tiny3d({8, 16, 32, 64}), 2, true, 11);
  REQUIRE(tracks.size() == 2);
  CHECK(tracks[0].t == 11);
  CHECK(tracks[1].t == 11);
  CHECK(tracks[1].c == 16);
}

TEST_CASE("truncation MAC monotonicity L1 < L2 < L3 < L4") {
  std::mt19937 rng(6);
  Backbone2d<float> bb;
  bb.build(BackboneSpec::tiny2d(), rng);
  int64_t prev = 0;
  for (int level = 1; level <= 4; ++level) {
    const int64_t macs = total_macs(bb.profile(64, 64, level));
    CHECK(macs > prev);
    prev = macs;
  }
  SUBCASE("standard backbone too") {
    Backbone2d<float> std_bb;
    std_bb.build(BackboneSpec::standard2d(), rng);
    int64_t p = 0;
    for (int level = 1; level <= 4; ++level) {
      const int64_t macs = total_macs(std_bb.profile(224, 224, level));
      CHECK(macs > p);
      p = macs;
    }
  }
}

TEST_CASE("standard backbone at 224x224 counts about 4.10G MACs") {
  std::mt19937 rng(7);
  Backbone2d<float> bb;
  bb.build(BackboneSpec::standard2d(), rng);
  const double g = static_cast<double>(total_macs(bb.profile(224, 224, 4))) / 1e9;
  CHECK(g > 4.10 * 0.95);
  CHECK(g < 4.10 * 1.05);
}

TEST_CASE("level beyond spec stages is rejected") {
  auto video = random_video(3, 32, 32, 8);
  CHECK_THROWS_AS(extract_features(video, BackboneSpec::tiny2d(), 5, false, 1), ValidationError);
}

TEST_CASE("concat_levels") {
  SUBCASE("two tracks 17x64 and 17x128 at common width 64 give 17x128") {
    FeatureTrack a, b;
    a.t = b.t = 17;
    a.c = 64;
    b.c = 128;
    a.values.assign(17 * 64, 0.5);
    b.values.assign(17 * 128, -0.25);
    auto out = concat_levels({a, b}, 64, 2);
    CHECK(out.t == 17);
    CHECK(out.c == 128);
  }
  SUBCASE("single track is identity up to projection") {
    FeatureTrack a;
    a.t = 5;
    a.c = 8;
    a.values.assign(40, 1.0);
    auto out = concat_levels({a}, 8, 2);
    CHECK(out.t == 5);
    CHECK(out.c == 8);
  }
  SUBCASE("zero tracks error") { CHECK_THROWS_AS(concat_levels({}, 8), ValidationError); }
  SUBCASE("mismatched T errors") {
    FeatureTrack a, b;
    a.t = 5;
    a.c = 4;
    a.values.assign(20, 0.0);
    b.t = 6;
    b.c = 4;
    b.values.assign(24, 0.0);
    CHECK_THROWS_AS(concat_levels({a, b}, 4), ValidationError);
  }
}

TEST_CASE("backbone weights are strictly increasing in width per spec") {
  BackboneSpec bad = BackboneSpec::tiny2d();
  bad.stages[2].width = bad.stages[1].width;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}
