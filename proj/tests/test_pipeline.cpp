#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "gebd/pipeline.hpp"
#include "gebd/datagen.hpp"
#include "test_util.hpp"

using namespace gebd;

namespace {

ModelConfig tiny_gradcheck_config() {
  ModelConfig cfg;
  cfg.backbone_id = "residual2d_tiny";
  cfg.truncation_level = 2;
  cfg.multi_level = true;
  cfg.encoder = EncoderKind::DiffMixer;
  cfg.fusion = FusionKind::CrossAttention;
  cfg.decoder = DecoderKind::FcnRes10;
  cfg.clip_length = 5;
  cfg.backbone_widths = {4, 8, 16, 32};
  cfg.encoder_width = 4;
  cfg.decoder_base_width = 4;
  return cfg;
}

}  // namespace

TEST_CASE("gaussian_smooth matches the closed form") {
  LabelTrack hard;
  hard.hard = true;
  hard.values = {0, 0, 0, 1, 0, 0, 0};
  auto soft = gaussian_smooth(hard, 1.0);
  const std::vector<double> expect = {0.011109, 0.135335, 0.606531, 1.0, 0.606531, 0.135335, 0.011109};
  REQUIRE(soft.values.size() == expect.size());
  for (size_t i = 0; i < expect.size(); ++i)
    CHECK(soft.values[i] == doctest::Approx(expect[i]).epsilon(1e-4));
  CHECK_FALSE(soft.hard);

  SUBCASE("two boundaries combine with elementwise max") {
    LabelTrack two;
    two.hard = true;
    two.values = {0, 0, 1, 0, 1, 0, 0};
    auto s = gaussian_smooth(two, 1.0);
    CHECK(s.values[2] == 1.0);
    CHECK(s.values[4] == 1.0);
    CHECK(s.values[3] == doctest::Approx(0.606531).epsilon(1e-5));  // max, not sum
    CHECK(s.values[0] == doctest::Approx(std::exp(-4.0 / 2.0)).epsilon(1e-6));
  }
  SUBCASE("all zeros stay zero") {
    LabelTrack z;
    z.hard = true;
    z.values.assign(5, 0.0);
    auto s = gaussian_smooth(z, 1.0);
    for (double v : s.values) CHECK(v == 0.0);
  }
  SUBCASE("sigma must be positive") {
    CHECK_THROWS_AS(gaussian_smooth(hard, 0.0), ValidationError);
  }
  SUBCASE("peak positions recover the boundaries exactly") {
    LabelTrack t;
    t.hard = true;
    t.values.assign(50, 0.0);
    t.values[7] = t.values[21] = t.values[40] = 1.0;
    auto s = gaussian_smooth(t, 2.0);
    std::vector<int> peaks;
    for (size_t i = 0; i < s.values.size(); ++i)
      if (s.values[i] > 0.99) peaks.push_back(static_cast<int>(i));
    CHECK(peaks == std::vector<int>{7, 21, 40});
  }
}

TEST_CASE("learning rate schedule drops after the 6th and 8th epochs") {
  TrainSchedule s;
  s.validate();
  CHECK(s.lr_at(1) == doctest::Approx(1e-2));
  CHECK(s.lr_at(6) == doctest::Approx(1e-2));
  CHECK(s.lr_at(7) == doctest::Approx(1e-3));
  CHECK(s.lr_at(8) == doctest::Approx(1e-3));
  CHECK(s.lr_at(9) == doctest::Approx(1e-4));
  CHECK(s.lr_at(15) == doctest::Approx(1e-4));

  TrainSchedule bad;
  bad.lr_drop_epochs = {8, 6};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("validate_config reports every violation") {
  ModelConfig cfg;  // default EfficientGEBD
  CHECK(validate_config(cfg).empty());

  SUBCASE("even clip length") {
    cfg.clip_length = 16;
    auto errs = validate_config(cfg);
    REQUIRE(errs.size() == 1);
    CHECK(errs[0].find("clip_length must be odd") != std::string::npos);
  }
  SUBCASE("multi_level needs two stages") {
    cfg.multi_level = true;
    cfg.truncation_level = 1;
    auto errs = validate_config(cfg);
    REQUIRE(errs.size() == 1);
    CHECK(errs[0].find("multi_level") != std::string::npos);
  }
  SUBCASE("decoder=none cannot fuse") {
    cfg.decoder = DecoderKind::None;
    cfg.fusion = FusionKind::CrossAttention;
    auto errs = validate_config(cfg);
    CHECK(!errs.empty());
  }
  SUBCASE("multiple violations are all reported") {
    cfg.clip_length = 4;  // even AND too short is one rule each
    cfg.sigma = -1;
    cfg.backbone_widths = {16, 16, 64, 128};
    auto errs = validate_config(cfg);
    CHECK(errs.size() >= 3);
  }
}

TEST_CASE("config kv round trip") {
  ModelConfig cfg;
  cfg.backbone_id = "residual3d_tiny";
  cfg.backbone_mode = BackboneMode::Video3d;
  cfg.encoder = EncoderKind::Conv1d;
  cfg.fusion = FusionKind::Concat;
  cfg.decoder = DecoderKind::FcnRes18;
  cfg.clip_length = 9;
  cfg.backbone_widths = {8, 16, 32, 64};
  cfg.encoder_width = 24;
  cfg.sigma = 2.5;
  auto text = config_to_kv(cfg);
  auto back = config_from_kv(text);
  CHECK(config_to_kv(back) == text);
  CHECK(back.backbone_mode == BackboneMode::Video3d);
  CHECK(back.clip_length == 9);
  CHECK(back.sigma == doctest::Approx(2.5));
}

TEST_CASE("build_model wiring") {
  SUBCASE("EfficientGEBD has strictly more parameters than BasicGEBD-L2") {
    ModelConfig eff;  // defaults: L2*, diff_mixer, cross_attention, fcn_res10
    auto eff_model = build_model<float>(eff, 1);
    nn::ParamList<float> eff_params;
    eff_model.collect(eff_params);
    int64_t eff_count = 0;
    for (auto& p : eff_params) eff_count += p.w->numel();

    ModelConfig basic;
    basic.multi_level = false;
    basic.truncation_level = 2;
    basic.encoder = EncoderKind::Conv1d;
    basic.fusion = FusionKind::None;
    auto basic_model = build_model<float>(basic, 1);
    nn::ParamList<float> basic_params;
    basic_model.collect(basic_params);
    int64_t basic_count = 0;
    for (auto& p : basic_params) basic_count += p.w->numel();

    CHECK(eff_count > basic_count);
  }
  SUBCASE("invalid config is rejected") {
    ModelConfig bad;
    bad.decoder = DecoderKind::None;
    bad.fusion = FusionKind::CrossAttention;
    CHECK_THROWS_AS(build_model<float>(bad, 1), ValidationError);
  }
  SUBCASE("decoder=none routes the encoder to the classifier") {
    ModelConfig abl;
    abl.decoder = DecoderKind::None;
    abl.fusion = FusionKind::None;
    auto m = build_model<float>(abl, 1);
    CHECK(m.classifier_in_width == abl.encoder_width);
    CHECK_FALSE(m.decoder.has_value());
  }
  SUBCASE("two-mixer variant builds and produces valid shapes") {
    ModelConfig two;
    two.encoder_stacks = 2;
    auto m = build_model<float>(two, 1);
    nn::Tensor<float> track({two.clip_length, m.encoder_in_width});
    std::mt19937 rng(3);
    nn::fill_uniform(track, rng, -1.0, 1.0);
    const float p = m.forward_track(track, nullptr, false);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("forward_video basics") {
  ModelConfig cfg;
  cfg.backbone_widths = {4, 8, 16, 32};
  cfg.encoder_width = 8;
  cfg.decoder_base_width = 4;
  auto model = build_model<float>(cfg, 5);

  SUBCASE("constant video gives a constant score track") {
    FrameSequence v;
    v.video_id = "const";
    v.t = 24;
    v.h = 32;
    v.w = 32;
    v.fps = 10;
    v.duration_s = 2.4;
    v.frames.assign(static_cast<size_t>(v.t) * v.h * v.w * 3, 0.5f);
    auto scores = forward_video(model, v);
    CHECK(static_cast<int>(scores.scores.size()) == v.t);
    for (double s : scores.scores) CHECK(s == doctest::Approx(scores.scores[0]).epsilon(1e-6));
    scores.validate();
  }

  SUBCASE("scores length equals T and timestamps follow the convention") {
    SyntheticSpec spec;
    spec.t = 40;
    spec.height = 32;
    spec.width = 32;
    spec.n_shot_boundaries = 1;
    spec.n_event_boundaries = 1;
    spec.seed = 11;
    auto gv = generate_video(spec, "v0");
    auto scores = forward_video(model, gv.video);
    CHECK(scores.scores.size() == 40);
    CHECK(scores.timestamps_s[0] == doctest::Approx(0.5 * gv.video.duration_s / 40));
  }

  SUBCASE("translation consistency on interior frames (image mode)") {
    const int t = 26, h = 32, w = 32, shift = 3;
    std::mt19937 rng(17);
    std::uniform_real_distribution<float> unit(0.f, 1.f);
    // content[i] for the base video; shifted video plays content[i - shift].
    std::vector<std::vector<float>> content(static_cast<size_t>(t));
    for (auto& f : content) {
      f.resize(static_cast<size_t>(h) * w * 3);
      for (auto& x : f) x = unit(rng);
    }
    auto make_video = [&](int s) {
      FrameSequence v;
      v.video_id = "shift" + std::to_string(s);
      v.t = t;
      v.h = h;
      v.w = w;
      v.fps = 10;
      v.duration_s = t / 10.0;
      v.frames.resize(static_cast<size_t>(t) * h * w * 3);
      for (int i = 0; i < t; ++i) {
        const auto& src = content[static_cast<size_t>(std::clamp(i - s, 0, t - 1))];
        std::copy(src.begin(), src.end(), v.frame(i));
      }
      return v;
    };
    auto base = forward_video(model, make_video(0));
    auto moved = forward_video(model, make_video(shift));
    const int half = (cfg.clip_length - 1) / 2;
    for (int i = half; i + shift < t - half; ++i)
      CHECK(moved.scores[static_cast<size_t>(i + shift)] ==
            doctest::Approx(base.scores[static_cast<size_t>(i)]).epsilon(1e-5));
  }
}

TEST_CASE("end-to-end gradcheck: tiny EfficientGEBD at double precision") {
  auto cfg = tiny_gradcheck_config();
  auto model = build_model<double>(cfg, 23);
  std::mt19937 rng(29);
  nn::Tensor<double> clip({cfg.clip_length, 3, 8, 8});
  nn::fill_uniform(clip, rng, 0.0, 1.0);
  const double target = 0.7;

  nn::ParamList<double> params;
  model.collect(params);
  testutil::jitter_params(params, rng);
  auto loss_grads = [&] {
    nn::zero_grads(params);
    return single_clip_loss(model, clip, target, true, true);
  };
  auto loss_only = [&] { return single_clip_loss(model, clip, target, true, false); };
  const double worst = testutil::gradcheck(params, loss_grads, loss_only, 1, rng, 1e-6);
  CHECK(worst < 1e-3);

  SUBCASE("k=9 keeps every decoder stage wider than one pixel") {
    auto cfg9 = tiny_gradcheck_config();
    cfg9.clip_length = 9;
    auto model9 = build_model<double>(cfg9, 31);
    nn::Tensor<double> clip9({cfg9.clip_length, 3, 8, 8});
    nn::fill_uniform(clip9, rng, 0.0, 1.0);
    nn::ParamList<double> params9;
    model9.collect(params9);
    testutil::jitter_params(params9, rng);
    auto lg = [&] {
      nn::zero_grads(params9);
      return single_clip_loss(model9, clip9, 0.3, true, true);
    };
    auto lo = [&] { return single_clip_loss(model9, clip9, 0.3, true, false); };
    CHECK(testutil::gradcheck(params9, lg, lo, 1, rng, 1e-6) < 1e-3);
  }
}

TEST_CASE("training determinism and loss sanity (feature mode)") {
  ModelConfig cfg;
  cfg.backbone_id = "offline";
  cfg.offline_width = 6;
  cfg.clip_length = 9;
  cfg.encoder_width = 8;
  cfg.decoder_base_width = 4;
  cfg.multi_level = false;

  // Synthetic feature videos: a step change in features at the boundary.
  auto make_data = [&](uint32_t seed) {
    std::vector<TrainVideo> data;
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int v = 0; v < 6; ++v) {
      auto f = std::make_shared<FeatureTrack>();
      f->t = 40;
      f->c = 6;
      f->values.resize(240);
      const int boundary = 10 + (v * 3) % 20;
      std::vector<double> before(6), after(6);
      for (auto& x : before) x = unit(rng);
      for (auto& x : after) x = unit(rng);
      for (int i = 0; i < 40; ++i)
        for (int c = 0; c < 6; ++c)
          f->values[static_cast<size_t>(i) * 6 + c] = (i < boundary ? before : after)[static_cast<size_t>(c)] + 0.05 * unit(rng);
      TrainVideo tv;
      tv.features = f;
      LabelTrack hard;
      hard.hard = true;
      hard.values.assign(40, 0.0);
      hard.values[static_cast<size_t>(boundary)] = 1.0;
      tv.soft_targets = gaussian_smooth(hard, 1.0).values;
      for (int i = 0; i < 40; ++i)
        if (tv.soft_targets[static_cast<size_t>(i)] >= 0.6) tv.positive_frames.push_back(i);
      data.push_back(std::move(tv));
    }
    return data;
  };

  TrainSchedule sched;
  sched.epochs = 4;
  sched.base_lr = 3e-3;
  sched.lr_drop_epochs = {3};
  sched.batch_size = 8;
  sched.clips_per_epoch = 48;
  sched.seed = 99;

  auto data = make_data(7);
  auto m1 = build_model<float>(cfg, 42);
  auto r1 = Trainer<float>(m1, sched).run(data);
  auto m2 = build_model<float>(cfg, 42);
  auto r2 = Trainer<float>(m2, sched).run(data);
  REQUIRE(r1.epoch_loss.size() == r2.epoch_loss.size());
  for (size_t i = 0; i < r1.epoch_loss.size(); ++i)
    CHECK(r1.epoch_loss[i] == r2.epoch_loss[i]);  // bitwise equal
  CHECK(std::isfinite(r1.epoch_loss.back()));
}

TEST_CASE("overfit sanity: loss non-increasing per epoch and small at the end") {
  ModelConfig cfg;
  cfg.backbone_id = "offline";
  cfg.offline_width = 5;
  cfg.clip_length = 9;
  cfg.encoder_width = 8;
  cfg.decoder_base_width = 4;
  cfg.multi_level = false;
  auto model = build_model<float>(cfg, 3);

  // 50 fixed clips from feature videos with step changes: 25 windows
  // centered on the step (target 1) and 25 far from it (target 0).
  std::vector<TrainVideo> data;
  std::vector<Trainer<float>::FixedClip> fixed;
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int v = 0; v < 5; ++v) {
    auto f = std::make_shared<FeatureTrack>();
    f->t = 50;
    f->c = 5;
    f->values.resize(250);
    const int boundary = 15 + 4 * v;
    std::vector<double> before(5), after(5);
    for (auto& x : before) x = unit(rng);
    for (auto& x : after) x = unit(rng);
    for (int i = 0; i < 50; ++i)
      for (int c = 0; c < 5; ++c)
        f->values[static_cast<size_t>(i) * 5 + c] =
            (i < boundary ? before : after)[static_cast<size_t>(c)] + 0.02 * unit(rng);
    TrainVideo tv;
    tv.features = f;
    tv.soft_targets.assign(50, 0.0);
    data.push_back(std::move(tv));
    for (int r = 0; r < 5; ++r) {
      fixed.push_back({v, boundary, 1.0});
      fixed.push_back({v, (boundary + 12 + 5 * r) % 50, 0.0});
    }
  }

  TrainSchedule sched;
  sched.epochs = 30;
  sched.base_lr = 3e-3;
  sched.lr_drop_epochs = {20, 26};
  sched.batch_size = 10;
  sched.seed = 4;
  auto res = Trainer<float>(model, sched).run_fixed(data, fixed);
  for (size_t i = 1; i < res.epoch_loss.size(); ++i)
    CHECK(res.epoch_loss[i] <= res.epoch_loss[i - 1] + 1e-9);
  CHECK(res.epoch_loss.back() < 0.05);
}

TEST_CASE("checkpoint round trip is bitwise") {
  ModelConfig cfg;
  cfg.backbone_widths = {4, 8, 16, 32};
  cfg.encoder_width = 8;
  cfg.decoder_base_width = 4;
  cfg.clip_length = 5;
  auto model = build_model<float>(cfg, 77);
  TrainSchedule sched;
  sched.seed = 123;
  const std::string path = "/tmp/gebd_test_ckpt.gwa";
  save_checkpoint(path, model, sched, 123);
  TrainSchedule back_sched;
  uint32_t back_seed = 0;
  auto back = load_checkpoint<float>(path, &back_sched, &back_seed);
  CHECK(back_seed == 123);
  CHECK(back_sched.epochs == sched.epochs);
  nn::ParamList<float> pa, pb;
  model.collect(pa);
  back.collect(pb);
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].w->numel() == pb[i].w->numel());
    for (int64_t j = 0; j < pa[i].w->numel(); ++j) CHECK(pa[i].w->v[static_cast<size_t>(j)] == pb[i].w->v[static_cast<size_t>(j)]);
  }
  std::remove(path.c_str());
}

TEST_CASE("non-finite loss aborts with batch id") {
  ModelConfig cfg;
  cfg.backbone_id = "offline";
  cfg.offline_width = 4;
  cfg.clip_length = 5;
  cfg.encoder_width = 4;
  cfg.decoder_base_width = 4;
  cfg.multi_level = false;
  auto model = build_model<float>(cfg, 3);
  // Poison a classifier weight so the forward pass explodes.
  model.classifier.aff.w[0] = std::numeric_limits<float>::quiet_NaN();
  std::vector<TrainVideo> data(1);
  auto f = std::make_shared<FeatureTrack>();
  f->t = 20;
  f->c = 4;
  f->values.assign(80, 0.5);
  data[0].features = f;
  data[0].soft_targets.assign(20, 0.0);
  TrainSchedule sched;
  sched.epochs = 1;
  sched.lr_drop_epochs = {};
  sched.clips_per_epoch = 4;
  sched.batch_size = 4;
  CHECK_THROWS_AS(Trainer<float>(model, sched).run(data), PipelineError);
}
