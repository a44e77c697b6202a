#pragma once

// Model assembly, the training loop (Adam + step decay, BCE on soft
// targets), sliding-window inference over whole videos, and checkpoints.

#include <functional>
#include <memory>

#include "gebd/backbone.hpp"
#include "gebd/core_types.hpp"
#include "gebd/fusion_head.hpp"
#include "gebd/simmap_decoder.hpp"
#include "gebd/temporal_encoder.hpp"

namespace gebd {

struct TrainSchedule {
  int epochs = 15;
  double base_lr = 1e-2;
  std::vector<int> lr_drop_epochs = {6, 8};  // 1-indexed
  double lr_drop_factor = 10.0;
  int batch_size = 32;
  uint32_t seed = 0;
  // Desk-scale sampler knobs (not part of the published recipe).
  int clips_per_epoch = 256;
  double pos_fraction = 0.5;

  void validate() const {
    if (epochs < 1) throw ValidationError("schedule: epochs >= 1 required");
    for (size_t i = 0; i < lr_drop_epochs.size(); ++i) {
      if (lr_drop_epochs[i] >= epochs)
        throw ValidationError("schedule: lr drops must come before the last epoch");
      if (i > 0 && lr_drop_epochs[i] <= lr_drop_epochs[i - 1])
        throw ValidationError("schedule: lr drops must be sorted ascending");
    }
    if (batch_size < 1) throw ValidationError("schedule: batch_size >= 1 required");
    if (base_lr <= 0 || lr_drop_factor <= 0) throw ValidationError("schedule: bad learning rate");
    if (clips_per_epoch < 1) throw ValidationError("schedule: clips_per_epoch >= 1 required");
    if (pos_fraction < 0 || pos_fraction > 1)
      throw ValidationError("schedule: pos_fraction in [0,1]");
  }

  // Epochs are 1-indexed; the rate drops after each listed epoch completes.
  double lr_at(int epoch) const {
    double lr = base_lr;
    for (int d : lr_drop_epochs)
      if (epoch > d) lr /= lr_drop_factor;
    return lr;
  }

  std::string to_kv() const;
  static TrainSchedule from_kv(const std::string& text);
};

// Gaussian label smoothing: each position takes the max over boundary
// positions b of exp(-(t-b)^2 / (2 sigma^2)); peaks stay exactly 1.
LabelTrack gaussian_smooth(const LabelTrack& labels, double sigma);

// ---------------------------------------------------------------------------

template <class T>
struct ModelCtx {
  Backbone2dCtx<T> bb2d;
  Backbone3dCtx<T> bb3d;
  LevelConcatCtx<T> concat;
  Conv1dEncoderCtx<T> enc_conv;
  std::vector<DiffMixerCtx<T>> mixers;
  CosineMapCtx<T> cosmap;
  FcnDecoderCtx<T> decoder;
  LocalSummaryCtx<T> local;
  nn::AffineCtx<T> concat_local_proj_unused;  // reserved
  CrossAttentionFuseCtx<T> cross;
  ClassifierCtx<T> cls;
  nn::Tensor<T> fused_track;  // encoder output entering map/local paths
};

template <class T>
struct Model {
  ModelConfig cfg;
  std::optional<Backbone2d<T>> bb2d;
  std::optional<Backbone3d<T>> bb3d;
  std::optional<LevelConcat<T>> concat;
  std::optional<Conv1dEncoder<T>> enc_conv;
  std::vector<DiffMixer<T>> mixers;
  std::optional<FcnDecoder<T>> decoder;
  std::optional<LocalSummary<T>> local;
  std::optional<CrossAttentionFuse<T>> cross;
  Classifier<T> classifier;

  int encoder_in_width = 0;
  int decoder_out_width = 0;
  int classifier_in_width = 0;

  int clip_len() const { return cfg.clip_length; }
  bool image_mode() const { return cfg.backbone_mode == BackboneMode::Image2d; }

  void collect(nn::ParamList<T>& out) {
    if (bb2d) bb2d->collect("backbone", out);
    if (bb3d) bb3d->collect("backbone", out);
    if (concat) concat->collect("backbone.levels", out);
    if (enc_conv) enc_conv->collect("encoder", out);
    for (size_t i = 0; i < mixers.size(); ++i)
      mixers[i].collect(mixers.size() > 1 ? "encoder.mixer" + std::to_string(i + 1) : "encoder", out);
    if (decoder) decoder->collect("decoder", out);
    if (local) local->collect("fusion.local", out);
    if (cross) cross->collect("fusion.cross", out);
    classifier.collect("head.classifier", out);
  }
  void collect_buffers(std::vector<std::pair<std::string, nn::Tensor<T>*>>& out) {
    if (bb2d) bb2d->collect_buffers("backbone", out);
    if (bb3d) bb3d->collect_buffers("backbone", out);
    if (enc_conv) enc_conv->collect_buffers("encoder", out);
    for (size_t i = 0; i < mixers.size(); ++i)
      mixers[i].collect_buffers(mixers.size() > 1 ? "encoder.mixer" + std::to_string(i + 1) : "encoder", out);
    if (decoder) decoder->collect_buffers("decoder", out);
    if (local) local->collect_buffers("fusion.local", out);
  }

  // --- per-clip head pass (everything after the backbone track) ---

  // track: [k, encoder_in_width] -> boundary probability of the median frame.
  T forward_track(const nn::Tensor<T>& track, ModelCtx<T>* ctx, bool training) {
    EncoderOut<T> enc;
    if (enc_conv) {
      enc = enc_conv->forward(track, ctx ? &ctx->enc_conv : nullptr, training);
    } else {
      if (ctx) ctx->mixers.resize(mixers.size());
      enc = mixers[0].forward(track, ctx ? &ctx->mixers[0] : nullptr, training);
      if (mixers.size() > 1)
        enc = mixers[1].forward(enc.fused, ctx ? &ctx->mixers[1] : nullptr, training);
    }
    if (ctx) ctx->fused_track = enc.fused;

    nn::Tensor<T> global_v;
    if (decoder) {
      auto m = cosine_map_fwd(enc.fused, ctx ? &ctx->cosmap : nullptr);
      const int64_t k = m.dim(0);
      m.reshape({1, 1, k, k});
      global_v = decoder->forward(m, ctx ? &ctx->decoder : nullptr, training);
      global_v.reshape({static_cast<int64_t>(decoder_out_width)});
    }

    nn::Tensor<T> head_in;
    switch (cfg.fusion) {
      case FusionKind::None: {
        if (decoder) {
          head_in = global_v;
        } else {
          // "old fashion" ablation: median row of the encoder track.
          const int64_t k = enc.fused.dim(0), c = enc.fused.dim(1);
          head_in = nn::Tensor<T>({c});
          std::copy(enc.fused.data() + (k / 2) * c, enc.fused.data() + (k / 2 + 1) * c,
                    head_in.data());
        }
        break;
      }
      case FusionKind::Concat: {
        auto lv = local->forward(enc.fused, ctx ? &ctx->local : nullptr, training);
        head_in = nn::Tensor<T>({lv.numel() + global_v.numel()});
        std::copy(lv.data(), lv.data() + lv.numel(), head_in.data());
        std::copy(global_v.data(), global_v.data() + global_v.numel(), head_in.data() + lv.numel());
        break;
      }
      case FusionKind::CrossAttention: {
        auto lv = local->forward(enc.fused, ctx ? &ctx->local : nullptr, training);
        head_in = cross->forward(lv, global_v, ctx ? &ctx->cross : nullptr);
        break;
      }
    }
    return classifier.forward(head_in, ctx ? &ctx->cls : nullptr);
  }

  // Backward of the head pass; returns d(track).
  nn::Tensor<T> backward_track(T dlogit, ModelCtx<T>& ctx) {
    auto dhead = classifier.backward_logit(dlogit, ctx.cls);
    nn::Tensor<T> dfused;
    nn::Tensor<T> dglobal;
    switch (cfg.fusion) {
      case FusionKind::None: {
        if (decoder) {
          dglobal = dhead;
        } else {
          const int64_t k = ctx.fused_track.dim(0), c = ctx.fused_track.dim(1);
          dfused = nn::Tensor<T>({k, c});
          std::copy(dhead.data(), dhead.data() + c, dfused.data() + (k / 2) * c);
        }
        break;
      }
      case FusionKind::Concat: {
        const int64_t cl = local->cout;
        nn::Tensor<T> dlv({cl});
        std::copy(dhead.data(), dhead.data() + cl, dlv.data());
        dglobal = nn::Tensor<T>({static_cast<int64_t>(decoder_out_width)});
        std::copy(dhead.data() + cl, dhead.data() + cl + decoder_out_width, dglobal.data());
        dfused = local->backward(dlv, ctx.local);
        break;
      }
      case FusionKind::CrossAttention: {
        nn::Tensor<T> dlv;
        cross->backward(dhead, ctx.cross, dlv, dglobal);
        dfused = local->backward(dlv, ctx.local);
        break;
      }
    }
    if (decoder) {
      dglobal.reshape({1, static_cast<int64_t>(decoder_out_width)});
      auto dmap = decoder->backward(dglobal, ctx.decoder);
      const int64_t k = ctx.fused_track.dim(0);
      dmap.reshape({k, k});
      auto dfused_map = cosine_map_bwd(dmap, ctx.cosmap);
      if (dfused.numel() == 0)
        dfused = std::move(dfused_map);
      else
        for (int64_t i = 0; i < dfused.numel(); ++i) dfused[i] += dfused_map[i];
    }
    nn::Tensor<T> dtrack;
    if (enc_conv) {
      dtrack = enc_conv->backward(dfused, ctx.enc_conv);
    } else {
      if (mixers.size() > 1) dfused = mixers[1].backward(dfused, ctx.mixers[1]);
      dtrack = mixers[0].backward(dfused, ctx.mixers[0]);
    }
    return dtrack;
  }
};

template <class T>
Model<T> build_model(const ModelConfig& cfg, uint32_t seed) {
  ensure_valid(cfg);
  Model<T> m;
  m.cfg = cfg;
  std::mt19937 rng(seed ^ 0x9e3779b9u);

  std::vector<int> level_widths;
  if (!cfg.offline_features()) {
    BackboneSpec spec;
    if (cfg.backbone_id == "residual2d_tiny")
      spec = BackboneSpec::tiny2d(cfg.backbone_widths);
    else if (cfg.backbone_id == "residual2d_standard")
      spec = BackboneSpec::standard2d();
    else
      spec = BackboneSpec::tiny3d(cfg.backbone_widths);
    if (cfg.backbone_mode == BackboneMode::Image2d) {
      m.bb2d.emplace();
      m.bb2d->build(spec, rng);
    } else {
      m.bb3d.emplace();
      m.bb3d->build(spec, rng);
    }
    const int L = cfg.truncation_level;
    auto width_of = [&](int lv) {
      return m.bb2d ? m.bb2d->level_width(lv) : m.bb3d->level_width(lv);
    };
    if (cfg.multi_level) {
      for (int lv = 1; lv <= L; ++lv) level_widths.push_back(width_of(lv));
      m.concat.emplace();
      m.concat->build(level_widths, width_of(L), rng);
      m.encoder_in_width = m.concat->out_width();
    } else {
      m.encoder_in_width = width_of(L);
    }
  } else {
    m.encoder_in_width = cfg.offline_width;
  }

  if (cfg.encoder == EncoderKind::Conv1d) {
    m.enc_conv.emplace();
    m.enc_conv->build(m.encoder_in_width, cfg.encoder_width, rng);
  } else {
    m.mixers.resize(static_cast<size_t>(cfg.encoder_stacks));
    m.mixers[0].build(m.encoder_in_width, cfg.encoder_width, rng);
    if (cfg.encoder_stacks > 1) m.mixers[1].build(cfg.encoder_width, cfg.encoder_width, rng);
  }

  if (cfg.decoder != DecoderKind::None) {
    m.decoder.emplace();
    const int bw = cfg.decoder_base_width;
    m.decoder->build(cfg.decoder == DecoderKind::FcnRes10 ? 1 : 2, {bw, bw * 2, bw * 4, bw * 8},
                     {1, 2, 2, 2}, rng);
    m.decoder_out_width = m.decoder->out_width();
  }

  switch (cfg.fusion) {
    case FusionKind::None:
      m.classifier_in_width = cfg.decoder != DecoderKind::None ? m.decoder_out_width : cfg.encoder_width;
      break;
    case FusionKind::Concat:
      m.local.emplace();
      m.local->build(cfg.encoder_width, cfg.encoder_width, rng);
      m.classifier_in_width = cfg.encoder_width + m.decoder_out_width;
      break;
    case FusionKind::CrossAttention:
      m.local.emplace();
      m.local->build(cfg.encoder_width, cfg.encoder_width, rng);
      m.cross.emplace();
      m.cross->build(cfg.encoder_width, m.decoder_out_width, rng);
      m.classifier_in_width = m.cross->out_width();
      break;
  }
  m.classifier.build(m.classifier_in_width, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Clip assembly helpers.

// Window of frame indices centered at t with edge replication.
inline std::vector<int> clip_window(int t, int k, int total) {
  std::vector<int> idx(static_cast<size_t>(k));
  const int half = (k - 1) / 2;
  for (int j = 0; j < k; ++j) idx[static_cast<size_t>(j)] = std::clamp(t - half + j, 0, total - 1);
  return idx;
}

// Frames of `video` at `indices` as an image batch [k, 3, H, W].
template <class T>
nn::Tensor<T> frames_to_batch(const FrameSequence& video, const std::vector<int>& indices) {
  const int k = static_cast<int>(indices.size());
  nn::Tensor<T> x({k, 3, video.h, video.w});
  const int64_t hw = static_cast<int64_t>(video.h) * video.w;
  for (int j = 0; j < k; ++j) {
    const float* f = video.frame(indices[static_cast<size_t>(j)]);
    T* dst = x.data() + static_cast<int64_t>(j) * 3 * hw;
    for (int64_t p = 0; p < hw; ++p)
      for (int ch = 0; ch < 3; ++ch) dst[ch * hw + p] = static_cast<T>(f[p * 3 + ch]);
  }
  return x;
}

// Same frames as a clip volume [3, k, H, W] for the 3D backbone.
template <class T>
nn::Tensor<T> frames_to_clip(const FrameSequence& video, const std::vector<int>& indices) {
  const int k = static_cast<int>(indices.size());
  nn::Tensor<T> x({3, k, video.h, video.w});
  const int64_t hw = static_cast<int64_t>(video.h) * video.w;
  for (int j = 0; j < k; ++j) {
    const float* f = video.frame(indices[static_cast<size_t>(j)]);
    for (int64_t p = 0; p < hw; ++p)
      for (int ch = 0; ch < 3; ++ch)
        x[(static_cast<int64_t>(ch) * k + j) * hw + p] = static_cast<T>(f[p * 3 + ch]);
  }
  return x;
}

// FrameStore variants used by the trainer (frames stay uint8 at rest).
template <class T>
nn::Tensor<T> store_to_batch(const FrameStore& s, const std::vector<int>& indices) {
  const int k = static_cast<int>(indices.size());
  nn::Tensor<T> x({k, 3, s.h, s.w});
  const int64_t chw = static_cast<int64_t>(3) * s.h * s.w;
  std::vector<float> buf(static_cast<size_t>(chw));
  for (int j = 0; j < k; ++j) {
    s.frame_chw(indices[static_cast<size_t>(j)], buf.data());
    T* dst = x.data() + static_cast<int64_t>(j) * chw;
    for (int64_t p = 0; p < chw; ++p) dst[p] = static_cast<T>(buf[static_cast<size_t>(p)]);
  }
  return x;
}

template <class T>
nn::Tensor<T> store_to_clip(const FrameStore& s, const std::vector<int>& indices) {
  const int k = static_cast<int>(indices.size());
  nn::Tensor<T> x({3, k, s.h, s.w});
  const int64_t hw = static_cast<int64_t>(s.h) * s.w;
  std::vector<float> buf(static_cast<size_t>(3 * hw));
  for (int j = 0; j < k; ++j) {
    s.frame_chw(indices[static_cast<size_t>(j)], buf.data());
    for (int ch = 0; ch < 3; ++ch)
      for (int64_t p = 0; p < hw; ++p)
        x[(static_cast<int64_t>(ch) * k + j) * hw + p] =
            static_cast<T>(buf[static_cast<size_t>(ch * hw + p)]);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Whole-video inference: every frame gets the median-frame probability of
// its k-frame window (edge replication at the ends).

template <class T>
ScoreTrack forward_video(Model<T>& model, const FrameSequence& video) {
  video.validate();
  const int k = model.clip_len();
  const int total = video.t;
  ScoreTrack out;
  out.video_id = video.video_id;
  out.scores.resize(static_cast<size_t>(total));
  out.timestamps_s.resize(static_cast<size_t>(total));

  if (model.image_mode() && !model.cfg.offline_features()) {
    // The 2D backbone is a per-frame map, so per-window backbone outputs
    // equal slices of the whole-video feature track; compute it once.
    auto x = frames_to_batch<T>(video, [&] {
      std::vector<int> all(static_cast<size_t>(total));
      for (int i = 0; i < total; ++i) all[static_cast<size_t>(i)] = i;
      return all;
    }());
    auto pooled = model.bb2d->forward(x, model.cfg.truncation_level, model.cfg.multi_level,
                                      nullptr, false);
    for (auto& p : pooled) ensure_finite(p, "backbone features");
    nn::Tensor<T> track;
    if (model.concat)
      track = model.concat->forward(pooled, nullptr);
    else
      track = pooled[0];
    const int64_t c = track.dim(1);
    for (int t = 0; t < total; ++t) {
      auto idx = clip_window(t, k, total);
      nn::Tensor<T> win({k, c});
      for (int j = 0; j < k; ++j)
        std::copy(track.data() + static_cast<int64_t>(idx[static_cast<size_t>(j)]) * c,
                  track.data() + static_cast<int64_t>(idx[static_cast<size_t>(j)] + 1) * c,
                  win.data() + static_cast<int64_t>(j) * c);
      out.scores[static_cast<size_t>(t)] = static_cast<double>(model.forward_track(win, nullptr, false));
      out.timestamps_s[static_cast<size_t>(t)] = video.timestamp_s(t);
    }
    return out;
  }

  // 3D mode: joint spatiotemporal receptive fields, so each window runs the
  // full backbone.
  for (int t = 0; t < total; ++t) {
    auto idx = clip_window(t, k, total);
    auto clip = frames_to_clip<T>(video, idx);
    auto tracks = model.bb3d->forward(clip, model.cfg.truncation_level, model.cfg.multi_level,
                                      nullptr, false);
    nn::Tensor<T> track;
    if (model.concat)
      track = model.concat->forward(tracks, nullptr);
    else
      track = tracks[0];
    out.scores[static_cast<size_t>(t)] = static_cast<double>(model.forward_track(track, nullptr, false));
    out.timestamps_s[static_cast<size_t>(t)] = video.timestamp_s(t);
  }
  return out;
}

// Two-stage mode: scores from a precomputed feature track.
template <class T>
ScoreTrack forward_video_features(Model<T>& model, const FeatureTrack& feats,
                                  const std::string& video_id, double duration_s) {
  feats.validate();
  if (feats.c != model.encoder_in_width)
    throw ValidationError("offline features: width " + std::to_string(feats.c) +
                          " does not match model encoder input " +
                          std::to_string(model.encoder_in_width));
  const int k = model.clip_len();
  ScoreTrack out;
  out.video_id = video_id;
  for (int t = 0; t < feats.t; ++t) {
    auto idx = clip_window(t, k, feats.t);
    nn::Tensor<T> win({k, feats.c});
    for (int j = 0; j < k; ++j)
      for (int ch = 0; ch < feats.c; ++ch)
        win[static_cast<int64_t>(j) * feats.c + ch] =
            static_cast<T>(feats.row(idx[static_cast<size_t>(j)])[ch]);
    out.scores.push_back(static_cast<double>(model.forward_track(win, nullptr, false)));
    out.timestamps_s.push_back(frame_index_to_seconds(t, feats.t, duration_s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training.

// One trainable video: pixels (or a precomputed track) plus soft targets.
struct TrainVideo {
  std::shared_ptr<const FrameStore> video;        // null in feature mode
  std::shared_ptr<const FeatureTrack> features;   // null in pixel mode
  std::vector<double> soft_targets;               // length T
  std::vector<int> positive_frames;               // centers counted as boundary-adjacent
  int length() const { return video ? video->t : features->t; }
};

struct TrainResult {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_lr;
};

using EpochCallback = std::function<void(int epoch, double loss, double lr)>;

template <class T>
class Trainer {
 public:
  Trainer(Model<T>& model, TrainSchedule schedule) : model_(model), schedule_(std::move(schedule)) {
    schedule_.validate();
    model_.collect(params_);
    adam_.attach(params_);
  }

  TrainResult run(const std::vector<TrainVideo>& data, const EpochCallback& cb = nullptr) {
    if (data.empty()) throw ValidationError("train: empty dataset");
    TrainResult res;
    for (int epoch = 1; epoch <= schedule_.epochs; ++epoch) {
      const double lr = schedule_.lr_at(epoch);
      std::mt19937 rng(static_cast<uint32_t>(schedule_.seed * 1000003u + static_cast<uint32_t>(epoch)));
      double loss_sum = 0;
      int batches = 0;
      int remaining = schedule_.clips_per_epoch;
      while (remaining > 0) {
        const int bsz = std::min(schedule_.batch_size, remaining);
        remaining -= bsz;
        auto [clips, targets] = sample_batch(data, bsz, rng);
        const double loss = train_step(clips, targets);
        if (!std::isfinite(loss))
          throw PipelineError("train: non-finite loss at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batches));
        adam_.step(params_, static_cast<T>(lr));
        loss_sum += loss;
        ++batches;
      }
      const double mean_loss = loss_sum / std::max(1, batches);
      res.epoch_loss.push_back(mean_loss);
      res.epoch_lr.push_back(lr);
      if (cb) cb(epoch, mean_loss, lr);
    }
    return res;
  }

  // Fixed clip list (window center + target per clip), iterated in order
  // every epoch. This is the ClipBatch-style entry used by overfit checks.
  struct FixedClip {
    int video_index = 0;
    int center = 0;
    double target = 0;
  };

  TrainResult run_fixed(const std::vector<TrainVideo>& data, const std::vector<FixedClip>& fixed,
                        const EpochCallback& cb = nullptr) {
    if (data.empty() || fixed.empty()) throw ValidationError("train: empty dataset");
    const int k = model_.clip_len();
    TrainResult res;
    for (int epoch = 1; epoch <= schedule_.epochs; ++epoch) {
      const double lr = schedule_.lr_at(epoch);
      double loss_sum = 0;
      int batches = 0;
      size_t at = 0;
      while (at < fixed.size()) {
        std::vector<SampledClip> clips;
        std::vector<double> targets;
        while (at < fixed.size() && static_cast<int>(clips.size()) < schedule_.batch_size) {
          const auto& fc = fixed[at++];
          const TrainVideo* tv = &data[static_cast<size_t>(fc.video_index)];
          clips.push_back({tv, clip_window(fc.center, k, tv->length())});
          targets.push_back(fc.target);
        }
        const double loss = train_step(clips, targets);
        if (!std::isfinite(loss))
          throw PipelineError("train: non-finite loss at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batches));
        adam_.step(params_, static_cast<T>(lr));
        loss_sum += loss;
        ++batches;
      }
      const double mean_loss = loss_sum / std::max(1, batches);
      res.epoch_loss.push_back(mean_loss);
      res.epoch_lr.push_back(lr);
      if (cb) cb(epoch, mean_loss, lr);
    }
    return res;
  }

 private:
  struct SampledClip {
    const TrainVideo* src;
    std::vector<int> indices;
  };

  std::pair<std::vector<SampledClip>, std::vector<double>> sample_batch(
      const std::vector<TrainVideo>& data, int bsz, std::mt19937& rng) {
    std::vector<SampledClip> clips;
    std::vector<double> targets;
    std::uniform_int_distribution<size_t> pick_video(0, data.size() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int k = model_.clip_len();
    for (int b = 0; b < bsz; ++b) {
      const TrainVideo* tv = &data[pick_video(rng)];
      int center;
      if (unit(rng) < schedule_.pos_fraction && !tv->positive_frames.empty()) {
        std::uniform_int_distribution<size_t> pick(0, tv->positive_frames.size() - 1);
        center = tv->positive_frames[pick(rng)];
      } else {
        std::uniform_int_distribution<int> pick(0, tv->length() - 1);
        center = pick(rng);
      }
      clips.push_back({tv, clip_window(center, k, tv->length())});
      targets.push_back(tv->soft_targets[static_cast<size_t>(center)]);
    }
    return {std::move(clips), std::move(targets)};
  }

  double train_step(const std::vector<SampledClip>& clips, const std::vector<double>& targets) {
    nn::zero_grads(params_);
    const int B = static_cast<int>(clips.size());
    const int k = model_.clip_len();
    double loss = 0;
    std::vector<double> dlogit(static_cast<size_t>(B));

    if (model_.cfg.offline_features()) {
      std::vector<ModelCtx<T>> ctxs(static_cast<size_t>(B));
      for (int b = 0; b < B; ++b) {
        const auto& f = *clips[static_cast<size_t>(b)].src->features;
        nn::Tensor<T> win({k, f.c});
        for (int j = 0; j < k; ++j) {
          const int fi = clips[static_cast<size_t>(b)].indices[static_cast<size_t>(j)];
          for (int ch = 0; ch < f.c; ++ch)
            win[static_cast<int64_t>(j) * f.c + ch] = static_cast<T>(f.row(fi)[ch]);
        }
        const double p = model_.forward_track(win, &ctxs[static_cast<size_t>(b)], true);
        loss += bce(p, targets[static_cast<size_t>(b)]);
        dlogit[static_cast<size_t>(b)] = (p - targets[static_cast<size_t>(b)]) / B;
      }
      for (int b = 0; b < B; ++b)
        model_.backward_track(static_cast<T>(dlogit[static_cast<size_t>(b)]), ctxs[static_cast<size_t>(b)]);
      return loss / B;
    }

    if (model_.image_mode()) {
      // One batched backbone pass over all clip frames.
      const auto& v0 = *clips[0].src->video;
      nn::Tensor<T> x({static_cast<int64_t>(B) * k, 3, v0.h, v0.w});
      const int64_t frame_elems = static_cast<int64_t>(3) * v0.h * v0.w;
      for (int b = 0; b < B; ++b) {
        auto xb = store_to_batch<T>(*clips[static_cast<size_t>(b)].src->video,
                                    clips[static_cast<size_t>(b)].indices);
        std::copy(xb.data(), xb.data() + xb.numel(),
                  x.data() + static_cast<int64_t>(b) * k * frame_elems);
      }
      Backbone2dCtx<T> bctx;
      auto pooled = model_.bb2d->forward(x, model_.cfg.truncation_level, model_.cfg.multi_level,
                                         &bctx, true);
      const int levels = static_cast<int>(pooled.size());

      std::vector<ModelCtx<T>> ctxs(static_cast<size_t>(B));
      std::vector<LevelConcatCtx<T>> cctxs(static_cast<size_t>(B));
      std::vector<nn::Tensor<T>> dpooled;
      for (const auto& p : pooled) dpooled.emplace_back(p.shape);

      for (int b = 0; b < B; ++b) {
        std::vector<nn::Tensor<T>> per_level;
        for (int l = 0; l < levels; ++l) {
          const int64_t c = pooled[static_cast<size_t>(l)].dim(1);
          nn::Tensor<T> tr({k, c});
          std::copy(pooled[static_cast<size_t>(l)].data() + static_cast<int64_t>(b) * k * c,
                    pooled[static_cast<size_t>(l)].data() + static_cast<int64_t>(b + 1) * k * c,
                    tr.data());
          per_level.push_back(std::move(tr));
        }
        nn::Tensor<T> track = model_.concat
                                  ? model_.concat->forward(per_level, &cctxs[static_cast<size_t>(b)])
                                  : std::move(per_level[0]);
        const double p = model_.forward_track(track, &ctxs[static_cast<size_t>(b)], true);
        loss += bce(p, targets[static_cast<size_t>(b)]);
        dlogit[static_cast<size_t>(b)] = (p - targets[static_cast<size_t>(b)]) / B;
      }
      for (int b = 0; b < B; ++b) {
        auto dtrack = model_.backward_track(static_cast<T>(dlogit[static_cast<size_t>(b)]),
                                            ctxs[static_cast<size_t>(b)]);
        std::vector<nn::Tensor<T>> dlevels;
        if (model_.concat) {
          dlevels = model_.concat->backward(dtrack, cctxs[static_cast<size_t>(b)]);
        } else {
          dlevels.push_back(std::move(dtrack));
        }
        for (int l = 0; l < levels; ++l) {
          const int64_t c = dpooled[static_cast<size_t>(l)].dim(1);
          T* dst = dpooled[static_cast<size_t>(l)].data() + static_cast<int64_t>(b) * k * c;
          const T* src = dlevels[static_cast<size_t>(l)].data();
          for (int64_t i = 0; i < static_cast<int64_t>(k) * c; ++i) dst[i] += src[i];
        }
      }
      model_.bb2d->backward(dpooled, model_.cfg.truncation_level, model_.cfg.multi_level, bctx);
      return loss / B;
    }

    // video3d: per-clip passes (BatchNorm statistics are per clip).
    for (int b = 0; b < B; ++b) {
      auto clip = store_to_clip<T>(*clips[static_cast<size_t>(b)].src->video,
                                   clips[static_cast<size_t>(b)].indices);
      Backbone3dCtx<T> bctx;
      auto tracks = model_.bb3d->forward(clip, model_.cfg.truncation_level,
                                         model_.cfg.multi_level, &bctx, true);
      LevelConcatCtx<T> cctx;
      nn::Tensor<T> track =
          model_.concat ? model_.concat->forward(tracks, &cctx) : std::move(tracks[0]);
      ModelCtx<T> ctx;
      const double p = model_.forward_track(track, &ctx, true);
      loss += bce(p, targets[static_cast<size_t>(b)]);
      const double dl = (p - targets[static_cast<size_t>(b)]) / B;
      auto dtrack = model_.backward_track(static_cast<T>(dl), ctx);
      std::vector<nn::Tensor<T>> dtracks;
      if (model_.concat)
        dtracks = model_.concat->backward(dtrack, cctx);
      else
        dtracks.push_back(std::move(dtrack));
      model_.bb3d->backward(dtracks, model_.cfg.truncation_level, model_.cfg.multi_level, bctx);
    }
    return loss / B;
  }

  static double bce(double p, double y) {
    const double eps = 1e-12;
    return -(y * std::log(std::max(p, eps)) + (1.0 - y) * std::log(std::max(1.0 - p, eps)));
  }

  Model<T>& model_;
  TrainSchedule schedule_;
  nn::ParamList<T> params_;
  nn::Adam<T> adam_;
};

// Builds soft targets from an annotation under the union-of-annotators rule
// (elementwise max keeps peaks at 1).
std::vector<double> soft_targets_for(const BoundaryAnnotation& ann, int t, double sigma,
                                     std::vector<int>* positive_frames);

// BCE of a single clip against `target`, optionally accumulating gradients.
// `x` is [k,3,H,W] (image mode), [3,k,H,W] (video mode) or [k,C] (offline).
template <class T>
double single_clip_loss(Model<T>& model, const nn::Tensor<T>& x, double target, bool train_mode,
                        bool do_backward) {
  auto bce = [](double p, double y) {
    const double eps = 1e-12;
    return -(y * std::log(std::max(p, eps)) + (1.0 - y) * std::log(std::max(1.0 - p, eps)));
  };
  ModelCtx<T>* ctx_ptr = nullptr;
  ModelCtx<T> ctx;
  if (do_backward) ctx_ptr = &ctx;

  if (model.cfg.offline_features()) {
    nn::Tensor<T> track = x;
    const double p = model.forward_track(track, ctx_ptr, train_mode);
    if (do_backward) model.backward_track(static_cast<T>(p - target), ctx);
    return bce(p, target);
  }
  if (model.image_mode()) {
    Backbone2dCtx<T> bctx;
    auto pooled = model.bb2d->forward(x, model.cfg.truncation_level, model.cfg.multi_level,
                                      do_backward ? &bctx : nullptr, train_mode);
    LevelConcatCtx<T> cctx;
    nn::Tensor<T> track = model.concat
                              ? model.concat->forward(pooled, do_backward ? &cctx : nullptr)
                              : pooled[0];
    const double p = model.forward_track(track, ctx_ptr, train_mode);
    if (do_backward) {
      auto dtrack = model.backward_track(static_cast<T>(p - target), ctx);
      std::vector<nn::Tensor<T>> dlevels;
      if (model.concat)
        dlevels = model.concat->backward(dtrack, cctx);
      else
        dlevels.push_back(std::move(dtrack));
      model.bb2d->backward(dlevels, model.cfg.truncation_level, model.cfg.multi_level, bctx);
    }
    return bce(p, target);
  }
  Backbone3dCtx<T> bctx;
  auto tracks = model.bb3d->forward(x, model.cfg.truncation_level, model.cfg.multi_level,
                                    do_backward ? &bctx : nullptr, train_mode);
  LevelConcatCtx<T> cctx;
  nn::Tensor<T> track = model.concat ? model.concat->forward(tracks, do_backward ? &cctx : nullptr)
                                     : tracks[0];
  const double p = model.forward_track(track, ctx_ptr, train_mode);
  if (do_backward) {
    auto dtrack = model.backward_track(static_cast<T>(p - target), ctx);
    std::vector<nn::Tensor<T>> dlevels;
    if (model.concat)
      dlevels = model.concat->backward(dtrack, cctx);
    else
      dlevels.push_back(std::move(dtrack));
    model.bb3d->backward(dlevels, model.cfg.truncation_level, model.cfg.multi_level, bctx);
  }
  return bce(p, target);
}

// ---------------------------------------------------------------------------
// Checkpoints: weights archive + embedded config, schedule and seed.

template <class T>
void save_checkpoint(const std::string& path, Model<T>& model, const TrainSchedule& schedule,
                     uint32_t seed);

template <class T>
Model<T> load_checkpoint(const std::string& path, TrainSchedule* schedule = nullptr,
                         uint32_t* seed = nullptr);

}  // namespace gebd
