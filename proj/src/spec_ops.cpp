#include "gebd/backbone.hpp"
#include "gebd/pipeline.hpp"
#include "gebd/fusion_head.hpp"
#include "gebd/simmap_decoder.hpp"
#include "gebd/temporal_encoder.hpp"

// Domain-level operation wrappers: each builds the relevant module with
// seeded weights and runs it in inference mode on double precision.

namespace gebd {

namespace {

nn::Tensor<double> track_to_tensor(const FeatureTrack& f) {
  f.validate();
  nn::Tensor<double> x({f.t, f.c});
  std::copy(f.values.begin(), f.values.end(), x.v.begin());
  return x;
}

FeatureTrack tensor_to_track(const nn::Tensor<double>& x, FeatureLevel tag) {
  FeatureTrack f;
  f.t = static_cast<int>(x.dim(0));
  f.c = static_cast<int>(x.dim(1));
  f.values.assign(x.v.begin(), x.v.end());
  f.level_tag = tag;
  return f;
}

}  // namespace

std::vector<FeatureTrack> extract_features(const FrameSequence& video, const BackboneSpec& spec,
                                           int level, bool multi_level, uint32_t seed) {
  video.validate();
  spec.validate();
  std::mt19937 rng(seed ^ 0x51fe1badu);
  std::vector<nn::Tensor<double>> outs;
  if (spec.family == "residual3d_tiny") {
    Backbone3d<double> bb;
    bb.build(spec, rng);
    std::vector<int> all(static_cast<size_t>(video.t));
    for (int i = 0; i < video.t; ++i) all[static_cast<size_t>(i)] = i;
    auto clip = frames_to_clip<double>(video, all);
    outs = bb.forward(clip, level, multi_level, nullptr, false);
  } else {
    Backbone2d<double> bb;
    bb.build(spec, rng);
    std::vector<int> all(static_cast<size_t>(video.t));
    for (int i = 0; i < video.t; ++i) all[static_cast<size_t>(i)] = i;
    auto x = frames_to_batch<double>(video, all);
    outs = bb.forward(x, level, multi_level, nullptr, false);
  }
  std::vector<FeatureTrack> tracks;
  for (size_t i = 0; i < outs.size(); ++i) {
    nn::ensure_finite(outs[i], "extract_features");
    const int lv = multi_level ? static_cast<int>(i) + 1 : level;
    tracks.push_back(tensor_to_track(outs[i], static_cast<FeatureLevel>(lv)));
  }
  return tracks;
}

FeatureTrack concat_levels(const std::vector<FeatureTrack>& tracks, int common_width,
                           uint32_t seed) {
  if (tracks.empty()) throw ValidationError("concat_levels: zero tracks");
  std::vector<int> widths;
  std::vector<nn::Tensor<double>> xs;
  for (const auto& tr : tracks) {
    tr.validate();
    widths.push_back(tr.c);
    xs.push_back(track_to_tensor(tr));
  }
  std::mt19937 rng(seed ^ 0xc47c47u);
  LevelConcat<double> lc;
  lc.build(widths, common_width, rng);
  auto out = lc.forward(xs, nullptr);
  return tensor_to_track(out, FeatureLevel::LStar);
}

FeatureTrack temporal_difference(const FeatureTrack& x) {
  auto out = temporal_difference_fwd(track_to_tensor(x));
  return tensor_to_track(out, x.level_tag);
}

EncoderOutput conv1d_encode(const FeatureTrack& x, int out_width, uint32_t seed) {
  std::mt19937 rng(seed ^ 0xe2c0de1u);
  Conv1dEncoder<double> enc;
  enc.build(x.c, out_width, rng);
  auto out = enc.forward(track_to_tensor(x), nullptr, false);
  EncoderOutput res;
  res.fused = tensor_to_track(out.fused, x.level_tag);
  return res;
}

EncoderOutput diff_mixer_encode(const FeatureTrack& x, int out_width, uint32_t seed) {
  std::mt19937 rng(seed ^ 0xe2c0de2u);
  DiffMixer<double> enc;
  enc.build(x.c, out_width, rng);
  auto out = enc.forward(track_to_tensor(x), nullptr, false);
  EncoderOutput res;
  res.identity_branch = tensor_to_track(out.identity, x.level_tag);
  res.difference_branch = tensor_to_track(out.difference, x.level_tag);
  res.fused = tensor_to_track(out.fused, x.level_tag);
  return res;
}

SimilarityMap cosine_similarity_map(const FeatureTrack& x) {
  auto m = cosine_map_fwd(track_to_tensor(x), static_cast<CosineMapCtx<double>*>(nullptr));
  SimilarityMap out;
  out.k = static_cast<int>(m.dim(0));
  out.values.assign(m.v.begin(), m.v.end());
  return out;
}

std::vector<double> fcn_decode(const SimilarityMap& map, DecoderKind variant, int base_width,
                               uint32_t seed) {
  if (variant == DecoderKind::None) throw ValidationError("fcn_decode: decoder=none has no decode");
  std::mt19937 rng(seed ^ 0xdec0deu);
  FcnDecoder<double> dec;
  dec.build(variant == DecoderKind::FcnRes10 ? 1 : 2,
            {base_width, base_width * 2, base_width * 4, base_width * 8}, {1, 2, 2, 2}, rng);
  nn::Tensor<double> m({1, 1, map.k, map.k});
  std::copy(map.values.begin(), map.values.end(), m.v.begin());
  auto v = dec.forward(m, nullptr, false);
  return std::vector<double>(v.v.begin(), v.v.end());
}

std::vector<double> local_summary(const FeatureTrack& fused_track, uint32_t seed) {
  std::mt19937 rng(seed ^ 0x10ca1u);
  LocalSummary<double> ls;
  ls.build(fused_track.c, fused_track.c, rng);
  auto v = ls.forward(track_to_tensor(fused_track), nullptr, false);
  return std::vector<double>(v.v.begin(), v.v.end());
}

std::vector<double> concat_fuse(const std::vector<double>& local,
                                const std::vector<double>& global_v) {
  for (double v : local)
    if (!std::isfinite(v)) throw ValidationError("concat_fuse: non-finite local");
  for (double v : global_v)
    if (!std::isfinite(v)) throw ValidationError("concat_fuse: non-finite global");
  std::vector<double> out;  // order is (local, global), fixed
  out.reserve(local.size() + global_v.size());
  out.insert(out.end(), local.begin(), local.end());
  out.insert(out.end(), global_v.begin(), global_v.end());
  return out;
}

std::vector<double> cross_attention_fuse(const std::vector<double>& local,
                                         const std::vector<double>& global_v, uint32_t seed) {
  std::mt19937 rng(seed ^ 0xca77e5eu);
  CrossAttentionFuse<double> fuse;
  fuse.build(static_cast<int>(local.size()), static_cast<int>(global_v.size()), rng);
  nn::Tensor<double> l({static_cast<int64_t>(local.size())});
  std::copy(local.begin(), local.end(), l.v.begin());
  nn::Tensor<double> g({static_cast<int64_t>(global_v.size())});
  std::copy(global_v.begin(), global_v.end(), g.v.begin());
  auto out = fuse.forward(l, g, nullptr);
  return std::vector<double>(out.v.begin(), out.v.end());
}

std::vector<double> cross_attention_fuse_with_gates(const std::vector<double>& local,
                                                    const std::vector<double>& global_v,
                                                    const std::vector<double>& gate_on_global,
                                                    const std::vector<double>& gate_on_local) {
  if (local.size() != global_v.size() || gate_on_global.size() != local.size() ||
      gate_on_local.size() != local.size())
    throw ValidationError("cross_attention_fuse: width mismatch");
  std::vector<double> out(local.size());
  for (size_t i = 0; i < local.size(); ++i)
    out[i] = gate_on_local[i] * local[i] + gate_on_global[i] * global_v[i];
  return out;
}

double classify(const std::vector<double>& fused, uint32_t seed) {
  for (double v : fused)
    if (!std::isfinite(v)) throw ValidationError("classify: non-finite input");
  std::mt19937 rng(seed ^ 0xc1a55u);
  Classifier<double> cls;
  cls.build(static_cast<int>(fused.size()), rng);
  nn::Tensor<double> v({static_cast<int64_t>(fused.size())});
  std::copy(fused.begin(), fused.end(), v.v.begin());
  return cls.forward(v, nullptr);
}

}  // namespace gebd
