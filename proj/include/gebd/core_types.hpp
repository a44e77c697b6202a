#pragma once

// Shared domain types and the annotation/config schemas. All types are
// immutable value objects after construction and safe to share across
// threads.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gebd/tensor.hpp"

namespace gebd {

// A video as T decoded frames with uniform timing. Frame i represents the
// center-of-interval time (i + 0.5) * duration_s / T.
struct FrameSequence {
  std::string video_id;
  int t = 0, h = 0, w = 0;           // frames are [T, H, W, 3], values in [0,1]
  std::vector<float> frames;
  double fps = 0.0;
  double duration_s = 0.0;

  int64_t frame_stride() const { return static_cast<int64_t>(h) * w * 3; }
  const float* frame(int i) const { return frames.data() + static_cast<int64_t>(i) * frame_stride(); }
  float* frame(int i) { return frames.data() + static_cast<int64_t>(i) * frame_stride(); }

  double timestamp_s(int i) const { return (i + 0.5) * duration_s / t; }
  void validate() const;
};

// Index <-> seconds conversions under the center-of-interval convention.
double frame_index_to_seconds(int index, int t, double duration_s);
int seconds_to_frame_index(double s, int t, double duration_s);

// Compact uint8 frame storage; what frame archives hold on disk and what
// the trainer keeps resident.
struct FrameStore {
  std::string video_id;
  int t = 0, h = 0, w = 0;
  double fps = 0, duration_s = 0;
  std::vector<uint8_t> data;  // [T,H,W,3]

  static FrameStore from(const FrameSequence& v);
  FrameSequence decode() const;
  // Frame at `index` written as channel-first planes into dst[3*h*w].
  void frame_chw(int index, float* dst) const;
};

enum class FeatureLevel { L1 = 1, L2 = 2, L3 = 3, L4 = 4, LStar = 5 };
std::string to_string(FeatureLevel lv);

// Per-timestep feature vectors, laid out [T, C].
struct FeatureTrack {
  int t = 0, c = 0;
  std::vector<double> values;
  FeatureLevel level_tag = FeatureLevel::L1;

  double* row(int i) { return values.data() + static_cast<int64_t>(i) * c; }
  const double* row(int i) const { return values.data() + static_cast<int64_t>(i) * c; }
  void validate() const;
};

// Per-timestep boundary probability for one video. Timestamps are explicit
// so that merged (non-uniform) tracks keep a valid time map.
struct ScoreTrack {
  std::string video_id;
  std::vector<double> scores;        // each in [0,1]
  std::vector<double> timestamps_s;  // same length, strictly increasing
  void validate() const;
};

enum class BoundaryType { Shot, Event, Unknown };
std::string to_string(BoundaryType bt);
BoundaryType boundary_type_from_string(const std::string& s);

struct AnnotatorBoundaries {
  std::vector<double> boundaries_s;          // sorted strictly ascending
  std::vector<BoundaryType> types;           // empty or same length as boundaries_s
};

// Ground truth for one video: one boundary list per annotator plus the
// Rel.Dis. denominator.
struct BoundaryAnnotation {
  std::string video_id;
  double fps = 0.0;
  double duration_s = 0.0;
  double denominator_s = 0.0;
  std::vector<AnnotatorBoundaries> annotators;
  void validate() const;
};

// Hard (one-hot) or Gaussian-smoothed per-frame labels.
struct LabelTrack {
  std::vector<double> values;  // length T, in [0,1]
  bool hard = true;
  void validate() const;
};

enum class BackboneMode { Image2d, Video3d };
enum class EncoderKind { Conv1d, DiffMixer };
enum class FusionKind { None, Concat, CrossAttention };
enum class DecoderKind { None, FcnRes10, FcnRes18 };

std::string to_string(BackboneMode m);
std::string to_string(EncoderKind e);
std::string to_string(FusionKind f);
std::string to_string(DecoderKind d);

// The full architecture recipe. Defaults describe the desk-scale
// EfficientGEBD (L2*, DiffMixer, cross-attention, FCN-Res10, k=17).
struct ModelConfig {
  std::string backbone_id = "residual2d_tiny";
  int truncation_level = 2;          // L1..L4
  bool multi_level = true;           // the L* variant
  BackboneMode backbone_mode = BackboneMode::Image2d;
  EncoderKind encoder = EncoderKind::DiffMixer;
  int encoder_stacks = 1;            // 2 = the two-DiffMixer variant
  FusionKind fusion = FusionKind::CrossAttention;
  DecoderKind decoder = DecoderKind::FcnRes10;
  int clip_length = 17;              // k, odd
  std::vector<int> backbone_widths = {16, 32, 64, 128};
  int encoder_width = 64;
  int decoder_base_width = 16;       // FCN widths are base * (1,2,4,8)
  int offline_width = 256;           // feature width in two-stage (offline) mode
  double sigma = 1.0;                // Gaussian smoothing width

  bool offline_features() const { return backbone_id == "offline"; }
};

// Returns the full list of violated invariants; empty means valid.
std::vector<std::string> validate_config(const ModelConfig& cfg);
// Throws ValidationError listing every violation.
void ensure_valid(const ModelConfig& cfg);

// Flat key/value serialization mirroring the field names.
std::string config_to_kv(const ModelConfig& cfg);
ModelConfig config_from_kv(const std::string& text);

// Annotation JSON schema:
// {"video_id": str, "fps": float, "duration_s": float, "denominator_s": float,
//  "annotators": [{"boundaries_s": [...], "types": [...]?}, ...]}
std::string annotations_to_json(const std::vector<BoundaryAnnotation>& anns);
std::vector<BoundaryAnnotation> annotations_from_json(const std::string& text,
                                                      std::vector<std::string>* warnings = nullptr);

}  // namespace gebd
