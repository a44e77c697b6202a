#pragma once

// Deterministic synthetic videos with planted boundaries of two kinds:
//   shot  - abrupt background palette/texture switch (visible in raw pixels),
//   event - the moving sprite changes velocity (>= 90 degrees in direction or
//           >= 2x in speed) with continuous appearance, so only temporal
//           modeling can find it.
// Ground truth marks the first frame of the new segment.

#include <memory>

#include "gebd/core_types.hpp"
#include "gebd/evaluation.hpp"

namespace gebd {

struct SyntheticSpec {
  int t = 100;
  int height = 64, width = 64;
  int n_shot_boundaries = 2;
  int n_event_boundaries = 2;
  int min_gap_frames = 12;   // spacing between boundaries (spec floor is 5)
  int edge_margin = 8;       // distance of boundaries from either end
  double fps = 10.0;
  double sprite_radius = 8.0;
  double speed_min = 1.2, speed_max = 2.4;  // px/frame
  double transition_kick = 1.6;             // one-step displacement factor at event boundaries
  double noise_level = 0.004;               // uniform pixel noise amplitude
  uint32_t seed = 0;

  double duration_s() const { return t / fps; }
  void validate() const {
    if (t < 8) throw ValidationError("synthetic spec: t too small");
    if (height < 16 || width < 16) throw ValidationError("synthetic spec: resolution too small");
    if (n_shot_boundaries < 0 || n_event_boundaries < 0)
      throw ValidationError("synthetic spec: boundary counts must be >= 0");
    if (min_gap_frames < 5) throw ValidationError("synthetic spec: min_gap_frames >= 5 required");
    if (edge_margin < 3) throw ValidationError("synthetic spec: edge_margin >= 3 required");
    const int n = n_shot_boundaries + n_event_boundaries;
    if (n > 0 && edge_margin * 2 + (n - 1) * min_gap_frames >= t)
      throw ValidationError("synthetic spec: too many boundaries for t frames");
  }
};

struct GeneratedVideo {
  FrameSequence video;
  BoundaryAnnotation annotation;
  std::string split;  // "train" | "val"
};

GeneratedVideo generate_video(const SyntheticSpec& spec, const std::string& video_id);

// n videos from per-index seeds derived from `seed`; split 80/20 train/val
// by hash rank of video_id.
std::vector<GeneratedVideo> generate_dataset(int n_videos, const SyntheticSpec& spec_template,
                                             uint32_t seed);

uint64_t fnv1a_hash(const std::string& s);

// Hand-written detector thresholding adjacent-frame pixel differences:
// strict local maxima of the mean absolute difference that exceed
// factor * median. Finds shot cuts; blind to event boundaries by design.
Prediction pixel_difference_baseline(const FrameSequence& video, double factor = 4.0,
                                     int min_separation = 2);

// Mean absolute pixel difference between consecutive frames (diff[i] spans
// frames i-1 and i; diff[0] = 0).
std::vector<double> adjacent_frame_differences(const FrameSequence& video);

}  // namespace gebd
