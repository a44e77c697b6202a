#pragma once

// Boundary extraction from score tracks and the Rel.Dis. F1 protocol
// (thresholds 0.05 step 0.05 up to 0.5, max over annotators per video).

#include "gebd/core_types.hpp"

namespace gebd {

inline std::vector<double> default_rel_dis_thresholds() {
  std::vector<double> t;
  for (int i = 1; i <= 10; ++i) t.push_back(0.05 * i);
  return t;
}

// Strict local maxima with score >= theta, thinned so picks are at least
// min_separation frames apart (higher score wins, leftmost on ties).
// Plateaus yield their leftmost index. Indices map to seconds through the
// track's timestamps.
std::vector<double> extract_boundaries(const ScoreTrack& scores, double theta,
                                       int min_separation);

double relative_distance(double pred_s, double gt_s, double denominator_s);

// Maximum-cardinality one-to-one matching where a pair is admissible iff
// relative_distance <= threshold. Greedy ascending-distance seeding
// followed by augmenting-path repair, so the result is optimal.
int match_boundaries(const std::vector<double>& preds_s, const std::vector<double>& gts_s,
                     double threshold, double denominator_s);

struct PrecisionRecallF1 {
  double precision = 0, recall = 0, f1 = 0;
  int tp = 0, n_pred = 0, n_gt = 0;
};

PrecisionRecallF1 score_against(const std::vector<double>& preds_s,
                                const std::vector<double>& gts_s, double threshold,
                                double denominator_s);

struct VideoEval {
  std::string video_id;
  std::vector<PrecisionRecallF1> per_threshold;  // selected annotator's counts
  std::vector<int> selected_annotator;
};

struct EvalResult {
  std::vector<double> thresholds;
  std::vector<PrecisionRecallF1> per_threshold;  // corpus level
  double average_f1 = 0;
  std::vector<VideoEval> per_video;
  bool macro = false;
};

struct Prediction {
  std::string video_id;
  std::vector<double> boundaries_s;
};

// Per video and threshold the score against each annotator is computed
// independently and the best annotator is selected; corpus totals aggregate
// the selected annotators' TP/FP/FN (micro) or average per-video F1 (macro).
EvalResult f1_multi_annotator(const std::vector<Prediction>& preds,
                              const std::vector<BoundaryAnnotation>& annotations,
                              const std::vector<double>& thresholds = default_rel_dis_thresholds(),
                              bool macro = false);

// Recall restricted to ground-truth boundaries of one type (the matching
// itself runs against the full boundary list). Single-annotator tracks only.
struct TypedRecall {
  int matched_shot = 0, total_shot = 0;
  int matched_event = 0, total_event = 0;
  double shot_recall() const { return total_shot ? static_cast<double>(matched_shot) / total_shot : 0.0; }
  double event_recall() const { return total_event ? static_cast<double>(matched_event) / total_event : 0.0; }
};

TypedRecall typed_recall(const std::vector<Prediction>& preds,
                         const std::vector<BoundaryAnnotation>& annotations, double threshold);

// Keep only boundaries of one type (for type-restricted F1).
std::vector<BoundaryAnnotation> filter_by_type(const std::vector<BoundaryAnnotation>& annotations,
                                               BoundaryType type);

// Concatenates per-sub-instance tracks at the given offsets (ascending,
// non-overlapping) into one track with a combined timestamp map.
ScoreTrack merge_subinstance_scores(const std::vector<ScoreTrack>& tracks,
                                    const std::vector<double>& offsets_s);

std::string eval_result_to_csv(const EvalResult& r);
std::string eval_result_to_json(const EvalResult& r);

std::string predictions_to_jsonl(const std::vector<Prediction>& preds);
std::vector<Prediction> predictions_from_jsonl(const std::string& text);

}  // namespace gebd
