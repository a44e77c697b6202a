#include "gebd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace gebd {

using nlohmann::json;

std::vector<double> extract_boundaries(const ScoreTrack& scores, double theta,
                                       int min_separation) {
  scores.validate();
  if (!(theta > 0.0 && theta < 1.0)) throw ValidationError("extract_boundaries: theta in (0,1)");
  if (min_separation < 1) throw ValidationError("extract_boundaries: min_separation >= 1");
  const auto& s = scores.scores;
  const int n = static_cast<int>(s.size());
  // Local maxima; a plateau counts once, at its leftmost index.
  std::vector<int> cand;
  for (int i = 0; i < n; ++i) {
    if (s[static_cast<size_t>(i)] < theta) continue;
    const bool rising = (i == 0) || s[static_cast<size_t>(i)] > s[static_cast<size_t>(i - 1)];
    const bool falling = (i == n - 1) || s[static_cast<size_t>(i)] >= s[static_cast<size_t>(i + 1)];
    if (rising && falling) cand.push_back(i);
  }
  // Thin: higher score wins, leftmost on ties.
  std::vector<int> order(cand.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = s[static_cast<size_t>(cand[static_cast<size_t>(a)])];
    const double sb = s[static_cast<size_t>(cand[static_cast<size_t>(b)])];
    if (sa != sb) return sa > sb;
    return cand[static_cast<size_t>(a)] < cand[static_cast<size_t>(b)];
  });
  std::vector<int> picked;
  for (int oi : order) {
    const int idx = cand[static_cast<size_t>(oi)];
    bool ok = true;
    for (int p : picked)
      if (std::abs(p - idx) < min_separation) {
        ok = false;
        break;
      }
    if (ok) picked.push_back(idx);
  }
  std::sort(picked.begin(), picked.end());
  std::vector<double> out;
  for (int idx : picked) out.push_back(scores.timestamps_s[static_cast<size_t>(idx)]);
  return out;
}

double relative_distance(double pred_s, double gt_s, double denominator_s) {
  if (denominator_s <= 0) throw ValidationError("relative_distance: denominator_s must be > 0");
  return std::abs(pred_s - gt_s) / denominator_s;
}

namespace {

// Augmenting path step for bipartite matching over the admissibility graph.
bool try_augment(int p, const std::vector<std::vector<int>>& adj, std::vector<int>& gt_owner,
                 std::vector<char>& visited) {
  for (int g : adj[static_cast<size_t>(p)]) {
    if (visited[static_cast<size_t>(g)]) continue;
    visited[static_cast<size_t>(g)] = 1;
    if (gt_owner[static_cast<size_t>(g)] < 0 ||
        try_augment(gt_owner[static_cast<size_t>(g)], adj, gt_owner, visited)) {
      gt_owner[static_cast<size_t>(g)] = p;
      return true;
    }
  }
  return false;
}

}  // namespace

int match_boundaries(const std::vector<double>& preds_s, const std::vector<double>& gts_s,
                     double threshold, double denominator_s) {
  const int np = static_cast<int>(preds_s.size()), ng = static_cast<int>(gts_s.size());
  if (np == 0 || ng == 0) return 0;
  std::vector<std::vector<int>> adj(static_cast<size_t>(np));
  struct Pair {
    double d;
    int p, g;
  };
  std::vector<Pair> pairs;
  for (int p = 0; p < np; ++p)
    for (int g = 0; g < ng; ++g) {
      const double d = relative_distance(preds_s[static_cast<size_t>(p)], gts_s[static_cast<size_t>(g)], denominator_s);
      if (d <= threshold) {
        adj[static_cast<size_t>(p)].push_back(g);
        pairs.push_back({d, p, g});
      }
    }
  // Greedy ascending-distance seeding (ties: lower pred index, then gt).
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.d != b.d) return a.d < b.d;
    if (a.p != b.p) return a.p < b.p;
    return a.g < b.g;
  });
  std::vector<int> gt_owner(static_cast<size_t>(ng), -1);
  std::vector<char> pred_used(static_cast<size_t>(np), 0);
  int matched = 0;
  for (const auto& pr : pairs) {
    if (pred_used[static_cast<size_t>(pr.p)] || gt_owner[static_cast<size_t>(pr.g)] >= 0) continue;
    pred_used[static_cast<size_t>(pr.p)] = 1;
    gt_owner[static_cast<size_t>(pr.g)] = pr.p;
    ++matched;
  }
  // Augmenting-path repair turns the greedy seed into a maximum matching.
  for (int p = 0; p < np; ++p) {
    if (pred_used[static_cast<size_t>(p)]) continue;
    std::vector<char> visited(static_cast<size_t>(ng), 0);
    if (try_augment(p, adj, gt_owner, visited)) {
      pred_used[static_cast<size_t>(p)] = 1;
      ++matched;
    }
  }
  return matched;
}

PrecisionRecallF1 score_against(const std::vector<double>& preds_s,
                                const std::vector<double>& gts_s, double threshold,
                                double denominator_s) {
  PrecisionRecallF1 r;
  r.n_pred = static_cast<int>(preds_s.size());
  r.n_gt = static_cast<int>(gts_s.size());
  r.tp = match_boundaries(preds_s, gts_s, threshold, denominator_s);
  r.precision = r.n_pred > 0 ? static_cast<double>(r.tp) / r.n_pred : 0.0;
  r.recall = r.n_gt > 0 ? static_cast<double>(r.tp) / r.n_gt : 0.0;
  r.f1 = (r.precision + r.recall) > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

EvalResult f1_multi_annotator(const std::vector<Prediction>& preds,
                              const std::vector<BoundaryAnnotation>& annotations,
                              const std::vector<double>& thresholds, bool macro) {
  EvalResult res;
  res.thresholds = thresholds;
  res.macro = macro;
  res.per_threshold.resize(thresholds.size());

  std::vector<double> macro_f1_sum(thresholds.size(), 0.0);
  for (const auto& ann : annotations) {
    ann.validate();
    const Prediction* pred = nullptr;
    for (const auto& p : preds)
      if (p.video_id == ann.video_id) pred = &p;
    static const Prediction kEmpty{};
    if (!pred) pred = &kEmpty;  // missing prediction = no boundaries

    VideoEval ve;
    ve.video_id = ann.video_id;
    for (size_t ti = 0; ti < thresholds.size(); ++ti) {
      PrecisionRecallF1 best{};
      int best_annotator = 0;
      for (size_t ai = 0; ai < ann.annotators.size(); ++ai) {
        auto r = score_against(pred->boundaries_s, ann.annotators[ai].boundaries_s,
                               thresholds[ti], ann.denominator_s);
        if (ai == 0 || r.f1 > best.f1) {
          best = r;
          best_annotator = static_cast<int>(ai);
        }
      }
      ve.per_threshold.push_back(best);
      ve.selected_annotator.push_back(best_annotator);
      res.per_threshold[ti].tp += best.tp;
      res.per_threshold[ti].n_pred += best.n_pred;
      res.per_threshold[ti].n_gt += best.n_gt;
      macro_f1_sum[ti] += best.f1;
    }
    res.per_video.push_back(std::move(ve));
  }

  double f1_total = 0;
  for (size_t ti = 0; ti < thresholds.size(); ++ti) {
    auto& r = res.per_threshold[ti];
    if (macro) {
      const size_t n = std::max<size_t>(1, res.per_video.size());
      r.f1 = macro_f1_sum[ti] / static_cast<double>(n);
      r.precision = r.n_pred > 0 ? static_cast<double>(r.tp) / r.n_pred : 0.0;
      r.recall = r.n_gt > 0 ? static_cast<double>(r.tp) / r.n_gt : 0.0;
    } else {
      r.precision = r.n_pred > 0 ? static_cast<double>(r.tp) / r.n_pred : 0.0;
      r.recall = r.n_gt > 0 ? static_cast<double>(r.tp) / r.n_gt : 0.0;
      r.f1 = (r.precision + r.recall) > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                          : 0.0;
    }
    f1_total += r.f1;
  }
  res.average_f1 = thresholds.empty() ? 0.0 : f1_total / static_cast<double>(thresholds.size());
  return res;
}

TypedRecall typed_recall(const std::vector<Prediction>& preds,
                         const std::vector<BoundaryAnnotation>& annotations, double threshold) {
  TypedRecall out;
  for (const auto& ann : annotations) {
    if (ann.annotators.size() != 1 || ann.annotators[0].types.empty())
      throw ValidationError("typed_recall: single annotator with type tags required (" +
                            ann.video_id + ")");
    const Prediction* pred = nullptr;
    for (const auto& p : preds)
      if (p.video_id == ann.video_id) pred = &p;
    static const Prediction kEmpty{};
    if (!pred) pred = &kEmpty;
    const auto& gts = ann.annotators[0].boundaries_s;
    const auto& types = ann.annotators[0].types;
    // Match against the full list, then attribute per type: for each gt,
    // matched iff some pred lies within threshold and the overall matching
    // keeps it. Re-run the optimal matcher on type-erased lists and read
    // which gts were matched via a second pass.
    const int ng = static_cast<int>(gts.size());
    const int np = static_cast<int>(pred->boundaries_s.size());
    std::vector<std::vector<int>> adj(static_cast<size_t>(np));
    for (int p = 0; p < np; ++p)
      for (int g = 0; g < ng; ++g)
        if (relative_distance(pred->boundaries_s[static_cast<size_t>(p)], gts[static_cast<size_t>(g)], ann.denominator_s) <= threshold)
          adj[static_cast<size_t>(p)].push_back(g);
    std::vector<int> gt_owner(static_cast<size_t>(ng), -1);
    for (int p = 0; p < np; ++p) {
      std::vector<char> visited(static_cast<size_t>(ng), 0);
      try_augment(p, adj, gt_owner, visited);
    }
    for (int g = 0; g < ng; ++g) {
      const bool matched = gt_owner[static_cast<size_t>(g)] >= 0;
      if (types[static_cast<size_t>(g)] == BoundaryType::Shot) {
        ++out.total_shot;
        if (matched) ++out.matched_shot;
      } else if (types[static_cast<size_t>(g)] == BoundaryType::Event) {
        ++out.total_event;
        if (matched) ++out.matched_event;
      }
    }
  }
  return out;
}

std::vector<BoundaryAnnotation> filter_by_type(const std::vector<BoundaryAnnotation>& annotations,
                                               BoundaryType type) {
  std::vector<BoundaryAnnotation> out;
  for (const auto& ann : annotations) {
    BoundaryAnnotation f = ann;
    for (auto& an : f.annotators) {
      if (an.types.empty())
        throw ValidationError("filter_by_type: annotation lacks type tags (" + ann.video_id + ")");
      std::vector<double> b;
      std::vector<BoundaryType> t;
      for (size_t i = 0; i < an.boundaries_s.size(); ++i)
        if (an.types[i] == type) {
          b.push_back(an.boundaries_s[i]);
          t.push_back(type);
        }
      an.boundaries_s = std::move(b);
      an.types = std::move(t);
    }
    out.push_back(std::move(f));
  }
  return out;
}

ScoreTrack merge_subinstance_scores(const std::vector<ScoreTrack>& tracks,
                                    const std::vector<double>& offsets_s) {
  if (tracks.empty()) throw ValidationError("merge_subinstance_scores: no tracks");
  if (tracks.size() != offsets_s.size())
    throw ValidationError("merge_subinstance_scores: offsets/tracks length mismatch");
  ScoreTrack out;
  out.video_id = tracks[0].video_id;
  double prev_end = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < tracks.size(); ++i) {
    tracks[i].validate();
    if (i > 0 && offsets_s[i] <= offsets_s[i - 1])
      throw ValidationError("merge_subinstance_scores: offsets must be ascending");
    const double first = offsets_s[i] + tracks[i].timestamps_s.front();
    if (first <= prev_end)
      throw ValidationError("merge_subinstance_scores: sub-instances overlap at offset " +
                            std::to_string(offsets_s[i]));
    for (size_t j = 0; j < tracks[i].scores.size(); ++j) {
      out.scores.push_back(tracks[i].scores[j]);
      out.timestamps_s.push_back(offsets_s[i] + tracks[i].timestamps_s[j]);
    }
    prev_end = out.timestamps_s.back();
  }
  return out;
}

std::string eval_result_to_csv(const EvalResult& r) {
  std::ostringstream os;
  os << "threshold,precision,recall,f1\n";
  for (size_t i = 0; i < r.thresholds.size(); ++i) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.2f,%.6f,%.6f,%.6f\n", r.thresholds[i],
                  r.per_threshold[i].precision, r.per_threshold[i].recall, r.per_threshold[i].f1);
    os << buf;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "avg,,,%.6f\n", r.average_f1);
  os << buf;
  return os.str();
}

std::string eval_result_to_json(const EvalResult& r) {
  json root;
  root["aggregation"] = r.macro ? "macro" : "micro";
  root["average_f1"] = r.average_f1;
  json rows = json::array();
  for (size_t i = 0; i < r.thresholds.size(); ++i) {
    json row;
    row["threshold"] = r.thresholds[i];
    row["precision"] = r.per_threshold[i].precision;
    row["recall"] = r.per_threshold[i].recall;
    row["f1"] = r.per_threshold[i].f1;
    row["tp"] = r.per_threshold[i].tp;
    row["n_pred"] = r.per_threshold[i].n_pred;
    row["n_gt"] = r.per_threshold[i].n_gt;
    rows.push_back(row);
  }
  root["per_threshold"] = rows;
  json vids = json::array();
  for (const auto& v : r.per_video) {
    json jv;
    jv["video_id"] = v.video_id;
    json f1s = json::array();
    for (const auto& pt : v.per_threshold) f1s.push_back(pt.f1);
    jv["f1_per_threshold"] = f1s;
    jv["selected_annotator"] = v.selected_annotator;
    vids.push_back(jv);
  }
  root["per_video"] = vids;
  return root.dump(2);
}

std::string predictions_to_jsonl(const std::vector<Prediction>& preds) {
  std::ostringstream os;
  for (const auto& p : preds) {
    json j;
    j["video_id"] = p.video_id;
    j["boundaries_s"] = p.boundaries_s;
    os << j.dump() << "\n";
  }
  return os.str();
}

std::vector<Prediction> predictions_from_jsonl(const std::string& text) {
  std::vector<Prediction> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw ValidationError("predictions line " + std::to_string(lineno) + ": " + e.what());
    }
    Prediction p;
    if (!j.contains("video_id") || !j.contains("boundaries_s"))
      throw ValidationError("predictions line " + std::to_string(lineno) +
                            ": need video_id and boundaries_s");
    p.video_id = j["video_id"].get<std::string>();
    for (const auto& v : j["boundaries_s"]) p.boundaries_s.push_back(v.get<double>());
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace gebd
