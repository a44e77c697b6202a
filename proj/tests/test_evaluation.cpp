#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gebd/evaluation.hpp"
#include "test_util.hpp"

using namespace gebd;

namespace {

ScoreTrack track_from(const std::vector<double>& scores, double duration_s = 0) {
  ScoreTrack t;
  t.video_id = "v";
  t.scores = scores;
  const int n = static_cast<int>(scores.size());
  const double dur = duration_s > 0 ? duration_s : n / 10.0;
  for (int i = 0; i < n; ++i) t.timestamps_s.push_back(frame_index_to_seconds(i, n, dur));
  return t;
}

BoundaryAnnotation ann_of(std::vector<double> bounds, double denom, double dur = 10.0) {
  BoundaryAnnotation a;
  a.video_id = "v";
  a.fps = 10;
  a.duration_s = dur;
  a.denominator_s = denom;
  AnnotatorBoundaries an;
  an.boundaries_s = std::move(bounds);
  a.annotators.push_back(an);
  return a;
}

}  // namespace

TEST_CASE("relative_distance") {
  CHECK(relative_distance(5.0, 4.5, 10.0) == doctest::Approx(0.05));
  CHECK(relative_distance(3.0, 3.0, 7.0) == 0.0);
  CHECK(relative_distance(1.0, 2.0, 4.0) == relative_distance(2.0, 1.0, 4.0));
  CHECK_THROWS_AS(relative_distance(1.0, 2.0, 0.0), ValidationError);
}

TEST_CASE("extract_boundaries") {
  SUBCASE("all zeros -> empty") {
    auto t = track_from(std::vector<double>(20, 0.0));
    CHECK(extract_boundaries(t, 0.5, 2).empty());
  }
  SUBCASE("single spike at t=10 with theta 0.5") {
    std::vector<double> s(21, 0.0);
    s[10] = 0.9;
    auto t = track_from(s, 2.1);
    auto b = extract_boundaries(t, 0.5, 2);
    REQUIRE(b.size() == 1);
    CHECK(b[0] == doctest::Approx(frame_index_to_seconds(10, 21, 2.1)));
  }
  SUBCASE("plateau picks the leftmost index") {
    std::vector<double> s = {0, 0.8, 0.8, 0.8, 0, 0, 0};
    auto t = track_from(s, 0.7);
    auto b = extract_boundaries(t, 0.5, 2);
    REQUIRE(b.size() == 1);
    CHECK(b[0] == doctest::Approx(frame_index_to_seconds(1, 7, 0.7)));
  }
  SUBCASE("min separation keeps the higher peak") {
    std::vector<double> s = {0, 0.9, 0.0, 0.95, 0, 0, 0, 0.6, 0};
    auto t = track_from(s, 0.9);
    auto b = extract_boundaries(t, 0.5, 3);
    REQUIRE(b.size() == 2);  // 3 wins over 1 (distance 2 < 3); 7 survives
    CHECK(b[0] == doctest::Approx(frame_index_to_seconds(3, 9, 0.9)));
    CHECK(b[1] == doctest::Approx(frame_index_to_seconds(7, 9, 0.9)));
  }
  SUBCASE("bad theta") {
    auto t = track_from({0.1, 0.2});
    CHECK_THROWS_AS(extract_boundaries(t, 0.0, 1), ValidationError);
  }
}

TEST_CASE("match_boundaries spec example") {
  // preds [1.0, 5.0], gts [1.2, 8.0], denom 10, thr 0.05 -> TP=1
  CHECK(match_boundaries({1.0, 5.0}, {1.2, 8.0}, 0.05, 10.0) == 1);
  auto r = score_against({1.0, 5.0}, {1.2, 8.0}, 0.05, 10.0);
  CHECK(r.precision == doctest::Approx(0.5));
  CHECK(r.recall == doctest::Approx(0.5));
  CHECK(r.f1 == doctest::Approx(0.5));

  SUBCASE("exact predictions give F1 = 1") {
    auto p = score_against({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}, 0.05, 10.0);
    CHECK(p.tp == 3);
    CHECK(p.f1 == doctest::Approx(1.0));
  }
  SUBCASE("empty predictions give zero precision by convention") {
    auto p = score_against({}, {1.0}, 0.05, 10.0);
    CHECK(p.tp == 0);
    CHECK(p.precision == 0.0);
    CHECK(p.f1 == 0.0);
  }
  SUBCASE("case where naive ascending-distance greedy is suboptimal") {
    // Greedy would pick (4, 5) first and strand both 0 and 6.2.
    CHECK(match_boundaries({4.0, 6.2}, {0.0, 5.0}, 0.45, 10.0) == 2);
  }
}

TEST_CASE("matcher equals brute force on random instances") {
  std::mt19937 rng(99);
  std::uniform_int_distribution<int> count(0, 6);
  std::uniform_real_distribution<double> pos(0.0, 1.0);
  std::uniform_real_distribution<double> thr(0.02, 0.5);
  for (int trial = 0; trial < 400; ++trial) {
    std::vector<double> preds(static_cast<size_t>(count(rng)));
    std::vector<double> gts(static_cast<size_t>(count(rng)));
    for (auto& p : preds) p = pos(rng);
    for (auto& g : gts) g = pos(rng);
    std::sort(preds.begin(), preds.end());
    std::sort(gts.begin(), gts.end());
    const double t = thr(rng);
    CHECK(match_boundaries(preds, gts, t, 1.0) ==
          testutil::brute_force_match(preds, gts, t, 1.0));
  }
}

TEST_CASE("f1_multi_annotator") {
  SUBCASE("single annotator reduces to plain F1") {
    std::vector<Prediction> preds = {{"v", {1.25, 4.85}}};
    auto res = f1_multi_annotator(preds, {ann_of({1.25, 4.85}, 10.0)});
    CHECK(res.per_threshold[0].f1 == doctest::Approx(1.0));
    CHECK(res.thresholds.size() == 10);
    CHECK(res.average_f1 == doctest::Approx(1.0));
  }
  SUBCASE("one perfect annotator dominates the max rule") {
    BoundaryAnnotation a = ann_of({1.25, 4.85}, 10.0);
    AnnotatorBoundaries far;
    far.boundaries_s = {8.0};
    a.annotators.push_back(far);
    std::vector<Prediction> preds = {{"v", {1.25, 4.85}}};
    auto res = f1_multi_annotator(preds, {a});
    CHECK(res.per_video[0].per_threshold[0].f1 == doctest::Approx(1.0));
    CHECK(res.per_video[0].selected_annotator[0] == 0);
  }
  SUBCASE("thresholds 0.05..0.5 emit 10 rows plus average") {
    std::vector<Prediction> preds = {{"v", {2.0}}};
    auto res = f1_multi_annotator(preds, {ann_of({2.6}, 10.0)});
    REQUIRE(res.per_threshold.size() == 10);
    // Rel.Dis. = 0.06: misses 0.05, matches from 0.1 on.
    CHECK(res.per_threshold[0].f1 == doctest::Approx(0.0));
    CHECK(res.per_threshold[1].f1 == doctest::Approx(1.0));
    // Monotonically non-decreasing in the threshold.
    for (size_t i = 1; i < res.per_threshold.size(); ++i)
      CHECK(res.per_threshold[i].f1 >= res.per_threshold[i - 1].f1 - 1e-12);
  }
  SUBCASE("scaling timestamps and denominator leaves F1 unchanged") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> pos(0.1, 9.9);
    std::vector<double> p(4), g(3);
    for (auto& x : p) x = pos(rng);
    for (auto& x : g) x = pos(rng);
    std::sort(p.begin(), p.end());
    std::sort(g.begin(), g.end());
    auto base = f1_multi_annotator({{"v", p}}, {ann_of(g, 10.0)});
    const double scale = 37.0;
    std::vector<double> ps = p, gs = g;
    for (auto& x : ps) x *= scale;
    for (auto& x : gs) x *= scale;
    auto scaled = f1_multi_annotator({{"v", ps}}, {ann_of(gs, 10.0 * scale, 10.0 * scale)});
    for (size_t i = 0; i < base.per_threshold.size(); ++i)
      CHECK(base.per_threshold[i].f1 == doctest::Approx(scaled.per_threshold[i].f1).epsilon(1e-12));
  }
  SUBCASE("micro vs macro aggregation differ when video sizes differ") {
    std::vector<Prediction> preds = {{"a", {1.0}}, {"b", {}}};
    BoundaryAnnotation a = ann_of({1.0}, 10.0);
    a.video_id = "a";
    BoundaryAnnotation b = ann_of({2.0, 5.0, 8.0}, 10.0);
    b.video_id = "b";
    auto micro = f1_multi_annotator(preds, {a, b}, default_rel_dis_thresholds(), false);
    auto macro = f1_multi_annotator(preds, {a, b}, default_rel_dis_thresholds(), true);
    CHECK(micro.per_threshold[0].f1 != doctest::Approx(macro.per_threshold[0].f1));
    CHECK(macro.per_threshold[0].f1 == doctest::Approx(0.5));
  }
}

TEST_CASE("typed recall and type filtering") {
  BoundaryAnnotation a = ann_of({2.0, 6.0}, 10.0);
  a.annotators[0].types = {BoundaryType::Shot, BoundaryType::Event};
  std::vector<Prediction> preds = {{"v", {2.0}}};
  auto tr = typed_recall(preds, {a}, 0.05);
  CHECK(tr.total_shot == 1);
  CHECK(tr.matched_shot == 1);
  CHECK(tr.total_event == 1);
  CHECK(tr.matched_event == 0);
  CHECK(tr.shot_recall() == doctest::Approx(1.0));
  CHECK(tr.event_recall() == doctest::Approx(0.0));

  auto shots_only = filter_by_type({a}, BoundaryType::Shot);
  REQUIRE(shots_only[0].annotators[0].boundaries_s.size() == 1);
  CHECK(shots_only[0].annotators[0].boundaries_s[0] == doctest::Approx(2.0));
}

TEST_CASE("merge_subinstance_scores") {
  auto t1 = track_from(std::vector<double>(100, 0.1), 10.0);
  auto t2 = track_from(std::vector<double>(100, 0.2), 10.0);
  SUBCASE("two 100-frame tracks merge to one 200-frame track") {
    auto merged = merge_subinstance_scores({t1, t2}, {0.0, 10.0});
    CHECK(merged.scores.size() == 200);
    merged.validate();
    CHECK(merged.timestamps_s[100] == doctest::Approx(10.0 + t2.timestamps_s[0]));
  }
  SUBCASE("single track is identity") {
    auto merged = merge_subinstance_scores({t1}, {0.0});
    CHECK(merged.scores == t1.scores);
  }
  SUBCASE("out-of-order offsets error") {
    CHECK_THROWS_AS(merge_subinstance_scores({t1, t2}, {10.0, 0.0}), ValidationError);
  }
  SUBCASE("overlapping offsets error") {
    CHECK_THROWS_AS(merge_subinstance_scores({t1, t2}, {0.0, 5.0}), ValidationError);
  }
}

TEST_CASE("prediction interchange round trip") {
  std::vector<Prediction> preds = {{"a", {1.5, 2.25}}, {"b", {}}};
  auto text = predictions_to_jsonl(preds);
  auto back = predictions_from_jsonl(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].video_id == "a");
  CHECK(back[0].boundaries_s.size() == 2);
  CHECK(back[1].boundaries_s.empty());
}

TEST_CASE("eval result CSV has the documented header") {
  auto res = f1_multi_annotator({{"v", {1.0}}}, {ann_of({1.0}, 10.0)});
  auto csv = eval_result_to_csv(res);
  CHECK(csv.rfind("threshold,precision,recall,f1\n", 0) == 0);
  CHECK(csv.find("avg") != std::string::npos);
}
