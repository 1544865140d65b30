#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "pgt/errors.hpp"
#include "pgt/grounding_eval.hpp"
#include "pgt/synthetic.hpp"
#include "test_support.hpp"

using namespace pgt;
using pgt::test::TempDir;

namespace {

// Rasterizes both boxes on a grid of `sub` cells per unit and counts cell
// centres. Exact for integer corners; zero-area unions follow the identity rule.
double raster_iou(const NormalizedBox& a, const NormalizedBox& b, int sub = 4) {
  auto inside = [&](const NormalizedBox& r, double x, double y) {
    return x > r.x_left && x < r.x_right && y > r.y_top && y < r.y_bottom;
  };
  std::int64_t inter = 0;
  std::int64_t uni = 0;
  for (int i = 0; i < 100 * sub; ++i) {
    const double x = (i + 0.5) / sub;
    for (int j = 0; j < 100 * sub; ++j) {
      const double y = (j + 0.5) / sub;
      const bool in_a = inside(a, x, y);
      const bool in_b = inside(b, x, y);
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  if (uni == 0) return a == b ? 1.0 : 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

NormalizedBox random_box(std::mt19937_64& rng) {
  const auto x0 = static_cast<std::int32_t>(pgt::test::uniform(rng, 0, 100));
  const auto y0 = static_cast<std::int32_t>(pgt::test::uniform(rng, 0, 100));
  return {x0, y0, static_cast<std::int32_t>(pgt::test::uniform(rng, x0, 100)),
          static_cast<std::int32_t>(pgt::test::uniform(rng, y0, 100))};
}

std::vector<std::pair<ParsedOutput, bool>> confusion_pairs(int tp, int fp, int fn, int tn, int failures_pos = 0) {
  std::vector<std::pair<ParsedOutput, bool>> out;
  auto add = [&](int n, std::string_view text, bool truth) {
    for (int i = 0; i < n; ++i) out.emplace_back(parse_output(text, ExpectedOutput::YesNo), truth);
  };
  add(tp, "yes", true);
  add(fp, "yes", false);
  add(fn, "no", true);
  add(tn, "no", false);
  add(failures_pos, "perhaps", true);
  return out;
}

SliceRecord record(std::int64_t id, std::string dataset, PixelBox box) {
  SliceRecord r;
  r.dataset = std::move(dataset);
  r.volume_name = r.dataset + "_v.nii.gz";
  r.slice_id = id;
  r.slice_count = 10;
  r.bbox_pancreas = box;
  r.pixels_pancreas = 1;
  r.width = r.height = 100;
  return r;
}

}  // namespace

TEST_CASE("box parser") {
  auto box = [](std::string_view s) { return parse_output(s, ExpectedOutput::BoundingBox); };
  CHECK(*box("{<38><46><46><51>}").box() == NormalizedBox{38, 46, 46, 51});
  CHECK(*box("The pancreas is at {<38><46><46><51>} in this slice").box() == NormalizedBox{38, 46, 46, 51});
  CHECK(*box("<38><46><46><51>").box() == NormalizedBox{38, 46, 46, 51});
  CHECK(*box("  { < 1 > < 2 >  < 3 > < 4 > }").box() == NormalizedBox{1, 2, 3, 4});
  CHECK(box("between the stomach and the spine").failed());
  CHECK(box("").failed());
  CHECK(box("{<1><2><3>}").failed());
  CHECK(box("{<101><2><3><4>}").failed());
  CHECK(box("{<-1><2><3><4>}").failed());

  const auto swapped = box("{<46><51><38><46>}");
  REQUIRE(swapped.box());
  CHECK(*swapped.box() == NormalizedBox{38, 46, 46, 51});
  CHECK(swapped.repaired);
  CHECK_FALSE(box("{<38><46><46><51>}").repaired);

  // Later valid candidates win over an out-of-range first group.
  CHECK(*box("{<120><5><30><40>} or rather {<10><5><30><40>}").box() == NormalizedBox{10, 5, 30, 40});
}

TEST_CASE("yes/no parser") {
  auto yn = [](std::string_view s) { return parse_output(s, ExpectedOutput::YesNo); };
  CHECK(*yn("Yes, the pancreas in the image presents a tumor").answer() == YesNo::Yes);
  CHECK(*yn("no").answer() == YesNo::No);
  CHECK(*yn("NO tumor is visible.").answer() == YesNo::No);
  CHECK(yn("yes and no").failed());
  CHECK(yn("maybe").failed());
  CHECK(yn("Yesterday the notice").failed());
}

TEST_CASE("parsed echo JSON") {
  CHECK(parsed_to_json(parse_output("{<1><2><3><4>}", ExpectedOutput::BoundingBox))["kind"] == "bbox");
  CHECK(parsed_to_json(parse_output("yes", ExpectedOutput::YesNo))["kind"] == "yesno");
  CHECK(parsed_to_json(parse_output("hm", ExpectedOutput::YesNo))["kind"] == "failure");
}

TEST_CASE("IoU examples") {
  CHECK(iou(NormalizedBox{0, 0, 10, 10}, NormalizedBox{0, 0, 10, 10}) == 1.0);
  CHECK(iou(NormalizedBox{0, 0, 10, 10}, NormalizedBox{20, 20, 30, 30}) == 0.0);
  CHECK(iou(NormalizedBox{0, 0, 10, 10}, NormalizedBox{5, 0, 15, 10}) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(PixelBox{0, 0, 10, 10}, PixelBox{5, 0, 15, 10}) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(NormalizedBox{5, 5, 5, 5}, NormalizedBox{5, 5, 5, 5}) == 1.0);
  CHECK(iou(NormalizedBox{5, 5, 5, 9}, NormalizedBox{5, 5, 5, 5}) == 0.0);
  CHECK(iou(NormalizedBox{5, 5, 5, 5}, NormalizedBox{0, 0, 10, 10}) == 0.0);
  CHECK(iou(NormalizedBox{0, 0, 10, 10}, NormalizedBox{10, 0, 20, 10}) == 0.0);  // touching edges
}

TEST_CASE("tagged boxes refuse mixed spaces") {
  const TaggedBox px{CoordinateSpace::Pixel, {0, 0, 10, 10}};
  const TaggedBox nb{CoordinateSpace::Normalized, {0, 0, 10, 10}};
  CHECK(iou(px, px) == 1.0);
  try {
    iou(px, nb);
    FAIL("expected CoordinateSpaceMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CoordinateSpaceMismatch);
  }
}

TEST_CASE("IoU equals the raster oracle, is symmetric and bounded") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 300; ++i) {
    const NormalizedBox a = random_box(rng);
    // Bias half of the pairs towards overlap.
    NormalizedBox b = random_box(rng);
    if (i % 2 == 0) {
      b.x_left = std::clamp(a.x_left + static_cast<std::int32_t>(pgt::test::uniform(rng, -5, 5)), 0, 100);
      b.y_top = std::clamp(a.y_top + static_cast<std::int32_t>(pgt::test::uniform(rng, -5, 5)), 0, 100);
      b.x_right = std::max(b.x_left, std::clamp(a.x_right + static_cast<std::int32_t>(pgt::test::uniform(rng, -5, 5)), 0, 100));
      b.y_bottom = std::max(b.y_top, std::clamp(a.y_bottom + static_cast<std::int32_t>(pgt::test::uniform(rng, -5, 5)), 0, 100));
    }
    const double v = iou(a, b);
    CHECK(std::abs(v - raster_iou(a, b, 2)) < 1e-6);
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(iou(a, a) == 1.0);
  }
}

TEST_CASE("confusion-matrix arithmetic") {
  const auto s = classify_metrics(confusion_pairs(43, 7, 5, 45));
  CHECK(s.accuracy == doctest::Approx(0.880).epsilon(1e-12));
  CHECK(s.precision == doctest::Approx(0.860).epsilon(1e-12));
  CHECK(s.recall == doctest::Approx(43.0 / 48.0));
  CHECK(std::round(s.recall * 10000) / 10000 == 0.8958);
  CHECK(std::round(s.f1 * 10000) / 10000 == 0.8776);

  const auto perfect = classify_metrics(confusion_pairs(10, 0, 0, 10));
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);

  const auto all_yes = classify_metrics(confusion_pairs(10, 10, 0, 0));
  CHECK(all_yes.accuracy == 0.5);
  CHECK(all_yes.recall == 1.0);

  const auto none = scores_from_confusion({0, 0, 10, 10});
  CHECK(none.precision == 0.0);
  CHECK(none.f1 == 0.0);

  // A failure on a positive is a false negative.
  const auto failing = classify_metrics(confusion_pairs(1, 0, 0, 1, 2));
  CHECK(failing.confusion.fn == 2);
  CHECK(failing.parse_failures == 2);
  CHECK(failing.accuracy == 0.5);

  try {
    classify_metrics({});
    FAIL("expected EmptyInput");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyInput);
  }
}

TEST_CASE("classification identities on random confusion matrices") {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 500; ++i) {
    const ConfusionMatrix m{pgt::test::uniform(rng, 0, 50), pgt::test::uniform(rng, 0, 50),
                            pgt::test::uniform(rng, 0, 50), pgt::test::uniform(rng, 1, 50)};
    const auto s = scores_from_confusion(m);
    const double n = static_cast<double>(m.tp + m.fp + m.fn + m.tn);
    CHECK(s.accuracy == doctest::Approx((m.tp + m.tn) / n));
    const double p = m.tp + m.fp > 0 ? static_cast<double>(m.tp) / (m.tp + m.fp) : 0.0;
    const double r = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;
    CHECK(s.precision == doctest::Approx(p));
    CHECK(s.recall == doctest::Approx(r));
    CHECK(s.f1 == doctest::Approx(p + r > 0 ? 2 * p * r / (p + r) : 0.0));
  }
}

TEST_CASE("weighted average") {
  const std::vector<GroupStats> groups{{"NIH", 378, 0, 0, 0.597}, {"MSD", 526, 0, 0, 0.556}};
  const double w = weighted_average(groups);
  CHECK(std::abs(w - 0.573) <= 0.0005);
  CHECK(w == doctest::Approx((0.597 * 378 + 0.556 * 526) / 904));
  CHECK(w >= 0.556);
  CHECK(w <= 0.597);

  const std::vector<GroupStats> one{{"NIH", 12, 0, 0, 0.4}};
  CHECK(weighted_average(one) == doctest::Approx(0.4));
  const std::vector<GroupStats> equal{{"a", 5, 0, 0, 0.2}, {"b", 5, 0, 0, 0.6}};
  CHECK(weighted_average(equal) == doctest::Approx(0.4));
  CHECK(weighted_average(std::vector<GroupStats>{}) == 0.0);
}

TEST_CASE("aggregate by dataset scores failures as zero") {
  const Catalog catalog({record(1, "NIH", {0, 0, 10, 10}), record(2, "NIH", {0, 0, 10, 10}),
                         record(3, "MSD", {0, 0, 10, 10})});
  const std::vector<PredictionRecord> preds{
      {1, Stage::PancreasDetection, "pancreas", "{<0><0><10><10>}", {}, {}},
      {2, Stage::PancreasDetection, "pancreas", "between the stomach and the spine", {}, {}},
      {3, Stage::PancreasDetection, "pancreas", "{<5><0><15><10>}", {}, {}},
      {3, Stage::TumorClassification, "pancreas", "yes", {}, {}},  // other stage, ignored
  };
  const MetricsReport r = aggregate(preds, catalog, Stage::PancreasDetection);
  CHECK(r.n_slices == 3);
  CHECK(r.n_parse_failures == 1);
  REQUIRE(r.groups.size() == 2);
  CHECK(r.groups[0].key == "NIH");
  CHECK(r.groups[0].mean_iou == doctest::Approx(0.5));
  CHECK(r.groups[1].key == "MSD");
  CHECK(r.groups[1].mean_iou == doctest::Approx(1.0 / 3.0));
  CHECK(r.weighted_iou == doctest::Approx((1.0 + 0.0 + 1.0 / 3.0) / 3.0));
  CHECK(r.mean_iou == doctest::Approx(r.weighted_iou));

  const auto j = report_to_json(r);
  CHECK(j["schema"] == "metrics-report/v1");
  CHECK(report_to_text(r).find("Average (weighted)") != std::string::npos);

  const std::vector<PredictionRecord> unknown{{99, Stage::PancreasDetection, "pancreas", "{<0><0><1><1>}", {}, {}}};
  try {
    aggregate(unknown, catalog, Stage::PancreasDetection);
    FAIL("expected UnknownSliceId");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownSliceId);
  }
  try {
    aggregate(preds, catalog, Stage::TumorDetection);
    FAIL("expected EmptyInput");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyInput);
  }
}

TEST_CASE("organ grouping averages equal-count organs arithmetically") {
  SliceRecord r = record(1, "AbdomenCT-1k", {0, 0, 10, 10});
  r.organ_boxes["liver"] = PixelBox{0, 0, 20, 20};
  r.organ_boxes["kidney"] = PixelBox{50, 50, 60, 60};
  r.organ_boxes["spleen"] = PixelBox{70, 70, 90, 90};
  const Catalog catalog({r});
  const std::vector<PredictionRecord> preds{
      {1, Stage::MultiOrganDetection, "pancreas", "{<0><0><10><10>}", {}, {}},
      {1, Stage::MultiOrganDetection, "liver", "{<0><0><10><20>}", {}, {}},
      {1, Stage::MultiOrganDetection, "kidney", "{<55><50><65><60>}", {}, {}},
      {1, Stage::MultiOrganDetection, "spleen", "no idea", {}, {}},
  };
  AggregateOptions opt;
  opt.grouping = Grouping::Organ;
  const MetricsReport rep = aggregate(preds, catalog, Stage::MultiOrganDetection, opt);
  REQUIRE(rep.groups.size() == 4);
  CHECK(report_to_json(rep)["macro_iou"].get<double>() == doctest::Approx((1.0 + 0.5 + 1.0 / 3.0 + 0.0) / 4));
  CHECK(rep.weighted_iou == doctest::Approx((1.0 + 0.5 + 1.0 / 3.0 + 0.0) / 4));
  CHECK(report_to_text(rep).find("Average") != std::string::npos);
}

TEST_CASE("epoch sweep rows") {
  const Catalog catalog({record(1, "NIH", {0, 0, 10, 10}), record(2, "MSD", {0, 0, 10, 10})});
  std::vector<PredictionRecord> preds;
  for (std::int64_t epoch : {21, 33}) {
    preds.push_back({1, Stage::PancreasDetection, "pancreas", "{<0><0><10><10>}", epoch, {}});
    preds.push_back({2, Stage::PancreasDetection, "pancreas", epoch == 21 ? "x" : "{<0><0><10><10>}", epoch, {}});
  }
  AggregateOptions opt;
  opt.grouping = Grouping::Epoch;
  const auto rep = aggregate(preds, catalog, Stage::PancreasDetection, opt);
  REQUIRE(rep.sweep.size() == 2);
  CHECK(rep.sweep[0].key == "21");
  CHECK(rep.sweep[0].weighted_average == doctest::Approx(0.5));
  CHECK(rep.sweep[1].weighted_average == doctest::Approx(1.0));
}

TEST_CASE("aggregate is independent of order and thread count") {
  std::mt19937_64 rng(31);
  auto records = pgt::test::random_records(rng, {"NIH", "MSD"}, 5, 40);
  const Catalog catalog(records);
  std::vector<PredictionRecord> preds;
  for (const auto& r : records) {
    const NormalizedBox b = random_box(rng);
    preds.push_back({r.slice_id, Stage::PancreasDetection, "pancreas",
                     pgt::test::uniform(rng, 0, 9) == 0 ? "the pancreas" : render_bbox_text(b), {}, {}});
  }
  const std::string base = report_to_json(aggregate(preds, catalog, Stage::PancreasDetection)).dump();
  for (unsigned threads : {2u, 3u, 8u}) {
    std::shuffle(preds.begin(), preds.end(), rng);
    AggregateOptions opt;
    opt.threads = threads;
    CHECK(report_to_json(aggregate(preds, catalog, Stage::PancreasDetection, opt)).dump() == base);
  }
}

TEST_CASE("prediction JSON lines") {
  TempDir dir;
  const std::vector<PredictionRecord> preds{
      {1, Stage::PancreasDetection, "pancreas", "{<0><0><10><10>}", 33, 0.6},
      {2, Stage::TumorClassification, "pancreas", "Yes", {}, {}},
  };
  write_predictions_jsonl(preds, dir / "p.jsonl");
  const auto back = read_predictions_jsonl(dir / "p.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].epoch == 33);
  CHECK(*back[0].threshold == doctest::Approx(0.6));
  CHECK(back[1].raw_text == "Yes");
  CHECK_FALSE(back[1].epoch);

  pgt::test::write_text(dir / "bad.jsonl", "{\"slice_id\":\"x\"}\n");
  CHECK_THROWS_AS(read_predictions_jsonl(dir / "bad.jsonl"), Error);

  const auto j = nlohmann::ordered_json::parse(R"({"slice_id":5,"stage":"tumor_detection","raw_text":"no"})");
  CHECK(prediction_from_json(j).organ == "tumor");
}

TEST_CASE("ground truth boxes per stage") {
  const SliceRecord r = synthetic::reference_record();
  CHECK(*ground_truth_box(r, Stage::PancreasDetection, "pancreas") == NormalizedBox{38, 46, 46, 51});
  CHECK(ground_truth_box(r, Stage::TumorDetection, "tumor").has_value());
  CHECK_FALSE(ground_truth_box(r, Stage::MultiOrganDetection, "liver").has_value());
}

TEST_CASE("heatmaps") {
  const std::vector<NormalizedBox> one{{10, 10, 20, 20}};
  const HeatmapGrid g = heatmap(one);
  CHECK(g.boxes == 1);
  CHECK(g.at(10, 10) == 1.0);
  CHECK(g.at(20, 20) == 1.0);
  CHECK(g.at(15, 12) == 1.0);
  CHECK(g.at(9, 10) == 0.0);
  CHECK(g.at(21, 21) == 0.0);

  const std::vector<NormalizedBox> twice{{10, 10, 20, 20}, {10, 10, 20, 20}};
  CHECK(heatmap(twice).cells == g.cells);

  const std::vector<NormalizedBox> overlap{{0, 0, 10, 10}, {5, 5, 15, 15}};
  const HeatmapGrid h = heatmap(overlap);
  // Cell-count oracle: covered by both -> 1, by one -> 0.5.
  for (std::size_t y = 0; y < kHeatmapSize; ++y) {
    for (std::size_t x = 0; x < kHeatmapSize; ++x) {
      const int n = (x <= 10 && y <= 10) + (x >= 5 && x <= 15 && y >= 5 && y <= 15);
      CHECK(h.at(x, y) == n / 2.0);
    }
  }

  const HeatmapGrid empty = heatmap({});
  CHECK(std::all_of(empty.cells.begin(), empty.cells.end(), [](double v) { return v == 0.0; }));

  const RgbImage img = render_heatmap(g);
  CHECK(img.width == kHeatmapSize * 4);
  CHECK(img.rgb.size() == img.width * img.height * 3);
  const RgbImage pair = render_heatmap_pair(g, h);
  CHECK(pair.width == 2 * kHeatmapSize * 4 + 8);
  const auto j = heatmap_to_json(h);
  CHECK(j["cells"].size() == kHeatmapSize);
  CHECK(j["cells"][5][5].get<double>() == 1.0);
}
