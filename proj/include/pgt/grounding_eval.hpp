#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "pgt/annotation_catalog.hpp"
#include "pgt/instruction_builder.hpp"
#include "pgt/png_io.hpp"

namespace pgt {

enum class ExpectedOutput { BoundingBox, YesNo };
enum class YesNo { No, Yes };

struct ParseFailure {
  std::string reason;
  friend bool operator==(const ParseFailure&, const ParseFailure&) = default;
};

struct ParsedOutput {
  std::variant<NormalizedBox, YesNo, ParseFailure> value;
  /// Corners arrived swapped and were sorted before use.
  bool repaired = false;

  bool failed() const { return std::holds_alternative<ParseFailure>(value); }
  const NormalizedBox* box() const { return std::get_if<NormalizedBox>(&value); }
  const YesNo* answer() const { return std::get_if<YesNo>(&value); }
};

/// Never throws. Box grammar: four "<int>" groups, optionally wrapped in
/// braces, anywhere in the text; values in [0,100]. Yes/no: a standalone
/// case-insensitive "yes" or "no" word; texts with both fail.
ParsedOutput parse_output(std::string_view raw_text, ExpectedOutput expected);

nlohmann::ordered_json parsed_to_json(const ParsedOutput& parsed);

double iou(const NormalizedBox& a, const NormalizedBox& b);
double iou(const PixelBox& a, const PixelBox& b);

enum class CoordinateSpace { Pixel, Normalized };

/// A box whose coordinate space is only known at run time.
struct TaggedBox {
  CoordinateSpace space;
  std::array<std::int64_t, 4> coords;  // min_x, min_y, max_x, max_y
};
/// Throws CoordinateSpaceMismatch when the spaces differ.
double iou(const TaggedBox& a, const TaggedBox& b);

struct ConfusionMatrix {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
  std::int64_t total() const { return tp + fp + fn + tn; }
};

struct ClassificationScores {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t parse_failures = 0;
};

ClassificationScores scores_from_confusion(const ConfusionMatrix& m);

/// "yes" is the positive class; unparseable predictions count as wrong
/// (false negative on positive truth, false positive on negative truth).
/// Throws EmptyInput.
ClassificationScores classify_metrics(std::span<const std::pair<ParsedOutput, bool>> pairs);

/// One model answer to score against the catalog.
struct PredictionRecord {
  std::int64_t slice_id = 0;
  Stage stage = Stage::PancreasDetection;
  std::string organ;
  std::string raw_text;
  /// Sweep tags; absent for single-run evaluations.
  std::optional<std::int64_t> epoch;
  std::optional<double> threshold;
};

nlohmann::ordered_json prediction_to_json(const PredictionRecord& p);
PredictionRecord prediction_from_json(const nlohmann::ordered_json& j);
void write_predictions_jsonl(std::span<const PredictionRecord> predictions, const std::filesystem::path& path);
std::vector<PredictionRecord> read_predictions_jsonl(const std::filesystem::path& path);

/// Ground-truth normalized box for a (record, stage, organ) triple.
std::optional<NormalizedBox> ground_truth_box(const SliceRecord& record, Stage stage, std::string_view organ);

struct GroupStats {
  std::string key;
  std::int64_t count = 0;
  std::int64_t parse_failures = 0;
  std::int64_t repaired = 0;
  double mean_iou = 0.0;
};

/// Sum(mean * count) / Sum(count); 0 for no weight.
double weighted_average(std::span<const GroupStats> groups);

enum class Grouping { Dataset, Organ, Epoch, Threshold };
std::string_view to_string(Grouping grouping);
Grouping parse_grouping(std::string_view name);

struct SweepRow {
  std::string key;  // epoch or threshold value
  std::vector<GroupStats> datasets;
  double weighted_average = 0.0;
};

struct MetricsReport {
  Stage stage = Stage::PancreasDetection;
  Grouping grouping = Grouping::Dataset;
  std::int64_t n_slices = 0;
  std::int64_t n_parse_failures = 0;
  std::int64_t n_repaired = 0;
  /// Detection stages: per-group IoU (dataset or organ) and their
  /// count-weighted average.
  std::vector<GroupStats> groups;
  double mean_iou = 0.0;
  double weighted_iou = 0.0;
  /// Sweep groupings: one row per epoch/threshold.
  std::vector<SweepRow> sweep;
  std::optional<ClassificationScores> classification;
  std::uint64_t split_seed = 0;
  std::uint64_t instruction_seed = 0;
};

struct AggregateOptions {
  Grouping grouping = Grouping::Dataset;
  unsigned threads = 1;
  std::uint64_t split_seed = 0;
  std::uint64_t instruction_seed = 0;
};

/// Scores every prediction of one stage against the catalog. Detection
/// parse failures score IoU 0. Throws UnknownSliceId or EmptyInput.
MetricsReport aggregate(std::span<const PredictionRecord> predictions, const Catalog& catalog,
                        Stage stage, const AggregateOptions& options = {});

nlohmann::ordered_json report_to_json(const MetricsReport& report);
/// Aligned plain-text table in the layout of the result tables.
std::string report_to_text(const MetricsReport& report);

inline constexpr std::size_t kHeatmapSize = 101;

struct HeatmapGrid {
  /// [y][x] cells over the normalized coordinate range 0..100.
  std::vector<double> cells = std::vector<double>(kHeatmapSize * kHeatmapSize, 0.0);
  std::size_t boxes = 0;

  double at(std::size_t x, std::size_t y) const { return cells[y * kHeatmapSize + x]; }
};

/// Each box adds 1 to every cell it covers (corners inclusive); the grid is
/// then divided by its maximum.
HeatmapGrid heatmap(std::span<const NormalizedBox> boxes);

/// GT and prediction heatmaps side by side with a colour map.
RgbImage render_heatmap_pair(const HeatmapGrid& gt, const HeatmapGrid& pred, std::size_t scale = 4);
RgbImage render_heatmap(const HeatmapGrid& grid, std::size_t scale = 4);
nlohmann::ordered_json heatmap_to_json(const HeatmapGrid& grid);

}  // namespace pgt
