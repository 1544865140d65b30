#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pgt/annotation_catalog.hpp"
#include "pgt/gateway_service.hpp"
#include "pgt/grounding_eval.hpp"
#include "pgt/inference_gateway.hpp"
#include "pgt/instruction_builder.hpp"
#include "pgt/pipeline_config.hpp"

namespace pgt {

struct DatasetIngest {
  std::size_t volumes = 0;
  std::size_t slices = 0;        // pancreas-bearing slices catalogued
  std::size_t tumor_slices = 0;
  std::size_t degenerate = 0;    // slices exported as uniform gray
};

struct IngestSummary {
  std::map<std::string, DatasetIngest> datasets;
  std::size_t total_slices() const;
};

/// Reads every configured dataset, writes the PNG store and catalog.json.
/// Volumes pair by identical file name in the image and label directories.
/// Slice ids follow dataset name, then volume file name, then slice index.
IngestSummary ingest(const PipelineConfig& config, std::ostream& log);

/// Throws IoFailure when ingest has not run.
Catalog load_catalog(const PipelineConfig& config);

/// Configured threshold of a stage (classification has none and gets 0).
double stage_threshold(const PipelineConfig& config, Stage stage);

StageOptions stage_options(const PipelineConfig& config, double threshold);

/// "<stage>_t<threshold*100>" (threshold omitted for classification).
std::string stage_file_stem(Stage stage, double threshold);

struct StageFiles {
  std::filesystem::path train;
  std::filesystem::path test;
};

/// Builds one stage dataset and writes its train/test JSON lines.
StageDataset build_stage(const PipelineConfig& config, const Catalog& catalog, Stage stage, double threshold,
                         StageFiles* files = nullptr);

struct SweepEntry {
  double threshold = 0.0;
  /// Empty when the stage had no samples at this threshold.
  std::map<std::string, SplitCounts> counts;
  std::optional<std::string> error;
};

/// One dataset per threshold; EmptyStage is reported per row, not thrown.
std::vector<SweepEntry> sweep(const PipelineConfig& config, const Catalog& catalog, Stage stage);
/// Threshold | <dataset> train | <dataset> test ... | Total train | Total test
std::string sweep_table(const std::vector<SweepEntry>& entries);
nlohmann::ordered_json sweep_to_json(const std::vector<SweepEntry>& entries, Stage stage);

/// Builds the three cascade stages and writes manifest.json beside them.
std::filesystem::path write_manifest(const PipelineConfig& config, const Catalog& catalog, std::ostream& log);

std::shared_ptr<const Backend> make_backend(const PipelineConfig& config, std::shared_ptr<const Catalog> catalog);

struct EvaluationArtifacts {
  MetricsReport report;
  std::filesystem::path directory;
  std::vector<PredictionRecord> predictions;
};

/// Scores predictions (from a file, or collected from the configured
/// backend over the stage's test split) and writes report.json, report.txt,
/// predictions.jsonl and, for detection stages, the heatmaps.
EvaluationArtifacts evaluate(const PipelineConfig& config, const Catalog& catalog, Stage stage,
                             const std::optional<std::filesystem::path>& predictions_file,
                             Grouping grouping, const std::filesystem::path& out_dir = {});

struct HeatmapFiles {
  std::filesystem::path gt_png;
  std::filesystem::path pred_png;
  std::filesystem::path pair_png;
  std::filesystem::path json;
};

/// GT and prediction heatmaps for detection predictions of one stage.
HeatmapFiles write_heatmaps(std::span<const PredictionRecord> predictions, const Catalog& catalog, Stage stage,
                            const std::filesystem::path& out_dir);

}  // namespace pgt
