#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pgt/inference_gateway.hpp"
#include "pgt/volume_io.hpp"

namespace pgt {

struct DatasetConfig {
  std::filesystem::path root;
  /// Empty means the dataset's default label map.
  LabelMap labels;
};

/// Settings shared by every pipeline command. See README for the file format.
struct PipelineConfig {
  std::map<std::string, DatasetConfig> datasets;
  std::filesystem::path output_dir = "out";
  double clip_fraction = 0.02;
  /// pancreas_bbox_ratio threshold for pancreas and multi-organ detection.
  double threshold = 0.6;
  /// tumor_bbox_ratio threshold for tumor detection.
  double tumor_threshold = 0.0;
  std::vector<double> thresholds{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::uint64_t split_seed = 0;
  std::uint64_t instruction_seed = 0;
  double train_fraction = 0.8;
  std::vector<std::string> organs;
  bool balance_classes = true;
  unsigned threads = 1;

  BackendKind backend = BackendKind::Oracle;
  Perturbation perturbation;
  std::uint64_t oracle_seed = 0;
  std::filesystem::path replay_recording;
  std::string remote_url;
  std::string remote_path = "/generate";
  double remote_timeout_s = 30.0;
  /// When set, evaluate talks to a running gateway instead of an in-process one.
  std::string gateway_url;

  std::string serve_host = "127.0.0.1";
  int serve_port = 8080;

  std::filesystem::path catalog_path() const { return output_dir / "catalog.json"; }
  std::filesystem::path image_root() const { return output_dir / "images"; }
  std::filesystem::path datasets_dir() const { return output_dir / "datasets"; }
  std::filesystem::path reports_dir() const { return output_dir / "reports"; }
};

/// Applies one "key = value" setting. Throws BadConfig on unknown keys or
/// unparseable values.
void apply_setting(PipelineConfig& config, std::string_view key, std::string_view value);

/// Parses the key-value format: one "key = value" per line, '#' starts a
/// comment, blank lines ignored. Relative dataset roots resolve against the
/// file's directory. Throws IoFailure or BadConfig (with line numbers).
PipelineConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);

/// Range checks that do not touch the file system. Throws BadConfig.
void validate(const PipelineConfig& config);

/// Every configured root and its image/label directories exist. Throws BadConfig.
void require_dataset_roots(const PipelineConfig& config);

/// "<root>/images" or "<root>/imagesTr", and the matching label directory.
std::filesystem::path image_dir(const DatasetConfig& dataset);
std::filesystem::path label_dir(const DatasetConfig& dataset);

/// Key names accepted by apply_setting, for --help output.
std::vector<std::string> known_setting_keys();

}  // namespace pgt
