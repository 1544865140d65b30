#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pgt/annotation_catalog.hpp"

namespace pgt {

/// Box in the text grounding space: integers in [0, 100].
struct NormalizedBox {
  std::int32_t x_left = 0;
  std::int32_t y_top = 0;
  std::int32_t x_right = 0;
  std::int32_t y_bottom = 0;

  std::int64_t area() const {
    return static_cast<std::int64_t>(x_right - x_left) * static_cast<std::int64_t>(y_bottom - y_top);
  }
  bool valid() const;
  friend bool operator==(const NormalizedBox&, const NormalizedBox&) = default;
};

enum class RoundingMode { HalfAwayFromZero, HalfToEven };

/// c' = round(c * 100 / dim); x against width, y against height.
/// Throws OutOfBounds when the box leaves [0, width] x [0, height].
NormalizedBox normalize_box(const PixelBox& box, std::int64_t width, std::int64_t height,
                            RoundingMode mode = RoundingMode::HalfAwayFromZero);
/// c = round(c' * dim / 100).
PixelBox denormalize_box(const NormalizedBox& box, std::int64_t width, std::int64_t height,
                         RoundingMode mode = RoundingMode::HalfAwayFromZero);

/// "{<x_left><y_top><x_right><y_bottom>}"
std::string render_bbox_text(const NormalizedBox& box);

/// Task token placed in front of the instruction.
class TaskIdentifier {
 public:
  static TaskIdentifier refer() { return TaskIdentifier("refer"); }
  static TaskIdentifier vqa() { return TaskIdentifier("vqa"); }
  /// Accepts "refer", "[refer]", "vqa", "[vqa]" and any other bare word
  /// (the slot is open for further identifiers). Throws InvalidRequest on
  /// empty or bracket-malformed names.
  static TaskIdentifier parse(std::string_view text);

  const std::string& name() const { return name_; }
  std::string token() const { return "[" + name_ + "]"; }
  friend bool operator==(const TaskIdentifier&, const TaskIdentifier&) = default;

 private:
  explicit TaskIdentifier(std::string name) : name_(std::move(name)) {}
  std::string name_;
};

enum class Stage { PancreasDetection, TumorClassification, TumorDetection, MultiOrganDetection };

std::string_view to_string(Stage stage);
/// Throws BadConfig for unknown names.
Stage parse_stage(std::string_view name);
bool is_detection(Stage stage);
TaskIdentifier task_for(Stage stage);

/// Candidate instructions for a stage. Detection lists are the pancreas
/// list with "the pancreas" replaced by "the <organ>"; tumor detection
/// uses "the pancreas tumor".
std::vector<std::string> candidate_instructions(Stage stage, std::string_view organ = "pancreas");

/// Stage and organ an instruction belongs to, if it is any known candidate.
struct InstructionClass {
  Stage stage;
  std::string organ;
};
std::optional<InstructionClass> classify_instruction(std::string_view instruction);

inline constexpr std::string_view kImageRefPlaceholder = "<ImageRef>";

/// "[INST] <Img><ImageRef></Img> [task] instruction [/INST]".
/// Throws UnknownInstruction when the text is not in any candidate list.
std::string assemble_prompt(const TaskIdentifier& task, std::string_view instruction,
                            std::string_view image_ref = kImageRefPlaceholder);
/// Same layout without the candidate check (free-text prompts).
std::string format_prompt(const TaskIdentifier& task, std::string_view instruction,
                          std::string_view image_ref = kImageRefPlaceholder);

enum class Split { Train, Test };
std::string_view to_string(Split split);

struct InstructionSample {
  std::int64_t slice_id = 0;
  std::string dataset;
  std::string volume_name;
  std::string image_path;  // relative to the image store root
  TaskIdentifier task = TaskIdentifier::refer();
  std::string instruction;
  std::string prompt;
  std::string target;  // bbox text or "yes"/"no"
  Stage stage = Stage::PancreasDetection;
  std::string organ;
  Split split = Split::Train;
};

nlohmann::ordered_json sample_to_json(const InstructionSample& sample);
InstructionSample sample_from_json(const nlohmann::ordered_json& value);

/// Volume identity used for splitting.
struct VolumeKey {
  std::string dataset;
  std::string volume_name;
  auto operator<=>(const VolumeKey&) const = default;
};

/// Per-dataset volume split: ceil(train_fraction * V) train volumes chosen by
/// a seeded Fisher-Yates shuffle of the name-sorted volume list.
struct VolumeSplit {
  std::vector<VolumeKey> train;
  std::vector<VolumeKey> test;
  Split split_of(const VolumeKey& key) const;
};
VolumeSplit split_volumes(std::span<const SliceRecord> records, std::uint64_t seed,
                          double train_fraction = 0.8);

struct StageOptions {
  double threshold = 0.0;
  std::uint64_t split_seed = 0;
  std::uint64_t instruction_seed = 0;
  double train_fraction = 0.8;
  /// Datasets used for pancreas detection / classification; empty = all
  /// datasets of the catalog except multi-organ ones.
  std::vector<std::string> datasets;
  /// Organs for multi-organ detection; empty = every organ the records carry
  /// plus pancreas.
  std::vector<std::string> organs;
  /// Subsample the majority class per split to the minority size.
  bool balance_classes = true;
  RoundingMode rounding = RoundingMode::HalfAwayFromZero;
};

struct SplitCounts {
  std::size_t train_volumes = 0;
  std::size_t test_volumes = 0;
  std::size_t train_slices = 0;
  std::size_t test_slices = 0;
};

struct StageDataset {
  Stage stage = Stage::PancreasDetection;
  double threshold = 0.0;
  std::vector<InstructionSample> samples;
  /// Per dataset name.
  std::map<std::string, SplitCounts> report;
};

/// Throws EmptyStage if no record survives the stage filter.
StageDataset build_stage_dataset(std::span<const SliceRecord> catalog, Stage stage,
                                 const StageOptions& options);

/// JSON lines, one sample per line, optionally restricted to one split.
void write_samples_jsonl(std::span<const InstructionSample> samples,
                         const std::filesystem::path& path,
                         std::optional<Split> only = std::nullopt);
std::vector<InstructionSample> read_samples_jsonl(const std::filesystem::path& path);

/// Fine-tuning hyperparameters; defaults are the reference values.
struct TrainingHyperparameters {
  int epochs = 50;
  int image_size = 448;
  std::string optimizer = "AdamW";
  std::string lr_schedule = "linear_warmup_cosine";
  double init_lr = 1e-5;
  double warmup_lr = 1e-6;
  double min_lr = 1e-6;
  double weight_decay = 0.05;
  int lora_rank = 64;
  int lora_alpha = 16;
  std::vector<std::string> lora_targets{"query", "key"};
  std::string loss = "cross_entropy";
  bool freeze_vision_encoder = true;
  bool train_projection = true;
};

struct ManifestStage {
  Stage stage;
  double threshold;
  std::filesystem::path train_file;
  std::filesystem::path test_file;
};

inline constexpr std::string_view kBaseCheckpoint = "base_checkpoint";

/// Writes the cascade manifest. Stages run in the given order; stage k > 1
/// starts from stage k-1's output checkpoint. Every referenced dataset file
/// must exist; throws IoFailure otherwise.
nlohmann::ordered_json build_manifest(std::span<const ManifestStage> stages,
                                      const TrainingHyperparameters& hyper = {},
                                      std::string_view base_checkpoint = kBaseCheckpoint);
void emit_manifest(std::span<const ManifestStage> stages, const std::filesystem::path& out_path,
                   const TrainingHyperparameters& hyper = {},
                   std::string_view base_checkpoint = kBaseCheckpoint);

}  // namespace pgt
