#include "pgt/instruction_builder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "pgt/errors.hpp"
#include "pgt/seeding.hpp"
#include "pgt/labels.hpp"
#include "pgt/slice_pipeline.hpp"

namespace pgt {

using nlohmann::ordered_json;

namespace {

using seeding::fnv1a;
using seeding::seeded_shuffle;
using seeding::splitmix64;

// round(numerator / denominator) for numerator >= 0, denominator > 0.
std::int64_t rounded_quotient(std::int64_t numerator, std::int64_t denominator, RoundingMode mode) {
  const std::int64_t q = numerator / denominator;
  const std::int64_t twice_r = 2 * (numerator % denominator);
  if (twice_r > denominator) return q + 1;
  if (twice_r < denominator) return q;
  return mode == RoundingMode::HalfAwayFromZero ? q + 1 : q + (q & 1);
}

const std::vector<std::string>& pancreas_detection_list() {
  static const std::vector<std::string> list{
      "Give me the location of the pancreas",
      "Give me the position of the pancreas",
      "Where is the pancreas?",
      "Where is located the pancreas in this image?",
      "Which is the position of the pancreas?",
      "From this image, tell me the location of the pancreas",
      "Could you tell me the location of the pancreas?",
      "Where can I locate the pancreas?",
  };
  return list;
}

const std::vector<std::string>& classification_list() {
  static const std::vector<std::string> list{
      "Does the pancreas in the image present a tumor?",
      "Is there a tumor in the pancreas shown in the image?",
      "Can you see a tumor in the pancreas in this picture?",
      "Does the image show a tumor in the pancreas?",
      "Is a pancreatic tumor visible in the image?",
      "Is the pancreas in this image showing signs of a tumor?",
      "Is the pancreas in the image affected by a tumor?",
      "Does the pancreas in the picture have a tumor?",
  };
  return list;
}

const std::vector<std::string>& known_organs() {
  static const std::vector<std::string> organs{"pancreas", "liver", "kidney", "spleen"};
  return organs;
}

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

std::size_t pick_instruction(std::uint64_t instruction_seed, const InstructionSample& s,
                             std::size_t candidates) {
  std::uint64_t h = splitmix64(instruction_seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(s.slice_id));
  h = splitmix64(h ^ fnv1a(to_string(s.stage)));
  h = splitmix64(h ^ fnv1a(s.organ));
  const unsigned __int128 wide = static_cast<unsigned __int128>(h) * candidates;
  return static_cast<std::size_t>(wide >> 64);
}

bool is_multi_organ(const SliceRecord& r) { return !r.organ_boxes.empty(); }

}  // namespace

bool NormalizedBox::valid() const {
  auto in = [](std::int32_t c) { return c >= 0 && c <= 100; };
  return in(x_left) && in(y_top) && in(x_right) && in(y_bottom) && x_left <= x_right &&
         y_top <= y_bottom;
}

NormalizedBox normalize_box(const PixelBox& box, std::int64_t width, std::int64_t height,
                            RoundingMode mode) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::OutOfBounds, "image dims must be positive");
  if (box.min_x < 0 || box.min_y < 0 || box.max_x > width || box.max_y > height ||
      box.min_x > box.max_x || box.min_y > box.max_y) {
    throw Error(ErrorCode::OutOfBounds, "box outside the image bounds");
  }
  auto nx = [&](std::int32_t c) {
    return static_cast<std::int32_t>(rounded_quotient(static_cast<std::int64_t>(c) * 100, width, mode));
  };
  auto ny = [&](std::int32_t c) {
    return static_cast<std::int32_t>(rounded_quotient(static_cast<std::int64_t>(c) * 100, height, mode));
  };
  return {nx(box.min_x), ny(box.min_y), nx(box.max_x), ny(box.max_y)};
}

PixelBox denormalize_box(const NormalizedBox& box, std::int64_t width, std::int64_t height,
                         RoundingMode mode) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::OutOfBounds, "image dims must be positive");
  if (!box.valid()) throw Error(ErrorCode::OutOfBounds, "normalized box outside [0,100]");
  auto px = [&](std::int32_t c, std::int64_t dim) {
    return static_cast<std::int32_t>(rounded_quotient(static_cast<std::int64_t>(c) * dim, 100, mode));
  };
  return {px(box.x_left, width), px(box.y_top, height), px(box.x_right, width), px(box.y_bottom, height)};
}

std::string render_bbox_text(const NormalizedBox& b) {
  return "{<" + std::to_string(b.x_left) + "><" + std::to_string(b.y_top) + "><" +
         std::to_string(b.x_right) + "><" + std::to_string(b.y_bottom) + ">}";
}

TaskIdentifier TaskIdentifier::parse(std::string_view text) {
  std::string_view name = text;
  if (!name.empty() && name.front() == '[') {
    if (name.size() < 3 || name.back() != ']') {
      throw Error(ErrorCode::InvalidRequest, "malformed task identifier '" + std::string(text) + "'");
    }
    name = name.substr(1, name.size() - 2);
  }
  if (name.empty()) throw Error(ErrorCode::InvalidRequest, "empty task identifier");
  for (char c : name) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) {
      throw Error(ErrorCode::InvalidRequest, "malformed task identifier '" + std::string(text) + "'");
    }
  }
  return TaskIdentifier(std::string(name));
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::PancreasDetection: return "pancreas_detection";
    case Stage::TumorClassification: return "tumor_classification";
    case Stage::TumorDetection: return "tumor_detection";
    case Stage::MultiOrganDetection: return "multi_organ_detection";
  }
  return "unknown";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : {Stage::PancreasDetection, Stage::TumorClassification, Stage::TumorDetection,
                  Stage::MultiOrganDetection}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorCode::BadConfig, "unknown stage '" + std::string(name) + "'");
}

bool is_detection(Stage stage) { return stage != Stage::TumorClassification; }

TaskIdentifier task_for(Stage stage) {
  return is_detection(stage) ? TaskIdentifier::refer() : TaskIdentifier::vqa();
}

std::vector<std::string> candidate_instructions(Stage stage, std::string_view organ) {
  switch (stage) {
    case Stage::TumorClassification:
      return classification_list();
    case Stage::PancreasDetection:
      return pancreas_detection_list();
    case Stage::TumorDetection: {
      std::vector<std::string> out;
      for (const auto& s : pancreas_detection_list()) {
        out.push_back(replace_all(s, "the pancreas", "the pancreas tumor"));
      }
      return out;
    }
    case Stage::MultiOrganDetection: {
      std::vector<std::string> out;
      const std::string target = "the " + std::string(organ);
      for (const auto& s : pancreas_detection_list()) out.push_back(replace_all(s, "the pancreas", target));
      return out;
    }
  }
  return {};
}

std::optional<InstructionClass> classify_instruction(std::string_view instruction) {
  auto contains = [&](const std::vector<std::string>& list) {
    return std::find(list.begin(), list.end(), instruction) != list.end();
  };
  if (contains(pancreas_detection_list())) return InstructionClass{Stage::PancreasDetection, "pancreas"};
  if (contains(classification_list())) return InstructionClass{Stage::TumorClassification, "pancreas"};
  if (contains(candidate_instructions(Stage::TumorDetection))) {
    return InstructionClass{Stage::TumorDetection, "tumor"};
  }
  for (const auto& organ : known_organs()) {
    if (organ == "pancreas") continue;
    if (contains(candidate_instructions(Stage::MultiOrganDetection, organ))) {
      return InstructionClass{Stage::MultiOrganDetection, organ};
    }
  }
  return std::nullopt;
}

std::string assemble_prompt(const TaskIdentifier& task, std::string_view instruction,
                            std::string_view image_ref) {
  if (!classify_instruction(instruction)) {
    throw Error(ErrorCode::UnknownInstruction, "'" + std::string(instruction) + "' is not a candidate instruction");
  }
  return format_prompt(task, instruction, image_ref);
}

std::string format_prompt(const TaskIdentifier& task, std::string_view instruction, std::string_view image_ref) {
  return "[INST] <Img>" + std::string(image_ref) + "</Img> " + task.token() + " " + std::string(instruction) +
         " [/INST]";
}

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "test"; }

ordered_json sample_to_json(const InstructionSample& s) {
  ordered_json j;
  j["slice_id"] = s.slice_id;
  j["dataset"] = s.dataset;
  j["volume_name"] = s.volume_name;
  j["image_path"] = s.image_path;
  j["task"] = s.task.name();
  j["instruction"] = s.instruction;
  j["prompt"] = s.prompt;
  j["target"] = s.target;
  j["stage"] = std::string(to_string(s.stage));
  j["organ"] = s.organ;
  j["split"] = std::string(to_string(s.split));
  return j;
}

InstructionSample sample_from_json(const ordered_json& j) {
  try {
    InstructionSample s;
    s.slice_id = j.at("slice_id").get<std::int64_t>();
    s.dataset = j.at("dataset").get<std::string>();
    s.volume_name = j.at("volume_name").get<std::string>();
    s.image_path = j.at("image_path").get<std::string>();
    s.task = TaskIdentifier::parse(j.at("task").get<std::string>());
    s.instruction = j.at("instruction").get<std::string>();
    s.prompt = j.at("prompt").get<std::string>();
    s.target = j.at("target").get<std::string>();
    s.stage = parse_stage(j.at("stage").get<std::string>());
    s.organ = j.at("organ").get<std::string>();
    const auto split = j.at("split").get<std::string>();
    if (split != "train" && split != "test") throw Error(ErrorCode::SchemaViolation, "bad split '" + split + "'");
    s.split = split == "train" ? Split::Train : Split::Test;
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("instruction sample: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("instruction sample: ") + e.what());
  }
}

Split VolumeSplit::split_of(const VolumeKey& key) const {
  return std::binary_search(train.begin(), train.end(), key) ? Split::Train : Split::Test;
}

VolumeSplit split_volumes(std::span<const SliceRecord> records, std::uint64_t seed,
                          double train_fraction) {
  std::map<std::string, std::set<std::string>> by_dataset;
  for (const auto& r : records) by_dataset[r.dataset].insert(r.volume_name);

  VolumeSplit split;
  for (const auto& [dataset, names] : by_dataset) {
    std::vector<std::string> order(names.begin(), names.end());
    seeded_shuffle(order, splitmix64(seed) ^ fnv1a(dataset));
    const auto n_train = static_cast<std::size_t>(
        std::ceil(train_fraction * static_cast<double>(order.size()) - 1e-9));
    for (std::size_t i = 0; i < order.size(); ++i) {
      (i < n_train ? split.train : split.test).push_back({dataset, order[i]});
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

namespace {

std::vector<const SliceRecord*> stage_records(std::span<const SliceRecord> catalog, Stage stage,
                                              const StageOptions& options) {
  const std::set<std::string> wanted(options.datasets.begin(), options.datasets.end());
  auto dataset_ok = [&](const SliceRecord& r) {
    if (!wanted.empty()) return wanted.contains(r.dataset);
    return stage == Stage::MultiOrganDetection ? is_multi_organ(r) : !is_multi_organ(r);
  };
  std::vector<const SliceRecord*> out;
  for (const auto& r : catalog) {
    if (!dataset_ok(r)) continue;
    switch (stage) {
      case Stage::PancreasDetection:
        if (r.pancreas_bbox_ratio.at_least(options.threshold)) out.push_back(&r);
        break;
      case Stage::TumorDetection:
        if (r.has_tumor() && r.tumor->bbox_tumor && r.tumor->tumor_bbox_ratio.at_least(options.threshold)) {
          out.push_back(&r);
        }
        break;
      case Stage::TumorClassification:
      case Stage::MultiOrganDetection:
        out.push_back(&r);
        break;
    }
  }
  return out;
}

InstructionSample base_sample(const SliceRecord& r, Stage stage, std::string organ, Split split) {
  InstructionSample s;
  s.slice_id = r.slice_id;
  s.dataset = r.dataset;
  s.volume_name = r.volume_name;
  s.image_path = r.dataset + "/" + slice_file_name(r.dataset, r.volume_name, static_cast<std::size_t>(r.slice_index));
  s.task = task_for(stage);
  s.stage = stage;
  s.organ = std::move(organ);
  s.split = split;
  return s;
}

}  // namespace

StageDataset build_stage_dataset(std::span<const SliceRecord> catalog, Stage stage,
                                 const StageOptions& options) {
  if (!(options.threshold >= 0.0 && options.threshold <= 1.0)) {
    throw Error(ErrorCode::BadConfig, "threshold must be in [0,1]");
  }
  StageDataset ds;
  ds.stage = stage;
  ds.threshold = options.threshold;

  const std::vector<const SliceRecord*> records = stage_records(catalog, stage, options);
  if (records.empty()) {
    throw Error(ErrorCode::EmptyStage, std::string(to_string(stage)) + " has no records at threshold " +
                                           std::to_string(options.threshold));
  }
  // Master split over the whole catalog, so every threshold shares test volumes.
  const VolumeSplit split = split_volumes(catalog, options.split_seed, options.train_fraction);
  auto split_of = [&](const SliceRecord& r) { return split.split_of({r.dataset, r.volume_name}); };

  std::vector<InstructionSample> samples;
  if (stage == Stage::TumorClassification) {
    for (Split part : {Split::Train, Split::Test}) {
      std::vector<const SliceRecord*> pos, neg;
      for (const SliceRecord* r : records) {
        if (split_of(*r) != part) continue;
        (r->has_tumor() ? pos : neg).push_back(r);
      }
      if (options.balance_classes && !pos.empty() && !neg.empty()) {
        auto& major = pos.size() > neg.size() ? pos : neg;
        const std::size_t keep = std::min(pos.size(), neg.size());
        seeded_shuffle(major, splitmix64(options.split_seed ^ 0xc1a55ull) ^ static_cast<std::uint64_t>(part));
        major.resize(keep);
      }
      for (const SliceRecord* r : pos) {
        auto s = base_sample(*r, stage, "pancreas", part);
        s.target = "yes";
        samples.push_back(std::move(s));
      }
      for (const SliceRecord* r : neg) {
        auto s = base_sample(*r, stage, "pancreas", part);
        s.target = "no";
        samples.push_back(std::move(s));
      }
    }
  } else {
    for (const SliceRecord* r : records) {
      std::vector<std::string> organs;
      if (stage == Stage::PancreasDetection) {
        organs = {"pancreas"};
      } else if (stage == Stage::TumorDetection) {
        organs = {"tumor"};
      } else if (!options.organs.empty()) {
        organs = options.organs;
      } else {
        organs.push_back("pancreas");
        for (const auto& [organ, box] : r->organ_boxes) organs.push_back(organ);
      }
      for (const std::string& organ : organs) {
        const auto box = r->box_for(organ);
        if (!box) continue;
        auto s = base_sample(*r, stage, organ, split_of(*r));
        s.target = render_bbox_text(normalize_box(*box, r->width, r->height, options.rounding));
        samples.push_back(std::move(s));
      }
    }
  }
  if (samples.empty()) {
    throw Error(ErrorCode::EmptyStage, std::string(to_string(stage)) + " produced no samples");
  }

  std::sort(samples.begin(), samples.end(), [](const InstructionSample& a, const InstructionSample& b) {
    return std::tie(a.slice_id, a.organ) < std::tie(b.slice_id, b.organ);
  });
  for (auto& s : samples) {
    const std::string list_organ = stage == Stage::MultiOrganDetection ? s.organ : "pancreas";
    const auto candidates = candidate_instructions(stage, list_organ);
    s.instruction = candidates[pick_instruction(options.instruction_seed, s, candidates.size())];
    s.prompt = assemble_prompt(s.task, s.instruction);
  }

  for (const auto& key : split.train) ++ds.report[key.dataset].train_volumes;
  for (const auto& key : split.test) ++ds.report[key.dataset].test_volumes;
  for (const auto& s : samples) {
    auto& counts = ds.report[s.dataset];
    ++(s.split == Split::Train ? counts.train_slices : counts.test_slices);
  }
  ds.samples = std::move(samples);
  return ds;
}

void write_samples_jsonl(std::span<const InstructionSample> samples, const std::filesystem::path& path,
                         std::optional<Split> only) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  for (const auto& s : samples) {
    if (only && s.split != *only) continue;
    out << sample_to_json(s).dump() << '\n';
  }
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

std::vector<InstructionSample> read_samples_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<InstructionSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(sample_from_json(ordered_json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::SchemaViolation, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

ordered_json build_manifest(std::span<const ManifestStage> stages, const TrainingHyperparameters& hyper,
                            std::string_view base_checkpoint) {
  for (Stage core : {Stage::PancreasDetection, Stage::TumorClassification, Stage::TumorDetection}) {
    const bool present = std::any_of(stages.begin(), stages.end(),
                                     [&](const ManifestStage& m) { return m.stage == core; });
    if (!present) {
      throw Error(ErrorCode::IoFailure, "cascade is missing the " + std::string(to_string(core)) + " stage dataset");
    }
  }
  ordered_json hp;
  hp["epochs"] = hyper.epochs;
  hp["image_size"] = hyper.image_size;
  hp["optimizer"] = hyper.optimizer;
  hp["lr_schedule"] = hyper.lr_schedule;
  hp["init_lr"] = hyper.init_lr;
  hp["warmup_lr"] = hyper.warmup_lr;
  hp["min_lr"] = hyper.min_lr;
  hp["weight_decay"] = hyper.weight_decay;
  hp["lora"] = {{"rank", hyper.lora_rank}, {"alpha", hyper.lora_alpha}, {"target_matrices", hyper.lora_targets}};
  hp["loss"] = hyper.loss;
  hp["freeze_vision_encoder"] = hyper.freeze_vision_encoder;
  hp["train_projection"] = hyper.train_projection;

  ordered_json manifest;
  manifest["schema"] = "cascade-manifest/v1";
  manifest["base_checkpoint"] = std::string(base_checkpoint);
  manifest["hyperparameters"] = hp;
  manifest["stages"] = ordered_json::array();
  std::string previous(base_checkpoint);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const ManifestStage& m = stages[i];
    for (const auto& file : {m.train_file, m.test_file}) {
      if (!std::filesystem::exists(file)) {
        throw Error(ErrorCode::IoFailure, "stage " + std::to_string(i + 1) + " (" +
                                              std::string(to_string(m.stage)) + ") dataset file missing: " +
                                              file.string());
      }
    }
    const std::string output = "checkpoints/stage" + std::to_string(i + 1) + "_" + std::string(to_string(m.stage));
    ordered_json s;
    s["index"] = i + 1;
    s["stage"] = std::string(to_string(m.stage));
    s["task"] = task_for(m.stage).name();
    s["threshold"] = m.threshold;
    s["train_file"] = m.train_file.string();
    s["test_file"] = m.test_file.string();
    s["initial_checkpoint"] = previous;
    s["output_checkpoint"] = output;
    s["hyperparameters"] = hp;
    manifest["stages"].push_back(s);
    previous = output;
  }
  return manifest;
}

void emit_manifest(std::span<const ManifestStage> stages, const std::filesystem::path& out_path,
                   const TrainingHyperparameters& hyper, std::string_view base_checkpoint) {
  const ordered_json manifest = build_manifest(stages, hyper, base_checkpoint);
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + out_path.string());
  out << manifest.dump(2) << '\n';
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "short write to " + out_path.string());
}

}  // namespace pgt
