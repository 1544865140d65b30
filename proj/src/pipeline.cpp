#include "pgt/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "pgt/errors.hpp"
#include "pgt/labels.hpp"
#include "pgt/png_io.hpp"
#include "pgt/slice_pipeline.hpp"
#include "pgt/volume_io.hpp"

namespace pgt {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::size_t IngestSummary::total_slices() const {
  std::size_t n = 0;
  for (const auto& [_, d] : datasets) n += d.slices;
  return n;
}

namespace {

bool is_nifti_name(const fs::path& p) {
  const std::string name = p.filename().string();
  return name.ends_with(".nii") || name.ends_with(".nii.gz");
}

std::vector<fs::path> list_volumes(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_nifti_name(entry.path()) && !entry.path().filename().string().starts_with(".")) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return out;
}

struct VolumeJob {
  std::string dataset;
  LabelMap labels;
  fs::path image;
  fs::path label;
};

struct VolumeResult {
  std::vector<SliceRecord> records;
  std::size_t degenerate = 0;
  std::set<std::int32_t> unknown_labels;
};

VolumeResult ingest_volume(const VolumeJob& job, const PipelineConfig& config) {
  try {
    auto volume = std::make_shared<const VoxelVolume>(load_volume(job.image));
    auto mask = std::make_shared<const LabelMask>(load_mask(job.label, job.labels));
    const PairedVolume paired(volume, mask);
    VolumeResult result;
    result.unknown_labels = mask->unknown_labels;
    SliceIdCounter local_ids(0);
    result.records = catalog_volume(paired, job.dataset, local_ids);
    for (const auto& rec : result.records) {
      SliceImage image = preprocess(paired.image_slice(static_cast<std::size_t>(rec.slice_index)), config.clip_fraction);
      image.slice_index = static_cast<std::size_t>(rec.slice_index);
      image.volume_name = volume->volume_name;
      result.degenerate += image.degenerate ? 1 : 0;
      export_png(image, config.image_root(), job.dataset);
    }
    return result;
  } catch (const Error& e) {
    throw Error(e.code(), job.image.string() + ": " + e.what());
  }
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; the lowest-index
// failure is rethrown.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned count = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (count == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string threshold_text(double t) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << t;
  return os.str();
}

}  // namespace

IngestSummary ingest(const PipelineConfig& config, std::ostream& log) {
  validate(config);
  require_dataset_roots(config);

  std::vector<VolumeJob> jobs;
  for (const auto& [name, ds] : config.datasets) {
    LabelMap labels = ds.labels.empty() ? default_label_map(name) : ds.labels;
    if (labels.empty()) {
      throw Error(ErrorCode::BadConfig, "dataset " + name + " needs dataset." + name + ".labels");
    }
    const fs::path labels_root = label_dir(ds);
    for (const auto& image : list_volumes(image_dir(ds))) {
      const fs::path label = labels_root / image.filename();
      if (!fs::exists(label)) throw Error(ErrorCode::IoFailure, "no label volume for " + image.string());
      jobs.push_back({name, labels, image, label});
    }
  }

  std::vector<VolumeResult> results(jobs.size());
  parallel_for(jobs.size(), config.threads, [&](std::size_t i) { results[i] = ingest_volume(jobs[i], config); });

  IngestSummary summary;
  std::vector<SliceRecord> records;
  SliceIdCounter ids(0);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& d = summary.datasets[jobs[i].dataset];
    ++d.volumes;
    d.degenerate += results[i].degenerate;
    if (!results[i].unknown_labels.empty()) {
      log << "warning: " << jobs[i].label.string() << " has labels outside the map:";
      for (auto code : results[i].unknown_labels) log << ' ' << code;
      log << '\n';
    }
    for (auto& rec : results[i].records) {
      rec.slice_id = ids.next();
      ++d.slices;
      d.tumor_slices += rec.has_tumor() ? 1 : 0;
      records.push_back(std::move(rec));
    }
  }
  for (const auto& [name, _] : config.datasets) summary.datasets.try_emplace(name);
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "no pancreas-bearing slices in any dataset");

  fs::create_directories(config.output_dir);
  write_catalog(records, config.catalog_path());

  log << std::left << std::setw(16) << "Dataset" << std::setw(10) << "Volumes" << std::setw(10) << "Slices"
      << "Tumor slices\n";
  for (const auto& [name, d] : summary.datasets) {
    log << std::setw(16) << name << std::setw(10) << d.volumes << std::setw(10) << d.slices << d.tumor_slices << '\n';
  }
  log << std::setw(26) << "Total" << summary.total_slices() << '\n';
  log << "catalog: " << config.catalog_path().string() << '\n';
  return summary;
}

Catalog load_catalog(const PipelineConfig& config) {
  if (!fs::exists(config.catalog_path())) {
    throw Error(ErrorCode::IoFailure, "no catalog at " + config.catalog_path().string() + " (run ingest first)");
  }
  return Catalog(read_catalog(config.catalog_path()));
}

double stage_threshold(const PipelineConfig& config, Stage stage) {
  switch (stage) {
    case Stage::TumorClassification: return 0.0;
    case Stage::TumorDetection: return config.tumor_threshold;
    default: return config.threshold;
  }
}

StageOptions stage_options(const PipelineConfig& config, double threshold) {
  StageOptions o;
  o.threshold = threshold;
  o.split_seed = config.split_seed;
  o.instruction_seed = config.instruction_seed;
  o.train_fraction = config.train_fraction;
  o.organs = config.organs;
  o.balance_classes = config.balance_classes;
  return o;
}

std::string stage_file_stem(Stage stage, double threshold) {
  std::string stem(to_string(stage));
  if (stage != Stage::TumorClassification) {
    stem += "_t" + std::to_string(static_cast<int>(std::lround(threshold * 100.0)));
  }
  return stem;
}

StageDataset build_stage(const PipelineConfig& config, const Catalog& catalog, Stage stage, double threshold,
                         StageFiles* files) {
  StageDataset ds = build_stage_dataset(catalog.records(), stage, stage_options(config, threshold));
  const fs::path dir = config.datasets_dir();
  fs::create_directories(dir);
  const std::string stem = stage_file_stem(stage, threshold);
  StageFiles written{dir / (stem + "_train.jsonl"), dir / (stem + "_test.jsonl")};
  write_samples_jsonl(ds.samples, written.train, Split::Train);
  write_samples_jsonl(ds.samples, written.test, Split::Test);
  if (files) *files = written;
  return ds;
}

std::vector<SweepEntry> sweep(const PipelineConfig& config, const Catalog& catalog, Stage stage) {
  std::vector<SweepEntry> out;
  for (double t : config.thresholds) {
    SweepEntry e;
    e.threshold = t;
    try {
      e.counts = build_stage(config, catalog, stage, t).report;
    } catch (const Error& err) {
      if (err.code() != ErrorCode::EmptyStage) throw;
      e.error = err.what();
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::string sweep_table(const std::vector<SweepEntry>& entries) {
  std::vector<std::string> datasets;
  for (const auto& e : entries) {
    for (const auto& [name, _] : e.counts) {
      if (std::find(datasets.begin(), datasets.end(), name) == datasets.end()) datasets.push_back(name);
    }
  }
  std::sort(datasets.begin(), datasets.end());
  std::ostringstream os;
  os << std::left << std::setw(11) << "Threshold";
  for (const auto& d : datasets) os << std::setw(14) << (d + " train") << std::setw(14) << (d + " test");
  os << std::setw(13) << "Total train" << "Total test\n";
  for (const auto& e : entries) {
    os << std::setw(11) << threshold_text(e.threshold);
    if (e.error) {
      os << "EmptyStage\n";
      continue;
    }
    std::size_t train = 0;
    std::size_t test = 0;
    for (const auto& d : datasets) {
      const auto it = e.counts.find(d);
      const SplitCounts c = it == e.counts.end() ? SplitCounts{} : it->second;
      os << std::setw(14) << c.train_slices << std::setw(14) << c.test_slices;
      train += c.train_slices;
      test += c.test_slices;
    }
    os << std::setw(13) << train << test << '\n';
  }
  return os.str();
}

ordered_json sweep_to_json(const std::vector<SweepEntry>& entries, Stage stage) {
  ordered_json j;
  j["stage"] = std::string(to_string(stage));
  j["rows"] = ordered_json::array();
  for (const auto& e : entries) {
    ordered_json row;
    row["threshold"] = e.threshold;
    if (e.error) {
      row["error"] = *e.error;
    } else {
      row["datasets"] = ordered_json::object();
      for (const auto& [name, c] : e.counts) {
        row["datasets"][name] = {{"train_volumes", c.train_volumes},
                                 {"test_volumes", c.test_volumes},
                                 {"train_slices", c.train_slices},
                                 {"test_slices", c.test_slices}};
      }
    }
    j["rows"].push_back(row);
  }
  return j;
}

fs::path write_manifest(const PipelineConfig& config, const Catalog& catalog, std::ostream& log) {
  std::vector<ManifestStage> stages;
  for (Stage s : {Stage::PancreasDetection, Stage::TumorClassification, Stage::TumorDetection}) {
    const double t = stage_threshold(config, s);
    StageFiles files;
    const StageDataset ds = build_stage(config, catalog, s, t, &files);
    log << to_string(s) << ": " << ds.samples.size() << " samples -> " << files.train.filename().string() << ", "
        << files.test.filename().string() << '\n';
    stages.push_back({s, t, files.train, files.test});
  }
  const fs::path out = config.datasets_dir() / "manifest.json";
  emit_manifest(stages, out);
  log << "manifest: " << out.string() << '\n';
  return out;
}

std::shared_ptr<const Backend> make_backend(const PipelineConfig& config, std::shared_ptr<const Catalog> catalog) {
  switch (config.backend) {
    case BackendKind::Oracle:
      return std::make_shared<OracleBackend>(std::move(catalog), config.perturbation, config.oracle_seed);
    case BackendKind::Replay:
      if (config.replay_recording.empty()) throw Error(ErrorCode::BadConfig, "replay backend needs replay.recording");
      return std::make_shared<ReplayBackend>(ReplayBackend::load(config.replay_recording));
    case BackendKind::Remote: {
      if (config.remote_url.empty()) throw Error(ErrorCode::BadConfig, "remote backend needs remote.url");
      RemoteConfig rc;
      rc.base_url = config.remote_url;
      rc.path = config.remote_path;
      rc.timeout_s = config.remote_timeout_s;
      rc.catalog = std::move(catalog);
      rc.image_root = config.image_root();
      return std::make_shared<RemoteBackend>(std::move(rc));
    }
  }
  throw Error(ErrorCode::BadConfig, "unknown backend");
}

HeatmapFiles write_heatmaps(std::span<const PredictionRecord> predictions, const Catalog& catalog, Stage stage,
                            const fs::path& out_dir) {
  if (!is_detection(stage)) throw Error(ErrorCode::BadConfig, "heatmaps need a detection stage");
  std::vector<NormalizedBox> gt_boxes;
  std::vector<NormalizedBox> pred_boxes;
  for (const auto& p : predictions) {
    if (p.stage != stage) continue;
    if (const auto gt = ground_truth_box(catalog.at(p.slice_id), stage, p.organ)) gt_boxes.push_back(*gt);
    const ParsedOutput parsed = parse_output(p.raw_text, ExpectedOutput::BoundingBox);
    if (const auto* b = parsed.box()) pred_boxes.push_back(*b);
  }
  if (gt_boxes.empty()) throw Error(ErrorCode::EmptyInput, "no predictions for stage " + std::string(to_string(stage)));
  const HeatmapGrid gt = heatmap(gt_boxes);
  const HeatmapGrid pred = heatmap(pred_boxes);
  fs::create_directories(out_dir);
  HeatmapFiles files{out_dir / "heatmap_gt.png", out_dir / "heatmap_pred.png", out_dir / "heatmap_pair.png",
                     out_dir / "heatmap.json"};
  write_binary_file(files.gt_png, encode_png(render_heatmap(gt)));
  write_binary_file(files.pred_png, encode_png(render_heatmap(pred)));
  write_binary_file(files.pair_png, encode_png(render_heatmap_pair(gt, pred)));
  ordered_json j;
  j["stage"] = std::string(to_string(stage));
  j["gt"] = heatmap_to_json(gt);
  j["prediction"] = heatmap_to_json(pred);
  std::ofstream out(files.json, std::ios::trunc);
  out << j.dump() << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + files.json.string());
  return files;
}

EvaluationArtifacts evaluate(const PipelineConfig& config, const Catalog& catalog, Stage stage,
                             const std::optional<fs::path>& predictions_file, Grouping grouping,
                             const fs::path& out_dir) {
  validate(config);
  EvaluationArtifacts art;
  if (predictions_file) {
    art.predictions = read_predictions_jsonl(*predictions_file);
  } else {
    const StageDataset ds = build_stage_dataset(catalog.records(), stage,
                                                stage_options(config, stage_threshold(config, stage)));
    std::vector<InstructionSample> test;
    for (const auto& s : ds.samples) {
      if (s.split == Split::Test) test.push_back(s);
    }
    if (test.empty()) throw Error(ErrorCode::EmptyStage, "stage " + std::string(to_string(stage)) + " has no test samples");
    std::unique_ptr<ChatService> service;
    if (!config.gateway_url.empty()) {
      service = std::make_unique<GatewayClient>(config.gateway_url, config.remote_timeout_s);
    } else {
      auto shared = std::make_shared<const Catalog>(catalog);
      service = std::make_unique<Gateway>(make_backend(config, shared));
    }
    art.predictions = collect_predictions(test, *service, config.threads);
  }

  AggregateOptions opts;
  opts.grouping = grouping;
  opts.threads = config.threads;
  opts.split_seed = config.split_seed;
  opts.instruction_seed = config.instruction_seed;
  art.report = aggregate(art.predictions, catalog, stage, opts);

  art.directory = out_dir.empty() ? config.reports_dir() / std::string(to_string(stage)) : out_dir;
  fs::create_directories(art.directory);
  {
    std::ofstream json_out(art.directory / "report.json", std::ios::trunc);
    json_out << report_to_json(art.report).dump(2) << '\n';
    std::ofstream text_out(art.directory / "report.txt", std::ios::trunc);
    text_out << report_to_text(art.report);
    if (!json_out || !text_out) throw Error(ErrorCode::IoFailure, "cannot write report in " + art.directory.string());
  }
  if (!predictions_file) write_predictions_jsonl(art.predictions, art.directory / "predictions.jsonl");
  if (is_detection(stage)) write_heatmaps(art.predictions, catalog, stage, art.directory);
  return art;
}

}  // namespace pgt
