// pgt: command-line driver for the slice/annotation/instruction/evaluation pipeline.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration or usage,
// 3 I/O, 4 file format or schema, 5 data content, 6 remote model, 7 service.

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "pgt/errors.hpp"
#include "pgt/gateway_service.hpp"
#include "pgt/pipeline.hpp"
#include "pgt/pipeline_config.hpp"

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

struct GlobalOptions {
  std::string config_file;
  std::vector<std::string> settings;
  std::optional<std::string> output_dir;
  std::optional<std::string> threads;
  std::optional<std::string> split_seed;
  std::optional<std::string> instruction_seed;
};

// Config file first, then --set, then dedicated flags (flags win).
pgt::PipelineConfig resolve(const GlobalOptions& g,
                            const std::vector<std::pair<std::string, std::optional<std::string>>>& flags) {
  pgt::PipelineConfig config = g.config_file.empty() ? pgt::PipelineConfig{} : pgt::load_config(g.config_file);
  for (const auto& kv : g.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw pgt::Error(pgt::ErrorCode::BadConfig, "--set expects KEY=VALUE, got '" + kv + "'");
    pgt::apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  const std::vector<std::pair<std::string, std::optional<std::string>>> common{
      {"output_dir", g.output_dir},
      {"threads", g.threads},
      {"split_seed", g.split_seed},
      {"instruction_seed", g.instruction_seed}};
  for (const auto* list : {&common, &flags}) {
    for (const auto& [key, value] : *list) {
      if (value) pgt::apply_setting(config, key, *value);
    }
  }
  pgt::validate(config);
  return config;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw pgt::Error(pgt::ErrorCode::IoFailure, "cannot write " + path.string());
}

pgt::Grouping default_grouping(pgt::Stage stage) {
  return stage == pgt::Stage::MultiOrganDetection ? pgt::Grouping::Organ : pgt::Grouping::Dataset;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CT slice grounding pipeline: ingest, build, sweep, manifest, serve, evaluate, heatmap"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "pgt 0.1.0");

  GlobalOptions g;
  app.add_option("-c,--config", g.config_file, "Pipeline config file (key = value lines)")->check(CLI::ExistingFile);
  app.add_option("--set", g.settings, "Override a config key, KEY=VALUE (repeatable)");
  app.add_option("-o,--output-dir", g.output_dir, "Output root (catalog, images, datasets, reports)");
  app.add_option("--threads", g.threads, "Worker threads");
  app.add_option("--split-seed", g.split_seed, "Seed of the train/test volume split");
  app.add_option("--instruction-seed", g.instruction_seed, "Seed of the per-sample instruction pick");

  std::string stage_name = "pancreas_detection";
  std::optional<std::string> threshold;
  std::optional<std::string> thresholds;
  std::optional<std::string> clip_fraction;
  std::optional<std::string> backend;
  std::optional<std::string> recording;
  std::optional<std::string> remote_url;
  std::optional<std::string> gateway_url;
  std::optional<std::string> host;
  std::optional<std::string> port;
  std::optional<std::string> flip;
  std::optional<std::string> shift;
  std::optional<std::string> scale;
  std::optional<std::string> grouping_name;
  std::optional<std::string> predictions;
  std::optional<std::string> out_dir;

  auto* ingest = app.add_subcommand("ingest", "Convert volumes to PNG slices and write catalog.json");
  ingest->add_option("--clip-fraction", clip_fraction, "Total histogram clip fraction (default 0.02)");

  auto* build = app.add_subcommand("build", "Write one stage's train/test instruction datasets");
  build->add_option("--stage", stage_name, "pancreas_detection | tumor_classification | tumor_detection | multi_organ_detection");
  build->add_option("--threshold", threshold, "Minimum bbox ratio (default 0.6; tumor detection 0)");

  auto* sweep = app.add_subcommand("sweep", "Build datasets over a threshold range and print the slice-count table");
  sweep->add_option("--stage", stage_name, "Detection stage to sweep");
  sweep->add_option("--thresholds", thresholds, "Comma-separated thresholds (default 0.0..0.9 step 0.1)");

  auto* manifest = app.add_subcommand("manifest", "Build the three cascade stages and the training manifest");
  manifest->add_option("--threshold", threshold, "Pancreas detection threshold (default 0.6)");

  auto* serve = app.add_subcommand("serve", "Run the /v1 HTTP gateway until interrupted");
  serve->add_option("--backend", backend, "oracle | replay | remote");
  serve->add_option("--recording", recording, "Prediction JSON lines for the replay backend");
  serve->add_option("--remote-url", remote_url, "Model server for the remote backend");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)");
  serve->add_option("--flip", flip, "Oracle flip_to_failure_prob");
  serve->add_option("--shift", shift, "Oracle shift_pct");
  serve->add_option("--scale", scale, "Oracle scale_pct");

  auto* evaluate = app.add_subcommand("evaluate", "Score predictions or a backend on a stage's test split");
  evaluate->add_option("--stage", stage_name, "Stage to evaluate");
  evaluate->add_option("--predictions", predictions, "Prediction JSON lines; omit to query the backend")
      ->check(CLI::ExistingFile);
  evaluate->add_option("--backend", backend, "oracle | replay | remote");
  evaluate->add_option("--recording", recording, "Prediction JSON lines for the replay backend");
  evaluate->add_option("--remote-url", remote_url, "Model server for the remote backend");
  evaluate->add_option("--gateway-url", gateway_url, "Query a running gateway instead of an in-process one");
  evaluate->add_option("--threshold", threshold, "Detection threshold of the evaluated dataset");
  evaluate->add_option("--grouping", grouping_name, "dataset | organ | epoch | threshold");
  evaluate->add_option("--flip", flip, "Oracle flip_to_failure_prob");
  evaluate->add_option("--shift", shift, "Oracle shift_pct");
  evaluate->add_option("--scale", scale, "Oracle scale_pct");
  evaluate->add_option("--out", out_dir, "Report directory (default <output>/reports/<stage>)");

  auto* heatmap = app.add_subcommand("heatmap", "Render GT and prediction heatmaps side by side");
  heatmap->add_option("--stage", stage_name, "Detection stage");
  heatmap->add_option("--predictions", predictions, "Prediction JSON lines")->required()->check(CLI::ExistingFile);
  heatmap->add_option("--out", out_dir, "Output directory (default <output>/reports/<stage>)");

  std::string keys = "Config keys:";
  for (const auto& k : pgt::known_setting_keys()) keys += "\n  " + k;
  app.footer(keys + "\n\nExit codes: 0 ok, 1 unexpected, 2 config/usage, 3 I/O, 4 format/schema, 5 data, "
                    "6 remote model, 7 service.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const pgt::Stage stage = pgt::parse_stage(stage_name);
    // --threshold sets the threshold of the stage being built or evaluated.
    const bool tumor_stage = (*build || *evaluate) && stage == pgt::Stage::TumorDetection;
    const std::vector<std::pair<std::string, std::optional<std::string>>> flags{
        {"clip_fraction", clip_fraction},
        {tumor_stage ? "tumor_threshold" : "threshold", threshold},
        {"thresholds", thresholds},
        {"backend", backend},
        {"replay.recording", recording},
        {"remote.url", remote_url},
        {"gateway.url", gateway_url},
        {"serve.host", host},
        {"serve.port", port},
        {"oracle.flip_to_failure_prob", flip},
        {"oracle.shift_pct", shift},
        {"oracle.scale_pct", scale}};
    const pgt::PipelineConfig config = resolve(g, flags);

    if (*ingest) {
      pgt::ingest(config, std::cout);
      return 0;
    }

    const pgt::Catalog catalog = pgt::load_catalog(config);
    const auto threshold_for = [&](pgt::Stage s) { return pgt::stage_threshold(config, s); };

    if (*build) {
      pgt::StageFiles files;
      const auto ds = pgt::build_stage(config, catalog, stage, threshold_for(stage), &files);
      pgt::SweepEntry entry{threshold_for(stage), ds.report, std::nullopt};
      std::cout << pgt::sweep_table({entry});
      std::cout << "train: " << files.train.string() << "\ntest:  " << files.test.string() << '\n';
    } else if (*sweep) {
      const auto entries = pgt::sweep(config, catalog, stage);
      const std::string table = pgt::sweep_table(entries);
      std::cout << "split_seed: " << config.split_seed << "  instruction_seed: " << config.instruction_seed << "\n"
                << table;
      const auto stem = config.datasets_dir() / ("sweep_" + std::string(pgt::to_string(stage)));
      write_text(stem.string() + ".txt", table);
      write_text(stem.string() + ".json", pgt::sweep_to_json(entries, stage).dump(2) + "\n");
    } else if (*manifest) {
      pgt::write_manifest(config, catalog, std::cout);
    } else if (*serve) {
      pgt::ServiceConfig sc;
      sc.host = config.serve_host;
      sc.port = config.serve_port;
      auto shared = std::make_shared<const pgt::Catalog>(catalog);
      sc.catalog = shared;
      sc.image_root = config.image_root();
      sc.backend = pgt::make_backend(config, shared);
      pgt::GatewayService service(std::move(sc));
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      service.start();
      std::cout << "serving " << pgt::to_string(config.backend) << " backend on " << service.base_url() << std::endl;
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      service.stop();
      std::cout << "stopped" << std::endl;
    } else if (*evaluate) {
      const pgt::Grouping grouping = grouping_name ? pgt::parse_grouping(*grouping_name) : default_grouping(stage);
      std::optional<std::filesystem::path> pred_path;
      if (predictions) pred_path = *predictions;
      const auto art = pgt::evaluate(config, catalog, stage, pred_path, grouping,
                                     out_dir ? std::filesystem::path(*out_dir) : std::filesystem::path{});
      std::cout << pgt::report_to_text(art.report) << "report: " << (art.directory / "report.json").string() << '\n';
    } else if (*heatmap) {
      const auto preds = pgt::read_predictions_jsonl(*predictions);
      const auto dir = out_dir ? std::filesystem::path(*out_dir)
                               : config.reports_dir() / std::string(pgt::to_string(stage));
      const auto files = pgt::write_heatmaps(preds, catalog, stage, dir);
      std::cout << "heatmaps: " << files.pair_png.string() << '\n';
    }
    return 0;
  } catch (const pgt::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pgt::exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
