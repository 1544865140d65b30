#include "pgt/pipeline_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "pgt/errors.hpp"

namespace pgt {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw Error(ErrorCode::BadConfig,
              "'" + std::string(key) + "': '" + std::string(value) + "' is not " + std::string(expected));
}

double to_double(std::string_view key, std::string_view value) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value, "a number");
  return v;
}

std::uint64_t to_u64(std::string_view key, std::string_view value) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value, "a non-negative integer");
  return v;
}

bool to_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "yes" || value == "1") return true;
  if (value == "false" || value == "no" || value == "0") return false;
  bad_value(key, value, "a boolean");
}

std::vector<std::string> to_list(std::string_view value) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const auto comma = value.find(',', start);
    const auto item = trim(value.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// "pancreas:1,tumor:2"
LabelMap to_label_map(std::string_view key, std::string_view value) {
  LabelMap map;
  for (const auto& item : to_list(value)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) bad_value(key, value, "a list of organ:code pairs");
    const std::string organ(trim(std::string_view(item).substr(0, colon)));
    const std::string code(trim(std::string_view(item).substr(colon + 1)));
    if (organ.empty()) bad_value(key, value, "a list of organ:code pairs");
    map[organ] = static_cast<std::int32_t>(to_u64(key, code));
  }
  if (map.empty()) bad_value(key, value, "a non-empty label map");
  return map;
}

using Setter = std::function<void(PipelineConfig&, std::string_view, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"output_dir", [](PipelineConfig& c, auto, auto v) { c.output_dir = std::string(v); }},
      {"clip_fraction", [](PipelineConfig& c, auto k, auto v) { c.clip_fraction = to_double(k, v); }},
      {"threshold", [](PipelineConfig& c, auto k, auto v) { c.threshold = to_double(k, v); }},
      {"tumor_threshold", [](PipelineConfig& c, auto k, auto v) { c.tumor_threshold = to_double(k, v); }},
      {"thresholds",
       [](PipelineConfig& c, auto k, auto v) {
         c.thresholds.clear();
         for (const auto& t : to_list(v)) c.thresholds.push_back(to_double(k, t));
       }},
      {"split_seed", [](PipelineConfig& c, auto k, auto v) { c.split_seed = to_u64(k, v); }},
      {"instruction_seed", [](PipelineConfig& c, auto k, auto v) { c.instruction_seed = to_u64(k, v); }},
      {"train_fraction", [](PipelineConfig& c, auto k, auto v) { c.train_fraction = to_double(k, v); }},
      {"organs", [](PipelineConfig& c, auto, auto v) { c.organs = to_list(v); }},
      {"balance_classes", [](PipelineConfig& c, auto k, auto v) { c.balance_classes = to_bool(k, v); }},
      {"threads", [](PipelineConfig& c, auto k, auto v) { c.threads = static_cast<unsigned>(to_u64(k, v)); }},
      {"backend", [](PipelineConfig& c, auto, auto v) { c.backend = parse_backend_kind(v); }},
      {"oracle.shift_pct", [](PipelineConfig& c, auto k, auto v) { c.perturbation.shift_pct = to_double(k, v); }},
      {"oracle.scale_pct", [](PipelineConfig& c, auto k, auto v) { c.perturbation.scale_pct = to_double(k, v); }},
      {"oracle.flip_to_failure_prob",
       [](PipelineConfig& c, auto k, auto v) { c.perturbation.flip_to_failure_prob = to_double(k, v); }},
      {"oracle.seed", [](PipelineConfig& c, auto k, auto v) { c.oracle_seed = to_u64(k, v); }},
      {"replay.recording", [](PipelineConfig& c, auto, auto v) { c.replay_recording = std::string(v); }},
      {"remote.url", [](PipelineConfig& c, auto, auto v) { c.remote_url = std::string(v); }},
      {"remote.path", [](PipelineConfig& c, auto, auto v) { c.remote_path = std::string(v); }},
      {"remote.timeout_s", [](PipelineConfig& c, auto k, auto v) { c.remote_timeout_s = to_double(k, v); }},
      {"gateway.url", [](PipelineConfig& c, auto, auto v) { c.gateway_url = std::string(v); }},
      {"serve.host", [](PipelineConfig& c, auto, auto v) { c.serve_host = std::string(v); }},
      {"serve.port", [](PipelineConfig& c, auto k, auto v) { c.serve_port = static_cast<int>(to_u64(k, v)); }},
  };
  return table;
}

void apply_setting_at(PipelineConfig& config, std::string_view key, std::string_view value,
                      const std::filesystem::path& base_dir) {
  key = trim(key);
  value = trim(value);
  if (key.starts_with("dataset.")) {
    const std::string_view rest = key.substr(8);
    const auto dot = rest.rfind('.');
    if (dot != std::string_view::npos && dot > 0) {
      const std::string name(rest.substr(0, dot));
      const std::string_view field = rest.substr(dot + 1);
      if (field == "root") {
        std::filesystem::path root{std::string(value)};
        if (root.is_relative() && !base_dir.empty()) root = base_dir / root;
        config.datasets[name].root = root.lexically_normal();
        return;
      }
      if (field == "labels") {
        config.datasets[name].labels = to_label_map(key, value);
        return;
      }
    }
    throw Error(ErrorCode::BadConfig, "unknown key '" + std::string(key) + "' (use dataset.<NAME>.root or .labels)");
  }
  const auto it = setters().find(key);
  if (it == setters().end()) throw Error(ErrorCode::BadConfig, "unknown key '" + std::string(key) + "'");
  it->second(config, key, value);
  if (key == "output_dir" && config.output_dir.is_relative() && !base_dir.empty()) {
    config.output_dir = (base_dir / config.output_dir).lexically_normal();
  }
}

}  // namespace

void apply_setting(PipelineConfig& config, std::string_view key, std::string_view value) {
  apply_setting_at(config, key, value, {});
}

PipelineConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  PipelineConfig config;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::BadConfig, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      apply_setting_at(config, view.substr(0, eq), view.substr(eq + 1), base_dir);
    } catch (const Error& e) {
      throw Error(ErrorCode::BadConfig, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_config(text.str(), path.parent_path());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void validate(const PipelineConfig& c) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::BadConfig, msg); };
  if (!(c.clip_fraction >= 0.0 && c.clip_fraction < 0.5)) fail("clip_fraction must lie in [0, 0.5)");
  auto check_threshold = [&](double t) {
    if (!(t >= 0.0 && t <= 1.0)) fail("thresholds must lie in [0, 1]");
  };
  check_threshold(c.threshold);
  check_threshold(c.tumor_threshold);
  for (double t : c.thresholds) check_threshold(t);
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) fail("train_fraction must lie in (0, 1)");
  if (c.threads == 0) fail("threads must be at least 1");
  if (!(c.perturbation.shift_pct >= 0.0 && c.perturbation.shift_pct <= 100.0)) fail("oracle.shift_pct must lie in [0, 100]");
  if (!(c.perturbation.scale_pct >= 0.0 && c.perturbation.scale_pct <= 100.0)) fail("oracle.scale_pct must lie in [0, 100]");
  if (!(c.perturbation.flip_to_failure_prob >= 0.0 && c.perturbation.flip_to_failure_prob <= 1.0)) {
    fail("oracle.flip_to_failure_prob must lie in [0, 1]");
  }
  if (!(c.remote_timeout_s > 0.0)) fail("remote.timeout_s must be positive");
  if (c.serve_port < 0 || c.serve_port > 65535) fail("serve.port must lie in [0, 65535]");
  if (c.output_dir.empty()) fail("output_dir is empty");
  for (const auto& [name, ds] : c.datasets) {
    if (ds.root.empty()) fail("dataset." + name + ".root is not set");
  }
}

namespace {

std::filesystem::path first_existing(const std::filesystem::path& root, std::initializer_list<const char*> names) {
  for (const char* n : names) {
    if (std::filesystem::is_directory(root / n)) return root / n;
  }
  return root / *names.begin();
}

}  // namespace

std::filesystem::path image_dir(const DatasetConfig& d) { return first_existing(d.root, {"images", "imagesTr"}); }
std::filesystem::path label_dir(const DatasetConfig& d) { return first_existing(d.root, {"labels", "labelsTr"}); }

void require_dataset_roots(const PipelineConfig& c) {
  if (c.datasets.empty()) throw Error(ErrorCode::BadConfig, "no dataset.<NAME>.root configured");
  for (const auto& [name, ds] : c.datasets) {
    if (!std::filesystem::is_directory(ds.root)) {
      throw Error(ErrorCode::BadConfig, "dataset " + name + ": root " + ds.root.string() + " does not exist");
    }
    for (const auto& dir : {image_dir(ds), label_dir(ds)}) {
      if (!std::filesystem::is_directory(dir)) {
        throw Error(ErrorCode::BadConfig, "dataset " + name + ": missing directory " + dir.string());
      }
    }
  }
}

std::vector<std::string> known_setting_keys() {
  std::vector<std::string> keys{"dataset.<NAME>.root", "dataset.<NAME>.labels"};
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

}  // namespace pgt
