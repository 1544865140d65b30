#include "pgt/grounding_eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "pgt/errors.hpp"

namespace pgt {

using nlohmann::ordered_json;

namespace {

// Parses "<int>" at text[pos]; advances pos past '>' on success.
std::optional<std::int64_t> parse_angle_int(std::string_view text, std::size_t& pos) {
  std::size_t p = pos;
  if (p >= text.size() || text[p] != '<') return std::nullopt;
  ++p;
  while (p < text.size() && text[p] == ' ') ++p;
  const std::size_t digits_start = p;
  while (p < text.size() && std::isdigit(static_cast<unsigned char>(text[p])) && p - digits_start < 6) ++p;
  if (p == digits_start) return std::nullopt;
  const std::int64_t value = std::stoll(std::string(text.substr(digits_start, p - digits_start)));
  while (p < text.size() && text[p] == ' ') ++p;
  if (p >= text.size() || text[p] != '>') return std::nullopt;
  pos = p + 1;
  return value;
}

ParsedOutput parse_box_text(std::string_view text) {
  bool out_of_range = false;
  for (std::size_t start = text.find('<'); start != std::string_view::npos; start = text.find('<', start + 1)) {
    std::size_t pos = start;
    std::array<std::int64_t, 4> c{};
    std::size_t got = 0;
    for (; got < 4; ++got) {
      while (got > 0 && pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
      const auto v = parse_angle_int(text, pos);
      if (!v) break;
      c[got] = *v;
    }
    if (got < 4) continue;
    if (std::any_of(c.begin(), c.end(), [](std::int64_t v) { return v < 0 || v > 100; })) {
      out_of_range = true;
      continue;
    }
    ParsedOutput out;
    NormalizedBox box{static_cast<std::int32_t>(c[0]), static_cast<std::int32_t>(c[1]),
                      static_cast<std::int32_t>(c[2]), static_cast<std::int32_t>(c[3])};
    if (box.x_left > box.x_right) {
      std::swap(box.x_left, box.x_right);
      out.repaired = true;
    }
    if (box.y_top > box.y_bottom) {
      std::swap(box.y_top, box.y_bottom);
      out.repaired = true;
    }
    out.value = box;
    return out;
  }
  return ParsedOutput{ParseFailure{out_of_range ? "box coordinate outside [0,100]" : "no bounding box in text"}};
}

ParsedOutput parse_yes_no_text(std::string_view text) {
  bool yes = false;
  bool no = false;
  std::string word;
  auto flush = [&] {
    if (word == "yes") yes = true;
    if (word == "no") no = true;
    word.clear();
  };
  for (char ch : text) {
    if (std::isalpha(static_cast<unsigned char>(ch))) {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else {
      flush();
    }
  }
  flush();
  if (yes && no) return ParsedOutput{ParseFailure{"both yes and no in text"}};
  if (yes) return ParsedOutput{YesNo::Yes};
  if (no) return ParsedOutput{YesNo::No};
  return ParsedOutput{ParseFailure{"no yes/no answer in text"}};
}

double box_iou(std::int64_t ax0, std::int64_t ay0, std::int64_t ax1, std::int64_t ay1, std::int64_t bx0,
               std::int64_t by0, std::int64_t bx1, std::int64_t by1) {
  const std::int64_t area_a = (ax1 - ax0) * (ay1 - ay0);
  const std::int64_t area_b = (bx1 - bx0) * (by1 - by0);
  if (area_a == 0 || area_b == 0) {
    // Zero-area boxes only match themselves.
    return (ax0 == bx0 && ay0 == by0 && ax1 == bx1 && ay1 == by1) ? 1.0 : 0.0;
  }
  const std::int64_t iw = std::max<std::int64_t>(0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const std::int64_t ih = std::max<std::int64_t>(0, std::min(ay1, by1) - std::max(ay0, by0));
  const std::int64_t inter = iw * ih;
  const std::int64_t uni = area_a + area_b - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

ParsedOutput parse_output(std::string_view raw_text, ExpectedOutput expected) {
  return expected == ExpectedOutput::BoundingBox ? parse_box_text(raw_text) : parse_yes_no_text(raw_text);
}

ordered_json parsed_to_json(const ParsedOutput& parsed) {
  ordered_json j;
  if (const auto* b = parsed.box()) {
    j["kind"] = "bbox";
    j["bbox"] = {b->x_left, b->y_top, b->x_right, b->y_bottom};
    j["repaired"] = parsed.repaired;
  } else if (const auto* a = parsed.answer()) {
    j["kind"] = "yesno";
    j["answer"] = *a == YesNo::Yes ? "yes" : "no";
  } else {
    j["kind"] = "failure";
    j["reason"] = std::get<ParseFailure>(parsed.value).reason;
  }
  return j;
}

double iou(const NormalizedBox& a, const NormalizedBox& b) {
  return box_iou(a.x_left, a.y_top, a.x_right, a.y_bottom, b.x_left, b.y_top, b.x_right, b.y_bottom);
}

double iou(const PixelBox& a, const PixelBox& b) {
  return box_iou(a.min_x, a.min_y, a.max_x, a.max_y, b.min_x, b.min_y, b.max_x, b.max_y);
}

double iou(const TaggedBox& a, const TaggedBox& b) {
  if (a.space != b.space) {
    throw Error(ErrorCode::CoordinateSpaceMismatch, "pixel and normalized boxes cannot be compared");
  }
  return box_iou(a.coords[0], a.coords[1], a.coords[2], a.coords[3], b.coords[0], b.coords[1], b.coords[2],
                 b.coords[3]);
}

ClassificationScores scores_from_confusion(const ConfusionMatrix& m) {
  ClassificationScores s;
  s.confusion = m;
  const auto ratio = [](std::int64_t num, std::int64_t den) {
    return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
  };
  s.accuracy = ratio(m.tp + m.tn, m.total());
  s.precision = ratio(m.tp, m.tp + m.fp);
  s.recall = ratio(m.tp, m.tp + m.fn);
  s.f1 = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

ClassificationScores classify_metrics(std::span<const std::pair<ParsedOutput, bool>> pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "no classification pairs");
  ConfusionMatrix m;
  std::int64_t failures = 0;
  for (const auto& [parsed, truth] : pairs) {
    const YesNo* answer = parsed.answer();
    if (answer == nullptr) {
      ++failures;
      ++(truth ? m.fn : m.fp);
      continue;
    }
    const bool predicted = *answer == YesNo::Yes;
    if (predicted && truth) ++m.tp;
    else if (predicted && !truth) ++m.fp;
    else if (!predicted && truth) ++m.fn;
    else ++m.tn;
  }
  ClassificationScores s = scores_from_confusion(m);
  s.parse_failures = failures;
  return s;
}

ordered_json prediction_to_json(const PredictionRecord& p) {
  ordered_json j;
  j["slice_id"] = p.slice_id;
  j["stage"] = std::string(to_string(p.stage));
  j["organ"] = p.organ;
  j["raw_text"] = p.raw_text;
  if (p.epoch) j["epoch"] = *p.epoch;
  if (p.threshold) j["threshold"] = *p.threshold;
  return j;
}

PredictionRecord prediction_from_json(const ordered_json& j) {
  try {
    PredictionRecord p;
    p.slice_id = j.at("slice_id").get<std::int64_t>();
    p.stage = parse_stage(j.at("stage").get<std::string>());
    p.organ = j.value("organ", std::string());
    p.raw_text = j.at("raw_text").get<std::string>();
    if (j.contains("epoch")) p.epoch = j.at("epoch").get<std::int64_t>();
    if (j.contains("threshold")) p.threshold = j.at("threshold").get<double>();
    if (p.organ.empty()) {
      p.organ = p.stage == Stage::TumorDetection ? "tumor" : "pancreas";
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("prediction record: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("prediction record: ") + e.what());
  }
}

void write_predictions_jsonl(std::span<const PredictionRecord> predictions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  for (const auto& p : predictions) out << prediction_to_json(p).dump() << '\n';
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

std::vector<PredictionRecord> read_predictions_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(prediction_from_json(ordered_json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::SchemaViolation, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::optional<NormalizedBox> ground_truth_box(const SliceRecord& record, Stage stage, std::string_view organ) {
  std::optional<PixelBox> box;
  switch (stage) {
    case Stage::PancreasDetection: box = record.bbox_pancreas; break;
    case Stage::TumorDetection: box = record.box_for("tumor"); break;
    case Stage::MultiOrganDetection: box = record.box_for(organ); break;
    case Stage::TumorClassification: return std::nullopt;
  }
  if (!box) return std::nullopt;
  return normalize_box(*box, record.width, record.height);
}

double weighted_average(std::span<const GroupStats> groups) {
  double num = 0.0;
  double den = 0.0;
  for (const auto& g : groups) {
    num += g.mean_iou * static_cast<double>(g.count);
    den += static_cast<double>(g.count);
  }
  return den > 0.0 ? num / den : 0.0;
}

std::string_view to_string(Grouping grouping) {
  switch (grouping) {
    case Grouping::Dataset: return "dataset";
    case Grouping::Organ: return "organ";
    case Grouping::Epoch: return "epoch";
    case Grouping::Threshold: return "threshold";
  }
  return "dataset";
}

Grouping parse_grouping(std::string_view name) {
  for (Grouping g : {Grouping::Dataset, Grouping::Organ, Grouping::Epoch, Grouping::Threshold}) {
    if (to_string(g) == name) return g;
  }
  throw Error(ErrorCode::BadConfig, "unknown grouping '" + std::string(name) + "'");
}

namespace {

struct Scored {
  const PredictionRecord* prediction = nullptr;
  const SliceRecord* record = nullptr;
  ParsedOutput parsed;
  double iou = 0.0;
};

std::string threshold_key(double t) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << t;
  return os.str();
}

// Accumulates in the (canonical) order items are added.
struct Accumulator {
  std::int64_t count = 0;
  std::int64_t failures = 0;
  std::int64_t repaired = 0;
  double sum = 0.0;

  void add(const Scored& s) {
    ++count;
    sum += s.iou;
    failures += s.parsed.failed() ? 1 : 0;
    repaired += s.parsed.repaired ? 1 : 0;
  }
  GroupStats stats(std::string key) const {
    return {std::move(key), count, failures, repaired, count > 0 ? sum / static_cast<double>(count) : 0.0};
  }
};

// Dataset order used in tables: NIH, MSD first, then alphabetical.
int dataset_rank(const std::string& name) {
  if (name == "NIH") return 0;
  if (name == "MSD") return 1;
  return 2;
}

std::vector<GroupStats> ordered_groups(const std::map<std::string, Accumulator>& acc, bool by_dataset) {
  std::vector<GroupStats> out;
  for (const auto& [key, a] : acc) out.push_back(a.stats(key));
  if (by_dataset) {
    std::stable_sort(out.begin(), out.end(), [](const GroupStats& a, const GroupStats& b) {
      return dataset_rank(a.key) < dataset_rank(b.key);
    });
  }
  return out;
}

}  // namespace

MetricsReport aggregate(std::span<const PredictionRecord> predictions, const Catalog& catalog, Stage stage,
                        const AggregateOptions& options) {
  std::vector<const PredictionRecord*> selected;
  for (const auto& p : predictions) {
    if (p.stage == stage) selected.push_back(&p);
  }
  if (selected.empty()) {
    throw Error(ErrorCode::EmptyInput, "no predictions for stage " + std::string(to_string(stage)));
  }
  // Canonical order makes every floating-point reduction independent of the
  // input order and of the thread schedule.
  std::stable_sort(selected.begin(), selected.end(), [](const PredictionRecord* a, const PredictionRecord* b) {
    return std::tie(a->slice_id, a->organ, a->epoch, a->threshold) <
           std::tie(b->slice_id, b->organ, b->epoch, b->threshold);
  });

  std::vector<Scored> scored(selected.size());
  for (std::size_t i = 0; i < selected.size(); ++i) {
    scored[i].prediction = selected[i];
    scored[i].record = &catalog.at(selected[i]->slice_id);
  }

  const ExpectedOutput expected = is_detection(stage) ? ExpectedOutput::BoundingBox : ExpectedOutput::YesNo;
  std::vector<std::string> errors(scored.size());
  auto score_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Scored& s = scored[i];
      s.parsed = parse_output(s.prediction->raw_text, expected);
      if (!is_detection(stage)) continue;
      const auto gt = ground_truth_box(*s.record, stage, s.prediction->organ);
      if (!gt) {
        errors[i] = "slice " + std::to_string(s.record->slice_id) + " has no ground truth for " +
                    s.prediction->organ;
        continue;
      }
      s.iou = s.parsed.box() ? iou(*s.parsed.box(), *gt) : 0.0;
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(scored.size())));
  if (threads == 1) {
    score_range(0, scored.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (scored.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(scored.size(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(score_range, begin, end);
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw Error(ErrorCode::MissingTarget, e);
  }

  MetricsReport report;
  report.stage = stage;
  report.grouping = options.grouping;
  report.split_seed = options.split_seed;
  report.instruction_seed = options.instruction_seed;
  report.n_slices = static_cast<std::int64_t>(scored.size());
  for (const auto& s : scored) {
    report.n_parse_failures += s.parsed.failed() ? 1 : 0;
    report.n_repaired += s.parsed.repaired ? 1 : 0;
  }

  if (!is_detection(stage)) {
    std::vector<std::pair<ParsedOutput, bool>> pairs;
    pairs.reserve(scored.size());
    for (const auto& s : scored) pairs.emplace_back(s.parsed, s.record->has_tumor());
    report.classification = classify_metrics(pairs);
    return report;
  }

  Accumulator overall;
  for (const auto& s : scored) overall.add(s);
  report.mean_iou = overall.stats("all").mean_iou;

  if (options.grouping == Grouping::Epoch || options.grouping == Grouping::Threshold) {
    std::map<double, std::map<std::string, Accumulator>> rows;
    for (const auto& s : scored) {
      const bool by_epoch = options.grouping == Grouping::Epoch;
      const auto& tag = by_epoch ? std::optional<double>(s.prediction->epoch ? std::optional<double>(
                                                                                    static_cast<double>(*s.prediction->epoch))
                                                                              : std::nullopt)
                                 : s.prediction->threshold;
      if (!tag) {
        throw Error(ErrorCode::SchemaViolation, "sweep grouping needs an '" + std::string(to_string(options.grouping)) +
                                                    "' field on every prediction");
      }
      rows[*tag][s.record->dataset].add(s);
    }
    for (const auto& [tag, datasets] : rows) {
      SweepRow row;
      row.key = options.grouping == Grouping::Epoch ? std::to_string(static_cast<std::int64_t>(tag)) : threshold_key(tag);
      row.datasets = ordered_groups(datasets, true);
      row.weighted_average = weighted_average(row.datasets);
      report.sweep.push_back(std::move(row));
    }
    std::map<std::string, Accumulator> by_dataset;
    for (const auto& s : scored) by_dataset[s.record->dataset].add(s);
    report.groups = ordered_groups(by_dataset, true);
  } else {
    std::map<std::string, Accumulator> groups;
    for (const auto& s : scored) {
      groups[options.grouping == Grouping::Organ ? s.prediction->organ : s.record->dataset].add(s);
    }
    report.groups = ordered_groups(groups, options.grouping == Grouping::Dataset);
  }
  report.weighted_iou = weighted_average(report.groups);
  return report;
}

namespace {

ordered_json group_json(const GroupStats& g) {
  ordered_json j;
  j["key"] = g.key;
  j["count"] = g.count;
  j["parse_failures"] = g.parse_failures;
  j["repaired"] = g.repaired;
  j["mean_iou"] = g.mean_iou;
  return j;
}

double macro_average(const std::vector<GroupStats>& groups) {
  if (groups.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& g : groups) sum += g.mean_iou;
  return sum / static_cast<double>(groups.size());
}

std::string fixed3(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << v;
  return os.str();
}

}  // namespace

ordered_json report_to_json(const MetricsReport& r) {
  ordered_json j;
  j["schema"] = "metrics-report/v1";
  j["split_seed"] = r.split_seed;
  j["instruction_seed"] = r.instruction_seed;
  j["stage"] = std::string(to_string(r.stage));
  j["grouping"] = std::string(to_string(r.grouping));
  j["n_slices"] = r.n_slices;
  j["n_parse_failures"] = r.n_parse_failures;
  j["n_repaired"] = r.n_repaired;
  if (r.classification) {
    const auto& c = *r.classification;
    j["classification"] = {{"accuracy", c.accuracy},
                           {"precision", c.precision},
                           {"recall", c.recall},
                           {"f1", c.f1},
                           {"tp", c.confusion.tp},
                           {"fp", c.confusion.fp},
                           {"fn", c.confusion.fn},
                           {"tn", c.confusion.tn},
                           {"parse_failures", c.parse_failures}};
    return j;
  }
  j["mean_iou"] = r.mean_iou;
  j["weighted_iou"] = r.weighted_iou;
  j["macro_iou"] = macro_average(r.groups);
  j["groups"] = ordered_json::array();
  for (const auto& g : r.groups) j["groups"].push_back(group_json(g));
  if (!r.sweep.empty()) {
    j["sweep"] = ordered_json::array();
    for (const auto& row : r.sweep) {
      ordered_json jr;
      jr[std::string(to_string(r.grouping))] = row.key;
      jr["datasets"] = ordered_json::array();
      for (const auto& g : row.datasets) jr["datasets"].push_back(group_json(g));
      jr["weighted_average"] = row.weighted_average;
      j["sweep"].push_back(jr);
    }
  }
  return j;
}

std::string report_to_text(const MetricsReport& r) {
  std::ostringstream os;
  os << "stage: " << to_string(r.stage) << "  split_seed: " << r.split_seed
     << "  instruction_seed: " << r.instruction_seed << "\n";
  os << "slices: " << r.n_slices << "  parse failures: " << r.n_parse_failures << "  repaired: " << r.n_repaired
     << "\n\n";
  if (r.classification) {
    const auto& c = *r.classification;
    os << std::left << std::setw(10) << "Accuracy" << std::setw(11) << "Precision" << std::setw(8) << "Recall"
       << "F1 Score\n";
    os << std::setw(10) << fixed3(c.accuracy) << std::setw(11) << fixed3(c.precision) << std::setw(8)
       << fixed3(c.recall) << fixed3(c.f1) << "\n";
    os << "TP " << c.confusion.tp << "  FP " << c.confusion.fp << "  FN " << c.confusion.fn << "  TN "
       << c.confusion.tn << "\n";
    return os.str();
  }
  if (!r.sweep.empty()) {
    std::vector<std::string> datasets;
    for (const auto& g : r.groups) datasets.push_back(g.key);
    std::string label = r.grouping == Grouping::Epoch ? "Epoch" : "Threshold";
    os << std::left << std::setw(11) << label;
    for (const auto& d : datasets) os << std::setw(14) << (d + " IoU");
    os << "Average IoU\n";
    for (const auto& row : r.sweep) {
      os << std::setw(11) << row.key;
      for (const auto& d : datasets) {
        const auto it = std::find_if(row.datasets.begin(), row.datasets.end(),
                                     [&](const GroupStats& g) { return g.key == d; });
        os << std::setw(14) << (it == row.datasets.end() ? std::string("-") : fixed3(it->mean_iou));
      }
      os << fixed3(row.weighted_average) << "\n";
    }
    return os.str();
  }
  const std::string label = r.grouping == Grouping::Organ ? "Organ" : "Dataset";
  os << std::left << std::setw(16) << label << std::setw(8) << "N" << std::setw(10) << "Failures" << "IoU\n";
  for (const auto& g : r.groups) {
    os << std::setw(16) << g.key << std::setw(8) << g.count << std::setw(10) << g.parse_failures
       << fixed3(g.mean_iou) << "\n";
  }
  if (r.grouping == Grouping::Organ) {
    os << std::setw(34) << "Average" << fixed3(macro_average(r.groups)) << "\n";
  } else {
    os << std::setw(34) << "Average (weighted)" << fixed3(r.weighted_iou) << "\n";
  }
  return os.str();
}

HeatmapGrid heatmap(std::span<const NormalizedBox> boxes) {
  HeatmapGrid grid;
  for (const auto& b : boxes) {
    if (!b.valid()) continue;
    for (std::int32_t y = b.y_top; y <= b.y_bottom; ++y) {
      for (std::int32_t x = b.x_left; x <= b.x_right; ++x) {
        grid.cells[static_cast<std::size_t>(y) * kHeatmapSize + static_cast<std::size_t>(x)] += 1.0;
      }
    }
    ++grid.boxes;
  }
  const double peak = *std::max_element(grid.cells.begin(), grid.cells.end());
  if (peak > 0.0) {
    for (double& c : grid.cells) c /= peak;
  }
  return grid;
}

namespace {

// Black -> red -> yellow -> white.
std::array<std::uint8_t, 3> hot_colour(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto channel = [](double t) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(t, 0.0, 1.0))); };
  return {channel(v * 3.0), channel(v * 3.0 - 1.0), channel(v * 3.0 - 2.0)};
}

void blit(const HeatmapGrid& grid, std::size_t scale, RgbImage& image, std::size_t x_offset) {
  for (std::size_t y = 0; y < kHeatmapSize * scale; ++y) {
    for (std::size_t x = 0; x < kHeatmapSize * scale; ++x) {
      const auto c = hot_colour(grid.at(x / scale, y / scale));
      std::uint8_t* px = &image.rgb[3 * (y * image.width + x + x_offset)];
      px[0] = c[0];
      px[1] = c[1];
      px[2] = c[2];
    }
  }
}

}  // namespace

RgbImage render_heatmap(const HeatmapGrid& grid, std::size_t scale) {
  scale = std::max<std::size_t>(scale, 1);
  RgbImage image;
  image.width = kHeatmapSize * scale;
  image.height = kHeatmapSize * scale;
  image.rgb.assign(3 * image.width * image.height, 0);
  blit(grid, scale, image, 0);
  return image;
}

RgbImage render_heatmap_pair(const HeatmapGrid& gt, const HeatmapGrid& pred, std::size_t scale) {
  scale = std::max<std::size_t>(scale, 1);
  const std::size_t side = kHeatmapSize * scale;
  const std::size_t gap = 2 * scale;
  RgbImage image;
  image.width = 2 * side + gap;
  image.height = side;
  image.rgb.assign(3 * image.width * image.height, 255);
  blit(gt, scale, image, 0);
  blit(pred, scale, image, side + gap);
  return image;
}

ordered_json heatmap_to_json(const HeatmapGrid& grid) {
  ordered_json j;
  j["size"] = kHeatmapSize;
  j["boxes"] = grid.boxes;
  ordered_json rows = ordered_json::array();
  for (std::size_t y = 0; y < kHeatmapSize; ++y) {
    ordered_json row = ordered_json::array();
    for (std::size_t x = 0; x < kHeatmapSize; ++x) row.push_back(grid.at(x, y));
    rows.push_back(row);
  }
  j["cells"] = rows;
  return j;
}

}  // namespace pgt
