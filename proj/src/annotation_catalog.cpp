#include "pgt/annotation_catalog.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pgt/errors.hpp"
#include "pgt/labels.hpp"
#include "pgt/slice_pipeline.hpp"

namespace pgt {

using nlohmann::ordered_json;

Ratio2 Ratio2::of(std::int64_t numerator, std::int64_t denominator) {
  if (denominator <= 0 || numerator <= 0) return Ratio2{0};
  // Exact round-half-away-from-zero of 100 * n / d on non-negative integers.
  const std::int64_t h = (200 * numerator + denominator) / (2 * denominator);
  return Ratio2{static_cast<std::int32_t>(h)};
}

bool Ratio2::at_least(double threshold) const {
  return static_cast<double>(hundredths) >= threshold * 100.0 - 1e-9;
}

std::optional<PixelBox> SliceRecord::box_for(std::string_view organ) const {
  if (organ == kOrganPancreas) return bbox_pancreas;
  if (organ == kOrganTumor) {
    if (tumor) return tumor->bbox_tumor;
    return std::nullopt;
  }
  const auto it = organ_boxes.find(std::string(organ));
  if (it == organ_boxes.end()) return std::nullopt;
  return it->second;
}

std::optional<PixelBox> extract_bbox(const SliceView<std::int32_t>& mask_slice,
                                     std::span<const std::int32_t> codes) {
  std::optional<PixelBox> box;
  for (std::size_t y = 0; y < mask_slice.height(); ++y) {
    for (std::size_t x = 0; x < mask_slice.width(); ++x) {
      const std::int32_t v = mask_slice.at(x, y);
      if (std::find(codes.begin(), codes.end(), v) == codes.end()) continue;
      const auto xi = static_cast<std::int32_t>(x);
      const auto yi = static_cast<std::int32_t>(y);
      if (!box) {
        box = PixelBox{xi, yi, xi, yi};
      } else {
        box->min_x = std::min(box->min_x, xi);
        box->max_x = std::max(box->max_x, xi);
        box->min_y = std::min(box->min_y, yi);
        box->max_y = std::max(box->max_y, yi);
      }
    }
  }
  return box;
}

std::int64_t count_pixels(const SliceView<std::int32_t>& mask_slice,
                          std::span<const std::int32_t> codes) {
  const auto px = mask_slice.pixels();
  return std::count_if(px.begin(), px.end(), [&](std::int32_t v) {
    return std::find(codes.begin(), codes.end(), v) != codes.end();
  });
}

namespace {

struct OrganCodes {
  std::vector<std::int32_t> pancreas;  // pancreas plus tumor when present
  std::vector<std::int32_t> tumor;     // empty when the map has no tumor
};

OrganCodes organ_codes(const LabelMap& map) {
  OrganCodes codes;
  codes.pancreas = target_codes(map, kOrganPancreas);
  if (const auto it = map.find(std::string(kOrganTumor)); it != map.end()) {
    codes.tumor = {it->second};
  }
  return codes;
}

}  // namespace

VolumeStats compute_volume_stats(const PairedVolume& paired) {
  const OrganCodes codes = organ_codes(paired.mask().label_map);
  VolumeStats stats;
  stats.has_tumor_code = !codes.tumor.empty();
  for (std::size_t z = 0; z < paired.slice_count(); ++z) {
    const auto plane = paired.mask_slice(z);
    if (const auto box = extract_bbox(plane, codes.pancreas)) {
      stats.max_pixels_pancreas = std::max(stats.max_pixels_pancreas, count_pixels(plane, codes.pancreas));
      stats.max_bbox_pancreas = std::max(stats.max_bbox_pancreas, box->area());
    }
    if (stats.has_tumor_code) {
      if (const auto box = extract_bbox(plane, codes.tumor)) {
        stats.max_pixels_tumor = std::max(stats.max_pixels_tumor, count_pixels(plane, codes.tumor));
        stats.max_bbox_tumor = std::max(stats.max_bbox_tumor, box->area());
      }
    }
  }
  return stats;
}

SliceRecord build_record(const PairedVolume& paired, const VolumeStats& stats,
                         std::size_t slice_index, std::string_view dataset, std::int64_t slice_id) {
  if (slice_index >= paired.slice_count()) {
    throw Error(ErrorCode::MissingTarget, "slice index " + std::to_string(slice_index) + " out of range");
  }
  const LabelMap& map = paired.mask().label_map;
  const OrganCodes codes = organ_codes(map);
  const auto plane = paired.mask_slice(slice_index);
  const auto pancreas_box = extract_bbox(plane, codes.pancreas);
  if (!pancreas_box) {
    throw Error(ErrorCode::MissingTarget, "slice " + std::to_string(slice_index) + " of " +
                                              paired.volume().volume_name + " has no pancreas pixels");
  }

  SliceRecord r;
  r.dataset = std::string(dataset);
  r.volume_name = paired.volume().volume_name;
  r.slice_id = slice_id;
  r.slice_index = static_cast<std::int64_t>(slice_index);
  r.slice_count = static_cast<std::int64_t>(paired.slice_count());
  r.pixels_pancreas = count_pixels(plane, codes.pancreas);
  r.max_pixels_pancreas = stats.max_pixels_pancreas;
  r.pancreas_pixels_ratio = Ratio2::of(r.pixels_pancreas, stats.max_pixels_pancreas);
  r.bbox_pancreas = *pancreas_box;
  r.max_bbox_pancreas = stats.max_bbox_pancreas;
  r.pancreas_bbox_ratio = Ratio2::of(pancreas_box->area(), stats.max_bbox_pancreas);

  if (stats.has_tumor_code) {
    TumorAnnotation t;
    t.pixels_tumor = count_pixels(plane, codes.tumor);
    t.max_pixels_tumor = stats.max_pixels_tumor;
    t.tumor_pixels_ratio = Ratio2::of(t.pixels_tumor, stats.max_pixels_tumor);
    t.bbox_tumor = extract_bbox(plane, codes.tumor);
    t.max_bbox_tumor = stats.max_bbox_tumor;
    t.tumor_bbox_ratio = t.bbox_tumor ? Ratio2::of(t.bbox_tumor->area(), stats.max_bbox_tumor) : Ratio2{0};
    r.tumor = t;
  }
  for (const std::string& organ : extra_organs(map)) {
    const std::int32_t code = map.at(organ);
    r.organ_boxes[organ] = extract_bbox(plane, std::span<const std::int32_t>(&code, 1));
  }
  r.width = static_cast<std::int64_t>(paired.width());
  r.height = static_cast<std::int64_t>(paired.height());
  return r;
}

std::vector<SliceRecord> catalog_volume(const PairedVolume& paired, std::string_view dataset,
                                        SliceIdCounter& ids) {
  const VolumeStats stats = compute_volume_stats(paired);
  std::vector<SliceRecord> out;
  for (std::size_t z : select_slices(paired, kOrganPancreas)) {
    out.push_back(build_record(paired, stats, z, dataset, ids.next()));
  }
  return out;
}

Catalog::Catalog(std::vector<SliceRecord> records) : records_(std::move(records)) {
  by_id_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!by_id_.emplace(records_[i].slice_id, i).second) {
      throw Error(ErrorCode::SchemaViolation, "duplicate slice_id " + std::to_string(records_[i].slice_id));
    }
  }
}

const SliceRecord* Catalog::find(std::int64_t slice_id) const {
  const auto it = by_id_.find(slice_id);
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

const SliceRecord& Catalog::at(std::int64_t slice_id) const {
  if (const SliceRecord* r = find(slice_id)) return *r;
  throw Error(ErrorCode::UnknownSliceId, "slice_id " + std::to_string(slice_id) + " not in catalog");
}

namespace {

ordered_json box_json(const std::optional<PixelBox>& box) {
  if (!box) return nullptr;
  return ordered_json::array({box->min_x, box->min_y, box->max_x, box->max_y});
}

[[noreturn]] void schema_error(const std::string& what) { throw Error(ErrorCode::SchemaViolation, what); }

const ordered_json& require(const ordered_json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) schema_error(std::string("missing key '") + key + "'");
  return *it;
}

std::int64_t require_int(const ordered_json& obj, const char* key) {
  const auto& v = require(obj, key);
  if (!v.is_number_integer()) schema_error(std::string("key '") + key + "' must be an integer");
  return v.get<std::int64_t>();
}

std::string require_string(const ordered_json& obj, const char* key) {
  const auto& v = require(obj, key);
  if (!v.is_string()) schema_error(std::string("key '") + key + "' must be a string");
  return v.get<std::string>();
}

Ratio2 require_ratio(const ordered_json& obj, const char* key) {
  const auto& v = require(obj, key);
  if (!v.is_number()) schema_error(std::string("key '") + key + "' must be a number");
  const double d = v.get<double>();
  if (!(d >= 0.0 && d <= 1.0)) schema_error(std::string("key '") + key + "' outside [0,1]");
  const double scaled = d * 100.0;
  const double rounded = std::round(scaled);
  if (std::abs(scaled - rounded) > 1e-6) {
    schema_error(std::string("key '") + key + "' has more than two decimals");
  }
  return Ratio2{static_cast<std::int32_t>(rounded)};
}

std::optional<PixelBox> parse_box(const ordered_json& v, const std::string& key, bool nullable) {
  if (v.is_null() && nullable) return std::nullopt;
  if (!v.is_array() || v.size() != 4) schema_error("key '" + key + "' must be a 4-element array");
  std::array<std::int32_t, 4> c{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!v[i].is_number_integer()) schema_error("key '" + key + "' must hold integers");
    c[i] = v[i].get<std::int32_t>();
  }
  if (c[0] > c[2] || c[1] > c[3]) schema_error("key '" + key + "' has min > max");
  return PixelBox{c[0], c[1], c[2], c[3]};
}

constexpr const char* kTumorKeys[] = {"pixels_tumor",   "tumor_pixels_ratio", "max_pixels_tumor",
                                      "bbox_tumor",     "tumor_bbox_ratio",   "max_bbox_tumor"};

}  // namespace

ordered_json record_to_json_value(const SliceRecord& r) {
  ordered_json j;
  j["dataset"] = r.dataset;
  j["volume_name"] = r.volume_name;
  j["slice_id"] = r.slice_id;
  j["slice_index"] = r.slice_index;
  j["slice_count"] = r.slice_count;
  j["pixels_pancreas"] = r.pixels_pancreas;
  j["pancreas_pixels_ratio"] = r.pancreas_pixels_ratio.value();
  j["max_pixels_pancreas"] = r.max_pixels_pancreas;
  if (r.tumor) {
    j["pixels_tumor"] = r.tumor->pixels_tumor;
    j["tumor_pixels_ratio"] = r.tumor->tumor_pixels_ratio.value();
    j["max_pixels_tumor"] = r.tumor->max_pixels_tumor;
  }
  j["bbox_pancreas"] = box_json(r.bbox_pancreas);
  j["pancreas_bbox_ratio"] = r.pancreas_bbox_ratio.value();
  j["max_bbox_pancreas"] = r.max_bbox_pancreas;
  if (r.tumor) {
    j["bbox_tumor"] = box_json(r.tumor->bbox_tumor);
    j["tumor_bbox_ratio"] = r.tumor->tumor_bbox_ratio.value();
    j["max_bbox_tumor"] = r.tumor->max_bbox_tumor;
  }
  for (const auto& [organ, box] : r.organ_boxes) j["bbox_" + organ] = box_json(box);
  j["width"] = r.width;
  j["height"] = r.height;
  return j;
}

SliceRecord record_from_json_value(const ordered_json& j) {
  if (!j.is_object()) schema_error("record must be a JSON object");
  SliceRecord r;
  r.dataset = require_string(j, "dataset");
  r.volume_name = require_string(j, "volume_name");
  r.slice_id = require_int(j, "slice_id");
  r.slice_index = require_int(j, "slice_index");
  r.slice_count = require_int(j, "slice_count");
  r.pixels_pancreas = require_int(j, "pixels_pancreas");
  r.pancreas_pixels_ratio = require_ratio(j, "pancreas_pixels_ratio");
  r.max_pixels_pancreas = require_int(j, "max_pixels_pancreas");
  r.bbox_pancreas = *parse_box(require(j, "bbox_pancreas"), "bbox_pancreas", false);
  r.pancreas_bbox_ratio = require_ratio(j, "pancreas_bbox_ratio");
  r.max_bbox_pancreas = require_int(j, "max_bbox_pancreas");
  r.width = require_int(j, "width");
  r.height = require_int(j, "height");

  std::size_t tumor_keys = 0;
  for (const char* k : kTumorKeys) tumor_keys += j.contains(k) ? 1 : 0;
  if (tumor_keys != 0 && tumor_keys != std::size(kTumorKeys)) {
    schema_error("tumor keys must be all present or all absent");
  }
  if (tumor_keys != 0) {
    TumorAnnotation t;
    t.pixels_tumor = require_int(j, "pixels_tumor");
    t.tumor_pixels_ratio = require_ratio(j, "tumor_pixels_ratio");
    t.max_pixels_tumor = require_int(j, "max_pixels_tumor");
    t.bbox_tumor = parse_box(require(j, "bbox_tumor"), "bbox_tumor", true);
    t.tumor_bbox_ratio = require_ratio(j, "tumor_bbox_ratio");
    t.max_bbox_tumor = require_int(j, "max_bbox_tumor");
    if (t.pixels_tumor > r.pixels_pancreas) schema_error("pixels_tumor exceeds pixels_pancreas");
    r.tumor = t;
  }
  for (const auto& [key, value] : j.items()) {
    if (key.rfind("bbox_", 0) != 0 || key == "bbox_pancreas" || key == "bbox_tumor") continue;
    r.organ_boxes[key.substr(5)] = parse_box(value, key, true);
  }
  if (r.pixels_pancreas < 0 || r.slice_index < 0 || r.slice_index >= r.slice_count) {
    schema_error("inconsistent counts in record " + std::to_string(r.slice_id));
  }
  return r;
}

std::string record_to_json(const SliceRecord& record, int indent) {
  return record_to_json_value(record).dump(indent);
}

SliceRecord record_from_json(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    schema_error(e.what());
  }
  return record_from_json_value(j);
}

void write_catalog(std::span<const SliceRecord> records, const std::filesystem::path& path) {
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "refusing to write an empty catalog");
  ordered_json arr = ordered_json::array();
  for (const SliceRecord& r : records) arr.push_back(record_to_json_value(r));
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << arr.dump(4) << '\n';
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

std::vector<SliceRecord> read_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  ordered_json arr;
  try {
    arr = ordered_json::parse(buffer.str());
  } catch (const nlohmann::json::parse_error& e) {
    schema_error(path.string() + ": " + e.what());
  }
  if (!arr.is_array()) schema_error(path.string() + ": catalog must be a JSON array");
  std::vector<SliceRecord> records;
  records.reserve(arr.size());
  for (const auto& item : arr) records.push_back(record_from_json_value(item));
  return records;
}

}  // namespace pgt
