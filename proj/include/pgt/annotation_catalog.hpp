#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "pgt/volume_io.hpp"

namespace pgt {

/// Tight pixel box, x = column, y = row, origin top-left, inclusive corners.
struct PixelBox {
  std::int32_t min_x = 0;
  std::int32_t min_y = 0;
  std::int32_t max_x = 0;
  std::int32_t max_y = 0;

  /// (max - min) products, without +1: this reproduces the reference
  /// catalog ratios (1025 / 2652 -> 0.39, 289 / 306 -> 0.94).
  std::int64_t area() const {
    return static_cast<std::int64_t>(max_x - min_x) * static_cast<std::int64_t>(max_y - min_y);
  }
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

/// A fraction rounded half-away-from-zero to two decimals, kept in hundredths.
struct Ratio2 {
  std::int32_t hundredths = 0;

  /// round2(numerator / denominator); 0 when the denominator is 0.
  static Ratio2 of(std::int64_t numerator, std::int64_t denominator);
  double value() const { return hundredths / 100.0; }
  bool at_least(double threshold) const;
  friend bool operator==(const Ratio2&, const Ratio2&) = default;
};

struct TumorAnnotation {
  std::int64_t pixels_tumor = 0;
  Ratio2 tumor_pixels_ratio;
  std::int64_t max_pixels_tumor = 0;
  std::optional<PixelBox> bbox_tumor;  // absent on tumor-free slices
  Ratio2 tumor_bbox_ratio;
  std::int64_t max_bbox_tumor = 0;
  friend bool operator==(const TumorAnnotation&, const TumorAnnotation&) = default;
};

struct SliceRecord {
  std::string dataset;
  std::string volume_name;
  std::int64_t slice_id = 0;
  std::int64_t slice_index = 0;
  std::int64_t slice_count = 0;
  std::int64_t pixels_pancreas = 0;
  Ratio2 pancreas_pixels_ratio;
  std::int64_t max_pixels_pancreas = 0;
  PixelBox bbox_pancreas;
  Ratio2 pancreas_bbox_ratio;
  std::int64_t max_bbox_pancreas = 0;
  /// Present only for datasets that annotate tumors (MSD).
  std::optional<TumorAnnotation> tumor;
  /// Boxes of the other annotated organs (multi-organ datasets), keyed by
  /// organ name and serialized as "bbox_<organ>".
  std::map<std::string, std::optional<PixelBox>> organ_boxes;
  std::int64_t width = 0;
  std::int64_t height = 0;

  bool has_tumor() const { return tumor && tumor->pixels_tumor > 0; }
  /// Ground-truth box for an organ name ("pancreas", "tumor", or an extra organ).
  std::optional<PixelBox> box_for(std::string_view organ) const;

  friend bool operator==(const SliceRecord&, const SliceRecord&) = default;
};

/// Tight box over the pixels whose label is in `codes`.
std::optional<PixelBox> extract_bbox(const SliceView<std::int32_t>& mask_slice,
                                     std::span<const std::int32_t> codes);

std::int64_t count_pixels(const SliceView<std::int32_t>& mask_slice,
                          std::span<const std::int32_t> codes);

/// Per-volume maxima, the first of the two catalog passes.
struct VolumeStats {
  std::int64_t max_pixels_pancreas = 0;
  std::int64_t max_bbox_pancreas = 0;
  bool has_tumor_code = false;
  std::int64_t max_pixels_tumor = 0;
  std::int64_t max_bbox_tumor = 0;
};

VolumeStats compute_volume_stats(const PairedVolume& paired);

/// Monotone global slice id source; the only shared resource when volumes
/// are catalogued in parallel, so ids are assigned after per-volume work.
class SliceIdCounter {
 public:
  explicit SliceIdCounter(std::int64_t first = 0) : next_(first) {}
  std::int64_t next() { return next_++; }
  std::int64_t peek() const { return next_; }

 private:
  std::int64_t next_;
};

/// Builds one record. Throws MissingTarget when the slice holds no pancreas.
SliceRecord build_record(const PairedVolume& paired, const VolumeStats& stats,
                         std::size_t slice_index, std::string_view dataset, std::int64_t slice_id);

/// Catalogues every pancreas-bearing slice of one volume (both passes).
std::vector<SliceRecord> catalog_volume(const PairedVolume& paired, std::string_view dataset,
                                        SliceIdCounter& ids);

/// Lookup by slice id over an immutable record list.
class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<SliceRecord> records);

  const std::vector<SliceRecord>& records() const { return records_; }
  const SliceRecord* find(std::int64_t slice_id) const;
  /// Throws UnknownSliceId.
  const SliceRecord& at(std::int64_t slice_id) const;
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

 private:
  std::vector<SliceRecord> records_;
  std::unordered_map<std::int64_t, std::size_t> by_id_;
};

nlohmann::ordered_json record_to_json_value(const SliceRecord& record);
SliceRecord record_from_json_value(const nlohmann::ordered_json& value);
std::string record_to_json(const SliceRecord& record, int indent = 4);
/// Throws SchemaViolation on missing keys, wrong types, or invalid values.
SliceRecord record_from_json(std::string_view text);

/// JSON array of records with the reference key names; tumor keys only on
/// records that carry tumor annotations. Throws IoFailure or EmptyInput.
void write_catalog(std::span<const SliceRecord> records, const std::filesystem::path& path);
/// Throws IoFailure or SchemaViolation.
std::vector<SliceRecord> read_catalog(const std::filesystem::path& path);

}  // namespace pgt
