#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pgt/volume_io.hpp"

namespace pgt {

inline constexpr std::string_view kDatasetNih = "NIH";
inline constexpr std::string_view kDatasetMsd = "MSD";
inline constexpr std::string_view kDatasetAbdomen = "AbdomenCT-1k";

inline constexpr std::string_view kOrganPancreas = "pancreas";
inline constexpr std::string_view kOrganTumor = "tumor";

/// Label codes shipped with each public dataset. Unknown dataset names get
/// an empty map and must be configured explicitly.
LabelMap default_label_map(std::string_view dataset);

/// Codes that count as `organ` in a mask. Pancreas also matches the tumor
/// code when the map has one, since tumor pixels lie inside the pancreas.
/// Throws UnknownOrgan when the organ is not in the map.
std::vector<std::int32_t> target_codes(const LabelMap& map, std::string_view organ);

/// Organs of the map other than pancreas/tumor (multi-organ datasets).
std::vector<std::string> extra_organs(const LabelMap& map);

}  // namespace pgt
