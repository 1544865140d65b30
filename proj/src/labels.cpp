#include "pgt/labels.hpp"

#include "pgt/errors.hpp"

namespace pgt {

LabelMap default_label_map(std::string_view dataset) {
  if (dataset == kDatasetNih) return {{"pancreas", 1}};
  if (dataset == kDatasetMsd) return {{"pancreas", 1}, {"tumor", 2}};
  if (dataset == kDatasetAbdomen) return {{"liver", 1}, {"kidney", 2}, {"spleen", 3}, {"pancreas", 4}};
  return {};
}

std::vector<std::int32_t> target_codes(const LabelMap& map, std::string_view organ) {
  const auto it = map.find(std::string(organ));
  if (it == map.end()) {
    throw Error(ErrorCode::UnknownOrgan, "organ '" + std::string(organ) + "' not in label map");
  }
  std::vector<std::int32_t> codes{it->second};
  if (organ == kOrganPancreas) {
    if (const auto tumor = map.find(std::string(kOrganTumor)); tumor != map.end()) {
      codes.push_back(tumor->second);
    }
  }
  return codes;
}

std::vector<std::string> extra_organs(const LabelMap& map) {
  std::vector<std::string> out;
  for (const auto& [organ, code] : map) {
    if (organ != kOrganPancreas && organ != kOrganTumor) out.push_back(organ);
  }
  return out;
}

}  // namespace pgt
