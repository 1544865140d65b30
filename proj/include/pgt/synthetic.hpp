#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pgt/annotation_catalog.hpp"
#include "pgt/volume_io.hpp"

namespace pgt::synthetic {

/// Fills exactly `count` pixels of `code` inside the inclusive box so that
/// the tight box of the filled pixels is the box itself: the top and bottom
/// rows first, then raster order. Pixels already non-zero are skipped.
/// Throws OutOfBounds when the box cannot hold `count` new pixels.
void fill_box(std::vector<std::int32_t>& plane, std::size_t width, const PixelBox& box, std::int64_t count,
              std::int32_t code);

/// 512 x 512 x 113 MSD-style volume "pancreas_228.nii.gz" whose slice 52
/// carries the reference annotation record and slice 60 the volume maxima.
inline constexpr std::size_t kReferenceSlice = 52;
inline constexpr std::size_t kReferenceMaxSlice = 60;
inline constexpr std::int64_t kReferenceSliceId = 603;
PairedVolume reference_volume();

/// The annotation record slice 52 must produce.
SliceRecord reference_record();

struct DatasetSpec {
  std::string dataset = "MSD";
  std::size_t volumes = 2;
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t depth = 24;
  std::uint64_t seed = 1;
  /// Writes tumor code 2 into the middle third of every volume.
  bool tumors = false;
  /// Adds liver/kidney/spleen blobs with the AbdomenCT-1k label codes.
  bool multi_organ = false;
  bool gzip = true;
};

/// Writes <root>/images/<name> and <root>/labels/<name> NIfTI pairs with
/// ellipsoidal organs whose size varies along z. Deterministic in the spec.
/// Returns the volume file names.
std::vector<std::string> write_dataset(const std::filesystem::path& root, const DatasetSpec& spec);

}  // namespace pgt::synthetic
