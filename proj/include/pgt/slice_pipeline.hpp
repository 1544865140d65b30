#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pgt/volume_io.hpp"

namespace pgt {

inline constexpr double kDefaultClipFraction = 0.02;
inline constexpr std::uint8_t kDegenerateGray = 128;

struct SliceImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
  std::size_t slice_index = 0;
  std::string volume_name;
  /// Set when the clipped slice had no dynamic range (uniform mid-gray output).
  bool degenerate = false;
};

/// z-indices whose mask plane holds at least one pixel of `organ`
/// (for pancreas this includes the tumor code). Throws UnknownOrgan.
std::vector<std::size_t> select_slices(const PairedVolume& paired, std::string_view organ);

/// Linear-interpolated percentile (q in [0,1]) of an ascending sequence.
double percentile_sorted(std::span<const float> sorted, double q);

/// Clips at the clip_fraction/2 and 1 - clip_fraction/2 percentiles, then
/// equalizes the clipped slice onto [0,255] through its own cumulative
/// histogram. clip_fraction must lie in [0, 0.5).
SliceImage preprocess(const SliceView<float>& slice, double clip_fraction = kDefaultClipFraction);

/// "<stem of volume_name>" with .nii/.nii.gz removed.
std::string volume_stem(std::string_view volume_name);

/// "{dataset}_{stem}_{slice_index}.png"
std::string slice_file_name(std::string_view dataset, std::string_view volume_name,
                            std::size_t slice_index);

/// Writes the slice as <out_dir>/<dataset>/<slice_file_name> (8-bit gray)
/// and returns the path. Throws IoFailure.
std::filesystem::path export_png(const SliceImage& image, const std::filesystem::path& out_dir,
                                 std::string_view dataset);

}  // namespace pgt
