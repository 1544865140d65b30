#include "pgt/slice_pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "pgt/errors.hpp"
#include "pgt/labels.hpp"
#include "pgt/png_io.hpp"

namespace pgt {

std::vector<std::size_t> select_slices(const PairedVolume& paired, std::string_view organ) {
  const std::vector<std::int32_t> codes = target_codes(paired.mask().label_map, organ);
  std::vector<std::size_t> out;
  for (std::size_t z = 0; z < paired.slice_count(); ++z) {
    const auto plane = paired.mask_slice(z).pixels();
    const bool hit = std::any_of(plane.begin(), plane.end(), [&](std::int32_t v) {
      return std::find(codes.begin(), codes.end(), v) != codes.end();
    });
    if (hit) out.push_back(z);
  }
  return out;
}

double percentile_sorted(std::span<const float> sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return static_cast<double>(sorted[lo]) +
         frac * (static_cast<double>(sorted[hi]) - static_cast<double>(sorted[lo]));
}

SliceImage preprocess(const SliceView<float>& slice, double clip_fraction) {
  if (!(clip_fraction >= 0.0 && clip_fraction < 0.5)) {
    throw Error(ErrorCode::BadConfig, "clip_fraction must be in [0, 0.5)");
  }
  SliceImage image;
  image.width = slice.width();
  image.height = slice.height();
  const auto src = slice.pixels();
  const std::size_t n = src.size();
  image.pixels.assign(n, kDegenerateGray);
  if (n == 0) {
    image.degenerate = true;
    return image;
  }

  std::vector<float> sorted(src.begin(), src.end());
  std::sort(sorted.begin(), sorted.end());
  const double tail = clip_fraction / 2.0;
  const double low = percentile_sorted(sorted, tail);
  const double high = percentile_sorted(sorted, 1.0 - tail);
  if (!(high > low)) {
    image.degenerate = true;
    return image;
  }

  std::vector<double> clipped(n);
  for (std::size_t i = 0; i < n; ++i) {
    clipped[i] = std::clamp(static_cast<double>(src[i]), low, high);
  }
  // Histogram over the distinct clipped values; clipping is monotone so the
  // sorted raw order is also the sorted clipped order.
  std::vector<double> levels;
  std::vector<std::size_t> cdf;
  levels.reserve(n);
  cdf.reserve(n);
  std::size_t running = 0;
  for (float raw : sorted) {
    const double v = std::clamp(static_cast<double>(raw), low, high);
    ++running;
    if (!levels.empty() && levels.back() == v) {
      cdf.back() = running;
    } else {
      levels.push_back(v);
      cdf.push_back(running);
    }
  }
  const std::size_t cdf_min = cdf.front();
  const double denom = static_cast<double>(n - cdf_min);
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = std::lower_bound(levels.begin(), levels.end(), clipped[i]);
    const std::size_t c = cdf[static_cast<std::size_t>(it - levels.begin())];
    const double mapped = 255.0 * static_cast<double>(c - cdf_min) / denom;
    image.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::floor(mapped + 0.5), 0.0, 255.0));
  }
  return image;
}

std::string volume_stem(std::string_view volume_name) {
  std::string name(volume_name);
  for (std::string_view ext : {".nii.gz", ".nii", ".img.gz", ".img", ".hdr.gz", ".hdr"}) {
    if (name.size() > ext.size() && name.compare(name.size() - ext.size(), ext.size(), ext) == 0) {
      return name.substr(0, name.size() - ext.size());
    }
  }
  return name;
}

std::string slice_file_name(std::string_view dataset, std::string_view volume_name,
                            std::size_t slice_index) {
  return std::string(dataset) + "_" + volume_stem(volume_name) + "_" + std::to_string(slice_index) +
         ".png";
}

std::filesystem::path export_png(const SliceImage& image, const std::filesystem::path& out_dir,
                                 std::string_view dataset) {
  const std::filesystem::path dir = out_dir / std::string(dataset);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  const std::filesystem::path path = dir / slice_file_name(dataset, image.volume_name, image.slice_index);
  const GrayImage gray{image.width, image.height, image.pixels};
  write_binary_file(path, encode_png(gray));
  return path;
}

}  // namespace pgt
