#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace pgt {

struct Dims {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::size_t nz = 0;

  std::size_t voxel_count() const { return nx * ny * nz; }
  std::size_t plane_size() const { return nx * ny; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

// NIfTI-1 datatype codes accepted by the reader.
enum class NiftiDatatype : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
  Int8 = 256,
  UInt16 = 512,
  UInt32 = 768,
};

std::size_t datatype_size(NiftiDatatype type);
bool is_supported_datatype(std::int16_t code);

/// Header fields kept for provenance. Orientation codes are recorded only;
/// voxels are never reordered, so slice index == raw z index.
struct NiftiInfo {
  NiftiDatatype datatype = NiftiDatatype::Float32;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  float vox_offset = 352.0f;
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  bool byte_swapped = false;
};

/// A 2D view of one axial plane. x is the column (fastest axis), y the row.
template <class T>
class SliceView {
 public:
  SliceView(std::span<const T> data, std::size_t width, std::size_t height)
      : data_(data), width_(width), height_(height) {}

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  const T& at(std::size_t x, std::size_t y) const { return data_[x + width_ * y]; }
  std::span<const T> pixels() const { return data_; }

 private:
  std::span<const T> data_;
  std::size_t width_;
  std::size_t height_;
};

struct VoxelVolume {
  Dims dims;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  /// Linear index x + nx * (y + ny * z); header scaling already applied.
  std::vector<float> intensities;
  std::string source_path;
  std::string volume_name;
  NiftiInfo info;

  float at(std::size_t x, std::size_t y, std::size_t z) const {
    return intensities[x + dims.nx * (y + dims.ny * z)];
  }
  SliceView<float> axial_slice(std::size_t z) const;
};

using LabelMap = std::map<std::string, std::int32_t>;

struct LabelMask {
  Dims dims;
  std::vector<std::int32_t> labels;
  LabelMap label_map;
  std::set<std::int32_t> distinct_codes;
  /// Nonzero codes found in the file but absent from label_map. Not fatal.
  std::set<std::int32_t> unknown_labels;
  std::string source_path;

  std::int32_t at(std::size_t x, std::size_t y, std::size_t z) const {
    return labels[x + dims.nx * (y + dims.ny * z)];
  }
  SliceView<std::int32_t> axial_slice(std::size_t z) const;
};

/// Raw decoded payload (before any scaling), as doubles.
struct NiftiImage {
  Dims dims;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  NiftiInfo info;
  std::vector<double> raw;
};

/// Decodes a NIfTI-1 file (plain or gzip) reading the payload in chunks of
/// `chunk_bytes`. Throws pgt::Error on malformed input.
NiftiImage read_nifti(const std::filesystem::path& path, std::size_t chunk_bytes = 1 << 20);

/// Decodes a fully buffered, uncompressed NIfTI-1 byte image.
NiftiImage parse_nifti(std::span<const std::byte> bytes);

/// Reads the whole (possibly gzip) file into memory without parsing.
std::vector<std::byte> slurp_file(const std::filesystem::path& path);

VoxelVolume load_volume(const std::filesystem::path& path);
LabelMask load_mask(const std::filesystem::path& path, const LabelMap& label_map);

struct NiftiWriteOptions {
  NiftiDatatype datatype = NiftiDatatype::Float32;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  /// Gzip the output (also implied by a ".gz" extension).
  bool gzip = false;
};

/// Minimal valid NIfTI-1 writer (single file, "n+1", vox_offset 352).
/// `raw` holds the stored values; they are cast to the target datatype.
void write_nifti(const std::filesystem::path& path, const Dims& dims, std::span<const double> raw,
                 const NiftiWriteOptions& options = {});

/// Volume and mask with matching dimensions, sliced along z.
class PairedVolume {
 public:
  PairedVolume(std::shared_ptr<const VoxelVolume> volume, std::shared_ptr<const LabelMask> mask);

  std::size_t slice_count() const { return volume_->dims.nz; }
  std::size_t width() const { return volume_->dims.nx; }
  std::size_t height() const { return volume_->dims.ny; }

  SliceView<float> image_slice(std::size_t z) const { return volume_->axial_slice(z); }
  SliceView<std::int32_t> mask_slice(std::size_t z) const { return mask_->axial_slice(z); }

  const VoxelVolume& volume() const { return *volume_; }
  const LabelMask& mask() const { return *mask_; }

 private:
  std::shared_ptr<const VoxelVolume> volume_;
  std::shared_ptr<const LabelMask> mask_;
};

/// Throws DimsMismatch when volume and mask grids differ.
PairedVolume pair(std::shared_ptr<const VoxelVolume> volume, std::shared_ptr<const LabelMask> mask);

}  // namespace pgt
