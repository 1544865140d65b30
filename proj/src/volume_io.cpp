#include "pgt/volume_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "pgt/errors.hpp"

namespace pgt {

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kSingleFileOffset = 352;

// Byte offsets into the 348-byte NIfTI-1 header.
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffMagic = 344;

template <class T>
T byteswap_value(T value) {
  auto bytes = std::bit_cast<std::array<std::byte, sizeof(T)>>(value);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

template <class T>
T read_field(const std::byte* base, std::size_t offset, bool swap) {
  T value;
  std::memcpy(&value, base + offset, sizeof(T));
  return swap ? byteswap_value(value) : value;
}

template <class T>
void write_field(std::byte* base, std::size_t offset, T value) {
  std::memcpy(base + offset, &value, sizeof(T));
}

// gzread passes plain files through unchanged, so one source covers both.
class GzSource {
 public:
  explicit GzSource(const std::filesystem::path& path) : file_(gzopen(path.c_str(), "rb")) {
    if (file_ == nullptr) {
      throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    }
  }
  GzSource(const GzSource&) = delete;
  GzSource& operator=(const GzSource&) = delete;
  ~GzSource() { gzclose(file_); }

  std::size_t read(std::byte* out, std::size_t n) {
    std::size_t total = 0;
    while (total < n) {
      const auto want = static_cast<unsigned>(std::min<std::size_t>(n - total, 1u << 30));
      const int got = gzread(file_, out + total, want);
      if (got < 0) {
        int err = 0;
        const char* msg = gzerror(file_, &err);
        throw Error(ErrorCode::TruncatedData, std::string("decompression failed: ") + msg);
      }
      if (got == 0) break;
      total += static_cast<std::size_t>(got);
    }
    return total;
  }

 private:
  gzFile file_;
};

struct ParsedHeader {
  Dims dims;
  std::array<double, 3> spacing{};
  NiftiInfo info;
  bool paired_file = false;  // "ni1": payload lives in a separate .img
  std::size_t payload_offset = 0;
};

ParsedHeader parse_header(std::span<const std::byte> header) {
  if (header.size() < kHeaderSize) {
    throw Error(ErrorCode::MalformedHeader, "file shorter than the 348-byte header");
  }
  const std::byte* base = header.data();
  std::int32_t sizeof_hdr = read_field<std::int32_t>(base, 0, false);
  bool swap = false;
  if (sizeof_hdr != 348) {
    if (byteswap_value(sizeof_hdr) == 348) {
      swap = true;
    } else if (sizeof_hdr == 540 || byteswap_value(sizeof_hdr) == 540) {
      throw Error(ErrorCode::MalformedHeader, "NIfTI-2 files are not supported");
    } else {
      throw Error(ErrorCode::MalformedHeader, "sizeof_hdr is " + std::to_string(sizeof_hdr));
    }
  }

  char magic[4];
  std::memcpy(magic, base + kOffMagic, 4);
  ParsedHeader out;
  if (std::memcmp(magic, "n+1\0", 4) == 0) {
    out.paired_file = false;
  } else if (std::memcmp(magic, "ni1\0", 4) == 0) {
    out.paired_file = true;
  } else {
    throw Error(ErrorCode::MalformedHeader, "bad magic");
  }

  std::array<std::int16_t, 8> dim{};
  for (std::size_t i = 0; i < 8; ++i) {
    dim[i] = read_field<std::int16_t>(base, kOffDim + 2 * i, swap);
  }
  if (dim[0] < 1 || dim[0] > 7) {
    throw Error(ErrorCode::MalformedHeader, "dim[0] out of range: " + std::to_string(dim[0]));
  }
  std::array<std::size_t, 3> extent{1, 1, 1};
  for (int i = 1; i <= dim[0]; ++i) {
    if (dim[i] < 1) {
      throw Error(ErrorCode::MalformedHeader, "non-positive dim[" + std::to_string(i) + "]");
    }
    if (i <= 3) {
      extent[i - 1] = static_cast<std::size_t>(dim[i]);
    } else if (dim[i] != 1) {
      throw Error(ErrorCode::MalformedHeader, "only 3D volumes are supported");
    }
  }
  out.dims = {extent[0], extent[1], extent[2]};

  const auto type_code = read_field<std::int16_t>(base, kOffDatatype, swap);
  if (!is_supported_datatype(type_code)) {
    throw Error(ErrorCode::UnsupportedDatatype, "datatype code " + std::to_string(type_code));
  }
  out.info.datatype = static_cast<NiftiDatatype>(type_code);
  const auto bitpix = read_field<std::int16_t>(base, kOffBitpix, swap);
  if (static_cast<std::size_t>(bitpix) != 8 * datatype_size(out.info.datatype)) {
    throw Error(ErrorCode::MalformedHeader, "bitpix does not match datatype");
  }

  for (std::size_t i = 0; i < 3; ++i) {
    const float p = read_field<float>(base, kOffPixdim + 4 * (i + 1), swap);
    out.spacing[i] = (std::isfinite(p) && p > 0.0f) ? static_cast<double>(p) : 1.0;
  }
  out.info.vox_offset = read_field<float>(base, kOffVoxOffset, swap);
  out.info.scl_slope = read_field<float>(base, kOffSclSlope, swap);
  out.info.scl_inter = read_field<float>(base, kOffSclInter, swap);
  if (!std::isfinite(out.info.scl_slope)) out.info.scl_slope = 0.0f;
  if (!std::isfinite(out.info.scl_inter)) out.info.scl_inter = 0.0f;
  out.info.qform_code = read_field<std::int16_t>(base, kOffQformCode, swap);
  out.info.sform_code = read_field<std::int16_t>(base, kOffSformCode, swap);
  out.info.byte_swapped = swap;

  if (out.paired_file) {
    out.payload_offset = static_cast<std::size_t>(std::max(0.0f, out.info.vox_offset));
  } else {
    if (!(out.info.vox_offset >= static_cast<float>(kSingleFileOffset))) {
      throw Error(ErrorCode::MalformedHeader, "vox_offset below 352 in single-file NIfTI");
    }
    out.payload_offset = static_cast<std::size_t>(out.info.vox_offset);
  }
  return out;
}

template <class T>
void decode_as(const std::byte* src, std::size_t count, bool swap, double* dst) {
  for (std::size_t i = 0; i < count; ++i) {
    T value;
    std::memcpy(&value, src + i * sizeof(T), sizeof(T));
    if (swap) value = byteswap_value(value);
    dst[i] = static_cast<double>(value);
  }
}

void decode_values(NiftiDatatype type, const std::byte* src, std::size_t count, bool swap,
                   double* dst) {
  switch (type) {
    case NiftiDatatype::UInt8: decode_as<std::uint8_t>(src, count, swap, dst); break;
    case NiftiDatatype::Int8: decode_as<std::int8_t>(src, count, swap, dst); break;
    case NiftiDatatype::Int16: decode_as<std::int16_t>(src, count, swap, dst); break;
    case NiftiDatatype::UInt16: decode_as<std::uint16_t>(src, count, swap, dst); break;
    case NiftiDatatype::Int32: decode_as<std::int32_t>(src, count, swap, dst); break;
    case NiftiDatatype::UInt32: decode_as<std::uint32_t>(src, count, swap, dst); break;
    case NiftiDatatype::Float32: decode_as<float>(src, count, swap, dst); break;
    case NiftiDatatype::Float64: decode_as<double>(src, count, swap, dst); break;
  }
}

template <class T>
void encode_as(std::span<const double> values, std::byte* dst) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T v = static_cast<T>(values[i]);
    std::memcpy(dst + i * sizeof(T), &v, sizeof(T));
  }
}

std::filesystem::path sibling_image(const std::filesystem::path& header_path) {
  std::string s = header_path.string();
  for (const char* ext : {".hdr.gz", ".hdr"}) {
    const std::string e(ext);
    if (s.size() > e.size() && s.compare(s.size() - e.size(), e.size(), e) == 0) {
      const std::string stem = s.substr(0, s.size() - e.size());
      for (const char* img : {".img", ".img.gz"}) {
        std::filesystem::path candidate = stem + img;
        if (std::filesystem::exists(candidate)) return candidate;
      }
    }
  }
  throw Error(ErrorCode::IoFailure, "no .img payload next to " + header_path.string());
}

void check_finite(const std::vector<double>& raw) {
  for (double v : raw) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::MalformedHeader, "non-finite voxel value in payload");
    }
  }
}

std::string file_name_of(const std::filesystem::path& path) { return path.filename().string(); }

}  // namespace

std::size_t datatype_size(NiftiDatatype type) {
  switch (type) {
    case NiftiDatatype::UInt8:
    case NiftiDatatype::Int8: return 1;
    case NiftiDatatype::Int16:
    case NiftiDatatype::UInt16: return 2;
    case NiftiDatatype::Int32:
    case NiftiDatatype::UInt32:
    case NiftiDatatype::Float32: return 4;
    case NiftiDatatype::Float64: return 8;
  }
  return 0;
}

bool is_supported_datatype(std::int16_t code) {
  switch (code) {
    case 2: case 4: case 8: case 16: case 64: case 256: case 512: case 768:
      return true;
    default:
      return false;
  }
}

SliceView<float> VoxelVolume::axial_slice(std::size_t z) const {
  const std::size_t plane = dims.plane_size();
  return {std::span<const float>(intensities).subspan(z * plane, plane), dims.nx, dims.ny};
}

SliceView<std::int32_t> LabelMask::axial_slice(std::size_t z) const {
  const std::size_t plane = dims.plane_size();
  return {std::span<const std::int32_t>(labels).subspan(z * plane, plane), dims.nx, dims.ny};
}

NiftiImage parse_nifti(std::span<const std::byte> bytes) {
  const ParsedHeader header = parse_header(bytes);
  if (header.paired_file) {
    throw Error(ErrorCode::MalformedHeader, "\"ni1\" header needs its .img payload file");
  }
  NiftiImage image{header.dims, header.spacing, header.info, {}};
  const std::size_t count = header.dims.voxel_count();
  const std::size_t need = count * datatype_size(header.info.datatype);
  if (bytes.size() < header.payload_offset || bytes.size() - header.payload_offset < need) {
    throw Error(ErrorCode::TruncatedData, "payload shorter than dims imply");
  }
  image.raw.resize(count);
  decode_values(header.info.datatype, bytes.data() + header.payload_offset, count,
                header.info.byte_swapped, image.raw.data());
  check_finite(image.raw);
  return image;
}

NiftiImage read_nifti(const std::filesystem::path& path, std::size_t chunk_bytes) {
  chunk_bytes = std::max<std::size_t>(chunk_bytes, 1);
  GzSource source(path);
  std::vector<std::byte> header_bytes(kHeaderSize);
  if (source.read(header_bytes.data(), kHeaderSize) < kHeaderSize) {
    throw Error(ErrorCode::MalformedHeader, "file shorter than the 348-byte header: " + path.string());
  }
  const ParsedHeader header = parse_header(header_bytes);

  std::unique_ptr<GzSource> payload_file;
  GzSource* payload = &source;
  std::size_t skip = 0;
  if (header.paired_file) {
    payload_file = std::make_unique<GzSource>(sibling_image(path));
    payload = payload_file.get();
    skip = header.payload_offset;
  } else {
    skip = header.payload_offset - kHeaderSize;
  }
  std::vector<std::byte> scratch(std::min<std::size_t>(std::max<std::size_t>(skip, 1), 1 << 16));
  while (skip > 0) {
    const std::size_t n = std::min(skip, scratch.size());
    if (payload->read(scratch.data(), n) < n) {
      throw Error(ErrorCode::TruncatedData, "file ends inside the header extension");
    }
    skip -= n;
  }

  NiftiImage image{header.dims, header.spacing, header.info, {}};
  const std::size_t count = header.dims.voxel_count();
  const std::size_t elem = datatype_size(header.info.datatype);
  image.raw.resize(count);

  // Chunks are rounded to whole voxels; a voxel never straddles two decodes.
  const std::size_t voxels_per_chunk = std::max<std::size_t>(chunk_bytes / elem, 1);
  std::vector<std::byte> buffer(voxels_per_chunk * elem);
  std::size_t done = 0;
  while (done < count) {
    const std::size_t n = std::min(voxels_per_chunk, count - done);
    if (payload->read(buffer.data(), n * elem) < n * elem) {
      throw Error(ErrorCode::TruncatedData,
                  "payload shorter than dims imply (" + std::to_string(done) + " of " +
                      std::to_string(count) + " voxels): " + path.string());
    }
    decode_values(header.info.datatype, buffer.data(), n, header.info.byte_swapped,
                  image.raw.data() + done);
    done += n;
  }
  check_finite(image.raw);
  return image;
}

std::vector<std::byte> slurp_file(const std::filesystem::path& path) {
  GzSource source(path);
  std::vector<std::byte> out;
  std::vector<std::byte> buffer(1 << 16);
  while (true) {
    const std::size_t got = source.read(buffer.data(), buffer.size());
    out.insert(out.end(), buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(got));
    if (got < buffer.size()) break;
  }
  return out;
}

VoxelVolume load_volume(const std::filesystem::path& path) {
  NiftiImage image = read_nifti(path);
  VoxelVolume volume;
  volume.dims = image.dims;
  volume.spacing = image.spacing;
  volume.info = image.info;
  volume.source_path = path.string();
  volume.volume_name = file_name_of(path);
  volume.intensities.resize(image.raw.size());
  const double slope = image.info.scl_slope;
  const double inter = image.info.scl_inter;
  for (std::size_t i = 0; i < image.raw.size(); ++i) {
    const double v = slope != 0.0 ? image.raw[i] * slope + inter : image.raw[i];
    volume.intensities[i] = static_cast<float>(v);
  }
  return volume;
}

LabelMask load_mask(const std::filesystem::path& path, const LabelMap& label_map) {
  NiftiImage image = read_nifti(path);
  LabelMask mask;
  mask.dims = image.dims;
  mask.label_map = label_map;
  mask.source_path = path.string();
  mask.labels.resize(image.raw.size());

  std::set<std::int32_t> known;
  for (const auto& [organ, code] : label_map) known.insert(code);

  const double slope = image.info.scl_slope;
  const double inter = image.info.scl_inter;
  for (std::size_t i = 0; i < image.raw.size(); ++i) {
    const double v = slope != 0.0 ? image.raw[i] * slope + inter : image.raw[i];
    const double r = std::nearbyint(v);
    if (r != v || r < 0.0 || r > 2147483647.0) {
      throw Error(ErrorCode::MalformedHeader,
                  "mask voxel is not a non-negative integer label: " + path.string());
    }
    mask.labels[i] = static_cast<std::int32_t>(r);
  }
  // Distinct codes via a sorted copy; masks are large but the code set is tiny.
  std::vector<std::int32_t> sorted = mask.labels;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  mask.distinct_codes.insert(sorted.begin(), sorted.end());
  for (std::int32_t code : mask.distinct_codes) {
    if (code != 0 && !known.contains(code)) mask.unknown_labels.insert(code);
  }
  return mask;
}

void write_nifti(const std::filesystem::path& path, const Dims& dims, std::span<const double> raw,
                 const NiftiWriteOptions& options) {
  if (raw.size() != dims.voxel_count()) {
    throw Error(ErrorCode::DimsMismatch, "value count does not match dims");
  }
  const std::size_t elem = datatype_size(options.datatype);
  std::vector<std::byte> bytes(kSingleFileOffset + raw.size() * elem, std::byte{0});
  std::byte* base = bytes.data();
  write_field<std::int32_t>(base, 0, 348);
  const std::array<std::int16_t, 8> dim{3,
                                        static_cast<std::int16_t>(dims.nx),
                                        static_cast<std::int16_t>(dims.ny),
                                        static_cast<std::int16_t>(dims.nz),
                                        1, 1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) write_field<std::int16_t>(base, kOffDim + 2 * i, dim[i]);
  write_field<std::int16_t>(base, kOffDatatype, static_cast<std::int16_t>(options.datatype));
  write_field<std::int16_t>(base, kOffBitpix, static_cast<std::int16_t>(8 * elem));
  write_field<float>(base, kOffPixdim, 1.0f);
  for (std::size_t i = 0; i < 3; ++i) {
    write_field<float>(base, kOffPixdim + 4 * (i + 1), static_cast<float>(options.spacing[i]));
  }
  write_field<float>(base, kOffVoxOffset, static_cast<float>(kSingleFileOffset));
  write_field<float>(base, kOffSclSlope, options.scl_slope);
  write_field<float>(base, kOffSclInter, options.scl_inter);
  base[123] = std::byte{2};  // xyzt_units: mm
  std::memcpy(base + kOffMagic, "n+1\0", 4);

  std::byte* payload = base + kSingleFileOffset;
  switch (options.datatype) {
    case NiftiDatatype::UInt8: encode_as<std::uint8_t>(raw, payload); break;
    case NiftiDatatype::Int8: encode_as<std::int8_t>(raw, payload); break;
    case NiftiDatatype::Int16: encode_as<std::int16_t>(raw, payload); break;
    case NiftiDatatype::UInt16: encode_as<std::uint16_t>(raw, payload); break;
    case NiftiDatatype::Int32: encode_as<std::int32_t>(raw, payload); break;
    case NiftiDatatype::UInt32: encode_as<std::uint32_t>(raw, payload); break;
    case NiftiDatatype::Float32: encode_as<float>(raw, payload); break;
    case NiftiDatatype::Float64: encode_as<double>(raw, payload); break;
  }

  const bool gzip = options.gzip || path.extension() == ".gz";
  if (gzip) {
    gzFile out = gzopen(path.c_str(), "wb6");
    if (out == nullptr) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    const int written = gzwrite(out, bytes.data(), static_cast<unsigned>(bytes.size()));
    const int closed = gzclose(out);
    if (written != static_cast<int>(bytes.size()) || closed != Z_OK) {
      throw Error(ErrorCode::IoFailure, "short write to " + path.string());
    }
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
  }
}

PairedVolume::PairedVolume(std::shared_ptr<const VoxelVolume> volume,
                           std::shared_ptr<const LabelMask> mask)
    : volume_(std::move(volume)), mask_(std::move(mask)) {
  if (!(volume_->dims == mask_->dims)) {
    auto fmt = [](const Dims& d) {
      return "(" + std::to_string(d.nx) + "," + std::to_string(d.ny) + "," + std::to_string(d.nz) + ")";
    };
    throw Error(ErrorCode::DimsMismatch,
                "volume " + fmt(volume_->dims) + " vs mask " + fmt(mask_->dims));
  }
}

PairedVolume pair(std::shared_ptr<const VoxelVolume> volume, std::shared_ptr<const LabelMask> mask) {
  return PairedVolume(std::move(volume), std::move(mask));
}

}  // namespace pgt
