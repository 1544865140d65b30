#include <doctest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "pgt/errors.hpp"
#include "pgt/labels.hpp"
#include "pgt/volume_io.hpp"
#include "test_support.hpp"

using namespace pgt;
using pgt::test::TempDir;

namespace {

std::vector<double> ramp(std::size_t n, double start = -3.25, double step = 0.5) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = start + step * static_cast<double>(i);
  return v;
}

}  // namespace

TEST_CASE("4x4x2 float32 volume round-trips") {
  TempDir dir;
  const Dims dims{4, 4, 2};
  const auto raw = ramp(dims.voxel_count());
  write_nifti(dir / "v.nii", dims, raw);

  const VoxelVolume v = load_volume(dir / "v.nii");
  CHECK(v.dims == dims);
  CHECK(v.volume_name == "v.nii");
  REQUIRE(v.intensities.size() == raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) CHECK(v.intensities[i] == static_cast<float>(raw[i]));
  CHECK(v.at(1, 2, 1) == static_cast<float>(raw[1 + 4 * (2 + 4 * 1)]));
}

TEST_CASE("integer datatypes round-trip exactly") {
  TempDir dir;
  const Dims dims{3, 2, 2};
  std::vector<double> raw{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  for (auto type : {NiftiDatatype::UInt8, NiftiDatatype::Int8, NiftiDatatype::Int16, NiftiDatatype::UInt16,
                    NiftiDatatype::Int32, NiftiDatatype::UInt32, NiftiDatatype::Float64}) {
    NiftiWriteOptions opt;
    opt.datatype = type;
    write_nifti(dir / "i.nii", dims, raw, opt);
    const NiftiImage img = read_nifti(dir / "i.nii");
    CHECK(img.info.datatype == type);
    CHECK(img.raw == raw);
  }
}

TEST_CASE("slope and intercept are applied once") {
  TempDir dir;
  const Dims dims{4, 4, 2};
  const auto raw = ramp(dims.voxel_count());
  NiftiWriteOptions opt;
  opt.scl_slope = 2.0f;
  opt.scl_inter = -1.0f;
  write_nifti(dir / "s.nii", dims, raw, opt);
  const VoxelVolume v = load_volume(dir / "s.nii");
  for (std::size_t i = 0; i < raw.size(); ++i) CHECK(v.intensities[i] == static_cast<float>(2.0 * raw[i] - 1.0));
}

TEST_CASE("zero slope means no scaling") {
  TempDir dir;
  const Dims dims{2, 2, 1};
  const std::vector<double> raw{5, 6, 7, 8};
  NiftiWriteOptions opt;
  opt.scl_inter = 100.0f;
  write_nifti(dir / "z.nii", dims, raw, opt);
  const VoxelVolume v = load_volume(dir / "z.nii");
  CHECK(v.intensities == std::vector<float>{5, 6, 7, 8});
}

TEST_CASE("truncated payload is TruncatedData") {
  TempDir dir;
  const Dims dims{4, 4, 2};
  write_nifti(dir / "t.nii", dims, ramp(dims.voxel_count()));
  const auto size = std::filesystem::file_size(dir / "t.nii");
  std::filesystem::resize_file(dir / "t.nii", 352 + (size - 352) / 2);
  try {
    load_volume(dir / "t.nii");
    FAIL("expected TruncatedData");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TruncatedData);
  }
}

TEST_CASE("header defects are MalformedHeader or UnsupportedDatatype") {
  TempDir dir;
  const Dims dims{2, 2, 1};
  write_nifti(dir / "h.nii", dims, std::vector<double>{1, 2, 3, 4});
  auto bytes = slurp_file(dir / "h.nii");

  auto expect = [&](std::vector<std::byte> b, ErrorCode code) {
    try {
      parse_nifti(b);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == code);
    }
  };
  {
    auto b = bytes;
    std::memcpy(b.data() + 344, "abc\0", 4);
    expect(b, ErrorCode::MalformedHeader);
  }
  {
    auto b = bytes;
    const std::int16_t bad = 1536;  // float128
    std::memcpy(b.data() + 70, &bad, 2);
    expect(b, ErrorCode::UnsupportedDatatype);
  }
  {
    auto b = bytes;
    const std::int32_t nifti2 = 540;
    std::memcpy(b.data(), &nifti2, 4);
    expect(b, ErrorCode::MalformedHeader);
  }
  expect(std::vector<std::byte>(bytes.begin(), bytes.begin() + 200), ErrorCode::MalformedHeader);
}

TEST_CASE("byte-swapped headers decode") {
  TempDir dir;
  const Dims dims{2, 1, 1};
  write_nifti(dir / "le.nii", dims, std::vector<double>{1.5, -2.0});
  auto b = slurp_file(dir / "le.nii");
  // Swap every multi-byte field we rely on plus the payload.
  auto swap = [&](std::size_t off, std::size_t n) { std::reverse(b.begin() + off, b.begin() + off + n); };
  swap(0, 4);
  for (std::size_t i = 0; i < 8; ++i) swap(40 + 2 * i, 2);
  swap(70, 2);
  swap(72, 2);
  for (std::size_t i = 0; i < 8; ++i) swap(76 + 4 * i, 4);
  swap(108, 4);
  swap(112, 4);
  swap(116, 4);
  swap(252, 2);
  swap(254, 2);
  swap(352, 4);
  swap(356, 4);
  const NiftiImage img = parse_nifti(b);
  CHECK(img.info.byte_swapped);
  CHECK(img.raw == std::vector<double>{1.5, -2.0});
}

TEST_CASE("gzip and chunked reads match whole-buffer parsing") {
  TempDir dir;
  const Dims dims{7, 5, 3};
  std::mt19937_64 rng(3);
  std::vector<double> raw(dims.voxel_count());
  for (auto& v : raw) v = static_cast<double>(pgt::test::uniform(rng, -1024, 3000));
  NiftiWriteOptions opt;
  opt.datatype = NiftiDatatype::Int16;
  write_nifti(dir / "c.nii.gz", dims, raw, opt);

  const auto bytes = slurp_file(dir / "c.nii.gz");
  const NiftiImage whole = parse_nifti(bytes);
  CHECK(whole.raw == raw);
  for (std::size_t chunk : {1u, 3u, 17u, 352u, 4096u}) {
    CHECK(read_nifti(dir / "c.nii.gz", chunk).raw == whole.raw);
  }
}

TEST_CASE("corrupt gzip stream is TruncatedData") {
  TempDir dir;
  write_nifti(dir / "g.nii.gz", Dims{8, 8, 8}, ramp(512));
  const auto size = std::filesystem::file_size(dir / "g.nii.gz");
  std::filesystem::resize_file(dir / "g.nii.gz", size / 2);
  CHECK_THROWS_AS(load_volume(dir / "g.nii.gz"), Error);
}

TEST_CASE("mask codes are reported") {
  TempDir dir;
  const Dims dims{3, 1, 1};
  NiftiWriteOptions opt;
  opt.datatype = NiftiDatatype::UInt8;
  const LabelMap msd{{"pancreas", 1}, {"tumor", 2}};

  write_nifti(dir / "m.nii", dims, std::vector<double>{0, 1, 2}, opt);
  LabelMask m = load_mask(dir / "m.nii", msd);
  CHECK(m.distinct_codes == std::set<std::int32_t>{0, 1, 2});
  CHECK(m.unknown_labels.empty());

  write_nifti(dir / "zero.nii", dims, std::vector<double>{0, 0, 0}, opt);
  m = load_mask(dir / "zero.nii", msd);
  CHECK(m.distinct_codes == std::set<std::int32_t>{0});

  write_nifti(dir / "seven.nii", dims, std::vector<double>{0, 7, 1}, opt);
  m = load_mask(dir / "seven.nii", default_label_map("MSD"));
  CHECK(m.unknown_labels == std::set<std::int32_t>{7});
  CHECK(m.at(1, 0, 0) == 7);
}

TEST_CASE("non-integer mask values are rejected") {
  TempDir dir;
  write_nifti(dir / "f.nii", Dims{2, 1, 1}, std::vector<double>{0, 1.5});
  CHECK_THROWS_AS(load_mask(dir / "f.nii", {{"pancreas", 1}}), Error);
}

TEST_CASE("pairing checks dims") {
  auto vol = std::make_shared<VoxelVolume>();
  auto mask = std::make_shared<LabelMask>();
  vol->dims = {512, 512, 100};
  mask->dims = {512, 512, 99};
  try {
    pair(vol, mask);
    FAIL("expected DimsMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimsMismatch);
  }

  TempDir dir;
  const Dims dims{4, 4, 2};
  write_nifti(dir / "v.nii", dims, ramp(dims.voxel_count()));
  write_nifti(dir / "m.nii", dims, std::vector<double>(dims.voxel_count(), 0.0));
  const PairedVolume p = pair(std::make_shared<VoxelVolume>(load_volume(dir / "v.nii")),
                              std::make_shared<LabelMask>(load_mask(dir / "m.nii", {{"pancreas", 1}})));
  CHECK(p.slice_count() == 2);
  for (std::size_t z = 0; z < p.slice_count(); ++z) {
    CHECK(p.image_slice(z).width() == p.mask_slice(z).width());
    CHECK(p.image_slice(z).height() == p.mask_slice(z).height());
  }
  CHECK(p.image_slice(1).at(0, 0) == p.volume().at(0, 0, 1));
}

TEST_CASE("missing file is IoFailure") {
  try {
    load_volume("/nonexistent/none.nii");
    FAIL("expected IoFailure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IoFailure);
  }
}
