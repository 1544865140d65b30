#include "pgt/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "pgt/errors.hpp"
#include "pgt/labels.hpp"
#include "pgt/seeding.hpp"

namespace pgt::synthetic {

namespace fs = std::filesystem;

void fill_box(std::vector<std::int32_t>& plane, std::size_t width, const PixelBox& box, std::int64_t count,
              std::int32_t code) {
  std::int64_t placed = 0;
  auto put = [&](std::int64_t x, std::int64_t y) {
    if (placed >= count) return;
    auto& cell = plane[static_cast<std::size_t>(x) + width * static_cast<std::size_t>(y)];
    if (cell != 0) return;
    cell = code;
    ++placed;
  };
  for (std::int64_t x = box.min_x; x <= box.max_x; ++x) put(x, box.min_y);
  for (std::int64_t x = box.min_x; x <= box.max_x; ++x) put(x, box.max_y);
  for (std::int64_t y = box.min_y + 1; y < box.max_y; ++y) {
    for (std::int64_t x = box.min_x; x <= box.max_x; ++x) put(x, y);
  }
  if (placed != count) {
    throw Error(ErrorCode::OutOfBounds, "box holds only " + std::to_string(placed) + " free pixels, asked for " +
                                            std::to_string(count));
  }
}

namespace {

// Slice 52 and 60 boxes; pixel totals include the tumor pixels.
constexpr PixelBox kRefPancreas{196, 235, 237, 260};
constexpr PixelBox kRefTumor{220, 238, 237, 255};
constexpr std::int64_t kRefPancreasPixels = 804;
constexpr std::int64_t kRefTumorPixels = 258;
constexpr PixelBox kMaxPancreas{100, 100, 152, 151};
constexpr PixelBox kMaxTumor{110, 110, 128, 127};
constexpr std::int64_t kMaxPancreasPixels = 1304;
constexpr std::int64_t kMaxTumorPixels = 279;

}  // namespace

PairedVolume reference_volume() {
  const Dims dims{512, 512, 113};
  auto mask = std::make_shared<LabelMask>();
  mask->dims = dims;
  mask->labels.assign(dims.voxel_count(), 0);
  mask->label_map = default_label_map(kDatasetMsd);
  mask->source_path = "synthetic://pancreas_228.nii.gz";

  auto paint = [&](std::size_t z, const PixelBox& pancreas, std::int64_t pancreas_px, const PixelBox& tumor,
                   std::int64_t tumor_px) {
    std::vector<std::int32_t> plane(dims.plane_size(), 0);
    fill_box(plane, dims.nx, tumor, tumor_px, 2);
    fill_box(plane, dims.nx, pancreas, pancreas_px - tumor_px, 1);
    std::copy(plane.begin(), plane.end(), mask->labels.begin() + static_cast<std::ptrdiff_t>(z * dims.plane_size()));
  };
  paint(kReferenceSlice, kRefPancreas, kRefPancreasPixels, kRefTumor, kRefTumorPixels);
  paint(kReferenceMaxSlice, kMaxPancreas, kMaxPancreasPixels, kMaxTumor, kMaxTumorPixels);
  mask->distinct_codes = {0, 1, 2};

  auto volume = std::make_shared<VoxelVolume>();
  volume->dims = dims;
  volume->intensities.resize(dims.voxel_count());
  for (std::size_t i = 0; i < volume->intensities.size(); ++i) {
    volume->intensities[i] = static_cast<float>(static_cast<int>(i % 97) - 48);
  }
  volume->volume_name = "pancreas_228.nii.gz";
  volume->source_path = mask->source_path;
  return PairedVolume(volume, mask);
}

SliceRecord reference_record() {
  SliceRecord r;
  r.dataset = "MSD";
  r.volume_name = "pancreas_228.nii.gz";
  r.slice_id = kReferenceSliceId;
  r.slice_index = static_cast<std::int64_t>(kReferenceSlice);
  r.slice_count = 113;
  r.pixels_pancreas = 804;
  r.pancreas_pixels_ratio = Ratio2{62};
  r.max_pixels_pancreas = 1304;
  r.bbox_pancreas = kRefPancreas;
  r.pancreas_bbox_ratio = Ratio2{39};
  r.max_bbox_pancreas = 2652;
  TumorAnnotation t;
  t.pixels_tumor = 258;
  t.tumor_pixels_ratio = Ratio2{92};
  t.max_pixels_tumor = 279;
  t.bbox_tumor = kRefTumor;
  t.tumor_bbox_ratio = Ratio2{94};
  t.max_bbox_tumor = 306;
  r.tumor = t;
  r.width = 512;
  r.height = 512;
  return r;
}

namespace {

struct Ellipse {
  double cx, cy, rx, ry;
  bool contains(double x, double y) const {
    const double dx = (x - cx) / rx;
    const double dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
};

std::string volume_file_name(const std::string& dataset, std::size_t index, bool gzip) {
  char buf[64];
  if (dataset == kDatasetNih) std::snprintf(buf, sizeof buf, "PANCREAS_%04zu", index);
  else if (dataset == kDatasetMsd) std::snprintf(buf, sizeof buf, "pancreas_%03zu", index);
  else if (dataset == kDatasetAbdomen) std::snprintf(buf, sizeof buf, "Case_%05zu", index);
  else std::snprintf(buf, sizeof buf, "volume_%03zu", index);
  return std::string(buf) + (gzip ? ".nii.gz" : ".nii");
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * seeding::unit_double(rng); }

}  // namespace

std::vector<std::string> write_dataset(const fs::path& root, const DatasetSpec& spec) {
  if (spec.volumes == 0 || spec.width < 16 || spec.height < 16 || spec.depth < 6) {
    throw Error(ErrorCode::BadConfig, "synthetic dataset needs >= 1 volume of at least 16x16x6");
  }
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  const double W = static_cast<double>(spec.width);
  const double H = static_cast<double>(spec.height);
  const double D = static_cast<double>(spec.depth);
  const std::int32_t pancreas_code = spec.multi_organ ? 4 : 1;
  const Dims dims{spec.width, spec.height, spec.depth};

  std::vector<std::string> names;
  for (std::size_t v = 0; v < spec.volumes; ++v) {
    std::mt19937_64 rng(seeding::splitmix64(spec.seed ^ seeding::fnv1a(spec.dataset)) ^ seeding::splitmix64(v));
    const double z0 = std::floor(D * 0.2 + uniform(rng, 0.0, 2.0));
    const double z1 = std::floor(D * 0.8 - uniform(rng, 0.0, 2.0));
    const Ellipse base{W * uniform(rng, 0.45, 0.55), H * uniform(rng, 0.5, 0.6), W * uniform(rng, 0.12, 0.18),
                       H * uniform(rng, 0.06, 0.1)};
    const bool tumor = spec.tumors && !spec.multi_organ;  // code 2 is the kidney there
    const double t0 = z0 + (z1 - z0) / 3.0;
    const double t1 = z1 - (z1 - z0) / 3.0;

    std::vector<double> labels(dims.voxel_count(), 0.0);
    std::vector<double> image(dims.voxel_count(), -1000.0);
    const Ellipse body{W * 0.5, H * 0.5, W * 0.46, H * 0.42};
    const Ellipse liver{W * 0.25, H * 0.4, W * 0.13, H * 0.18};
    const Ellipse kidney{W * 0.78, H * 0.68, W * 0.05, H * 0.07};
    const Ellipse spleen{W * 0.8, H * 0.32, W * 0.06, H * 0.08};

    for (std::size_t z = 0; z < spec.depth; ++z) {
      const double zd = static_cast<double>(z);
      const bool in_pancreas = zd >= z0 && zd <= z1;
      const double f = in_pancreas ? std::max(0.15, std::sin(std::numbers::pi * (zd - z0 + 1.0) / (z1 - z0 + 2.0))) : 0.0;
      const Ellipse p{base.cx + 0.2 * (zd - z0), base.cy, std::max(1.0, base.rx * f), std::max(1.0, base.ry * f)};
      const Ellipse t{p.cx + 0.3 * p.rx, p.cy, std::max(1.0, 0.35 * p.rx), std::max(1.0, 0.35 * p.ry)};
      for (std::size_t y = 0; y < spec.height; ++y) {
        for (std::size_t x = 0; x < spec.width; ++x) {
          const double xd = static_cast<double>(x);
          const double yd = static_cast<double>(y);
          const std::size_t i = x + spec.width * (y + spec.height * z);
          double hu = body.contains(xd, yd) ? 20.0 : -1000.0;
          std::int32_t code = 0;
          if (in_pancreas && p.contains(xd, yd)) {
            code = pancreas_code;
            hu = 45.0;
            if (tumor && zd >= t0 && zd <= t1 && t.contains(xd, yd)) {
              code = 2;
              hu = 5.0;
            }
          } else if (spec.multi_organ) {
            if (zd >= D * 0.1 && zd <= D * 0.9 && liver.contains(xd, yd)) {
              code = 1;
              hu = 60.0;
            } else if (zd >= D * 0.3 && zd <= D * 0.7 && kidney.contains(xd, yd)) {
              code = 2;
              hu = 150.0;
            } else if (zd >= D * 0.25 && zd <= D * 0.75 && spleen.contains(xd, yd)) {
              code = 3;
              hu = 50.0;
            }
          }
          labels[i] = code;
          image[i] = std::round(hu + uniform(rng, -20.0, 20.0));
        }
      }
    }

    const std::string name = volume_file_name(spec.dataset, v + 1, spec.gzip);
    NiftiWriteOptions image_opts;
    image_opts.datatype = NiftiDatatype::Int16;
    image_opts.spacing = {0.8, 0.8, 2.5};
    image_opts.gzip = spec.gzip;
    write_nifti(root / "images" / name, dims, image, image_opts);
    NiftiWriteOptions label_opts = image_opts;
    label_opts.datatype = NiftiDatatype::UInt8;
    write_nifti(root / "labels" / name, dims, labels, label_opts);
    names.push_back(name);
  }
  return names;
}

}  // namespace pgt::synthetic
