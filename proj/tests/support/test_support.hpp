#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "pgt/annotation_catalog.hpp"
#include "pgt/pipeline_config.hpp"
#include "pgt/synthetic.hpp"

namespace pgt::test {

inline std::filesystem::path fixture_dir() { return std::filesystem::path(PGT_FIXTURE_DIR); }

// Removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("pgt_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

struct FixtureShape {
  std::size_t nih_volumes = 5;
  std::size_t msd_volumes = 5;
  std::size_t size = 48;
  std::size_t depth = 16;
};

// Synthetic NIH (no tumors) + MSD (tumors) datasets under `dir`, and a
// config whose output lands in dir/out.
inline PipelineConfig synthetic_config(const std::filesystem::path& dir, const FixtureShape& shape = {}) {
  synthetic::DatasetSpec nih;
  nih.dataset = "NIH";
  nih.volumes = shape.nih_volumes;
  nih.width = nih.height = shape.size;
  nih.depth = shape.depth;
  nih.seed = 11;
  synthetic::write_dataset(dir / "NIH", nih);

  synthetic::DatasetSpec msd = nih;
  msd.dataset = "MSD";
  msd.volumes = shape.msd_volumes;
  msd.seed = 12;
  msd.tumors = true;
  synthetic::write_dataset(dir / "MSD", msd);

  PipelineConfig config;
  config.datasets["NIH"].root = dir / "NIH";
  config.datasets["MSD"].root = dir / "MSD";
  config.output_dir = dir / "out";
  return config;
}

// Uniform integer in [lo, hi].
inline std::int64_t uniform(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

// Catalog records without images: `volumes` volumes of `slices` records per
// dataset, random boxes in a 512 x 512 frame. MSD volumes get tumors on
// roughly a third of their slices.
inline std::vector<SliceRecord> random_records(std::mt19937_64& rng, const std::vector<std::string>& datasets,
                                               std::size_t volumes, std::size_t slices) {
  std::vector<SliceRecord> out;
  std::int64_t id = 0;
  for (const auto& ds : datasets) {
    for (std::size_t v = 0; v < volumes; ++v) {
      for (std::size_t s = 0; s < slices; ++s) {
        SliceRecord r;
        r.dataset = ds;
        r.volume_name = ds + "_vol_" + std::to_string(v) + ".nii.gz";
        r.slice_id = id++;
        r.slice_index = static_cast<std::int64_t>(s);
        r.slice_count = static_cast<std::int64_t>(slices);
        r.width = r.height = 512;
        const auto x0 = static_cast<std::int32_t>(uniform(rng, 0, 400));
        const auto y0 = static_cast<std::int32_t>(uniform(rng, 0, 400));
        r.bbox_pancreas = {x0, y0, x0 + static_cast<std::int32_t>(uniform(rng, 1, 100)),
                           y0 + static_cast<std::int32_t>(uniform(rng, 1, 100))};
        r.pixels_pancreas = uniform(rng, 1, 2000);
        r.max_pixels_pancreas = 2000;
        r.pancreas_pixels_ratio = Ratio2::of(r.pixels_pancreas, 2000);
        r.max_bbox_pancreas = 10000;
        r.pancreas_bbox_ratio = Ratio2::of(r.bbox_pancreas.area(), 10000);
        if (ds == "MSD") {
          TumorAnnotation t;
          t.max_pixels_tumor = 300;
          t.max_bbox_tumor = 900;
          if (uniform(rng, 0, 2) == 0) {
            t.pixels_tumor = uniform(rng, 1, std::min<std::int64_t>(300, r.pixels_pancreas));
            t.tumor_pixels_ratio = Ratio2::of(t.pixels_tumor, 300);
            t.bbox_tumor = PixelBox{x0, y0, x0 + static_cast<std::int32_t>(uniform(rng, 0, 30)),
                                    y0 + static_cast<std::int32_t>(uniform(rng, 0, 30))};
            t.tumor_bbox_ratio = Ratio2::of(t.bbox_tumor->area(), 900);
          }
          r.tumor = t;
        }
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

}  // namespace pgt::test
