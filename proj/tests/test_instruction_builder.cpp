#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "pgt/errors.hpp"
#include "pgt/grounding_eval.hpp"
#include "pgt/instruction_builder.hpp"
#include "pgt/synthetic.hpp"
#include "test_support.hpp"

using namespace pgt;
using pgt::test::TempDir;

namespace {

// round(c * 100 / dim) half-up on non-negative integers, exact.
std::int32_t oracle_normalize(std::int64_t c, std::int64_t dim) {
  return static_cast<std::int32_t>((200 * c + dim) / (2 * dim));
}

std::set<VolumeKey> as_set(const std::vector<VolumeKey>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("normalize_box examples") {
  CHECK(normalize_box({196, 235, 237, 260}, 512, 512) == NormalizedBox{38, 46, 46, 51});
  CHECK(normalize_box({0, 0, 512, 512}, 512, 512) == NormalizedBox{0, 0, 100, 100});
  for (std::int64_t c : {196, 235, 237, 260}) CHECK(oracle_normalize(c, 512) == std::lround(c * 100.0 / 512));
  CHECK_THROWS_AS(normalize_box({0, 0, 513, 10}, 512, 512), Error);
  CHECK_THROWS_AS(normalize_box({-1, 0, 10, 10}, 512, 512), Error);
}

TEST_CASE("normalize_box matches the exact oracle on every coordinate") {
  for (std::int64_t dim : {48, 100, 333, 512}) {
    for (std::int64_t c = 0; c <= dim; ++c) {
      const PixelBox box{static_cast<std::int32_t>(c), 0, static_cast<std::int32_t>(c), 0};
      CHECK(normalize_box(box, dim, dim).x_left == oracle_normalize(c, dim));
    }
  }
  // 50 * 100 / 400 = 12.5: away from zero gives 13, to-even gives 12.
  CHECK(normalize_box({50, 0, 50, 0}, 400, 400).x_left == 13);
  CHECK(normalize_box({50, 0, 50, 0}, 400, 400, RoundingMode::HalfToEven).x_left == 12);
}

TEST_CASE("denormalize round-trip stays within ceil(dim/200)+1 pixels") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 1000; ++i) {
    const auto x0 = static_cast<std::int32_t>(pgt::test::uniform(rng, 0, 512));
    const auto y0 = static_cast<std::int32_t>(pgt::test::uniform(rng, 0, 512));
    const PixelBox b{x0, y0, static_cast<std::int32_t>(pgt::test::uniform(rng, x0, 512)),
                     static_cast<std::int32_t>(pgt::test::uniform(rng, y0, 512))};
    const NormalizedBox n = normalize_box(b, 512, 512);
    CHECK(n.valid());
    const PixelBox back = denormalize_box(n, 512, 512);
    CHECK(std::abs(back.min_x - b.min_x) <= 4);
    CHECK(std::abs(back.min_y - b.min_y) <= 4);
    CHECK(std::abs(back.max_x - b.max_x) <= 4);
    CHECK(std::abs(back.max_y - b.max_y) <= 4);
  }
}

TEST_CASE("render_bbox_text") {
  CHECK(render_bbox_text({38, 46, 46, 51}) == "{<38><46><46><51>}");
  CHECK(render_bbox_text({0, 0, 100, 100}) == "{<0><0><100><100>}");
  CHECK(render_bbox_text({12, 5, 12, 5}) == "{<12><5><12><5>}");
}

TEST_CASE("prompt assembly") {
  CHECK(assemble_prompt(TaskIdentifier::refer(), "Where is the pancreas?") ==
        "[INST] <Img><ImageRef></Img> [refer] Where is the pancreas? [/INST]");
  CHECK(assemble_prompt(TaskIdentifier::vqa(), "Does the pancreas in the image present a tumor?") ==
        "[INST] <Img><ImageRef></Img> [vqa] Does the pancreas in the image present a tumor? [/INST]");
  try {
    assemble_prompt(TaskIdentifier::refer(), "Draw me a cat");
    FAIL("expected UnknownInstruction");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownInstruction);
  }
  CHECK(format_prompt(TaskIdentifier::refer(), "anything", "img.png") ==
        "[INST] <Img>img.png</Img> [refer] anything [/INST]");
}

TEST_CASE("task identifiers") {
  CHECK(TaskIdentifier::parse("[refer]") == TaskIdentifier::refer());
  CHECK(TaskIdentifier::parse("vqa").token() == "[vqa]");
  CHECK(TaskIdentifier::parse("identify").token() == "[identify]");
  CHECK_THROWS_AS(TaskIdentifier::parse(""), Error);
  CHECK_THROWS_AS(TaskIdentifier::parse("[refer"), Error);
  CHECK_THROWS_AS(TaskIdentifier::parse("re fer"), Error);
}

TEST_CASE("candidate lists") {
  for (Stage s : {Stage::PancreasDetection, Stage::TumorClassification, Stage::TumorDetection}) {
    CHECK(candidate_instructions(s).size() == 8);
  }
  const auto tumor = candidate_instructions(Stage::TumorDetection);
  CHECK(std::find(tumor.begin(), tumor.end(), "Where is the pancreas tumor?") != tumor.end());
  const auto liver = candidate_instructions(Stage::MultiOrganDetection, "liver");
  CHECK(std::find(liver.begin(), liver.end(), "Where is the liver?") != liver.end());

  auto c = classify_instruction("Where is the liver?");
  REQUIRE(c);
  CHECK(c->stage == Stage::MultiOrganDetection);
  CHECK(c->organ == "liver");
  c = classify_instruction("Where is the pancreas tumor?");
  REQUIRE(c);
  CHECK(c->stage == Stage::TumorDetection);
  CHECK_FALSE(classify_instruction("Where is the moon?"));
}

TEST_CASE("10 volumes split 8/2 with disjoint sets") {
  std::mt19937_64 rng(2);
  const auto records = pgt::test::random_records(rng, {"MSD"}, 10, 5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const VolumeSplit s = split_volumes(records, seed);
    CHECK(s.train.size() == 8);
    CHECK(s.test.size() == 2);
    const auto train = as_set(s.train);
    for (const auto& k : s.test) CHECK_FALSE(train.contains(k));
  }
  // Deterministic per seed; at least two seeds disagree.
  CHECK(split_volumes(records, 3).test == split_volumes(records, 3).test);
  std::set<std::vector<VolumeKey>> distinct;
  for (std::uint64_t seed = 0; seed < 20; ++seed) distinct.insert(split_volumes(records, seed).test);
  CHECK(distinct.size() > 1);
}

TEST_CASE("split is per dataset with ceil(0.8 V) train volumes") {
  std::mt19937_64 rng(3);
  auto records = pgt::test::random_records(rng, {"NIH"}, 7, 2);
  auto msd = pgt::test::random_records(rng, {"MSD"}, 3, 2);
  for (auto& r : msd) r.slice_id += 1000;
  records.insert(records.end(), msd.begin(), msd.end());
  const VolumeSplit s = split_volumes(records, 11);
  std::map<std::string, std::pair<int, int>> n;
  for (const auto& k : s.train) ++n[k.dataset].first;
  for (const auto& k : s.test) ++n[k.dataset].second;
  CHECK(n["NIH"] == std::pair{6, 1});  // ceil(5.6)
  CHECK(n["MSD"] == std::pair{3, 0});  // ceil(2.4)
}

TEST_CASE("instruction picks are uniform over the 8 candidates") {
  std::mt19937_64 rng(6);
  const auto records = pgt::test::random_records(rng, {"NIH"}, 100, 100);
  StageOptions opt;
  opt.instruction_seed = 42;
  const auto ds = build_stage_dataset(records, Stage::PancreasDetection, opt);
  REQUIRE(ds.samples.size() == 10000);
  std::map<std::string, int> counts;
  for (const auto& s : ds.samples) ++counts[s.instruction];
  REQUIRE(counts.size() == 8);
  for (const auto& [text, n] : counts) {
    const double f = n / 10000.0;
    CHECK(std::abs(f - 0.125) <= 0.02);
  }
}

TEST_CASE("threshold filter is monotone and samples are well-formed") {
  std::mt19937_64 rng(7);
  const auto records = pgt::test::random_records(rng, {"NIH", "MSD"}, 10, 30);
  std::size_t previous = SIZE_MAX;
  for (int t = 0; t <= 9; ++t) {
    StageOptions opt;
    opt.threshold = t / 10.0;
    StageDataset ds;
    try {
      ds = build_stage_dataset(records, Stage::PancreasDetection, opt);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptyStage);
      previous = 0;
      continue;
    }
    CHECK(ds.samples.size() <= previous);
    previous = ds.samples.size();
    for (const auto& s : ds.samples) {
      const auto& r = records[static_cast<std::size_t>(s.slice_id)];
      CHECK(r.pancreas_bbox_ratio.at_least(opt.threshold));
      const auto parsed = parse_output(s.target, ExpectedOutput::BoundingBox);
      REQUIRE(parsed.box());
      CHECK(*parsed.box() == normalize_box(r.bbox_pancreas, 512, 512));
      CHECK(s.prompt == assemble_prompt(TaskIdentifier::refer(), s.instruction));
    }
  }
}

TEST_CASE("reference record is excluded at 0.6 and kept at 0.39") {
  const std::vector<SliceRecord> one{synthetic::reference_record()};
  StageOptions opt;
  opt.threshold = 0.6;
  CHECK_THROWS_AS(build_stage_dataset(one, Stage::PancreasDetection, opt), Error);
  opt.threshold = 0.39;
  const auto ds = build_stage_dataset(one, Stage::PancreasDetection, opt);
  REQUIRE(ds.samples.size() == 1);
  CHECK(ds.samples[0].target == "{<38><46><46><51>}");
  CHECK(ds.samples[0].image_path == "MSD/MSD_pancreas_228_52.png");
}

TEST_CASE("classification targets and balance") {
  std::mt19937_64 rng(9);
  auto records = pgt::test::random_records(rng, {"NIH", "MSD"}, 10, 20);
  const auto ds = build_stage_dataset(records, Stage::TumorClassification, {});
  std::map<std::pair<Split, std::string>, int> n;
  for (const auto& s : ds.samples) {
    const auto& r = records[static_cast<std::size_t>(s.slice_id)];
    CHECK(s.target == (r.has_tumor() ? "yes" : "no"));
    CHECK(s.task == TaskIdentifier::vqa());
    ++n[{s.split, s.target}];
  }
  CHECK(n[{Split::Train, "yes"}] == n[{Split::Train, "no"}]);
  CHECK(n[{Split::Test, "yes"}] == n[{Split::Test, "no"}]);
  CHECK(n[{Split::Train, "yes"}] > 0);

  StageOptions unbalanced;
  unbalanced.balance_classes = false;
  CHECK(build_stage_dataset(records, Stage::TumorClassification, unbalanced).samples.size() == records.size());
}

TEST_CASE("tumor detection on NIH-only data is EmptyStage") {
  std::mt19937_64 rng(10);
  const auto records = pgt::test::random_records(rng, {"NIH"}, 3, 3);
  try {
    build_stage_dataset(records, Stage::TumorDetection, {});
    FAIL("expected EmptyStage");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyStage);
  }
}

TEST_CASE("builds are deterministic and seed-sensitive") {
  std::mt19937_64 rng(12);
  const auto records = pgt::test::random_records(rng, {"NIH", "MSD"}, 6, 10);
  StageOptions a;
  a.split_seed = 5;
  a.instruction_seed = 6;
  const auto x = build_stage_dataset(records, Stage::PancreasDetection, a);
  const auto y = build_stage_dataset(records, Stage::PancreasDetection, a);
  REQUIRE(x.samples.size() == y.samples.size());
  for (std::size_t i = 0; i < x.samples.size(); ++i) {
    CHECK(sample_to_json(x.samples[i]) == sample_to_json(y.samples[i]));
  }
  a.instruction_seed = 7;
  const auto z = build_stage_dataset(records, Stage::PancreasDetection, a);
  bool differs = false;
  for (std::size_t i = 0; i < x.samples.size(); ++i) differs |= x.samples[i].instruction != z.samples[i].instruction;
  CHECK(differs);
}

TEST_CASE("sample JSON lines round-trip") {
  TempDir dir;
  std::mt19937_64 rng(13);
  const auto records = pgt::test::random_records(rng, {"MSD"}, 5, 4);
  const auto ds = build_stage_dataset(records, Stage::TumorClassification, {});
  write_samples_jsonl(ds.samples, dir / "all.jsonl");
  const auto back = read_samples_jsonl(dir / "all.jsonl");
  REQUIRE(back.size() == ds.samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(sample_to_json(back[i]) == sample_to_json(ds.samples[i]));
  write_samples_jsonl(ds.samples, dir / "test.jsonl", Split::Test);
  for (const auto& s : read_samples_jsonl(dir / "test.jsonl")) CHECK(s.split == Split::Test);
}

TEST_CASE("manifest values and checkpoint chaining") {
  TempDir dir;
  std::vector<ManifestStage> stages;
  for (Stage s : {Stage::PancreasDetection, Stage::TumorClassification, Stage::TumorDetection}) {
    const auto stem = std::string(to_string(s));
    pgt::test::write_text(dir / (stem + "_train.jsonl"), "{}\n");
    pgt::test::write_text(dir / (stem + "_test.jsonl"), "{}\n");
    stages.push_back({s, 0.6, dir / (stem + "_train.jsonl"), dir / (stem + "_test.jsonl")});
  }
  const auto m = build_manifest(stages);
  const auto& hp = m["hyperparameters"];
  CHECK(hp["init_lr"].get<double>() == 1e-5);
  CHECK(hp["warmup_lr"].get<double>() == 1e-6);
  CHECK(hp["min_lr"].get<double>() == 1e-6);
  CHECK(hp["weight_decay"].get<double>() == 0.05);
  CHECK(hp["lora"]["rank"] == 64);
  CHECK(hp["lora"]["alpha"] == 16);
  CHECK(hp["epochs"] == 50);
  CHECK(hp["image_size"] == 448);
  CHECK(hp["optimizer"] == "AdamW");
  const auto& st = m["stages"];
  REQUIRE(st.size() == 3);
  CHECK(st[0]["initial_checkpoint"] == std::string(kBaseCheckpoint));
  CHECK(st[1]["initial_checkpoint"] == st[0]["output_checkpoint"]);
  CHECK(st[2]["initial_checkpoint"] == st[1]["output_checkpoint"]);
  CHECK(st[1]["task"] == "vqa");

  emit_manifest(stages, dir / "manifest.json");
  CHECK(nlohmann::ordered_json::parse(pgt::test::read_text(dir / "manifest.json")) == m);

  std::filesystem::remove(stages[2].test_file);
  try {
    emit_manifest(stages, dir / "manifest.json");
    FAIL("expected IoFailure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IoFailure);
    CHECK(std::string(e.what()).find("tumor_detection_test.jsonl") != std::string::npos);
  }
}
