#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "pgt/errors.hpp"
#include "test_support.hpp"

using namespace pgt;
using pgt::test::TempDir;

namespace {

int run(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(PGT_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("exit code families") {
  CHECK(exit_code(ErrorCode::BadConfig) == 2);
  CHECK(exit_code(ErrorCode::IoFailure) == 3);
  CHECK(exit_code(ErrorCode::MalformedHeader) == 4);
  CHECK(exit_code(ErrorCode::SchemaViolation) == 4);
  CHECK(exit_code(ErrorCode::EmptyStage) == 5);
  CHECK(exit_code(ErrorCode::MissingTarget) == 5);
  CHECK(exit_code(ErrorCode::RemoteTimeout) == 6);
  CHECK(exit_code(ErrorCode::PortInUse) == 7);
  for (auto code : {ErrorCode::TruncatedData, ErrorCode::UnknownSliceId, ErrorCode::InvalidRequest}) {
    CHECK(error_code_from_string(to_string(code)) == code);
  }
  CHECK_FALSE(error_code_from_string("NotACode"));
}

TEST_CASE("cli exit codes and flag precedence") {
  TempDir dir;
  const auto log = dir / "log.txt";
  CHECK(run("--no-such-flag", log) == 2);
  CHECK(run("", log) == 2);
  CHECK(run("--help", log) == 0);
  CHECK(pgt::test::read_text(log).find("Exit codes") != std::string::npos);
  CHECK(run("ingest --set bogus=1", log) == 2);
  CHECK(run("ingest --set dataset.NIH.root=" + (dir / "nowhere").string(), log) == 2);

  synthetic::DatasetSpec nih;
  nih.dataset = "NIH";
  nih.volumes = 5;
  nih.width = nih.height = 24;
  nih.depth = 8;
  synthetic::write_dataset(dir / "NIH", nih);
  pgt::test::write_text(dir / "pgt.conf",
                        "dataset.NIH.root = NIH\noutput_dir = out\nthreshold = 0.9\n");
  const std::string conf = "-c " + (dir / "pgt.conf").string() + " ";
  CHECK(run(conf + "evaluate", log) == 3);  // no catalog yet
  CHECK(run(conf + "ingest", log) == 0);
  CHECK(std::filesystem::exists(dir / "out" / "catalog.json"));

  CHECK(run(conf + "build --threshold 0.3", log) == 0);
  CHECK(std::filesystem::exists(dir / "out" / "datasets" / "pancreas_detection_t30_train.jsonl"));
  CHECK(run(conf + "--set threshold=0.2 build", log) == 0);
  CHECK(std::filesystem::exists(dir / "out" / "datasets" / "pancreas_detection_t20_test.jsonl"));
  CHECK(run(conf + "--set threshold=0.2 build --threshold 0.1", log) == 0);
  CHECK(std::filesystem::exists(dir / "out" / "datasets" / "pancreas_detection_t10_test.jsonl"));

  CHECK(run(conf + "build --stage tumor_detection", log) == 5);
  CHECK(run(conf + "build --stage no_such_stage", log) == 2);

  pgt::test::write_text(dir / "bad.jsonl", "{\"slice_id\": \"x\"}\n");
  CHECK(run(conf + "evaluate --predictions " + (dir / "bad.jsonl").string(), log) == 4);

  CHECK(run(conf + "sweep", log) == 0);
  CHECK(std::filesystem::exists(dir / "out" / "datasets" / "sweep_pancreas_detection.json"));
  CHECK(run(conf + "--threads 2 evaluate --threshold 0.2", log) == 0);
  CHECK(pgt::test::read_text(log).find("1.000") != std::string::npos);
}
