/*
 * Copyright 2026 The ConceptScope Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Runs the conceptscope binary end to end.

#include <gtest/gtest.h>

#include <cstdlib>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "conceptscope/categorizer.h"
#include "test_util.h"

namespace conceptscope {
namespace {

using json = nlohmann::json;
using testing::ReadBytes;
using testing::TempDir;

struct Result {
  int code = 0;
  std::string err;
  std::string out;
};

std::string Slurp(const std::filesystem::path& p) {
  const auto bytes = ReadBytes(p);
  return {bytes.begin(), bytes.end()};
}

// Runs `args` inside `dir` with the given environment prefix.
Result RunCli(const std::filesystem::path& dir, const std::string& args,
              const std::string& env = "") {
  const std::string cmd = "cd '" + dir.string() + "' && " + env + " '" +
                          CONCEPTSCOPE_CLI + "' " + args +
                          " > cli.stdout 2> cli.stderr";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = Slurp(dir / "cli.stdout");
  r.err = Slurp(dir / "cli.stderr");
  return r;
}

json LastErrorJson(const std::string& err) {
  const auto start = err.rfind("{\"error\"");
  if (start == std::string::npos) return json();
  return json::parse(err.substr(start, err.find('\n', start) - start));
}

const char* kPipeline[] = {
    "synth --preset planted-bias --out c --seed 7 --train-per-class 100 "
    "--test-per-class 24",
    "train --archive c/train.csem --out m/model.csae --preset planted-bias "
    "--epochs 4 --seed 7",
    "activate --model m/model.csae --archive c/train.csem --manifest "
    "c/train_manifest.json --out m/train.csac",
    "activate --model m/model.csae --archive c/test.csem --out m/test.csac",
    "dict build --activations m/train.csac --model m/model.csae --out m/dict.json",
    "categorize --model m/model.csae --archive c/train.csem --manifest "
    "c/train_manifest.json --strengths m/strengths.csv --dict m/dict.json "
    "--provider offline --class-embeddings c/class_embeddings.bin --out cat "
    "--alpha-align 1 --seed 7",
    "eval bias-discovery --profiles cat/profiles.json --test-activations "
    "m/test.csac --test-manifest c/test_manifest.json --test-labels "
    "c/test_attributes.csv --name-activations m/train.csac --name-labels "
    "c/train_attributes.csv --dict m/dict.json --out bias",
    "eval concept-pred --train-activations m/train.csac --train-manifest "
    "c/train_manifest.json --train-labels c/train_attributes.csv "
    "--test-activations m/test.csac --test-labels c/test_attributes.csv "
    "--dict m/dict.json --out cp --seed 7",
    "eval segmentation --model m/model.csae --archive c/test.csem --masks "
    "c/test_gt_masks.jsonl --assignment cp/assignment.json --out seg",
    "robustness --model m/model.csae --train-archive c/train.csem "
    "--train-manifest c/train_manifest.json --test-archive c/test.csem "
    "--test-manifest c/test_manifest.json --profiles cat/profiles.json "
    "--predictions c/predictions.csv --out rob",
};

const char* kArtifacts[] = {
    "c/train.csem",          "c/run.json",
    "m/model.csae",          "m/model.report.json",
    "m/train.csac",          "m/test.csac",
    "m/strengths.csv",       "m/dict.json",
    "m/run.json",            "cat/profiles.json",
    "cat/triples.jsonl",     "cat/mask_jobs.jsonl",
    "cat/alignment_scores.csv", "cat/run.json",
    "bias/bias_discovery.json", "bias/concept_attributes.json",
    "cp/assignment.json",    "cp/concept_prediction.csv",
    "seg/segmentation.json", "rob/group_accuracy.json",
    "rob/subgroups.csv",     "rob/run.json",
};

class CliPipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    a_ = new TempDir;
    b_ = new TempDir;
    for (const char* step : kPipeline) {
      const Result ra = RunCli(a_->path(), step, "CONCEPTSCOPE_THREADS=1");
      ASSERT_EQ(ra.code, 0) << step << "\n" << ra.err;
      const Result rb = RunCli(b_->path(), step, "CONCEPTSCOPE_THREADS=3");
      ASSERT_EQ(rb.code, 0) << step << "\n" << rb.err;
    }
  }
  static void TearDownTestSuite() {
    delete a_;
    delete b_;
  }
  static TempDir* a_;
  static TempDir* b_;
};

TempDir* CliPipelineTest::a_ = nullptr;
TempDir* CliPipelineTest::b_ = nullptr;

TEST_F(CliPipelineTest, SameSeedGivesIdenticalArtifactsForAnyThreadCount) {
  for (const char* f : kArtifacts) {
    ASSERT_TRUE(std::filesystem::exists(a_->path() / f)) << f;
    EXPECT_EQ(ReadBytes(a_->path() / f), ReadBytes(b_->path() / f)) << f;
  }
}

TEST_F(CliPipelineTest, RunRecordsListEveryCommand) {
  const json m = json::parse(Slurp(a_->path() / "m/run.json"));
  for (const char* key : {"train:model.csae", "activate:train.csac",
                          "activate:test.csac", "dict-build:dict.json"}) {
    EXPECT_TRUE(m["runs"].contains(key)) << key;
  }
  EXPECT_EQ(m["runs"]["train:model.csae"]["config"]["seed"], 7);
  EXPECT_EQ(m["runs"]["train:model.csae"]["inputs"]["archive"]["crc32"]
                .get<std::string>()
                .size(),
            8u);
  const json cat = json::parse(Slurp(a_->path() / "cat/run.json"));
  EXPECT_EQ(cat["runs"]["categorize"]["config"]["provider"], "offline");
}

TEST_F(CliPipelineTest, ReplayAndBridgeReproduceOfflineProfiles) {
  const auto& dir = a_->path();
  const std::string common =
      "categorize --model m/model.csae --archive c/train.csem --manifest "
      "c/train_manifest.json --strengths m/strengths.csv --dict m/dict.json "
      "--alpha-align 1 --seed 7 ";
  Result r = RunCli(dir, common + "--provider replay --triples cat/triples.jsonl "
                         "--out replay");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(Slurp(dir / "replay/profiles.json"), Slurp(dir / "cat/profiles.json"));

  r = RunCli(dir, common +
                      "--provider bridge --bridge-command "
                      "'test -s {jobs} && cp cat/triples.jsonl {out}' --out bridge");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(Slurp(dir / "bridge/profiles.json"), Slurp(dir / "cat/profiles.json"));
  // The work directory keeps the last batch handed to the bridge.
  const std::string last = Slurp(dir / "bridge/bridge/mask_jobs.jsonl");
  ASSERT_FALSE(last.empty());
  EXPECT_NE(Slurp(dir / "cat/mask_jobs.jsonl").find(last), std::string::npos);

  r = RunCli(dir, common + "--provider bridge --bridge-command false --out broken");
  EXPECT_NE(r.code, 0);
  EXPECT_TRUE(LastErrorJson(r.err).contains("error"));
}

TEST_F(CliPipelineTest, ProfilesLoadAndReportsAreFilled) {
  const auto profiles = LoadProfiles(a_->path() / "cat/profiles.json");
  EXPECT_EQ(profiles.size(), 6u);
  const json rob = json::parse(Slurp(a_->path() / "rob/group_accuracy.json"));
  EXPECT_GT(rob["pooled"]["total"].get<int>(), 0);
  const json bias = json::parse(Slurp(a_->path() / "bias/bias_discovery.json"));
  EXPECT_TRUE(bias.contains("mean_precision"));
}

TEST_F(CliPipelineTest, DictAnnotateAndShow) {
  const auto& dir = a_->path();
  const std::string text = R"({"0": "first concept", "100000": "nowhere"})";
  testing::WriteBytes(dir / "desc.json", {text.begin(), text.end()});
  Result r = RunCli(dir, "dict annotate --dict m/dict.json --descriptions desc.json "
                         "--source test --out annotated/dict.json");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("1 descriptions attached"), std::string::npos);
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  r = RunCli(dir, "dict show --dict annotated/dict.json --concept 0");
  ASSERT_EQ(r.code, 0) << r.err;
  const json entry = json::parse(r.out);
  EXPECT_EQ(entry["description"], "first concept");
  EXPECT_EQ(entry["description_source"], "test");
  r = RunCli(dir, "dict show --dict m/dict.json --retained-only");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("retained"), std::string::npos);
}

TEST_F(CliPipelineTest, InspectKnowsEveryBinaryFormat) {
  const auto& dir = a_->path();
  EXPECT_EQ(json::parse(RunCli(dir, "inspect c/train.csem").out)["grid_side"], 4);
  EXPECT_EQ(json::parse(RunCli(dir, "inspect m/model.csae").out)["latent_dim"], 128);
  EXPECT_EQ(json::parse(RunCli(dir, "inspect m/test.csac").out)["records"], 144);
}

TEST_F(CliPipelineTest, CorrelationCommand) {
  const auto& dir = a_->path();
  std::string csv = "image_id,similarity\n";
  for (int id = 600; id < 744; ++id) {
    csv += std::to_string(id) + "," + std::to_string(id % 7) + "\n";
  }
  testing::WriteBytes(dir / "sim.csv", {csv.begin(), csv.end()});
  const Result r = RunCli(dir, "eval correlation --activations m/test.csac "
                               "--similarities sim.csv --concept 0 --bins 10 "
                               "--out corr");
  ASSERT_EQ(r.code, 0) << r.err;
  const json doc = json::parse(Slurp(dir / "corr/correlation.json"));
  EXPECT_TRUE(doc.contains("pearson"));
}

TEST(CliErrorTest, MachineReadableErrors) {
  TempDir dir;
  Result r = RunCli(dir.path(), "train --archive missing.csem --out m.csae");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(LastErrorJson(r.err)["error"]["kind"], "usage");

  r = RunCli(dir.path(), "synth --preset planted-bias --out x --bogus 1");
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(LastErrorJson(r.err)["error"]["kind"], "usage");

  const std::string junk = "XXXXjunk";
  testing::WriteBytes(dir / "junk.bin", {junk.begin(), junk.end()});
  r = RunCli(dir.path(), "inspect junk.bin");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(LastErrorJson(r.err)["error"]["kind"], "format");

  testing::WriteBytes(dir / "bad.csem", {junk.begin(), junk.end()});
  r = RunCli(dir.path(), "train --archive bad.csem --out m.csae --epochs 1");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(LastErrorJson(r.err)["error"]["kind"], "format");

  r = RunCli(dir.path(), "synth --preset planted-bias --out y",
             "CONCEPTSCOPE_THREADS=zero");
  EXPECT_EQ(r.code, 0);  // synth does not use workers
  r = RunCli(dir.path(), "train --archive y/train.csem --out m.csae --epochs 1",
             "CONCEPTSCOPE_THREADS=zero");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(LastErrorJson(r.err)["error"]["kind"], "invalid_argument");

  r = RunCli(dir.path(), "--version");
  EXPECT_EQ(r.code, 0);
}

}  // namespace
}  // namespace conceptscope
