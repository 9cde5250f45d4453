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

#include "conceptscope/robustness.h"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.h"

namespace conceptscope {
namespace {

using testing::TempDir;

ActivationRecord Record(ImageId id, std::vector<float> dense) {
  ActivationRecord r;
  r.image_id = id;
  r.image_level.dim = dense.size();
  for (std::size_t c = 0; c < dense.size(); ++c) {
    if (dense[c] != 0.0f) {
      r.image_level.indices.push_back(static_cast<ConceptId>(c));
      r.image_level.values.push_back(dense[c]);
    }
  }
  return r;
}

// Concepts: 0 target, 1 bias, 2 second target (for the multi-concept rules).
ClassConceptProfile Profile(const std::string& name, bool two_targets = false,
                            bool with_bias = true) {
  ClassConceptProfile p;
  p.class_name = name;
  const Category cats[3] = {
      Category::kTarget, with_bias ? Category::kBias : Category::kContext,
      two_targets ? Category::kTarget : Category::kContext};
  for (ConceptId c = 0; c < 3; ++c) {
    ProfileEntry e;
    e.concept_id = c;
    e.strength = 0.5;
    e.category = cats[c];
    p.entries.push_back(e);
  }
  return p;
}

ConceptStrengthTable Means(std::vector<std::string> classes,
                           std::vector<double> values) {
  ConceptStrengthTable t;
  t.class_index = std::move(classes);
  t.latent_dim = 3;
  t.values = std::move(values);
  t.class_counts.assign(t.class_index.size(), 10);
  return t;
}

TEST(SubgroupTest, GroupNumbering) {
  EXPECT_EQ(SubgroupOf(true, true), 1);
  EXPECT_EQ(SubgroupOf(true, false), 2);
  EXPECT_EQ(SubgroupOf(false, true), 3);
  EXPECT_EQ(SubgroupOf(false, false), 4);
}

TEST(SubgroupTest, StrictInequalityAtBoundary) {
  DatasetManifest m;
  m.class_index = {"a"};
  m.entries = {{0, "", {"a"}}, {1, "", {"a"}}, {2, "", {"a"}}};
  ActivationSet test;
  test.latent_dim = 3;
  test.records = {Record(0, {0.5f, 0.5f, 0}), Record(1, {0.6f, 0.4f, 0}),
                  Record(2, {0.4f, 0.6f, 0})};
  const auto means = Means({"a"}, {0.5, 0.5, 0.0});
  const std::vector<ClassConceptProfile> profiles = {Profile("a")};
  const auto r = AssignSubgroups(means, test, m, profiles);
  ASSERT_EQ(r.assignments.size(), 3u);
  EXPECT_EQ(r.assignments[0].group, 4);  // equal to the mean is not high
  EXPECT_EQ(r.assignments[1].group, 2);
  EXPECT_EQ(r.assignments[2].group, 3);
}

TEST(SubgroupTest, AnyAndMeanRules) {
  DatasetManifest m;
  m.class_index = {"a"};
  m.entries = {{0, "", {"a"}}};
  ActivationSet test;
  test.latent_dim = 3;
  // Concept 0 above its mean by 0.1, concept 2 below by 0.3.
  test.records = {Record(0, {0.6f, 0.0f, 0.2f})};
  const auto means = Means({"a"}, {0.5, 0.5, 0.5});
  const std::vector<ClassConceptProfile> profiles = {Profile("a", true)};
  EXPECT_TRUE(AssignSubgroups(means, test, m, profiles, HighRule::kAny)
                  .assignments[0]
                  .target_high);
  EXPECT_FALSE(AssignSubgroups(means, test, m, profiles, HighRule::kMean)
                   .assignments[0]
                   .target_high);
  EXPECT_EQ(HighRuleFromString(ToString(HighRule::kMean)), HighRule::kMean);
  EXPECT_THROW(HighRuleFromString("max"), InvalidArgument);
}

TEST(SubgroupTest, PlantedGroupsRecoveredAndPartition) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 0.4f);
  DatasetManifest m;
  m.class_index = {"a", "b"};
  ActivationSet test;
  test.latent_dim = 3;
  std::vector<int> planted;
  for (ImageId id = 0; id < 200; ++id) {
    const int group = 1 + static_cast<int>(rng() % 4);
    planted.push_back(group);
    m.entries.push_back({id, "", {id % 2 ? "b" : "a"}});
    const bool th = group <= 2;
    const bool bh = group == 1 || group == 3;
    test.records.push_back(Record(
        id, {th ? 0.6f + u(rng) : u(rng), bh ? 0.6f + u(rng) : u(rng), 0.3f}));
  }
  const auto means = Means({"a", "b"}, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
  const std::vector<ClassConceptProfile> profiles = {Profile("a"), Profile("b")};
  const auto r = AssignSubgroups(means, test, m, profiles);
  ASSERT_EQ(r.assignments.size(), 200u);
  std::vector<int> seen(200, 0);
  for (const auto& a : r.assignments) {
    EXPECT_EQ(a.group, planted[a.image_id]);
    ++seen[a.image_id];
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(SubgroupTest, MonotoneTransformPreservesAssignments) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  DatasetManifest m;
  m.class_index = {"a"};
  ActivationSet test;
  test.latent_dim = 3;
  for (ImageId id = 0; id < 100; ++id) {
    m.entries.push_back({id, "", {"a"}});
    test.records.push_back(Record(id, {u(rng), u(rng), u(rng)}));
  }
  std::vector<double> mean_values = {0.4, 0.55, 0.5};
  const std::vector<ClassConceptProfile> profiles = {Profile("a", true)};
  const auto base =
      AssignSubgroups(Means({"a"}, mean_values), test, m, profiles);
  auto f = [](double x) { return std::exp(2.0 * x) + 1.0; };
  for (auto& r : test.records) {
    for (float& v : r.image_level.values) v = static_cast<float>(f(v));
  }
  // Zero entries map to f(0) as well; densify so every concept is stored.
  for (auto& r : test.records) {
    auto dense = r.image_level.ToDense();
    for (float& v : dense) {
      if (v == 0.0f) v = static_cast<float>(f(0.0));
    }
    r = Record(r.image_id, dense);
  }
  for (double& v : mean_values) v = static_cast<float>(f(static_cast<float>(v)));
  const auto moved =
      AssignSubgroups(Means({"a"}, mean_values), test, m, profiles);
  EXPECT_EQ(base.assignments, moved.assignments);
}

TEST(SubgroupTest, ClassesWithoutPrerequisitesAreSkipped) {
  DatasetManifest m;
  m.class_index = {"a", "b", "c"};
  m.entries = {{0, "", {"a"}}, {1, "", {"b"}}, {2, "", {"c"}}};
  ActivationSet test;
  test.latent_dim = 3;
  test.records = {Record(0, {1, 1, 1}), Record(1, {1, 1, 1}),
                  Record(2, {1, 1, 1})};
  const std::vector<ClassConceptProfile> profiles = {Profile("a"),
                                                     Profile("b", false, false)};
  const auto r = AssignSubgroups(Means({"a", "b", "c"}, std::vector<double>(9, 0.5)),
                                 test, m, profiles);
  EXPECT_EQ(r.assignments.size(), 1u);
  EXPECT_EQ(r.skipped,
            (std::vector<std::string>{"b: no bias concept", "c: no profile"}));
}

std::vector<SubgroupAssignment> Assignments() {
  std::vector<SubgroupAssignment> out;
  for (ImageId id = 0; id < 12; ++id) {
    const int group = 1 + static_cast<int>(id % 3);  // group 4 left empty
    out.push_back({id, id < 6 ? "a" : "b", group <= 2, group % 2 == 1, group});
  }
  return out;
}

TEST(GroupAccuracyTest, AllCorrect) {
  const auto assignments = Assignments();
  std::map<ImageId, std::string> predictions;
  for (const auto& a : assignments) predictions[a.image_id] = a.class_name;
  const auto report = GroupAccuracy(assignments, predictions);
  for (int g = 0; g < 3; ++g) EXPECT_EQ(report.pooled.accuracy[g], 1.0);
  EXPECT_FALSE(report.pooled.accuracy[3].has_value());
  EXPECT_EQ(report.pooled.mean_of_groups, 1.0);
  std::uint64_t total = 0;
  for (auto s : report.pooled.sizes) total += s;
  EXPECT_EQ(total, 12u);
  ASSERT_EQ(report.per_class.size(), 2u);
  EXPECT_EQ(report.per_class[0].second.total, 6u);
  EXPECT_NE(ToJson(report).find("\"accuracy\": null"), std::string::npos);
}

TEST(GroupAccuracyTest, ClassifierFailingOnlyOnLowLow) {
  std::vector<SubgroupAssignment> assignments;
  for (ImageId id = 0; id < 40; ++id) {
    const int group = 1 + static_cast<int>(id % 4);
    assignments.push_back({id, "a", group <= 2, group % 2 == 1, group});
  }
  std::map<ImageId, std::string> predictions;
  for (const auto& a : assignments) {
    predictions[a.image_id] = a.group == 4 ? "b" : "a";
  }
  const auto report = GroupAccuracy(assignments, predictions);
  EXPECT_EQ(report.pooled.accuracy[0], 1.0);
  EXPECT_EQ(report.pooled.accuracy[1], 1.0);
  EXPECT_EQ(report.pooled.accuracy[2], 1.0);
  EXPECT_EQ(report.pooled.accuracy[3], 0.0);
  EXPECT_EQ(report.pooled.mean_of_groups, 0.75);
}

TEST(GroupAccuracyTest, MissingPredictionsAreListed) {
  const auto assignments = Assignments();
  std::map<ImageId, std::string> predictions = {{0, "a"}, {1, "a"}};
  try {
    GroupAccuracy(assignments, predictions);
    FAIL() << "expected an error";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("10 assigned images"),
              std::string::npos);
    EXPECT_NE(std::string(e.what()).find("2,3,4"), std::string::npos);
  }
}

TEST(PredictionsTest, CsvRoundTrip) {
  TempDir dir;
  const std::map<ImageId, std::string> p = {{3, "cat"}, {10, "dog"}};
  SavePredictions(dir / "p.csv", p);
  EXPECT_EQ(LoadPredictions(dir / "p.csv"), p);
  const std::string dup = "1,a\n1,b\n";
  testing::WriteBytes(dir / "d.csv", {dup.begin(), dup.end()});
  EXPECT_THROW(LoadPredictions(dir / "d.csv"), FormatError);
}

}  // namespace
}  // namespace conceptscope
