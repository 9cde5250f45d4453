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

#include "conceptscope/concept_dictionary.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "test_util.h"

namespace conceptscope {
namespace {

using testing::TempDir;

ActivationRecord MakeRecord(ImageId id, std::size_t dim,
                            std::vector<std::pair<ConceptId, float>> entries) {
  ActivationRecord r;
  r.image_id = id;
  r.image_level.dim = dim;
  for (auto [c, v] : entries) {
    r.image_level.indices.push_back(c);
    r.image_level.values.push_back(v);
  }
  return r;
}

std::vector<ActivationRecord> RandomCorpus(std::mt19937_64& rng,
                                           std::size_t images,
                                           std::size_t latent_dim) {
  std::uniform_real_distribution<float> value(0.0f, 1.5f);
  std::vector<ActivationRecord> records;
  for (ImageId id = 0; id < images; ++id) {
    std::vector<std::pair<ConceptId, float>> entries;
    for (ConceptId c = 0; c < latent_dim; ++c) {
      // Latent c fires with probability growing in c.
      if (rng() % latent_dim < c / 2 + 1) entries.emplace_back(c, value(rng));
    }
    records.push_back(MakeRecord(id, latent_dim, entries));
  }
  return records;
}

TEST(FilterLatentsTest, FloorAndCeiling) {
  // Concept 0: max 0.4. Concept 1: max 0.9, mean 0.25. Concept 2: max 0.9,
  // mean 0.09.
  std::vector<ActivationRecord> records;
  for (ImageId id = 0; id < 10; ++id) {
    std::vector<std::pair<ConceptId, float>> entries = {{0, 0.4f}};
    if (id < 2) entries.emplace_back(1, id == 0 ? 0.9f : 0.8f);
    if (id == 0) entries.emplace_back(2, 0.9f);
    // Bring concept 1's mean to 0.25.
    if (id >= 2 && id < 10) entries.emplace_back(1, 0.1f);
    records.push_back(MakeRecord(id, 3, entries));
  }
  const auto dict = FilterLatents(records, 3);
  ASSERT_EQ(dict.entries.size(), 3u);
  EXPECT_FALSE(dict.entries[0].retained);
  EXPECT_NEAR(dict.entries[0].max_activation, 0.4, 1e-7);
  EXPECT_FALSE(dict.entries[1].retained);
  EXPECT_NEAR(dict.entries[1].global_strength, 0.25, 1e-6);
  EXPECT_TRUE(dict.entries[2].retained);
  EXPECT_NEAR(dict.entries[2].global_strength, 0.09, 1e-7);
  EXPECT_EQ(dict.RetainedIds(), (std::vector<ConceptId>{2}));
  EXPECT_EQ(dict.corpus_images, 10u);
}

TEST(FilterLatentsTest, DefaultThresholds) {
  const FilterThresholds t;
  EXPECT_EQ(t.max_act_floor, 0.5);
  EXPECT_EQ(t.strength_ceiling, 0.1);
}

TEST(FilterLatentsTest, MaxExactlyAtFloorIsDiscarded) {
  std::vector<ActivationRecord> records = {MakeRecord(1, 1, {{0, 0.5f}})};
  for (ImageId id = 2; id < 20; ++id) records.push_back(MakeRecord(id, 1, {}));
  EXPECT_FALSE(FilterLatents(records, 1).entries[0].retained);
}

TEST(FilterLatentsTest, EmptyCorpusFails) {
  EXPECT_THROW(FilterLatents({}, 4), InvalidArgument);
}

TEST(FilterLatentsTest, IdempotentAndMonotone) {
  std::mt19937_64 rng(3);
  const auto records = RandomCorpus(rng, 200, 24);
  const FilterThresholds t{0.5, 0.1};
  const auto once = FilterLatents(records, 24, t);
  EXPECT_EQ(Refilter(once, t), once);
  EXPECT_EQ(Refilter(Refilter(once, t), t), once);
  EXPECT_EQ(once.entries.size(), 24u);

  auto subset = [](const std::vector<ConceptId>& a,
                   const std::vector<ConceptId>& b) {
    return std::includes(b.begin(), b.end(), a.begin(), a.end());
  };
  for (double floor = 1.6; floor >= 0.0; floor -= 0.1) {
    const auto higher = Refilter(once, {floor + 0.1, 0.1}).RetainedIds();
    const auto lower = Refilter(once, {floor, 0.1}).RetainedIds();
    EXPECT_TRUE(subset(higher, lower));
  }
  for (double ceiling = 1.0; ceiling >= 0.0; ceiling -= 0.05) {
    const auto higher = Refilter(once, {0.5, ceiling + 0.05}).RetainedIds();
    const auto lower = Refilter(once, {0.5, ceiling}).RetainedIds();
    EXPECT_TRUE(subset(lower, higher));
  }
  EXPECT_EQ(Refilter(once, {100.0, 0.1}).entries.size(), 24u);
}

TEST(ExemplarTest, ActiveOnThreeImages) {
  std::vector<ActivationRecord> records;
  for (ImageId id = 0; id < 40; ++id) {
    std::vector<std::pair<ConceptId, float>> entries;
    if (id == 4) entries.emplace_back(0, 0.6f);
    if (id == 9) entries.emplace_back(0, 0.9f);
    if (id == 12) entries.emplace_back(0, 0.6f);
    entries.emplace_back(1, 0.01f);
    records.push_back(MakeRecord(id, 2, entries));
  }
  auto dict = FilterLatents(records, 2);
  ASSERT_TRUE(dict.entries[0].retained);
  ASSERT_FALSE(dict.entries[1].retained);
  AttachExemplars(dict, records);
  EXPECT_EQ(dict.entries[0].exemplar_ids, (std::vector<ImageId>{9, 4, 12}));
  EXPECT_TRUE(dict.entries[1].exemplar_ids.empty());
}

TEST(ExemplarTest, MatchesFullSortOracle) {
  std::mt19937_64 rng(4);
  const auto records = RandomCorpus(rng, 300, 16);
  auto dict = FilterLatents(records, 16, {0.5, 1.0});
  AttachExemplars(dict, records, 5);
  for (const auto& e : dict.entries) {
    if (!e.retained) {
      EXPECT_TRUE(e.exemplar_ids.empty());
      continue;
    }
    std::vector<std::pair<float, ImageId>> all;
    for (const auto& r : records) {
      const float v = r.image_level.at(e.concept_id);
      if (v > 0) all.emplace_back(v, r.image_id);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::vector<ImageId> expected;
    for (std::size_t i = 0; i < std::min<std::size_t>(5, all.size()); ++i) {
      expected.push_back(all[i].second);
    }
    EXPECT_EQ(e.exemplar_ids, expected) << "concept " << e.concept_id;
  }
}

TEST(DescriptionsTest, EmptyFileLeavesDictionaryUnchanged) {
  std::mt19937_64 rng(5);
  auto dict = FilterLatents(RandomCorpus(rng, 20, 4), 4);
  const auto before = dict;
  const auto report = IngestDescriptions(dict, "", "user");
  EXPECT_EQ(dict, before);
  EXPECT_EQ(report.attached, 0u);
  EXPECT_TRUE(report.warnings.empty());
}

TEST(DescriptionsTest, OutOfRangeIdWarns) {
  std::mt19937_64 rng(6);
  auto dict = FilterLatents(RandomCorpus(rng, 20, 4), 4);
  const auto report = IngestDescriptions(
      dict, R"({"1": "striped fur", "4": "nothing", "x": "bad"})", "vlm");
  EXPECT_EQ(report.attached, 1u);
  ASSERT_EQ(report.warnings.size(), 2u);
  EXPECT_NE(report.warnings[0].find("outside"), std::string::npos);
  EXPECT_EQ(dict.entries[1].description, "striped fur");
  EXPECT_EQ(dict.entries[1].description_source, "vlm");
  EXPECT_FALSE(dict.entries[0].description.has_value());
}

TEST(DescriptionsTest, MalformedFileFails) {
  ConceptDictionary dict;
  dict.entries.resize(2);
  EXPECT_THROW(IngestDescriptions(dict, "{not json", "u"), FormatError);
  EXPECT_THROW(IngestDescriptions(dict, "[1, 2]", "u"), FormatError);
  EXPECT_THROW(IngestDescriptions(dict, R"({"0": 5})", "u"), FormatError);
}

TEST(DescriptionsTest, ExportThenIngestRoundTrips) {
  std::mt19937_64 rng(7);
  auto dict = FilterLatents(RandomCorpus(rng, 30, 6), 6);
  IngestDescriptions(dict, R"({"0": "sky", "3": "sand \"dune\"", "5": "ü"})",
                     "user");
  const std::string exported = ExportDescriptions(dict);
  auto fresh = FilterLatents(RandomCorpus(rng, 30, 6), 6);
  IngestDescriptions(fresh, exported, "user");
  for (std::size_t c = 0; c < 6; ++c) {
    EXPECT_EQ(fresh.entries[c].description, dict.entries[c].description);
  }
}

TEST(DictionaryJsonTest, RoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(8);
  const auto records = RandomCorpus(rng, 100, 12);
  auto dict = FilterLatents(records, 12, {0.5, 0.4}, 0xdeadbeef);
  AttachExemplars(dict, records);
  IngestDescriptions(dict, R"({"2": "water"})", "user");
  SaveDictionary(dict, dir / "d.json");
  const auto loaded = LoadDictionary(dir / "d.json");
  EXPECT_EQ(loaded, dict);
  SaveDictionary(loaded, dir / "e.json");
  EXPECT_EQ(testing::ReadBytes(dir / "d.json"),
            testing::ReadBytes(dir / "e.json"));
  EXPECT_THROW(DictionaryFromJson("{}"), FormatError);
}

}  // namespace
}  // namespace conceptscope
