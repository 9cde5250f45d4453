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

#ifndef CONCEPTSCOPE_ROBUSTNESS_H_
#define CONCEPTSCOPE_ROBUSTNESS_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conceptscope/activations.h"
#include "conceptscope/categorizer.h"
#include "conceptscope/common.h"
#include "conceptscope/manifest.h"

namespace conceptscope {

// How several target (or bias) concepts combine into one high/low flag.
enum class HighRule {
  kAny,   // any concept above its train mean
  kMean,  // mean excess over the train means above zero
};
std::string ToString(HighRule rule);
HighRule HighRuleFromString(const std::string& text);

// Group 1 = high target / high bias, 2 = high / low, 3 = low / high,
// 4 = low / low.
int SubgroupOf(bool target_high, bool bias_high);

struct SubgroupAssignment {
  ImageId image_id = 0;
  std::string class_name;
  bool target_high = false;
  bool bias_high = false;
  int group = 4;

  bool operator==(const SubgroupAssignment&) const = default;
};

struct SubgroupResult {
  std::vector<SubgroupAssignment> assignments;
  // "class: reason" for classes without a target or bias concept.
  std::vector<std::string> skipped;
};

// A concept is high for an image when its test activation strictly exceeds
// the class's train mean of that concept (`train_strengths`). Images are
// visited per class in manifest order.
SubgroupResult AssignSubgroups(const ConceptStrengthTable& train_strengths,
                               const ActivationSet& test,
                               const DatasetManifest& test_manifest,
                               std::span<const ClassConceptProfile> profiles,
                               HighRule rule = HighRule::kAny);

// CSV `image_id,predicted_class`; a header line is optional.
std::map<ImageId, std::string> LoadPredictions(const std::filesystem::path& path);
void SavePredictions(const std::filesystem::path& path,
                     const std::map<ImageId, std::string>& predictions);

struct GroupStats {
  std::array<std::uint64_t, 4> sizes{};
  std::array<std::uint64_t, 4> correct{};
  // Empty for a group without images.
  std::array<std::optional<double>, 4> accuracy{};
  // Mean over the groups that have images.
  std::optional<double> mean_of_groups;
  std::uint64_t total = 0;
};

struct GroupAccuracyReport {
  std::vector<std::pair<std::string, GroupStats>> per_class;
  GroupStats pooled;
};

// Throws InvalidArgument listing the assigned ids that have no prediction.
GroupAccuracyReport GroupAccuracy(
    std::span<const SubgroupAssignment> assignments,
    const std::map<ImageId, std::string>& predictions);

std::string ToJson(const GroupAccuracyReport& report,
                   std::span<const std::string> skipped = {});
std::string ToCsv(const GroupAccuracyReport& report);
std::string AssignmentsToCsv(std::span<const SubgroupAssignment> assignments);

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_ROBUSTNESS_H_
