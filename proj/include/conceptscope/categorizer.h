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

#ifndef CONCEPTSCOPE_CATEGORIZER_H_
#define CONCEPTSCOPE_CATEGORIZER_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "conceptscope/activations.h"
#include "conceptscope/common.h"
#include "conceptscope/confidence_provider.h"
#include "conceptscope/manifest.h"
#include "conceptscope/sae_model.h"

namespace conceptscope {

struct JobPlanOptions {
  std::size_t sample_n = 128;
  std::size_t top_m = 20;
  std::uint64_t seed = 0;
};

// The class's top_m retained concepts by strength (strength > 0, ties by
// lower id) crossed with a seeded sample of min(sample_n, class size) of its
// images. Image-major order.
std::vector<std::pair<ImageId, ConceptId>> PlanMaskJobs(
    const std::string& class_name, const DatasetManifest& manifest,
    const ConceptStrengthTable& strengths, std::span<const ConceptId> retained,
    const JobPlanOptions& options);

// Attaches concept masks computed from the archive's token embeddings.
std::vector<MaskJob> BuildMaskJobs(
    const SaeModel& model, const std::filesystem::path& archive,
    const std::string& class_name,
    std::span<const std::pair<ImageId, ConceptId>> plan,
    double mask_threshold = kDefaultMaskThreshold);

struct AlignmentScore {
  std::string class_name;
  ConceptId concept_id = 0;
  double necessity = 0.0;
  double sufficiency = 0.0;
  double alignment = 0.0;
  std::uint64_t n_images = 0;

  bool operator==(const AlignmentScore&) const = default;
};

struct AlignmentResult {
  // Groups in order of first appearance.
  std::vector<AlignmentScore> scores;
  std::uint64_t dropped = 0;
};

// N = mean p_full / p_removed, S = mean p_only / p_full, A = (N + S) / 2 per
// (class, concept). Triples with p_full <= 0 or p_removed <= 0 are dropped and
// counted; a group whose triples are all dropped is an error.
AlignmentResult AlignmentScores(std::span<const ConfidenceTriple> triples);

struct SilhouetteSelection {
  double alpha = 0.0;
  double silhouette = 0.0;
  bool degenerate = false;
};

// Mean silhouette of the split {x < threshold} / {x >= threshold} in 1-D.
// Points in singleton clusters score 0; a split with an empty side scores 0.
double SplitSilhouette(std::span<const double> values, double threshold);

std::vector<double> DefaultAlphaGrid();

// Splits at mu + alpha * sigma (population sigma) for each alpha in `grid`
// and returns the alpha with the highest silhouette, ties to the smaller
// alpha. Identical inputs give (0, 0, degenerate).
SilhouetteSelection SelectAlphaBySilhouette(
    std::span<const double> scores,
    std::span<const double> grid = DefaultAlphaGrid());

enum class Category { kTarget, kContext, kBias, kInactive };
std::string ToString(Category category);
Category CategoryFromString(const std::string& text);

struct ProfileEntry {
  ConceptId concept_id = 0;
  double strength = 0.0;
  std::optional<AlignmentScore> alignment;
  Category category = Category::kInactive;

  bool operator==(const ProfileEntry&) const = default;
};

struct ClassConceptProfile {
  std::string class_name;
  double alpha_align = 0.0;
  bool alpha_auto = false;
  double silhouette = 0.0;
  double alpha_cs = 1.0;
  double target_threshold = 0.0;
  double bias_threshold = 0.0;
  bool bias_strict = false;
  std::vector<ProfileEntry> entries;  // retained concepts, ascending id

  std::vector<ConceptId> Of(Category category) const;
  // Bias concepts are also context concepts.
  bool IsContext(const ProfileEntry& entry) const {
    return entry.category == Category::kContext ||
           entry.category == Category::kBias;
  }

  bool operator==(const ClassConceptProfile&) const = default;
};

struct CategorizeOptions {
  // Empty selects alpha by silhouette over DefaultAlphaGrid().
  std::optional<double> alpha_align;
  double alpha_cs = 1.0;
};

// `strengths` is the class's strength row (length d'). `scores` are the
// class's alignment scores. Throws InvalidArgument for fewer than 2 scores.
ClassConceptProfile Categorize(const std::string& class_name,
                               std::span<const double> strengths,
                               std::span<const ConceptId> retained,
                               std::span<const AlignmentScore> scores,
                               const CategorizeOptions& options = {});

std::string ProfilesToJson(std::span<const ClassConceptProfile> profiles);
std::vector<ClassConceptProfile> ProfilesFromJson(const std::string& text);
void SaveProfiles(const std::filesystem::path& path,
                  std::span<const ClassConceptProfile> profiles);
std::vector<ClassConceptProfile> LoadProfiles(const std::filesystem::path& path);

struct CategorizationRun {
  std::vector<ClassConceptProfile> profiles;
  std::vector<AlignmentScore> scores;
  std::vector<ConfidenceTriple> triples;
  std::uint64_t jobs = 0;
  std::uint64_t dropped = 0;
  std::uint64_t unscored = 0;
  std::vector<std::string> warnings;
};

struct DatasetCategorizeOptions {
  JobPlanOptions plan;
  CategorizeOptions categorize;
  double mask_threshold = kDefaultMaskThreshold;
  // When set, the mask jobs of every class are also written here.
  std::optional<std::filesystem::path> mask_jobs_out;
};

// Plans and scores mask jobs for every class, then categorizes each class.
CategorizationRun CategorizeDataset(const SaeModel& model,
                                    const std::filesystem::path& archive,
                                    const DatasetManifest& manifest,
                                    const ConceptStrengthTable& strengths,
                                    std::span<const ConceptId> retained,
                                    ConfidenceProvider& provider,
                                    const DatasetCategorizeOptions& options);

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_CATEGORIZER_H_
