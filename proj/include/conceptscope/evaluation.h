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

#ifndef CONCEPTSCOPE_EVALUATION_H_
#define CONCEPTSCOPE_EVALUATION_H_

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
#include "conceptscope/sae_model.h"

namespace conceptscope {

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Predictions are `score >= threshold`. Points run over the distinct scores
// in ascending threshold order.
struct PrCurve {
  std::vector<PrPoint> points;
  double auprc = 0.0;
  double best_f1 = 0.0;
  double best_threshold = 0.0;
  std::uint64_t positives = 0;
  std::uint64_t total = 0;
};

// Average precision: sum over distinct thresholds of (recall step) x
// precision. Tied scores form one step. Throws InvalidArgument when no label
// is positive.
PrCurve ComputePrCurve(std::span<const double> scores,
                       std::span<const std::uint8_t> labels);

// F1 of the fixed rule `score >= threshold`.
double F1AtThreshold(std::span<const double> scores,
                     std::span<const std::uint8_t> labels, double threshold);

// attribute -> image id -> 0/1.
using AttributeLabels = std::map<std::string, std::map<ImageId, std::uint8_t>>;

// CSV `image_id,attribute,value` with value 0 or 1. A header line is
// optional.
AttributeLabels LoadAttributeLabels(const std::filesystem::path& path);
void SaveAttributeLabels(const std::filesystem::path& path,
                         const AttributeLabels& labels);

struct LatentChoice {
  ConceptId concept_id = 0;
  double train_auprc = 0.0;
  double threshold = 0.0;
  double train_f1 = 0.0;

  bool operator==(const LatentChoice&) const = default;
};

using LatentAssignment = std::map<std::string, LatentChoice>;

struct AssignOptions {
  std::size_t sample_per_class = 100;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

// Seeded sample of up to `sample_per_class` images per class, ascending id,
// deduplicated across classes.
std::vector<ImageId> SampleImagesPerClass(const DatasetManifest& manifest,
                                          std::size_t per_class,
                                          std::uint64_t seed);

// For each attribute, the retained latent whose image-level activation has
// the highest AUPRC on the sample (ties to the lower id) and its F1-optimal
// threshold. Only sampled images labelled for the attribute take part.
// Throws InvalidArgument for an attribute without positives or negatives.
LatentAssignment AssignLatents(const ActivationSet& train,
                               const DatasetManifest& manifest,
                               const AttributeLabels& labels,
                               std::span<const ConceptId> retained,
                               const AssignOptions& options = {});

std::string AssignmentToJson(const LatentAssignment& assignment);
LatentAssignment AssignmentFromJson(const std::string& text);

struct AttributePrediction {
  std::string attribute;
  ConceptId concept_id = 0;
  double auprc = 0.0;
  double f1 = 0.0;
  std::uint64_t images = 0;
  std::uint64_t positives = 0;
};

struct ConceptPredictionReport {
  std::vector<AttributePrediction> rows;
  double mean_auprc = 0.0;
  double mean_f1 = 0.0;
  std::vector<std::string> skipped;
};

// Scores each assigned attribute on the labelled images of `test`, using
// the train threshold for F1. Attributes without test positives are skipped.
ConceptPredictionReport EvaluateConceptPrediction(
    const LatentAssignment& assignment, const ActivationSet& test,
    const AttributeLabels& labels);

std::string ToJson(const ConceptPredictionReport& report);
std::string ToCsv(const ConceptPredictionReport& report);

// Ground truth for one attribute in one image. Either a patch grid
// (`height` == `width` == 0, `side` set) or a pixel mask that is
// downsampled to the model's patch grid.
struct GroundTruthMask {
  ImageId image_id = 0;
  std::string attribute;
  std::size_t side = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  bool operator==(const GroundTruthMask&) const = default;
};

// JSON lines: {"image_id", "attribute", "side"} or {"height", "width"},
// plus "mask" as run lengths.
std::vector<GroundTruthMask> LoadGroundTruthMasks(
    const std::filesystem::path& path);
void SaveGroundTruthMasks(const std::filesystem::path& path,
                          std::span<const GroundTruthMask> masks);

struct SegmentationRow {
  std::string attribute;
  ConceptId concept_id = 0;
  double auprc = 0.0;
  std::uint64_t images = 0;
  std::uint64_t patches = 0;
  std::uint64_t positives = 0;
};

struct SegmentationReport {
  std::vector<SegmentationRow> rows;
  double mean_auprc = 0.0;
  std::vector<std::string> skipped;
};

// Min-max normalized patch activations of the assigned latent against the
// ground-truth patches, pooled over every image with a mask for the
// attribute. Throws InvalidArgument for an attribute whose pooled masks have
// no positive patch. Attributes missing from `assignment` are skipped.
SegmentationReport EvaluateSegmentation(
    const SaeModel& model, const std::filesystem::path& archive,
    std::span<const GroundTruthMask> masks, const LatentAssignment& assignment);

std::string ToJson(const SegmentationReport& report);
std::string ToCsv(const SegmentationReport& report);

struct CorrelationResult {
  double pearson = 0.0;
  double spearman = 0.0;
  std::size_t bins = 0;
  std::size_t images = 0;
  std::vector<std::string> warnings;
};

double Pearson(std::span<const double> x, std::span<const double> y);
// Pearson over average ranks.
double Spearman(std::span<const double> x, std::span<const double> y);
std::vector<double> AverageRanks(std::span<const double> values);

struct ScoredPair {
  ImageId image_id = 0;
  double activation = 0.0;
  double similarity = 0.0;
};

// Keeps images with activation > 0, sorts them by activation (ties by id),
// cuts them into `n_bins` percentile groups and correlates the group means.
// Fewer images than bins reduces the bin count with a warning; fewer than
// two images throws InvalidArgument.
CorrelationResult ActivationSimilarityCorrelation(std::span<const ScoredPair> pairs,
                                                  std::size_t n_bins = 100);

// CSV `image_id,similarity`.
std::map<ImageId, double> LoadSimilarities(const std::filesystem::path& path);

std::string ToJson(const CorrelationResult& result);
std::string ToCsv(const CorrelationResult& result);

// concept -> attribute it stands for.
using ConceptAttributes = std::map<ConceptId, std::string>;

// Names each concept by the attribute its activation predicts best (highest
// AUPRC over all labelled images, ties to the smaller attribute name).
ConceptAttributes LabelConceptsByAttribute(const ActivationSet& activations,
                                           const AttributeLabels& labels,
                                           std::span<const ConceptId> concepts);

// JSON object mapping concept id (as a string) to attribute.
std::string ConceptAttributesToJson(const ConceptAttributes& attributes);
ConceptAttributes ConceptAttributesFromJson(const std::string& text);

struct BiasPair {
  std::string class_name;
  ConceptId concept_id = 0;
  std::string attribute;
  std::vector<std::string> source_classes;
  std::vector<ImageId> retrieved;
  std::uint64_t hits = 0;
  std::size_t denominator = 0;
  double precision = 0.0;
  // Fewer than k images were retrievable.
  bool short_list = false;
};

struct BiasDiscoveryResult {
  std::vector<BiasPair> pairs;
  double mean_precision = 0.0;
  std::vector<std::string> classes_without_bias;
  std::vector<std::string> warnings;
};

// For each class y and each concept that is bias for some other class, ranks
// y's test images by that concept (ties by ascending id), keeps the top k and
// counts images labelled with the concept's attribute.
BiasDiscoveryResult DiscoverBias(std::span<const ClassConceptProfile> profiles,
                                 const ActivationSet& test,
                                 const DatasetManifest& test_manifest,
                                 const AttributeLabels& test_labels,
                                 const ConceptAttributes& concept_attributes,
                                 std::size_t k = 10);

std::string ToJson(const BiasDiscoveryResult& result);
std::string ToCsv(const BiasDiscoveryResult& result);

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_EVALUATION_H_
