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

#ifndef CONCEPTSCOPE_SYNTH_H_
#define CONCEPTSCOPE_SYNTH_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "conceptscope/common.h"
#include "conceptscope/manifest.h"
#include "conceptscope/sae_model.h"
#include "conceptscope/sae_train.h"

namespace conceptscope {

// Sparse combinations of random unit atoms. Every token of every image is
// an independent draw.
struct PlantedDictionaryConfig {
  std::size_t dim = 16;
  std::size_t atoms = 32;
  std::size_t active = 3;
  std::size_t images = 10000;
  std::size_t tokens = 5;
  double coef_lo = 0.5;
  double coef_hi = 1.5;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

struct PlantedDictionary {
  std::size_t dim = 0;
  std::vector<std::vector<double>> atoms;
};

// Writes train.csem, manifest.json (one class) and atoms.json to `out`.
PlantedDictionary GeneratePlantedDictionary(const PlantedDictionaryConfig& config,
                                            const std::filesystem::path& out);

struct AtomMatch {
  std::size_t matched = 0;
  std::size_t atoms = 0;
  double mean_abs_cosine = 0.0;
  double fraction() const {
    return atoms == 0 ? 0.0 : static_cast<double>(matched) / atoms;
  }
};

// Training settings that recover the planted dictionary at its default size.
TrainConfig PlantedDictionaryTrainConfig(std::uint64_t seed = 0);

// Greedy one-to-one matching of atoms to decoder rows by |cosine|, best pair
// first. Pairs at or above `min_abs_cosine` count as matched.
AtomMatch MatchAtoms(const std::vector<std::vector<double>>& atoms,
                     const SaeModel& model, double min_abs_cosine = 0.9);

// Classes are objects on a patch grid over backgrounds. Each class is paired
// with one background that appears in `correlation` of its train images;
// the test split is balanced over backgrounds. Orthonormal atoms cover the
// objects, the backgrounds, a class-token atom and a texture present
// everywhere.
struct PlantedBiasConfig {
  std::size_t classes = 6;
  std::size_t dim = 32;
  std::size_t side = 4;
  double correlation = 0.95;
  std::size_t train_per_class = 400;
  std::size_t test_per_class = 120;
  double object_lo = 1.0;
  double object_hi = 3.0;
  double background_lo = 0.5;
  double background_hi = 1.5;
  double background_cover = 0.7;
  double texture_lo = 0.3;
  double texture_hi = 0.5;
  double noise = 0.03;
  // Test split with four planted target x bias groups instead of the
  // balanced one.
  bool subgroups = false;
  std::uint64_t seed = 0;
};

struct PlantedBiasCorpus {
  std::vector<std::string> classes;
  std::vector<std::string> backgrounds;
  // class -> its correlated background
  std::map<std::string, std::string> biased_background;
  std::map<std::string, std::vector<double>> atoms;
};

// Training settings for the planted-bias corpus at its default size.
TrainConfig PlantedBiasTrainConfig(std::uint64_t seed = 0);

std::vector<std::string> PlantedClassNames(std::size_t count);
std::vector<std::string> PlantedBackgroundNames(std::size_t count);

// Writes to `out`:
//   train.csem, test.csem, train_manifest.json, test_manifest.json,
//   class_embeddings.bin (+ .json sidecar), train_attributes.csv,
//   test_attributes.csv, test_gt_masks.jsonl, predictions.csv (nearest
//   centroid classifier fit on train), planted_groups.csv (subgroups only),
//   synth.json.
PlantedBiasCorpus GeneratePlantedBias(const PlantedBiasConfig& config,
                                      const std::filesystem::path& out);

// Nearest class centroid on the mean token embedding, cosine similarity.
class CentroidClassifier {
 public:
  static CentroidClassifier Fit(const std::filesystem::path& archive,
                                const DatasetManifest& manifest);
  std::map<ImageId, std::string> Predict(
      const std::filesystem::path& archive) const;

 private:
  std::vector<std::string> classes_;
  std::vector<std::vector<double>> centroids_;
};

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_SYNTH_H_
