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

#ifndef CONCEPTSCOPE_CONCEPT_DICTIONARY_H_
#define CONCEPTSCOPE_CONCEPT_DICTIONARY_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conceptscope/activations.h"
#include "conceptscope/common.h"

namespace conceptscope {

struct FilterThresholds {
  // Discard latents whose max image-level activation never exceeds this.
  double max_act_floor = 0.5;
  // Discard latents whose mean image-level activation is above this.
  double strength_ceiling = 0.1;

  bool operator==(const FilterThresholds&) const = default;
};

struct ConceptEntry {
  ConceptId concept_id = 0;
  bool retained = false;
  double max_activation = 0.0;
  double global_strength = 0.0;
  std::vector<ImageId> exemplar_ids;
  std::optional<std::string> description;
  std::optional<std::string> description_source;

  bool operator==(const ConceptEntry&) const = default;
};

struct ConceptDictionary {
  std::uint32_t model_checksum = 0;
  FilterThresholds thresholds;
  std::uint64_t corpus_images = 0;
  std::vector<ConceptEntry> entries;  // one per latent, by concept id

  std::vector<ConceptId> RetainedIds() const;
  double RetainedFraction() const;

  bool operator==(const ConceptDictionary&) const = default;
};

// Single pass over a reference corpus collecting per-latent max and mean.
class FilterAccumulator {
 public:
  explicit FilterAccumulator(std::size_t latent_dim);
  void Add(const ActivationRecord& record);
  // Throws InvalidArgument if no record was added.
  ConceptDictionary Finish(const FilterThresholds& thresholds,
                           std::uint32_t model_checksum) const;

 private:
  std::vector<double> max_;
  std::vector<double> sum_;
  std::uint64_t count_ = 0;
};

ConceptDictionary FilterLatents(std::span<const ActivationRecord> records,
                                std::size_t latent_dim,
                                const FilterThresholds& thresholds = {},
                                std::uint32_t model_checksum = 0);

// Recomputes retention from the stored statistics. Exemplars of concepts
// that drop out are cleared.
ConceptDictionary Refilter(ConceptDictionary dict,
                           const FilterThresholds& thresholds);

// Top-k positively activating images per retained concept, best first, ties by
// ascending id. Discarded concepts get none.
void AttachExemplars(ConceptDictionary& dict,
                     std::span<const ActivationRecord> records,
                     std::size_t k = 5);

struct DescriptionReport {
  std::size_t attached = 0;
  std::vector<std::string> warnings;
};

// Descriptions file: JSON object mapping concept id (as a string) to text.
// An empty file is accepted. Unknown or out-of-range ids become warnings.
DescriptionReport IngestDescriptions(ConceptDictionary& dict,
                                     const std::string& json_text,
                                     const std::string& source);
DescriptionReport IngestDescriptionsFile(ConceptDictionary& dict,
                                         const std::filesystem::path& path,
                                         const std::string& source);
std::string ExportDescriptions(const ConceptDictionary& dict);

std::string DictionaryToJson(const ConceptDictionary& dict);
ConceptDictionary DictionaryFromJson(const std::string& text);
void SaveDictionary(const ConceptDictionary& dict,
                    const std::filesystem::path& path);
ConceptDictionary LoadDictionary(const std::filesystem::path& path);

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_CONCEPT_DICTIONARY_H_
