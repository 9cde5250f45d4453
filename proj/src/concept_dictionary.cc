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
#include "text_util.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace conceptscope {
namespace {

using text::ReadText;
using text::WriteText;

using nlohmann::json;

bool Retain(const ConceptEntry& e, const FilterThresholds& t) {
  return e.max_activation > t.max_act_floor &&
         e.global_strength <= t.strength_ceiling;
}



}  // namespace

std::vector<ConceptId> ConceptDictionary::RetainedIds() const {
  std::vector<ConceptId> ids;
  for (const auto& e : entries) {
    if (e.retained) ids.push_back(e.concept_id);
  }
  return ids;
}

double ConceptDictionary::RetainedFraction() const {
  if (entries.empty()) return 0.0;
  return static_cast<double>(RetainedIds().size()) /
         static_cast<double>(entries.size());
}

FilterAccumulator::FilterAccumulator(std::size_t latent_dim)
    : max_(latent_dim, 0.0), sum_(latent_dim, 0.0) {}

void FilterAccumulator::Add(const ActivationRecord& record) {
  if (record.image_level.dim != max_.size()) {
    throw DimensionError("activation record has " +
                         std::to_string(record.image_level.dim) +
                         " dims, expected " + std::to_string(max_.size()));
  }
  for (std::size_t k = 0; k < record.image_level.nnz(); ++k) {
    const ConceptId c = record.image_level.indices[k];
    const double v = record.image_level.values[k];
    max_[c] = std::max(max_[c], v);
    sum_[c] += v;
  }
  ++count_;
}

ConceptDictionary FilterAccumulator::Finish(const FilterThresholds& thresholds,
                                            std::uint32_t model_checksum) const {
  if (count_ == 0) {
    throw InvalidArgument("cannot filter latents over an empty corpus");
  }
  ConceptDictionary dict;
  dict.model_checksum = model_checksum;
  dict.thresholds = thresholds;
  dict.corpus_images = count_;
  dict.entries.resize(max_.size());
  for (std::size_t c = 0; c < max_.size(); ++c) {
    ConceptEntry& e = dict.entries[c];
    e.concept_id = static_cast<ConceptId>(c);
    e.max_activation = max_[c];
    e.global_strength = sum_[c] / static_cast<double>(count_);
    e.retained = Retain(e, thresholds);
  }
  return dict;
}

ConceptDictionary FilterLatents(std::span<const ActivationRecord> records,
                                std::size_t latent_dim,
                                const FilterThresholds& thresholds,
                                std::uint32_t model_checksum) {
  FilterAccumulator acc(latent_dim);
  for (const auto& r : records) acc.Add(r);
  return acc.Finish(thresholds, model_checksum);
}

ConceptDictionary Refilter(ConceptDictionary dict,
                           const FilterThresholds& thresholds) {
  dict.thresholds = thresholds;
  for (auto& e : dict.entries) {
    e.retained = Retain(e, thresholds);
    if (!e.retained) e.exemplar_ids.clear();
  }
  return dict;
}

void AttachExemplars(ConceptDictionary& dict,
                     std::span<const ActivationRecord> records, std::size_t k) {
  std::vector<std::optional<TopK>> top(dict.entries.size());
  for (const auto& e : dict.entries) {
    if (e.retained) top[e.concept_id].emplace(k);
  }
  for (const auto& r : records) {
    if (r.image_level.dim != dict.entries.size()) {
      throw DimensionError("activation record does not match dictionary size");
    }
    for (std::size_t n = 0; n < r.image_level.nnz(); ++n) {
      auto& slot = top[r.image_level.indices[n]];
      if (slot && r.image_level.values[n] > 0.0f) {
        slot->Offer(r.image_id, r.image_level.values[n]);
      }
    }
  }
  for (auto& e : dict.entries) {
    e.exemplar_ids.clear();
    if (!top[e.concept_id]) continue;
    for (const auto& [id, value] : top[e.concept_id]->Sorted()) {
      e.exemplar_ids.push_back(id);
    }
  }
}

DescriptionReport IngestDescriptions(ConceptDictionary& dict,
                                     const std::string& json_text,
                                     const std::string& source) {
  DescriptionReport report;
  if (json_text.find_first_not_of(" \t\r\n") == std::string::npos) {
    return report;
  }
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError("descriptions", e.what());
  }
  if (!doc.is_object()) {
    throw FormatError("descriptions", "expected a JSON object of id -> text");
  }
  for (const auto& [key, value] : doc.items()) {
    if (!value.is_string()) {
      throw FormatError("descriptions",
                        "description for '" + key + "' is not a string");
    }
    std::size_t pos = 0;
    unsigned long long id = 0;
    try {
      id = std::stoull(key, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != key.size()) {
      report.warnings.push_back("ignoring non-numeric concept id '" + key +
                                "'");
      continue;
    }
    if (id >= dict.entries.size()) {
      report.warnings.push_back("concept id " + key + " outside [0, " +
                                std::to_string(dict.entries.size()) + ")");
      continue;
    }
    dict.entries[id].description = value.get<std::string>();
    dict.entries[id].description_source = source;
    ++report.attached;
  }
  return report;
}

DescriptionReport IngestDescriptionsFile(ConceptDictionary& dict,
                                         const std::filesystem::path& path,
                                         const std::string& source) {
  return IngestDescriptions(dict, ReadText(path), source);
}

std::string ExportDescriptions(const ConceptDictionary& dict) {
  json doc = json::object();
  for (const auto& e : dict.entries) {
    if (e.description) doc[std::to_string(e.concept_id)] = *e.description;
  }
  return doc.dump(2);
}

std::string DictionaryToJson(const ConceptDictionary& dict) {
  json doc;
  doc["model_checksum"] = dict.model_checksum;
  doc["thresholds"] = {{"max_act_floor", dict.thresholds.max_act_floor},
                       {"strength_ceiling", dict.thresholds.strength_ceiling}};
  doc["corpus_images"] = dict.corpus_images;
  doc["latent_dim"] = dict.entries.size();
  doc["retained_count"] = dict.RetainedIds().size();
  json entries = json::array();
  for (const auto& e : dict.entries) {
    json item = {{"concept_id", e.concept_id},
                 {"retained", e.retained},
                 {"max_activation", e.max_activation},
                 {"global_strength", e.global_strength},
                 {"exemplar_ids", e.exemplar_ids}};
    if (e.description) item["description"] = *e.description;
    if (e.description_source) {
      item["description_source"] = *e.description_source;
    }
    entries.push_back(std::move(item));
  }
  doc["entries"] = std::move(entries);
  return doc.dump(2);
}

ConceptDictionary DictionaryFromJson(const std::string& text) {
  ConceptDictionary dict;
  try {
    const json doc = json::parse(text);
    dict.model_checksum = doc.at("model_checksum").get<std::uint32_t>();
    dict.thresholds.max_act_floor =
        doc.at("thresholds").at("max_act_floor").get<double>();
    dict.thresholds.strength_ceiling =
        doc.at("thresholds").at("strength_ceiling").get<double>();
    dict.corpus_images = doc.value("corpus_images", std::uint64_t{0});
    for (const auto& item : doc.at("entries")) {
      ConceptEntry e;
      e.concept_id = item.at("concept_id").get<ConceptId>();
      e.retained = item.at("retained").get<bool>();
      e.max_activation = item.at("max_activation").get<double>();
      e.global_strength = item.at("global_strength").get<double>();
      e.exemplar_ids = item.at("exemplar_ids").get<std::vector<ImageId>>();
      if (item.contains("description")) {
        e.description = item.at("description").get<std::string>();
      }
      if (item.contains("description_source")) {
        e.description_source = item.at("description_source").get<std::string>();
      }
      if (e.concept_id != dict.entries.size()) {
        throw FormatError("entries", "dictionary entries must be ordered by id");
      }
      dict.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError("dictionary", e.what());
  }
  return dict;
}

void SaveDictionary(const ConceptDictionary& dict,
                    const std::filesystem::path& path) {
  WriteText(path, DictionaryToJson(dict) + "\n");
}

ConceptDictionary LoadDictionary(const std::filesystem::path& path) {
  return DictionaryFromJson(ReadText(path));
}

}  // namespace conceptscope
