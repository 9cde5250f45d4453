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

#include "conceptscope/manifest.h"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace conceptscope {

using nlohmann::json;

bool DatasetManifest::multi_label() const {
  return std::any_of(entries.begin(), entries.end(),
                     [](const ManifestEntry& e) { return e.labels.size() > 1; });
}

std::optional<std::size_t> DatasetManifest::ClassPosition(
    const std::string& name) const {
  const auto it = std::find(class_index.begin(), class_index.end(), name);
  if (it == class_index.end()) return std::nullopt;
  return static_cast<std::size_t>(it - class_index.begin());
}

std::vector<ImageId> DatasetManifest::ImagesOfClass(
    const std::string& class_name) const {
  std::vector<ImageId> ids;
  for (const auto& entry : entries) {
    if (std::find(entry.labels.begin(), entry.labels.end(), class_name) !=
        entry.labels.end()) {
      ids.push_back(entry.image_id);
    }
  }
  return ids;
}

std::unordered_map<ImageId, std::size_t> DatasetManifest::IndexById() const {
  std::unordered_map<ImageId, std::size_t> index;
  index.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!index.emplace(entries[i].image_id, i).second) {
      throw InvalidArgument("duplicate image id " +
                            std::to_string(entries[i].image_id) +
                            " in manifest");
    }
  }
  return index;
}

DatasetManifest ManifestFromJson(const std::string& text) {
  DatasetManifest manifest;
  try {
    const json doc = json::parse(text);
    for (const auto& e : doc.at("entries")) {
      ManifestEntry entry;
      entry.image_id = e.at("image_id").get<ImageId>();
      entry.source_path = e.value("source_path", std::string());
      entry.labels = e.at("labels").get<std::vector<std::string>>();
      manifest.entries.push_back(std::move(entry));
    }
    manifest.class_index =
        doc.at("class_index").get<std::vector<std::string>>();
    manifest.split_tag = doc.value("split_tag", std::string());
  } catch (const json::exception& e) {
    throw FormatError("manifest", std::string("manifest: ") + e.what());
  }
  return manifest;
}

std::string ManifestToJson(const DatasetManifest& manifest) {
  json doc;
  doc["entries"] = json::array();
  for (const auto& entry : manifest.entries) {
    doc["entries"].push_back({{"image_id", entry.image_id},
                              {"source_path", entry.source_path},
                              {"labels", entry.labels}});
  }
  doc["class_index"] = manifest.class_index;
  doc["split_tag"] = manifest.split_tag;
  return doc.dump(1);
}

DatasetManifest LoadManifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string(), 0);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ManifestFromJson(buffer.str());
}

void SaveManifest(const DatasetManifest& manifest,
                  const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing", 0);
  out << ManifestToJson(manifest) << "\n";
  if (!out) throw IoError("write failed on " + path.string(), 0);
}

std::string ManifestDiscrepancy::ToString() const {
  const std::string id = image_id ? std::to_string(*image_id) : "";
  switch (kind) {
    case Kind::kMissingId:
      return "missing id " + id;
    case Kind::kOrphanId:
      return "orphan id " + id;
    case Kind::kUnknownLabel:
      return "unknown label " + detail + " on id " + id;
    case Kind::kDuplicateId:
      return "duplicate id " + id;
    case Kind::kEmptyLabels:
      return "empty labels on id " + id;
    case Kind::kDuplicateClass:
      return "duplicate class " + detail;
    case Kind::kCountMismatch:
      return "record count mismatch: " + detail;
  }
  return detail;
}

std::vector<ManifestDiscrepancy> ValidateManifest(
    const DatasetManifest& manifest, const ArchiveHeader& header,
    const std::vector<ImageId>& ids_in_archive) {
  using Kind = ManifestDiscrepancy::Kind;
  std::vector<ManifestDiscrepancy> reports;

  if (header.record_count != ids_in_archive.size()) {
    reports.push_back({Kind::kCountMismatch, std::nullopt,
                       "header says " + std::to_string(header.record_count) +
                           ", archive holds " +
                           std::to_string(ids_in_archive.size())});
  }

  std::set<std::string> classes;
  for (const auto& name : manifest.class_index) {
    if (!classes.insert(name).second) {
      reports.push_back({Kind::kDuplicateClass, std::nullopt, name});
    }
  }

  const std::unordered_set<ImageId> archive_ids(ids_in_archive.begin(),
                                                ids_in_archive.end());
  std::unordered_set<ImageId> manifest_ids;
  for (const auto& entry : manifest.entries) {
    if (!manifest_ids.insert(entry.image_id).second) {
      reports.push_back({Kind::kDuplicateId, entry.image_id, ""});
      continue;
    }
    if (!archive_ids.contains(entry.image_id)) {
      reports.push_back({Kind::kMissingId, entry.image_id, ""});
    }
    if (entry.labels.empty()) {
      reports.push_back({Kind::kEmptyLabels, entry.image_id, ""});
    }
    for (const auto& label : entry.labels) {
      if (!classes.contains(label)) {
        reports.push_back({Kind::kUnknownLabel, entry.image_id, label});
      }
    }
  }
  for (ImageId id : ids_in_archive) {
    if (!manifest_ids.contains(id)) {
      reports.push_back({Kind::kOrphanId, id, ""});
    }
  }
  return reports;
}

}  // namespace conceptscope
