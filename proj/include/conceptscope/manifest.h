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

#ifndef CONCEPTSCOPE_MANIFEST_H_
#define CONCEPTSCOPE_MANIFEST_H_

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "conceptscope/common.h"
#include "conceptscope/embedding_io.h"

namespace conceptscope {

struct ManifestEntry {
  ImageId image_id = 0;
  std::string source_path;
  // One label for single-label datasets; several in multi-label mode.
  std::vector<std::string> labels;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_index;
  std::string split_tag;

  bool operator==(const DatasetManifest&) const = default;

  bool multi_label() const;
  // Position of `name` in class_index.
  std::optional<std::size_t> ClassPosition(const std::string& name) const;
  // Entries carrying `class_name`, in manifest order.
  std::vector<ImageId> ImagesOfClass(const std::string& class_name) const;
  // Fails with InvalidArgument on duplicate ids.
  std::unordered_map<ImageId, std::size_t> IndexById() const;
};

DatasetManifest LoadManifest(const std::filesystem::path& path);
void SaveManifest(const DatasetManifest& manifest,
                  const std::filesystem::path& path);
DatasetManifest ManifestFromJson(const std::string& text);
std::string ManifestToJson(const DatasetManifest& manifest);

struct ManifestDiscrepancy {
  enum class Kind {
    kMissingId,      // in manifest, absent from archive
    kOrphanId,       // in archive, absent from manifest
    kUnknownLabel,   // label not in class_index
    kDuplicateId,    // id repeated in manifest
    kEmptyLabels,    // entry without labels
    kDuplicateClass, // class_index repeats a name
    kCountMismatch,  // header record_count disagrees with archive ids
  };
  Kind kind;
  std::optional<ImageId> image_id;
  std::string detail;

  std::string ToString() const;
};

// Empty iff the manifest and archive agree.
std::vector<ManifestDiscrepancy> ValidateManifest(
    const DatasetManifest& manifest, const ArchiveHeader& header,
    const std::vector<ImageId>& ids_in_archive);

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_MANIFEST_H_
