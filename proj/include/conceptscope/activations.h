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

#ifndef CONCEPTSCOPE_ACTIVATIONS_H_
#define CONCEPTSCOPE_ACTIVATIONS_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "conceptscope/binary_io.h"
#include "conceptscope/common.h"
#include "conceptscope/embedding_io.h"
#include "conceptscope/manifest.h"
#include "conceptscope/sae_model.h"

namespace conceptscope {

// Image-level activations are stored as f32, matching the .csac format.
using ActivationVector = BasicSparseVector<float>;

// Per-token activations of one concept. `grid` is the p x p patch map in row
// order; `class_token` is the class token's value.
struct PatchMap {
  double class_token = 0.0;
  std::vector<double> grid;

  bool operator==(const PatchMap&) const = default;
};

struct ActivationRecord {
  ImageId image_id = 0;
  // Mean of f(z_t) over all l tokens.
  ActivationVector image_level;
  // Only for concepts in the retained set passed to the computation.
  std::map<ConceptId, PatchMap> patch_level;

  bool operator==(const ActivationRecord&) const = default;
};

// One image. Patch maps are produced for `retained` concepts only.
ActivationRecord ComputeImageActivations(const SaeModel& model,
                                         const EmbeddingRecord& record,
                                         std::span<const ConceptId> retained = {});

using ActivationSink = std::function<void(ActivationRecord&&)>;

// One pass over the archive; records reach `sink` in archive order.
void ComputeActivations(const SaeModel& model,
                        const std::filesystem::path& archive,
                        std::span<const ConceptId> retained,
                        const ActivationSink& sink, std::size_t workers = 1);

// Convenience wrapper collecting every record.
std::vector<ActivationRecord> ComputeActivations(
    const SaeModel& model, const std::filesystem::path& archive,
    std::size_t workers = 1);

// .csac activation archive:
//   magic "CSAC", version u32 = 1, d' u32,
//   then until end of file: image_id u64, nnz u32, nnz x (index u32, value f32)
//   with indices ascending.
class ActivationWriter {
 public:
  ActivationWriter(const std::filesystem::path& path, std::uint32_t latent_dim);

  void Append(ImageId image_id, const ActivationVector& image_level);
  void Finish() { out_.Flush(); }

 private:
  binary::Writer out_;
  std::uint32_t latent_dim_;
};

class ActivationReader {
 public:
  explicit ActivationReader(const std::filesystem::path& path);

  std::uint32_t latent_dim() const { return latent_dim_; }
  // False at end of file. Throws FormatError on truncation or bad indices.
  bool Next(ActivationRecord& record);

 private:
  binary::Reader in_;
  std::uint32_t latent_dim_ = 0;
  std::uint64_t index_ = 0;
};

struct ActivationSet {
  std::uint32_t latent_dim = 0;
  std::vector<ActivationRecord> records;

  // Position of each image id in `records`.
  std::unordered_map<ImageId, std::size_t> IndexById() const;
};

void SaveActivations(const std::filesystem::path& path,
                     const ActivationSet& activations);
ActivationSet LoadActivations(const std::filesystem::path& path);

// K x d' table of per-class mean image-level activations.
struct ConceptStrengthTable {
  std::vector<std::string> class_index;
  std::size_t latent_dim = 0;
  std::vector<double> values;  // row-major, K x d'
  std::vector<std::uint64_t> class_counts;

  double at(std::size_t class_pos, ConceptId c) const {
    return values[class_pos * latent_dim + c];
  }
  std::span<const double> row(std::size_t class_pos) const {
    return {values.data() + class_pos * latent_dim, latent_dim};
  }
  std::size_t ClassPosition(const std::string& name) const;

  bool operator==(const ConceptStrengthTable&) const = default;
};

// Accumulates per-class sums in the order records are added.
class StrengthAccumulator {
 public:
  StrengthAccumulator(const DatasetManifest& manifest, std::size_t latent_dim);

  // Throws InvalidArgument for ids missing from the manifest.
  void Add(const ActivationRecord& record);
  // Throws InvalidArgument naming the first class with no images.
  ConceptStrengthTable Finish() const;

 private:
  const DatasetManifest& manifest_;
  std::unordered_map<ImageId, std::size_t> entry_by_id_;
  ConceptStrengthTable table_;
};

ConceptStrengthTable ConceptStrength(std::span<const ActivationRecord> records,
                                     const DatasetManifest& manifest,
                                     std::size_t latent_dim);

// Long-form CSV `class,concept_id,strength`, non-zero entries only, preceded
// by a `#classes` line listing every class and its image count.
void SaveStrengthCsv(const std::filesystem::path& path,
                     const ConceptStrengthTable& table);
ConceptStrengthTable LoadStrengthCsv(const std::filesystem::path& path);

struct ConceptMask {
  ImageId image_id = 0;
  ConceptId concept_id = 0;
  std::size_t side = 0;
  std::vector<std::uint8_t> grid;  // side * side, row order, 0 or 1
  double threshold_used = 0.5;

  std::size_t CountSet() const;
  bool operator==(const ConceptMask&) const = default;
};

inline constexpr double kDefaultMaskThreshold = 0.5;

// Min-max normalization to [0, 1]. A map with no positive value becomes all
// zeros; a constant positive map becomes all ones.
std::vector<double> NormalizeMap(std::span<const double> map);
// Min-max normalizes `map` to [0, 1] and keeps cells >= threshold. A map with
// no positive value yields an empty mask; a constant positive map yields a
// full one.
std::vector<std::uint8_t> BinarizeMap(std::span<const double> map,
                                      double threshold);
// Per-patch activations of `concept_id` (class token excluded).
std::vector<double> PatchActivations(const SaeModel& model,
                                     const EmbeddingRecord& record,
                                     ConceptId concept_id);
ConceptMask ComputeConceptMask(const SaeModel& model,
                               const EmbeddingRecord& record, ConceptId concept_id,
                               double threshold = kDefaultMaskThreshold);

using ScoredImage = std::pair<ImageId, double>;

// Keeps the k best (value descending, image id ascending) of the values
// offered to it.
class TopK {
 public:
  explicit TopK(std::size_t k);
  void Offer(ImageId id, double value);
  // Best first.
  std::vector<ScoredImage> Sorted() const;

 private:
  std::size_t k_;
  std::vector<ScoredImage> heap_;
};

// Images ranked by activation of `concept_id`, ties broken by ascending id.
// Images whose activation is zero are included.
std::vector<ScoredImage> TopActivatingImages(
    std::span<const ActivationRecord> records, ConceptId concept_id,
    std::size_t k);

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_ACTIVATIONS_H_
