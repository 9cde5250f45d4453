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

#ifndef CONCEPTSCOPE_CONFIDENCE_PROVIDER_H_
#define CONCEPTSCOPE_CONFIDENCE_PROVIDER_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "conceptscope/common.h"
#include "conceptscope/embedding_io.h"

namespace conceptscope {

// Model confidence for class `class_name` on the full image, the image with
// the concept region removed, and the concept region alone.
struct ConfidenceTriple {
  ImageId image_id = 0;
  ConceptId concept_id = 0;
  std::string class_name;
  double p_full = 0.0;
  double p_removed = 0.0;
  double p_only = 0.0;

  bool operator==(const ConfidenceTriple&) const = default;
};

struct MaskJob {
  ImageId image_id = 0;
  ConceptId concept_id = 0;
  std::string class_name;
  std::size_t side = 0;
  std::vector<std::uint8_t> mask;  // side * side patch bits, row order

  bool operator==(const MaskJob&) const = default;
};

// JSON lines: {"image_id", "concept_id", "class", "side", "mask": [runs]}.
std::string MaskJobToJson(const MaskJob& job);
MaskJob MaskJobFromJson(const std::string& line);
void SaveMaskJobs(const std::filesystem::path& path,
                  std::span<const MaskJob> jobs);
std::vector<MaskJob> LoadMaskJobs(const std::filesystem::path& path);

// JSON lines: {"image_id", "concept_id", "class", "p_full", "p_removed",
// "p_only"}.
std::string TripleToJson(const ConfidenceTriple& triple);
ConfidenceTriple TripleFromJson(const std::string& line);
void SaveTriples(const std::filesystem::path& path,
                 std::span<const ConfidenceTriple> triples);
std::vector<ConfidenceTriple> LoadTriples(const std::filesystem::path& path);

// K x d class embeddings: `<name>.bin` holds K * d f32 LE values row by row;
// `<name>.bin.json` holds {"classes": [...], "d": d, "dtype": "f32le"}.
struct ClassEmbeddings {
  std::vector<std::string> classes;
  std::size_t dim = 0;
  std::vector<float> values;

  std::span<const float> row(std::size_t k) const {
    return {values.data() + k * dim, dim};
  }
  // Throws InvalidArgument for unknown names.
  std::span<const float> Of(const std::string& class_name) const;

  bool operator==(const ClassEmbeddings&) const = default;
};

void SaveClassEmbeddings(const std::filesystem::path& bin_path,
                         const ClassEmbeddings& embeddings);
ClassEmbeddings LoadClassEmbeddings(const std::filesystem::path& bin_path);

enum class ProviderKind { kOfflineSynthetic, kFileReplay, kExternalBridge };
std::string ToString(ProviderKind kind);

struct ProviderOutput {
  // One entry per job, in job order. Empty when the provider could not score
  // the job (zero-norm vectors, missing replay line).
  std::vector<std::optional<ConfidenceTriple>> triples;
  std::vector<std::string> warnings;
};

class ConfidenceProvider {
 public:
  virtual ~ConfidenceProvider() = default;
  virtual ProviderKind kind() const = 0;
  virtual ProviderOutput Evaluate(std::span<const MaskJob> jobs) = 0;
};

double Cosine(std::span<const double> a, std::span<const float> b);

// P(y | x) = cosine(class embedding of y, mean token embedding of x). The
// class token is always kept; masking zeroes patch tokens before the mean.
class OfflineConfidenceProvider : public ConfidenceProvider {
 public:
  OfflineConfidenceProvider(const std::filesystem::path& archive,
                            ClassEmbeddings class_embeddings);

  ProviderKind kind() const override { return ProviderKind::kOfflineSynthetic; }
  ProviderOutput Evaluate(std::span<const MaskJob> jobs) override;

  enum class Keep { kAll, kUnmasked, kMasked };
  // Mean over all l tokens after zeroing the patch tokens not kept.
  static std::vector<double> MaskedMean(const EmbeddingRecord& record,
                                        std::span<const std::uint8_t> mask,
                                        Keep keep);
  // Empty when a vector has zero norm.
  std::optional<ConfidenceTriple> Score(const EmbeddingRecord& record,
                                        const MaskJob& job) const;

 private:
  ArchiveReader reader_;
  std::unordered_map<ImageId, std::uint64_t> position_;
  ClassEmbeddings class_embeddings_;
};

class ReplayConfidenceProvider : public ConfidenceProvider {
 public:
  explicit ReplayConfidenceProvider(std::vector<ConfidenceTriple> triples);
  static ReplayConfidenceProvider FromFile(const std::filesystem::path& path);

  ProviderKind kind() const override { return ProviderKind::kFileReplay; }
  ProviderOutput Evaluate(std::span<const MaskJob> jobs) override;

 private:
  std::map<std::tuple<ImageId, ConceptId, std::string>, ConfidenceTriple>
      triples_;
};

// Writes the jobs to `<workdir>/mask_jobs.jsonl`, runs `command` with
// `{jobs}` and `{out}` replaced by the job and triple file paths, then replays
// `<workdir>/triples.jsonl`.
class BridgeConfidenceProvider : public ConfidenceProvider {
 public:
  BridgeConfidenceProvider(std::string command, std::filesystem::path workdir);

  ProviderKind kind() const override { return ProviderKind::kExternalBridge; }
  ProviderOutput Evaluate(std::span<const MaskJob> jobs) override;

 private:
  std::string command_;
  std::filesystem::path workdir_;
};

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_CONFIDENCE_PROVIDER_H_
