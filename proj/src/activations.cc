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

#include "conceptscope/activations.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "conceptscope/parallel.h"
#include "text_util.h"

namespace conceptscope {
namespace {

using text::FormatDouble;
using text::ParseNumber;
using text::SplitCommas;

constexpr char kMagic[4] = {'C', 'S', 'A', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kChunkRecords = 256;

bool ValueBefore(const ScoredImage& a, const ScoredImage& b) {
  if (a.second != b.second) return a.second > b.second;
  return a.first < b.first;
}

}  // namespace

ActivationRecord ComputeImageActivations(const SaeModel& model,
                                         const EmbeddingRecord& record,
                                         std::span<const ConceptId> retained) {
  if (record.dim != model.input_dim) {
    throw DimensionError("archive has d=" + std::to_string(record.dim) +
                         ", model expects d=" +
                         std::to_string(model.input_dim));
  }
  const std::size_t l = record.num_tokens;
  ActivationRecord out;
  out.image_id = record.image_id;
  out.image_level.dim = model.latent_dim;
  for (ConceptId c : retained) {
    if (c >= model.latent_dim) {
      throw InvalidArgument("retained concept_id " + std::to_string(c) +
                            " out of range");
    }
    out.patch_level[c].grid.assign(l > 0 ? l - 1 : 0, 0.0);
  }
  if (l == 0) return out;

  std::vector<double> sum(model.latent_dim, 0.0);
  std::vector<double> f(model.latent_dim);
  for (std::size_t t = 0; t < l; ++t) {
    EncodeDense(model, record.token(t), f);
    for (std::size_t c = 0; c < f.size(); ++c) sum[c] += f[c];
    for (auto& [c, map] : out.patch_level) {
      if (t == 0) {
        map.class_token = f[c];
      } else {
        map.grid[t - 1] = f[c];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(l);
  for (std::size_t c = 0; c < sum.size(); ++c) {
    const auto value = static_cast<float>(sum[c] * inv);
    if (value > 0.0f) {
      out.image_level.indices.push_back(static_cast<ConceptId>(c));
      out.image_level.values.push_back(value);
    }
  }
  return out;
}

void ComputeActivations(const SaeModel& model,
                        const std::filesystem::path& archive,
                        std::span<const ConceptId> retained,
                        const ActivationSink& sink, std::size_t workers) {
  ArchiveReader reader(archive);
  if (reader.header().dim != model.input_dim) {
    throw DimensionError("archive " + archive.string() + " has d=" +
                         std::to_string(reader.header().dim) +
                         ", model expects d=" +
                         std::to_string(model.input_dim));
  }
  std::vector<EmbeddingRecord> chunk(kChunkRecords);
  std::vector<ActivationRecord> results(kChunkRecords);
  while (true) {
    std::size_t count = 0;
    while (count < kChunkRecords && reader.Next(chunk[count])) ++count;
    if (count == 0) break;
    ParallelFor(count, workers, [&](std::size_t i) {
      results[i] = ComputeImageActivations(model, chunk[i], retained);
    });
    for (std::size_t i = 0; i < count; ++i) sink(std::move(results[i]));
    if (count < kChunkRecords) break;
  }
}

std::vector<ActivationRecord> ComputeActivations(
    const SaeModel& model, const std::filesystem::path& archive,
    std::size_t workers) {
  std::vector<ActivationRecord> records;
  ComputeActivations(
      model, archive, {},
      [&](ActivationRecord&& r) { records.push_back(std::move(r)); }, workers);
  return records;
}

ActivationWriter::ActivationWriter(const std::filesystem::path& path,
                                   std::uint32_t latent_dim)
    : out_(path), latent_dim_(latent_dim) {
  out_.Write(kMagic, sizeof(kMagic));
  out_.Put<std::uint32_t>(kVersion);
  out_.Put<std::uint32_t>(latent_dim);
}

void ActivationWriter::Append(ImageId image_id,
                              const ActivationVector& image_level) {
  if (image_level.dim != latent_dim_) {
    throw DimensionError("activation vector has " +
                         std::to_string(image_level.dim) + " dims, archive " +
                         std::to_string(latent_dim_));
  }
  out_.Put<std::uint64_t>(image_id);
  out_.Put<std::uint32_t>(static_cast<std::uint32_t>(image_level.nnz()));
  for (std::size_t k = 0; k < image_level.nnz(); ++k) {
    if (k > 0 && image_level.indices[k] <= image_level.indices[k - 1]) {
      throw InvalidArgument("activation indices must be strictly ascending");
    }
    out_.Put<std::uint32_t>(image_level.indices[k]);
    out_.Put<float>(image_level.values[k]);
  }
}

ActivationReader::ActivationReader(const std::filesystem::path& path)
    : in_(path) {
  char magic[4];
  if (in_.ReadSome(magic, 4) != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("magic", path.string() + " is not an activation archive");
  }
  if (in_.file_size() < 12) {
    throw FormatError("header", path.string() + " has a truncated header");
  }
  const auto version = in_.Get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError("version", "unsupported activation archive version " +
                                     std::to_string(version));
  }
  latent_dim_ = in_.Get<std::uint32_t>();
}

bool ActivationReader::Next(ActivationRecord& record) {
  if (in_.AtEnd()) return false;
  const std::uint64_t remaining = in_.file_size() - in_.offset();
  const std::string where = "record " + std::to_string(index_);
  if (remaining < 12) {
    throw FormatError("record", "truncated " + where);
  }
  record.image_id = in_.Get<std::uint64_t>();
  const auto nnz = in_.Get<std::uint32_t>();
  if (std::uint64_t{nnz} * 8 > in_.file_size() - in_.offset()) {
    throw FormatError("record", "truncated " + where);
  }
  if (nnz > latent_dim_) {
    throw FormatError("nnz", where + " has more entries than d'");
  }
  record.image_level.dim = latent_dim_;
  record.image_level.indices.resize(nnz);
  record.image_level.values.resize(nnz);
  record.patch_level.clear();
  for (std::uint32_t k = 0; k < nnz; ++k) {
    const auto index = in_.Get<std::uint32_t>();
    const auto value = in_.Get<float>();
    if (index >= latent_dim_ || (k > 0 && index <= record.image_level.indices[k - 1])) {
      throw FormatError("index", where + " has an invalid concept_id index");
    }
    if (!std::isfinite(value) || value < 0.0f) {
      throw FormatError("value", where + " has a negative or non-finite value");
    }
    record.image_level.indices[k] = index;
    record.image_level.values[k] = value;
  }
  ++index_;
  return true;
}

std::unordered_map<ImageId, std::size_t> ActivationSet::IndexById() const {
  std::unordered_map<ImageId, std::size_t> index;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!index.emplace(records[i].image_id, i).second) {
      throw InvalidArgument("duplicate image id " +
                            std::to_string(records[i].image_id) +
                            " in activations");
    }
  }
  return index;
}

void SaveActivations(const std::filesystem::path& path,
                     const ActivationSet& activations) {
  ActivationWriter writer(path, activations.latent_dim);
  for (const auto& record : activations.records) {
    writer.Append(record.image_id, record.image_level);
  }
  writer.Finish();
}

ActivationSet LoadActivations(const std::filesystem::path& path) {
  ActivationReader reader(path);
  ActivationSet set;
  set.latent_dim = reader.latent_dim();
  ActivationRecord record;
  while (reader.Next(record)) set.records.push_back(record);
  return set;
}

std::size_t ConceptStrengthTable::ClassPosition(const std::string& name) const {
  const auto it = std::find(class_index.begin(), class_index.end(), name);
  if (it == class_index.end()) {
    throw InvalidArgument("unknown class '" + name + "'");
  }
  return static_cast<std::size_t>(it - class_index.begin());
}

StrengthAccumulator::StrengthAccumulator(const DatasetManifest& manifest,
                                         std::size_t latent_dim)
    : manifest_(manifest), entry_by_id_(manifest.IndexById()) {
  table_.class_index = manifest.class_index;
  table_.latent_dim = latent_dim;
  table_.values.assign(manifest.class_index.size() * latent_dim, 0.0);
  table_.class_counts.assign(manifest.class_index.size(), 0);
}

void StrengthAccumulator::Add(const ActivationRecord& record) {
  const auto it = entry_by_id_.find(record.image_id);
  if (it == entry_by_id_.end()) {
    throw InvalidArgument("image id " + std::to_string(record.image_id) +
                          " is not in the manifest");
  }
  if (record.image_level.dim != table_.latent_dim) {
    throw DimensionError("activation record has " +
                         std::to_string(record.image_level.dim) +
                         " dims, expected " +
                         std::to_string(table_.latent_dim));
  }
  for (const auto& label : manifest_.entries[it->second].labels) {
    const auto pos = manifest_.ClassPosition(label);
    if (!pos) throw InvalidArgument("unknown label '" + label + "'");
    double* row = table_.values.data() + *pos * table_.latent_dim;
    for (std::size_t k = 0; k < record.image_level.nnz(); ++k) {
      row[record.image_level.indices[k]] += record.image_level.values[k];
    }
    ++table_.class_counts[*pos];
  }
}

ConceptStrengthTable StrengthAccumulator::Finish() const {
  ConceptStrengthTable table = table_;
  for (std::size_t y = 0; y < table.class_index.size(); ++y) {
    if (table.class_counts[y] == 0) {
      throw InvalidArgument("class '" + table.class_index[y] +
                            "' has no images");
    }
    const double inv = 1.0 / static_cast<double>(table.class_counts[y]);
    for (std::size_t c = 0; c < table.latent_dim; ++c) {
      table.values[y * table.latent_dim + c] *= inv;
    }
  }
  return table;
}

ConceptStrengthTable ConceptStrength(std::span<const ActivationRecord> records,
                                     const DatasetManifest& manifest,
                                     std::size_t latent_dim) {
  StrengthAccumulator acc(manifest, latent_dim);
  for (const auto& record : records) acc.Add(record);
  return acc.Finish();
}

void SaveStrengthCsv(const std::filesystem::path& path,
                     const ConceptStrengthTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing", 0);
  out << "#classes," << table.latent_dim;
  for (std::size_t y = 0; y < table.class_index.size(); ++y) {
    const auto& name = table.class_index[y];
    if (name.find_first_of(",:\n") != std::string::npos) {
      throw InvalidArgument("class name '" + name +
                            "' cannot be written to CSV");
    }
    out << ',' << name << ':' << table.class_counts[y];
  }
  out << "\nclass,concept_id,strength\n";
  for (std::size_t y = 0; y < table.class_index.size(); ++y) {
    for (std::size_t c = 0; c < table.latent_dim; ++c) {
      const double v = table.at(y, static_cast<ConceptId>(c));
      if (v != 0.0) {
        out << table.class_index[y] << ',' << c << ',' << FormatDouble(v)
            << '\n';
      }
    }
  }
  if (!out) throw IoError("write failed for " + path.string(), 0);
}

ConceptStrengthTable LoadStrengthCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string(), 0);
  std::string line;
  ConceptStrengthTable table;
  if (!std::getline(in, line) || line.rfind("#classes,", 0) != 0) {
    throw FormatError("strength_csv", "missing #classes line");
  }
  const auto parts = SplitCommas(line);
  table.latent_dim =
      ParseNumber<std::size_t>(parts.at(1), "strength_csv", "latent dim");
  for (std::size_t i = 2; i < parts.size(); ++i) {
    const auto colon = parts[i].rfind(':');
    if (colon == std::string_view::npos) {
      throw FormatError("strength_csv", "class entry without count");
    }
    table.class_index.emplace_back(parts[i].substr(0, colon));
    table.class_counts.push_back(
        ParseNumber<std::uint64_t>(parts[i].substr(colon + 1), "strength_csv",
                                   "class count"));
  }
  table.values.assign(table.class_index.size() * table.latent_dim, 0.0);
  if (!std::getline(in, line) || line != "class,concept_id,strength") {
    throw FormatError("strength_csv", "missing column header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = SplitCommas(line);
    if (cells.size() != 3) {
      throw FormatError("strength_csv", "expected 3 columns in '" + line + "'");
    }
    const std::size_t y = table.ClassPosition(std::string(cells[0]));
    const auto c =
        ParseNumber<std::size_t>(cells[1], "strength_csv", "concept id");
    if (c >= table.latent_dim) {
      throw FormatError("strength_csv", "concept id out of range");
    }
    table.values[y * table.latent_dim + c] =
        ParseNumber<double>(cells[2], "strength_csv", "strength");
  }
  return table;
}

std::size_t ConceptMask::CountSet() const {
  return static_cast<std::size_t>(std::count(grid.begin(), grid.end(), 1));
}

std::vector<double> NormalizeMap(std::span<const double> map) {
  std::vector<double> out(map.size(), 0.0);
  if (map.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(map.begin(), map.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > 0.0)) return out;
  for (std::size_t i = 0; i < map.size(); ++i) {
    out[i] = hi > lo ? (map[i] - lo) / (hi - lo) : 1.0;
  }
  return out;
}

std::vector<std::uint8_t> BinarizeMap(std::span<const double> map,
                                      double threshold) {
  std::vector<std::uint8_t> mask(map.size(), 0);
  const auto [lo_it, hi_it] = std::minmax_element(map.begin(), map.end());
  if (map.empty() || !(*hi_it > 0.0)) return mask;
  const std::vector<double> normalized = NormalizeMap(map);
  for (std::size_t i = 0; i < map.size(); ++i) {
    mask[i] = normalized[i] >= threshold ? 1 : 0;
  }
  return mask;
}

std::vector<double> PatchActivations(const SaeModel& model,
                                     const EmbeddingRecord& record,
                                     ConceptId concept_id) {
  if (concept_id >= model.latent_dim) {
    throw InvalidArgument("concept " + std::to_string(concept_id) +
                          " out of range for d'=" +
                          std::to_string(model.latent_dim));
  }
  if (record.dim != model.input_dim) {
    throw DimensionError("record dim does not match the model");
  }
  const auto column = model.encoder_column(concept_id);
  std::vector<double> map;
  for (std::size_t t = 1; t < record.num_tokens; ++t) {
    const auto z = record.token(t);
    double dot = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) dot += column[i] * z[i];
    const double pre = model.b_enc[concept_id] + dot;
    map.push_back(pre > 0.0 ? pre : 0.0);
  }
  return map;
}

ConceptMask ComputeConceptMask(const SaeModel& model,
                               const EmbeddingRecord& record, ConceptId concept_id,
                               double threshold) {
  ConceptMask mask;
  mask.image_id = record.image_id;
  mask.concept_id = concept_id;
  mask.side = record.grid_side();
  mask.threshold_used = threshold;
  mask.grid = BinarizeMap(PatchActivations(model, record, concept_id), threshold);
  return mask;
}

TopK::TopK(std::size_t k) : k_(k) {
  if (k == 0) throw InvalidArgument("k must be >= 1");
}

void TopK::Offer(ImageId id, double value) {
  // Max-heap on "worst first" so the root is the entry to evict.
  const ScoredImage item{id, value};
  if (heap_.size() < k_) {
    heap_.push_back(item);
    std::push_heap(heap_.begin(), heap_.end(), ValueBefore);
  } else if (ValueBefore(item, heap_.front())) {
    std::pop_heap(heap_.begin(), heap_.end(), ValueBefore);
    heap_.back() = item;
    std::push_heap(heap_.begin(), heap_.end(), ValueBefore);
  }
}

std::vector<ScoredImage> TopK::Sorted() const {
  std::vector<ScoredImage> out = heap_;
  std::sort(out.begin(), out.end(), ValueBefore);
  return out;
}

std::vector<ScoredImage> TopActivatingImages(
    std::span<const ActivationRecord> records, ConceptId concept_id,
    std::size_t k) {
  TopK top(k);
  for (const auto& record : records) {
    top.Offer(record.image_id, record.image_level.at(concept_id));
  }
  return top.Sorted();
}

}  // namespace conceptscope
