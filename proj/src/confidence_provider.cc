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

#include "conceptscope/confidence_provider.h"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "conceptscope/binary_io.h"
#include "conceptscope/mask_codec.h"
#include "json.hpp"

namespace conceptscope {
namespace {

using nlohmann::json;

std::vector<std::string> ReadLines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string(), 0);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      lines.push_back(line);
    }
  }
  return lines;
}

void WriteLines(const std::filesystem::path& path,
                const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing", 0);
  for (const auto& line : lines) out << line << '\n';
  if (!out) throw IoError("write failed for " + path.string(), 0);
}

template <typename F>
auto ParseLine(const std::string& field, const std::string& line, F&& body) {
  try {
    return body(json::parse(line));
  } catch (const json::exception& e) {
    throw FormatError(field, std::string(e.what()) + " in line: " + line);
  }
}

std::string ShellQuote(const std::string& text) {
  std::string out = "'";
  for (char ch : text) {
    if (ch == '\'') {
      out += "'\\''";
    } else {
      out += ch;
    }
  }
  return out + "'";
}

void ReplaceAll(std::string& text, const std::string& from,
                const std::string& to) {
  for (std::size_t pos = text.find(from); pos != std::string::npos;
       pos = text.find(from, pos + to.size())) {
    text.replace(pos, from.size(), to);
  }
}

}  // namespace

std::string MaskJobToJson(const MaskJob& job) {
  json doc = {{"image_id", job.image_id},
              {"concept_id", job.concept_id},
              {"class", job.class_name},
              {"side", job.side},
              {"mask", EncodeRle(job.mask)}};
  return doc.dump();
}

MaskJob MaskJobFromJson(const std::string& line) {
  return ParseLine("mask_job", line, [](const json& doc) {
    MaskJob job;
    job.image_id = doc.at("image_id").get<ImageId>();
    job.concept_id = doc.at("concept_id").get<ConceptId>();
    job.class_name = doc.at("class").get<std::string>();
    job.side = doc.at("side").get<std::size_t>();
    const auto runs = doc.at("mask").get<std::vector<std::uint32_t>>();
    job.mask = DecodeRle(runs, job.side * job.side);
    return job;
  });
}

void SaveMaskJobs(const std::filesystem::path& path,
                  std::span<const MaskJob> jobs) {
  std::vector<std::string> lines;
  for (const auto& job : jobs) lines.push_back(MaskJobToJson(job));
  WriteLines(path, lines);
}

std::vector<MaskJob> LoadMaskJobs(const std::filesystem::path& path) {
  std::vector<MaskJob> jobs;
  for (const auto& line : ReadLines(path)) jobs.push_back(MaskJobFromJson(line));
  return jobs;
}

std::string TripleToJson(const ConfidenceTriple& t) {
  json doc = {{"image_id", t.image_id},   {"concept_id", t.concept_id},
              {"class", t.class_name},    {"p_full", t.p_full},
              {"p_removed", t.p_removed}, {"p_only", t.p_only}};
  return doc.dump();
}

ConfidenceTriple TripleFromJson(const std::string& line) {
  return ParseLine("triple", line, [&](const json& doc) {
    ConfidenceTriple t;
    t.image_id = doc.at("image_id").get<ImageId>();
    t.concept_id = doc.at("concept_id").get<ConceptId>();
    t.class_name = doc.at("class").get<std::string>();
    t.p_full = doc.at("p_full").get<double>();
    t.p_removed = doc.at("p_removed").get<double>();
    t.p_only = doc.at("p_only").get<double>();
    if (!std::isfinite(t.p_full) || !std::isfinite(t.p_removed) ||
        !std::isfinite(t.p_only)) {
      throw FormatError("triple", "non-finite confidence in line: " + line);
    }
    return t;
  });
}

void SaveTriples(const std::filesystem::path& path,
                 std::span<const ConfidenceTriple> triples) {
  std::vector<std::string> lines;
  for (const auto& t : triples) lines.push_back(TripleToJson(t));
  WriteLines(path, lines);
}

std::vector<ConfidenceTriple> LoadTriples(const std::filesystem::path& path) {
  std::vector<ConfidenceTriple> triples;
  for (const auto& line : ReadLines(path)) {
    triples.push_back(TripleFromJson(line));
  }
  return triples;
}

std::span<const float> ClassEmbeddings::Of(const std::string& class_name) const {
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (classes[k] == class_name) return row(k);
  }
  throw InvalidArgument("no class embedding for '" + class_name + "'");
}

void SaveClassEmbeddings(const std::filesystem::path& bin_path,
                         const ClassEmbeddings& embeddings) {
  if (embeddings.values.size() != embeddings.classes.size() * embeddings.dim) {
    throw DimensionError("class embedding matrix does not match K x d");
  }
  {
    binary::Writer out(bin_path);
    out.PutFloats(embeddings.values);
    out.Flush();
  }
  const json sidecar = {{"classes", embeddings.classes},
                        {"d", embeddings.dim},
                        {"dtype", "f32le"}};
  std::ofstream out(bin_path.string() + ".json", std::ios::trunc);
  out << sidecar.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + bin_path.string() + ".json", 0);
}

ClassEmbeddings LoadClassEmbeddings(const std::filesystem::path& bin_path) {
  ClassEmbeddings embeddings;
  const std::string sidecar_path = bin_path.string() + ".json";
  std::ifstream in(sidecar_path);
  if (!in) throw IoError("cannot open " + sidecar_path, 0);
  try {
    const json doc = json::parse(in);
    embeddings.classes = doc.at("classes").get<std::vector<std::string>>();
    embeddings.dim = doc.at("d").get<std::size_t>();
    if (doc.at("dtype").get<std::string>() != "f32le") {
      throw FormatError("dtype", "class embeddings must be f32le");
    }
  } catch (const json::exception& e) {
    throw FormatError("class_embeddings", e.what());
  }
  binary::Reader reader(bin_path);
  const std::uint64_t expected =
      std::uint64_t{embeddings.classes.size()} * embeddings.dim * 4;
  if (reader.file_size() != expected) {
    throw FormatError("length", bin_path.string() + " holds " +
                                    std::to_string(reader.file_size()) +
                                    " bytes, expected " +
                                    std::to_string(expected));
  }
  embeddings.values.resize(embeddings.classes.size() * embeddings.dim);
  reader.GetFloats(embeddings.values);
  return embeddings;
}

std::string ToString(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::kOfflineSynthetic:
      return "offline";
    case ProviderKind::kFileReplay:
      return "replay";
    case ProviderKind::kExternalBridge:
      return "bridge";
  }
  return "unknown";
}

double Cosine(std::span<const double> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DimensionError("cosine of unequal lengths");
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return std::nan("");
  return dot / std::sqrt(na * nb);
}

OfflineConfidenceProvider::OfflineConfidenceProvider(
    const std::filesystem::path& archive, ClassEmbeddings class_embeddings)
    : reader_(archive), class_embeddings_(std::move(class_embeddings)) {
  if (class_embeddings_.dim != reader_.header().dim) {
    throw DimensionError("class embeddings have d=" +
                         std::to_string(class_embeddings_.dim) +
                         ", archive has d=" +
                         std::to_string(reader_.header().dim));
  }
  const std::uint64_t count = reader_.header().record_count;
  for (std::uint64_t i = 0; i < count; ++i) {
    position_.emplace(reader_.ReadIdAt(i), i);
  }
}

std::vector<double> OfflineConfidenceProvider::MaskedMean(
    const EmbeddingRecord& record, std::span<const std::uint8_t> mask,
    Keep keep) {
  const std::size_t l = record.num_tokens;
  if (keep != Keep::kAll && mask.size() + 1 != l) {
    throw DimensionError("mask has " + std::to_string(mask.size()) +
                         " cells, image has " + std::to_string(l - 1) +
                         " patches");
  }
  std::vector<double> mean(record.dim, 0.0);
  for (std::size_t t = 0; t < l; ++t) {
    if (t > 0 && keep != Keep::kAll) {
      const bool masked = mask[t - 1] != 0;
      if (masked != (keep == Keep::kMasked)) continue;
    }
    const auto token = record.token(t);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += token[i];
  }
  for (double& v : mean) v /= static_cast<double>(l);
  return mean;
}

std::optional<ConfidenceTriple> OfflineConfidenceProvider::Score(
    const EmbeddingRecord& record, const MaskJob& job) const {
  const auto e = class_embeddings_.Of(job.class_name);
  ConfidenceTriple t;
  t.image_id = job.image_id;
  t.concept_id = job.concept_id;
  t.class_name = job.class_name;
  t.p_full = Cosine(MaskedMean(record, job.mask, Keep::kAll), e);
  t.p_removed = Cosine(MaskedMean(record, job.mask, Keep::kUnmasked), e);
  t.p_only = Cosine(MaskedMean(record, job.mask, Keep::kMasked), e);
  if (std::isnan(t.p_full) || std::isnan(t.p_removed) || std::isnan(t.p_only)) {
    return std::nullopt;
  }
  return t;
}

ProviderOutput OfflineConfidenceProvider::Evaluate(
    std::span<const MaskJob> jobs) {
  ProviderOutput out;
  EmbeddingRecord record;
  bool loaded = false;
  for (const auto& job : jobs) {
    const auto it = position_.find(job.image_id);
    if (it == position_.end()) {
      out.warnings.push_back("image " + std::to_string(job.image_id) +
                             " not in archive");
      out.triples.emplace_back();
      continue;
    }
    if (!loaded || record.image_id != job.image_id) {
      reader_.ReadAt(it->second, record);
      loaded = true;
    }
    auto triple = Score(record, job);
    if (!triple) {
      out.warnings.push_back("zero-norm embedding for image " +
                             std::to_string(job.image_id) + ", concept " +
                             std::to_string(job.concept_id));
    }
    out.triples.push_back(std::move(triple));
  }
  return out;
}

ReplayConfidenceProvider::ReplayConfidenceProvider(
    std::vector<ConfidenceTriple> triples) {
  for (auto& t : triples) {
    auto key = std::make_tuple(t.image_id, t.concept_id, t.class_name);
    triples_.insert_or_assign(std::move(key), std::move(t));
  }
}

ReplayConfidenceProvider ReplayConfidenceProvider::FromFile(
    const std::filesystem::path& path) {
  return ReplayConfidenceProvider(LoadTriples(path));
}

ProviderOutput ReplayConfidenceProvider::Evaluate(
    std::span<const MaskJob> jobs) {
  ProviderOutput out;
  for (const auto& job : jobs) {
    const auto it =
        triples_.find(std::make_tuple(job.image_id, job.concept_id, job.class_name));
    if (it == triples_.end()) {
      out.warnings.push_back("no replayed triple for image " +
                             std::to_string(job.image_id) + ", concept " +
                             std::to_string(job.concept_id) + ", class " +
                             job.class_name);
      out.triples.emplace_back();
    } else {
      out.triples.emplace_back(it->second);
    }
  }
  return out;
}

BridgeConfidenceProvider::BridgeConfidenceProvider(
    std::string command, std::filesystem::path workdir)
    : command_(std::move(command)), workdir_(std::move(workdir)) {}

ProviderOutput BridgeConfidenceProvider::Evaluate(
    std::span<const MaskJob> jobs) {
  std::filesystem::create_directories(workdir_);
  const auto jobs_path = workdir_ / "mask_jobs.jsonl";
  const auto out_path = workdir_ / "triples.jsonl";
  SaveMaskJobs(jobs_path, jobs);
  std::filesystem::remove(out_path);
  std::string command = command_;
  ReplaceAll(command, "{jobs}", ShellQuote(jobs_path.string()));
  ReplaceAll(command, "{out}", ShellQuote(out_path.string()));
  const int status = std::system(command.c_str());
  if (status != 0) {
    throw Error("bridge", "bridge command exited with status " +
                              std::to_string(status) + ": " + command);
  }
  if (!std::filesystem::exists(out_path)) {
    throw IoError("bridge produced no " + out_path.string(), 0);
  }
  return ReplayConfidenceProvider::FromFile(out_path).Evaluate(jobs);
}

}  // namespace conceptscope
