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

#include "conceptscope/embedding_io.h"

#include <cmath>
#include <cstring>
#include <string>

namespace conceptscope {
namespace {

constexpr char kMagic[4] = {'C', 'S', 'E', 'M'};

void CheckDims(std::uint16_t num_tokens, std::uint16_t dim) {
  if (!IsValidTokenCount(num_tokens)) {
    throw DimensionError("token count " + std::to_string(num_tokens) +
                         " is not 1 + p^2");
  }
  if (dim == 0) throw DimensionError("embedding dimension must be positive");
}

}  // namespace

bool IsValidTokenCount(std::size_t num_tokens) {
  if (num_tokens == 0) return false;
  const std::size_t p = GridSide(num_tokens);
  return p * p == num_tokens - 1;
}

std::size_t GridSide(std::size_t num_tokens) {
  if (num_tokens <= 1) return 0;
  auto p = static_cast<std::size_t>(
      std::llround(std::sqrt(static_cast<double>(num_tokens - 1))));
  while (p * p > num_tokens - 1) --p;
  while ((p + 1) * (p + 1) <= num_tokens - 1) ++p;
  return p;
}

std::size_t EmbeddingRecord::grid_side() const {
  return GridSide(num_tokens);
}

ArchiveWriter::ArchiveWriter(const std::filesystem::path& path,
                             std::uint16_t num_tokens, std::uint16_t dim)
    : out_(path) {
  CheckDims(num_tokens, dim);
  header_.num_tokens = num_tokens;
  header_.dim = dim;
  WriteHeader();
}

void ArchiveWriter::WriteHeader() {
  out_.Write(kMagic, 4);
  out_.Put(header_.version);
  out_.Put(header_.record_count);
  out_.Put(header_.num_tokens);
  out_.Put(header_.dim);
  out_.Put(header_.dtype_code);
  out_.Put(header_.flags);
  out_.Put(std::uint16_t{0});
}

void ArchiveWriter::Append(const EmbeddingRecord& record) {
  if (failed_ || finished_) {
    throw InvalidArgument("archive writer is closed");
  }
  if (record.num_tokens != header_.num_tokens || record.dim != header_.dim ||
      record.tokens.size() != std::size_t{header_.num_tokens} * header_.dim) {
    failed_ = true;
    throw DimensionError(
        "record " + std::to_string(header_.record_count) + " (image " +
        std::to_string(record.image_id) + ") has l=" +
        std::to_string(record.num_tokens) + ", d=" +
        std::to_string(record.dim) + "; archive expects l=" +
        std::to_string(header_.num_tokens) + ", d=" +
        std::to_string(header_.dim));
  }
  for (float v : record.tokens) {
    if (!std::isfinite(v)) {
      failed_ = true;
      throw InvalidArgument("record for image " +
                            std::to_string(record.image_id) +
                            " contains a non-finite value");
    }
  }
  try {
    out_.Put(record.image_id);
    out_.PutFloats(record.tokens);
  } catch (...) {
    failed_ = true;
    throw;
  }
  ++header_.record_count;
}

ArchiveHeader ArchiveWriter::Finish() {
  if (failed_) throw InvalidArgument("archive writer failed earlier");
  if (finished_) return header_;
  const std::uint64_t end = out_.offset();
  header_.flags |= ArchiveHeader::kCompleteFlag;
  out_.SeekTo(0);
  WriteHeader();
  out_.SeekTo(end);
  out_.Flush();
  finished_ = true;
  return header_;
}

ArchiveHeader WriteArchive(const std::filesystem::path& path,
                           std::uint16_t num_tokens, std::uint16_t dim,
                           std::span<const EmbeddingRecord> records) {
  ArchiveWriter writer(path, num_tokens, dim);
  for (const auto& record : records) writer.Append(record);
  return writer.Finish();
}

ArchiveReader::ArchiveReader(const std::filesystem::path& path)
    : path_(path), in_(path) {
  if (in_.file_size() < ArchiveHeader::kSize) {
    throw FormatError("header", path.string() + ": file shorter than header");
  }
  char magic[4];
  in_.Read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("magic", path.string() + ": bad magic, expected CSEM");
  }
  header_.version = in_.Get<std::uint32_t>();
  if (header_.version != ArchiveHeader::kVersion) {
    throw FormatError("version", path.string() + ": unsupported version " +
                                     std::to_string(header_.version));
  }
  header_.record_count = in_.Get<std::uint64_t>();
  header_.num_tokens = in_.Get<std::uint16_t>();
  header_.dim = in_.Get<std::uint16_t>();
  header_.dtype_code = in_.Get<std::uint8_t>();
  header_.flags = in_.Get<std::uint8_t>();
  in_.Get<std::uint16_t>();
  if (header_.dtype_code != 0) {
    throw FormatError("dtype", path.string() + ": unsupported dtype code " +
                                   std::to_string(header_.dtype_code));
  }
  if (!header_.complete()) {
    throw FormatError("flags",
                      path.string() + ": archive is incomplete (writer "
                                      "did not finish)");
  }
  if (!IsValidTokenCount(header_.num_tokens) || header_.dim == 0) {
    throw FormatError("dims", path.string() + ": invalid l/d in header");
  }
  if (in_.file_size() > header_.file_bytes()) {
    throw FormatError("length", path.string() + ": " +
                                    std::to_string(in_.file_size() -
                                                   header_.file_bytes()) +
                                    " trailing bytes after last record");
  }
}

void ArchiveReader::ReadRecordBody(std::uint64_t index,
                                   EmbeddingRecord& record) {
  const std::uint64_t start =
      ArchiveHeader::kSize + index * header_.record_bytes();
  if (start + header_.record_bytes() > in_.file_size()) {
    throw FormatError("record", path_.string() + ": truncated record " +
                                    std::to_string(index));
  }
  if (in_.offset() != start) in_.SeekTo(start);
  record.image_id = in_.Get<std::uint64_t>();
  record.num_tokens = header_.num_tokens;
  record.dim = header_.dim;
  record.tokens.resize(std::size_t{header_.num_tokens} * header_.dim);
  in_.GetFloats(record.tokens);
  for (float v : record.tokens) {
    if (!std::isfinite(v)) {
      throw FormatError("values", path_.string() +
                                      ": non-finite value in record " +
                                      std::to_string(index));
    }
  }
}

bool ArchiveReader::Next(EmbeddingRecord& record) {
  if (next_index_ >= header_.record_count) return false;
  ReadRecordBody(next_index_, record);
  ++next_index_;
  return true;
}

void ArchiveReader::ReadAt(std::uint64_t index, EmbeddingRecord& record) {
  if (index >= header_.record_count) {
    throw InvalidArgument("record index " + std::to_string(index) +
                          " out of range");
  }
  ReadRecordBody(index, record);
  next_index_ = index + 1;
}

ImageId ArchiveReader::ReadIdAt(std::uint64_t index) {
  if (index >= header_.record_count) {
    throw InvalidArgument("record index " + std::to_string(index) +
                          " out of range");
  }
  const std::uint64_t start =
      ArchiveHeader::kSize + index * header_.record_bytes();
  if (start + 8 > in_.file_size()) {
    throw FormatError("record", path_.string() + ": truncated record " +
                                    std::to_string(index));
  }
  in_.SeekTo(start);
  const auto id = in_.Get<std::uint64_t>();
  next_index_ = index + 1;
  return id;
}

void ArchiveReader::Rewind() {
  in_.SeekTo(ArchiveHeader::kSize);
  next_index_ = 0;
}

ArchiveHeader ReadArchiveHeader(const std::filesystem::path& path) {
  return ArchiveReader(path).header();
}

std::vector<EmbeddingRecord> ReadAllRecords(
    const std::filesystem::path& path) {
  ArchiveReader reader(path);
  std::vector<EmbeddingRecord> records;
  records.reserve(reader.header().record_count);
  EmbeddingRecord record;
  while (reader.Next(record)) records.push_back(record);
  return records;
}

std::vector<ImageId> ReadArchiveIds(const std::filesystem::path& path) {
  ArchiveReader reader(path);
  std::vector<ImageId> ids;
  ids.reserve(reader.header().record_count);
  for (std::uint64_t i = 0; i < reader.header().record_count; ++i) {
    ids.push_back(reader.ReadIdAt(i));
  }
  return ids;
}

}  // namespace conceptscope
