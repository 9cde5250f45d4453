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

#ifndef CONCEPTSCOPE_EMBEDDING_IO_H_
#define CONCEPTSCOPE_EMBEDDING_IO_H_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "conceptscope/binary_io.h"
#include "conceptscope/common.h"

namespace conceptscope {

// One image's token grid: token 0 is the class token, tokens 1..l-1 are the
// p x p patch tokens in row order. Storage is token-major.
struct EmbeddingRecord {
  ImageId image_id = 0;
  std::uint16_t num_tokens = 0;  // l
  std::uint16_t dim = 0;         // d
  std::vector<float> tokens;     // l * d

  std::span<const float> token(std::size_t t) const {
    return {tokens.data() + t * dim, dim};
  }
  std::span<float> token(std::size_t t) {
    return {tokens.data() + t * dim, dim};
  }
  // Side length of the patch grid.
  std::size_t grid_side() const;

  bool operator==(const EmbeddingRecord&) const = default;
};

// True when l - 1 is a perfect square. l = 1 is a class-token-only grid.
bool IsValidTokenCount(std::size_t num_tokens);
std::size_t GridSide(std::size_t num_tokens);

// 24-byte archive header:
//   0  magic "CSEM"
//   4  version        u32
//   8  record_count   u64
//   16 l              u16
//   18 d              u16
//   20 dtype_code     u8   (0 = f32 little-endian)
//   21 flags          u8   (bit 0 set once the writer finished cleanly)
//   22 reserved       u16  (zero)
struct ArchiveHeader {
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::size_t kSize = 24;
  static constexpr std::uint8_t kCompleteFlag = 0x01;

  std::uint32_t version = kVersion;
  std::uint64_t record_count = 0;
  std::uint16_t num_tokens = 0;
  std::uint16_t dim = 0;
  std::uint8_t dtype_code = 0;
  std::uint8_t flags = 0;

  std::uint64_t record_bytes() const {
    return 8 + std::uint64_t{num_tokens} * dim * 4;
  }
  std::uint64_t file_bytes() const {
    return kSize + record_count * record_bytes();
  }
  bool complete() const { return (flags & kCompleteFlag) != 0; }

  bool operator==(const ArchiveHeader&) const = default;
};

// Streams records into a .csem file. The header is written first with the
// completion flag cleared and is only finalized by Finish(); an archive left
// behind by an aborted writer is rejected by readers.
class ArchiveWriter {
 public:
  ArchiveWriter(const std::filesystem::path& path, std::uint16_t num_tokens,
                std::uint16_t dim);
  ArchiveWriter(const ArchiveWriter&) = delete;
  ArchiveWriter& operator=(const ArchiveWriter&) = delete;

  // Throws DimensionError on l/d mismatch and InvalidArgument on non-finite
  // values. After a throw the writer is unusable and the file stays marked
  // incomplete.
  void Append(const EmbeddingRecord& record);
  ArchiveHeader Finish();

  const ArchiveHeader& header() const { return header_; }

 private:
  void WriteHeader();

  binary::Writer out_;
  ArchiveHeader header_;
  bool failed_ = false;
  bool finished_ = false;
};

ArchiveHeader WriteArchive(const std::filesystem::path& path,
                           std::uint16_t num_tokens, std::uint16_t dim,
                           std::span<const EmbeddingRecord> records);

// Lazy reader. Holds one record's worth of buffer regardless of archive size.
class ArchiveReader {
 public:
  explicit ArchiveReader(const std::filesystem::path& path);

  const ArchiveHeader& header() const { return header_; }
  std::uint64_t next_index() const { return next_index_; }

  // Fills `record` with the next record; false at end of archive.
  bool Next(EmbeddingRecord& record);
  // Random access by record index (fixed-size records).
  void ReadAt(std::uint64_t index, EmbeddingRecord& record);
  ImageId ReadIdAt(std::uint64_t index);
  void Rewind();

 private:
  void ReadRecordBody(std::uint64_t index, EmbeddingRecord& record);

  std::filesystem::path path_;
  binary::Reader in_;
  ArchiveHeader header_;
  std::uint64_t next_index_ = 0;
};

ArchiveHeader ReadArchiveHeader(const std::filesystem::path& path);
std::vector<EmbeddingRecord> ReadAllRecords(const std::filesystem::path& path);
// Image ids in archive order without reading token payloads.
std::vector<ImageId> ReadArchiveIds(const std::filesystem::path& path);

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_EMBEDDING_IO_H_
