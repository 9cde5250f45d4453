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

#include "conceptscope/binary_io.h"

#include <zlib.h>

#include <algorithm>
#include <vector>

namespace conceptscope::binary {

std::uint32_t Crc32(std::span<const char> bytes, std::uint32_t seed) {
  uLong crc = seed;
  const auto* data = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t remaining = bytes.size();
  // zlib takes uInt lengths.
  while (remaining > 0) {
    const uInt chunk = static_cast<uInt>(
        std::min<std::size_t>(remaining, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    remaining -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t FileCrc32(const std::filesystem::path& path) {
  Reader reader(path);
  std::vector<char> buffer(1 << 16);
  std::uint32_t crc = 0;
  while (true) {
    const std::size_t got = reader.ReadSome(buffer.data(), buffer.size());
    if (got == 0) break;
    crc = Crc32(std::span<const char>(buffer.data(), got), crc);
  }
  return crc;
}

Writer::Writer(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) {
    throw IoError("cannot open " + path.string() + " for writing", 0);
  }
}

void Writer::PutFloats(std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    Write(reinterpret_cast<const char*>(values.data()),
          values.size() * sizeof(float));
  } else {
    for (float v : values) Put(v);
  }
}

void Writer::Write(const char* data, std::size_t size) {
  out_.write(data, static_cast<std::streamsize>(size));
  if (!out_) {
    throw IoError("write failed on " + path_.string(), offset_);
  }
  offset_ += size;
}

void Writer::SeekTo(std::uint64_t offset) {
  out_.seekp(static_cast<std::streamoff>(offset));
  if (!out_) {
    throw IoError("seek failed on " + path_.string(), offset);
  }
  offset_ = offset;
}

void Writer::Flush() {
  out_.flush();
  if (!out_) {
    throw IoError("flush failed on " + path_.string(), offset_);
  }
}

Reader::Reader(const std::filesystem::path& path)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_) {
    throw IoError("cannot open " + path.string() + " for reading", 0);
  }
  std::error_code ec;
  file_size_ = std::filesystem::file_size(path, ec);
  if (ec) {
    throw IoError("cannot stat " + path.string(), 0);
  }
}

void Reader::GetFloats(std::span<float> out) {
  Read(reinterpret_cast<char*>(out.data()), out.size() * sizeof(float));
  if constexpr (std::endian::native == std::endian::big) {
    for (float& v : out) {
      v = DecodeLe<float>(reinterpret_cast<const char*>(&v));
    }
  }
}

void Reader::Read(char* data, std::size_t size) {
  const std::size_t got = ReadSome(data, size);
  if (got != size) {
    throw IoError("unexpected end of file in " + path_.string(),
                  offset_);
  }
}

std::size_t Reader::ReadSome(char* data, std::size_t size) {
  in_.read(data, static_cast<std::streamsize>(size));
  const auto got = static_cast<std::size_t>(in_.gcount());
  offset_ += got;
  if (got < size) in_.clear();
  return got;
}

void Reader::SeekTo(std::uint64_t offset) {
  in_.clear();
  in_.seekg(static_cast<std::streamoff>(offset));
  if (!in_) {
    throw IoError("seek failed on " + path_.string(), offset);
  }
  offset_ = offset;
}

}  // namespace conceptscope::binary
