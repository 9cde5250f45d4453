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

#ifndef CONCEPTSCOPE_BINARY_IO_H_
#define CONCEPTSCOPE_BINARY_IO_H_

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>

#include "conceptscope/common.h"

namespace conceptscope::binary {

// Little-endian encoding of arithmetic values regardless of host order.
template <typename T>
  requires std::is_arithmetic_v<T>
std::array<char, sizeof(T)> EncodeLe(T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  return bytes;
}

template <typename T>
  requires std::is_arithmetic_v<T>
T DecodeLe(const char* bytes) {
  std::array<char, sizeof(T)> tmp;
  std::memcpy(tmp.data(), bytes, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(tmp.begin(), tmp.end());
  }
  T value;
  std::memcpy(&value, tmp.data(), sizeof(T));
  return value;
}

// CRC-32 (IEEE, as in zlib/PNG) over a byte range; `seed` chains calls.
std::uint32_t Crc32(std::span<const char> bytes, std::uint32_t seed = 0);

// CRC-32 of a whole file, streamed.
std::uint32_t FileCrc32(const std::filesystem::path& path);

// Output file wrapper that tracks the byte offset so failures can report it.
class Writer {
 public:
  explicit Writer(const std::filesystem::path& path);

  template <typename T>
  void Put(T value) {
    const auto bytes = EncodeLe(value);
    Write(bytes.data(), bytes.size());
  }

  void PutFloats(std::span<const float> values);
  void Write(const char* data, std::size_t size);
  void SeekTo(std::uint64_t offset);
  void Flush();
  std::uint64_t offset() const { return offset_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::uint64_t offset_ = 0;
};

// Input file wrapper; short reads raise IoError with the offset.
class Reader {
 public:
  explicit Reader(const std::filesystem::path& path);

  template <typename T>
  T Get() {
    char bytes[sizeof(T)];
    Read(bytes, sizeof(T));
    return DecodeLe<T>(bytes);
  }

  void GetFloats(std::span<float> out);
  void Read(char* data, std::size_t size);
  // Reads up to `size` bytes; returns the count actually read.
  std::size_t ReadSome(char* data, std::size_t size);
  void SeekTo(std::uint64_t offset);
  std::uint64_t offset() const { return offset_; }
  std::uint64_t file_size() const { return file_size_; }
  bool AtEnd() const { return offset_ >= file_size_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::uint64_t offset_ = 0;
  std::uint64_t file_size_ = 0;
};

}  // namespace conceptscope::binary

#endif  // CONCEPTSCOPE_BINARY_IO_H_
