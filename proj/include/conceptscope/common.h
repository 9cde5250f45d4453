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

#ifndef CONCEPTSCOPE_COMMON_H_
#define CONCEPTSCOPE_COMMON_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace conceptscope {

inline constexpr const char* kToolkitVersion = "1.0.0";

using ImageId = std::uint64_t;
using ConceptId = std::uint32_t;

// Base class of every error raised by the toolkit. `kind()` is a stable,
// machine-readable tag surfaced by the CLI in its error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

// Malformed file content. `field()` names the offending header field or
// record when known.
class FormatError : public Error {
 public:
  FormatError(std::string field, const std::string& message)
      : Error("format", message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class IoError : public Error {
 public:
  IoError(const std::string& message, std::uint64_t byte_offset)
      : Error("io", message + " (at byte offset " +
                        std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}
  std::uint64_t byte_offset() const { return byte_offset_; }

 private:
  std::uint64_t byte_offset_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& message)
      : Error("dimension", message) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message)
      : Error("numeric", message) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message)
      : Error("invalid_argument", message) {}
};

// Sparse non-negative vector: strictly increasing indices, one value each.
template <typename T>
struct BasicSparseVector {
  std::size_t dim = 0;
  std::vector<ConceptId> indices;
  std::vector<T> values;

  std::size_t nnz() const { return indices.size(); }

  // Value at `index`, zero when absent. Binary search over `indices`.
  T at(ConceptId index) const;

  std::vector<T> ToDense() const {
    std::vector<T> dense(dim, T(0));
    for (std::size_t k = 0; k < indices.size(); ++k) {
      dense[indices[k]] = values[k];
    }
    return dense;
  }

  bool operator==(const BasicSparseVector&) const = default;
};

template <typename T>
T BasicSparseVector<T>::at(ConceptId index) const {
  std::size_t lo = 0;
  std::size_t hi = indices.size();
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (indices[mid] < index) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  return (lo < indices.size() && indices[lo] == index) ? values[lo] : T(0);
}

using SparseVector = BasicSparseVector<double>;

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_COMMON_H_
