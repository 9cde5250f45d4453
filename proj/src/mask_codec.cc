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

#include "conceptscope/mask_codec.h"

#include <string>

#include "conceptscope/common.h"

namespace conceptscope {

std::vector<std::uint32_t> EncodeRle(std::span<const std::uint8_t> bits) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t length = 0;
  for (std::uint8_t b : bits) {
    const std::uint8_t v = b ? 1 : 0;
    if (v != current) {
      runs.push_back(length);
      current = v;
      length = 0;
    }
    ++length;
  }
  if (length > 0 || runs.empty()) runs.push_back(length);
  return runs;
}

std::vector<std::uint8_t> DecodeRle(std::span<const std::uint32_t> runs,
                                    std::size_t size) {
  std::vector<std::uint8_t> bits;
  bits.reserve(size);
  std::uint8_t value = 0;
  for (std::uint32_t run : runs) {
    if (bits.size() + run > size) {
      throw FormatError("mask", "run lengths exceed grid size " +
                                    std::to_string(size));
    }
    bits.insert(bits.end(), run, value);
    value ^= 1;
  }
  if (bits.size() != size) {
    throw FormatError("mask", "run lengths cover " +
                                  std::to_string(bits.size()) + " of " +
                                  std::to_string(size) + " cells");
  }
  return bits;
}

std::vector<std::uint8_t> DownsamplePixelMask(
    std::span<const std::uint8_t> pixels, std::size_t height, std::size_t width,
    std::size_t side) {
  if (pixels.size() != height * width) {
    throw DimensionError("pixel mask has " + std::to_string(pixels.size()) +
                         " values, expected " +
                         std::to_string(height * width));
  }
  if (side == 0 || height < side || width < side) {
    throw InvalidArgument("pixel mask smaller than the patch grid");
  }
  std::vector<std::uint8_t> grid(side * side, 0);
  for (std::size_t r = 0; r < side; ++r) {
    const std::size_t y0 = r * height / side;
    const std::size_t y1 = (r + 1) * height / side;
    for (std::size_t c = 0; c < side; ++c) {
      const std::size_t x0 = c * width / side;
      const std::size_t x1 = (c + 1) * width / side;
      std::size_t set = 0;
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) set += pixels[y * width + x] ? 1 : 0;
      }
      const std::size_t area = (y1 - y0) * (x1 - x0);
      grid[r * side + c] = 2 * set >= area ? 1 : 0;
    }
  }
  return grid;
}

}  // namespace conceptscope
