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

#include <gtest/gtest.h>

#include <random>

#include "conceptscope/common.h"

namespace conceptscope {
namespace {

using Bits = std::vector<std::uint8_t>;
using Runs = std::vector<std::uint32_t>;

TEST(RleTest, Examples) {
  EXPECT_EQ(EncodeRle(Bits{0, 0, 1, 1, 1, 0}), (Runs{2, 3, 1}));
  EXPECT_EQ(EncodeRle(Bits{1, 1, 0}), (Runs{0, 2, 1}));
  EXPECT_EQ(EncodeRle(Bits{0, 0, 0, 0}), (Runs{4}));
  EXPECT_EQ(EncodeRle(Bits{}), (Runs{0}));
  EXPECT_EQ(DecodeRle(Runs{0, 2, 1}, 3), (Bits{1, 1, 0}));
}

TEST(RleTest, RoundTripProperty) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t side = 1 + rng() % 16;
    std::bernoulli_distribution bit(0.1 + 0.8 * (trial % 5) / 4.0);
    Bits bits(side * side);
    for (auto& b : bits) b = bit(rng) ? 1 : 0;
    const Runs runs = EncodeRle(bits);
    EXPECT_EQ(DecodeRle(runs, bits.size()), bits);
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      total += runs[i];
      if (i > 0) EXPECT_GT(runs[i], 0u);
    }
    EXPECT_EQ(total, bits.size());
  }
}

TEST(RleTest, SizeMismatchFails) {
  EXPECT_THROW(DecodeRle(Runs{2, 3}, 4), FormatError);
  EXPECT_THROW(DecodeRle(Runs{2, 1}, 4), FormatError);
}

TEST(DownsampleTest, HalfCoverageRule) {
  // 4x4 pixels onto a 2x2 grid; each patch has 4 pixels.
  const Bits pixels = {1, 1, 0, 0,  //
                       1, 0, 0, 0,  //
                       0, 0, 1, 0,  //
                       0, 0, 1, 0};
  // Patch (0,0): 3/4; (0,1): 0/4; (1,0): 0/4; (1,1): 2/4.
  EXPECT_EQ(DownsamplePixelMask(pixels, 4, 4, 2), (Bits{1, 0, 0, 1}));
}

TEST(DownsampleTest, UnevenDivision) {
  // 5 rows onto 2 patches: rows [0,2) and [2,5).
  Bits pixels(5 * 2, 0);
  pixels[2 * 2 + 0] = 1;  // row 2
  pixels[3 * 2 + 0] = 1;  // row 3
  const Bits grid = DownsamplePixelMask(pixels, 5, 2, 2);
  // Patch (1,0) covers rows 2..4, column 0: 2 of 3 set.
  EXPECT_EQ(grid, (Bits{0, 0, 1, 0}));
}

TEST(DownsampleTest, IdentityAtPatchResolution) {
  std::mt19937_64 rng(2);
  Bits pixels(36);
  for (auto& b : pixels) b = rng() % 2;
  EXPECT_EQ(DownsamplePixelMask(pixels, 6, 6, 6), pixels);
  EXPECT_THROW(DownsamplePixelMask(pixels, 6, 5, 2), DimensionError);
  EXPECT_THROW(DownsamplePixelMask(pixels, 6, 6, 7), InvalidArgument);
}

}  // namespace
}  // namespace conceptscope
