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

#ifndef CONCEPTSCOPE_MASK_CODEC_H_
#define CONCEPTSCOPE_MASK_CODEC_H_

#include <cstdint>
#include <span>
#include <vector>

namespace conceptscope {

// Run lengths of alternating values over a row-major bit grid, starting with
// a (possibly empty) run of zeros.
std::vector<std::uint32_t> EncodeRle(std::span<const std::uint8_t> bits);
// Throws FormatError if the runs do not add up to `size`.
std::vector<std::uint8_t> DecodeRle(std::span<const std::uint32_t> runs,
                                    std::size_t size);

// Patch (r, c) of a side x side grid covers pixel rows [r*H/side,
// (r+1)*H/side) and the matching columns, using integer division. A patch is
// set when at least half of its pixels are set.
std::vector<std::uint8_t> DownsamplePixelMask(
    std::span<const std::uint8_t> pixels, std::size_t height, std::size_t width,
    std::size_t side);

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_MASK_CODEC_H_
