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

#ifndef CONCEPTSCOPE_PARALLEL_H_
#define CONCEPTSCOPE_PARALLEL_H_

#include <cstddef>
#include <functional>

namespace conceptscope {

// Worker count: CONCEPTSCOPE_THREADS when set and positive, otherwise the
// hardware concurrency (at least 1).
std::size_t DefaultWorkerCount();

// Runs body(i) for i in [0, count) on up to `workers` threads. Each index is
// visited exactly once; callers must write results to per-index slots.
void ParallelFor(std::size_t count, std::size_t workers,
                 const std::function<void(std::size_t)>& body);

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_PARALLEL_H_
