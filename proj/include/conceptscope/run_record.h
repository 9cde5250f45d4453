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

#ifndef CONCEPTSCOPE_RUN_RECORD_H_
#define CONCEPTSCOPE_RUN_RECORD_H_

#include <filesystem>
#include <map>
#include <string>

#include "conceptscope/common.h"

namespace conceptscope {

// One command's entry in `<dir>/run.json`.
struct RunEntry {
  std::string command;
  // Resolved configuration as a JSON document.
  std::string config_json = "{}";
  // role -> input file; each is recorded with its CRC-32.
  std::map<std::string, std::filesystem::path> inputs;
};

// Adds or replaces the entry for `entry.command` in `<dir>/run.json`, keeping
// entries written by other commands. Throws FormatError when an existing
// run.json does not parse.
void WriteRunRecord(const std::filesystem::path& dir, const RunEntry& entry);

// The run.json text of `dir`; empty when there is none.
std::string ReadRunRecord(const std::filesystem::path& dir);

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_RUN_RECORD_H_
