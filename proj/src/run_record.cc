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

#include "conceptscope/run_record.h"

#include <cstdio>

#include <json.hpp>

#include "conceptscope/binary_io.h"
#include "conceptscope/common.h"
#include "text_util.h"

namespace conceptscope {

using json = nlohmann::ordered_json;

std::string ReadRunRecord(const std::filesystem::path& dir) {
  const auto path = dir / "run.json";
  if (!std::filesystem::exists(path)) return {};
  return text::ReadText(path);
}

void WriteRunRecord(const std::filesystem::path& dir, const RunEntry& entry) {
  json doc = {{"toolkit", "conceptscope"},
              {"version", kToolkitVersion},
              {"runs", json::object()}};
  const std::string existing = ReadRunRecord(dir);
  if (!existing.empty()) {
    json old = json::parse(existing, nullptr, false);
    if (old.is_discarded() || !old.is_object() || !old.contains("runs") ||
        !old["runs"].is_object()) {
      throw FormatError("run.json", "cannot merge into " +
                                        (dir / "run.json").string());
    }
    doc["runs"] = old["runs"];
  }
  json config = json::parse(entry.config_json, nullptr, false);
  if (config.is_discarded()) {
    throw InvalidArgument("run config for '" + entry.command + "' is not JSON");
  }
  json inputs = json::object();
  for (const auto& [role, path] : entry.inputs) {
    char crc[11];
    std::snprintf(crc, sizeof crc, "%08x", binary::FileCrc32(path));
    inputs[role] = {{"path", path.string()}, {"crc32", crc}};
  }
  doc["runs"][entry.command] = {{"config", std::move(config)},
                                {"inputs", std::move(inputs)}};
  std::filesystem::create_directories(dir);
  text::WriteText(dir / "run.json", doc.dump(2) + "\n");
}

}  // namespace conceptscope
