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

#include "conceptscope/robustness.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "text_util.h"

namespace conceptscope {
namespace {

using json = nlohmann::ordered_json;
using text::FormatDouble;

constexpr const char* kGroupNames[4] = {"hh", "hl", "lh", "ll"};

bool IsHigh(const ActivationVector& v, std::span<const ConceptId> concepts,
            std::span<const double> train_row, HighRule rule) {
  if (rule == HighRule::kAny) {
    for (ConceptId c : concepts) {
      if (static_cast<double>(v.at(c)) > train_row[c]) return true;
    }
    return false;
  }
  double excess = 0.0;
  for (ConceptId c : concepts) {
    excess += static_cast<double>(v.at(c)) - train_row[c];
  }
  return excess / static_cast<double>(concepts.size()) > 0.0;
}

void Finalize(GroupStats& s) {
  double sum = 0.0;
  int present = 0;
  for (int g = 0; g < 4; ++g) {
    if (s.sizes[g] == 0) continue;
    s.accuracy[g] =
        static_cast<double>(s.correct[g]) / static_cast<double>(s.sizes[g]);
    sum += *s.accuracy[g];
    ++present;
  }
  if (present > 0) s.mean_of_groups = sum / present;
}

json StatsToJson(const GroupStats& s) {
  json groups = json::object();
  for (int g = 0; g < 4; ++g) {
    json item = {{"group", g + 1}, {"size", s.sizes[g]}, {"correct", s.correct[g]}};
    item["accuracy"] = s.accuracy[g] ? json(*s.accuracy[g]) : json(nullptr);
    groups[kGroupNames[g]] = std::move(item);
  }
  return {{"total", s.total},
          {"groups", std::move(groups)},
          {"mean_of_groups",
           s.mean_of_groups ? json(*s.mean_of_groups) : json(nullptr)}};
}

std::string Cell(const std::optional<double>& v) {
  return v ? FormatDouble(*v) : std::string();
}

}  // namespace

std::string ToString(HighRule rule) {
  return rule == HighRule::kAny ? "any" : "mean";
}

HighRule HighRuleFromString(const std::string& text) {
  if (text == "any") return HighRule::kAny;
  if (text == "mean") return HighRule::kMean;
  throw InvalidArgument("unknown high rule '" + text + "'");
}

int SubgroupOf(bool target_high, bool bias_high) {
  if (target_high) return bias_high ? 1 : 2;
  return bias_high ? 3 : 4;
}

SubgroupResult AssignSubgroups(const ConceptStrengthTable& train_strengths,
                               const ActivationSet& test,
                               const DatasetManifest& test_manifest,
                               std::span<const ClassConceptProfile> profiles,
                               HighRule rule) {
  SubgroupResult result;
  const auto index = test.IndexById();
  std::map<std::string, const ClassConceptProfile*> by_name;
  for (const auto& p : profiles) by_name.emplace(p.class_name, &p);

  for (const auto& class_name : test_manifest.class_index) {
    const auto it = by_name.find(class_name);
    if (it == by_name.end()) {
      result.skipped.push_back(class_name + ": no profile");
      continue;
    }
    const auto targets = it->second->Of(Category::kTarget);
    const auto bias = it->second->Of(Category::kBias);
    if (targets.empty() || bias.empty()) {
      result.skipped.push_back(class_name + (targets.empty()
                                                 ? ": no target concept"
                                                 : ": no bias concept"));
      continue;
    }
    const auto row =
        train_strengths.row(train_strengths.ClassPosition(class_name));
    for (ConceptId c : targets) {
      if (c >= row.size()) throw InvalidArgument("concept out of range");
    }
    for (ConceptId c : bias) {
      if (c >= row.size()) throw InvalidArgument("concept out of range");
    }
    for (ImageId id : test_manifest.ImagesOfClass(class_name)) {
      const auto pos = index.find(id);
      if (pos == index.end()) {
        throw InvalidArgument("image " + std::to_string(id) +
                              " missing from test activations");
      }
      const auto& v = test.records[pos->second].image_level;
      SubgroupAssignment a;
      a.image_id = id;
      a.class_name = class_name;
      a.target_high = IsHigh(v, targets, row, rule);
      a.bias_high = IsHigh(v, bias, row, rule);
      a.group = SubgroupOf(a.target_high, a.bias_high);
      result.assignments.push_back(std::move(a));
    }
  }
  return result;
}

std::map<ImageId, std::string> LoadPredictions(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string(), 0);
  std::map<ImageId, std::string> predictions;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    const std::string_view row = text::StripCr(line);
    if (row.empty()) continue;
    const auto cells = text::SplitCommas(row);
    if (cells.size() != 2) {
      throw FormatError("predictions", "expected 2 columns in '" + line + "'");
    }
    if (first && cells[0] == "image_id") {
      first = false;
      continue;
    }
    first = false;
    const auto id =
        text::ParseNumber<ImageId>(cells[0], "predictions", "image id");
    if (!predictions.emplace(id, std::string(cells[1])).second) {
      throw FormatError("predictions",
                        "duplicate image id " + std::to_string(id));
    }
  }
  return predictions;
}

void SavePredictions(const std::filesystem::path& path,
                     const std::map<ImageId, std::string>& predictions) {
  std::ostringstream out;
  out << "image_id,predicted_class\n";
  for (const auto& [id, cls] : predictions) out << id << ',' << cls << '\n';
  text::WriteText(path, out.str());
}

GroupAccuracyReport GroupAccuracy(
    std::span<const SubgroupAssignment> assignments,
    const std::map<ImageId, std::string>& predictions) {
  std::vector<ImageId> missing;
  for (const auto& a : assignments) {
    if (!predictions.count(a.image_id)) missing.push_back(a.image_id);
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) {
      list += (i ? "," : "") + std::to_string(missing[i]);
    }
    if (missing.size() > 20) list += ",...";
    throw InvalidArgument(std::to_string(missing.size()) +
                          " assigned images have no prediction: " + list);
  }

  GroupAccuracyReport report;
  std::map<std::string, std::size_t> slot;
  for (const auto& a : assignments) {
    if (a.group < 1 || a.group > 4) throw InvalidArgument("bad group");
    auto it = slot.find(a.class_name);
    if (it == slot.end()) {
      it = slot.emplace(a.class_name, report.per_class.size()).first;
      report.per_class.emplace_back(a.class_name, GroupStats{});
    }
    const bool correct = predictions.at(a.image_id) == a.class_name;
    for (GroupStats* s : {&report.per_class[it->second].second, &report.pooled}) {
      ++s->sizes[a.group - 1];
      s->correct[a.group - 1] += correct;
      ++s->total;
    }
  }
  for (auto& [name, s] : report.per_class) Finalize(s);
  Finalize(report.pooled);
  return report;
}

std::string ToJson(const GroupAccuracyReport& report,
                   std::span<const std::string> skipped) {
  json classes = json::array();
  for (const auto& [name, s] : report.per_class) {
    json item = StatsToJson(s);
    item["class"] = name;
    classes.push_back(std::move(item));
  }
  return json{{"pooled", StatsToJson(report.pooled)},
              {"classes", std::move(classes)},
              {"skipped", std::vector<std::string>(skipped.begin(), skipped.end())}}
      .dump(2);
}

std::string ToCsv(const GroupAccuracyReport& report) {
  std::ostringstream out;
  out << "class,group,size,correct,accuracy\n";
  auto rows = [&](const std::string& name, const GroupStats& s) {
    for (int g = 0; g < 4; ++g) {
      out << name << ',' << g + 1 << ',' << s.sizes[g] << ',' << s.correct[g]
          << ',' << Cell(s.accuracy[g]) << '\n';
    }
    out << name << ",mean,," << ',' << Cell(s.mean_of_groups) << '\n';
  };
  for (const auto& [name, s] : report.per_class) rows(name, s);
  rows("pooled", report.pooled);
  return out.str();
}

std::string AssignmentsToCsv(std::span<const SubgroupAssignment> assignments) {
  std::ostringstream out;
  out << "image_id,class,target_high,bias_high,group\n";
  for (const auto& a : assignments) {
    out << a.image_id << ',' << a.class_name << ',' << int{a.target_high} << ','
        << int{a.bias_high} << ',' << a.group << '\n';
  }
  return out.str();
}

}  // namespace conceptscope
