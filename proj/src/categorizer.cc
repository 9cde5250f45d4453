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

#include "conceptscope/categorizer.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "conceptscope/binary_io.h"
#include "text_util.h"
#include "json.hpp"

namespace conceptscope {
namespace {

using text::ReadText;

using nlohmann::json;

// Below this, sigma counts as zero.
constexpr double kFlatSigma = 1e-12;

void MeanAndSigma(std::span<const double> values, double& mean, double& sigma) {
  mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  sigma = std::sqrt(var / static_cast<double>(values.size()));
}

// Sum of silhouettes of the points of `group` (sorted), where every point of
// the other group lies on one side at mean distance `other_mean` from 0.
double GroupSilhouetteSum(std::span<const double> group, double other_mean,
                          bool other_is_above) {
  const std::size_t n = group.size();
  if (n < 2) return 0.0;  // singleton: s = 0
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + group[i];
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = group[i];
    const double left = x * static_cast<double>(i) - prefix[i];
    const double right = (prefix[n] - prefix[i + 1]) -
                         x * static_cast<double>(n - i - 1);
    const double a = (left + right) / static_cast<double>(n - 1);
    const double b = other_is_above ? other_mean - x : x - other_mean;
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total;
}


json ScoreToJson(const AlignmentScore& s) {
  return {{"necessity", s.necessity},
          {"sufficiency", s.sufficiency},
          {"alignment", s.alignment},
          {"n_images", s.n_images}};
}

}  // namespace

std::vector<std::pair<ImageId, ConceptId>> PlanMaskJobs(
    const std::string& class_name, const DatasetManifest& manifest,
    const ConceptStrengthTable& strengths, std::span<const ConceptId> retained,
    const JobPlanOptions& options) {
  const std::size_t y = strengths.ClassPosition(class_name);
  std::vector<ConceptId> concepts;
  for (ConceptId c : retained) {
    if (c >= strengths.latent_dim) {
      throw InvalidArgument("retained concept out of range");
    }
    if (strengths.at(y, c) > 0.0) concepts.push_back(c);
  }
  std::stable_sort(concepts.begin(), concepts.end(),
                   [&](ConceptId a, ConceptId b) {
                     const double sa = strengths.at(y, a);
                     const double sb = strengths.at(y, b);
                     return sa != sb ? sa > sb : a < b;
                   });
  if (concepts.size() > options.top_m) concepts.resize(options.top_m);

  const std::vector<ImageId> images = manifest.ImagesOfClass(class_name);
  if (images.empty()) {
    throw InvalidArgument("class '" + class_name + "' has no images");
  }
  std::vector<ImageId> sample;
  if (images.size() <= options.sample_n) {
    sample = images;
  } else {
    const std::uint32_t salt = binary::Crc32(
        std::span<const char>(class_name.data(), class_name.size()));
    std::mt19937_64 rng(options.seed ^ (std::uint64_t{salt} << 32 | salt));
    std::sample(images.begin(), images.end(), std::back_inserter(sample),
                options.sample_n, rng);
  }
  std::vector<std::pair<ImageId, ConceptId>> plan;
  plan.reserve(sample.size() * concepts.size());
  for (ImageId id : sample) {
    for (ConceptId c : concepts) plan.emplace_back(id, c);
  }
  return plan;
}

std::vector<MaskJob> BuildMaskJobs(
    const SaeModel& model, const std::filesystem::path& archive,
    const std::string& class_name,
    std::span<const std::pair<ImageId, ConceptId>> plan,
    double mask_threshold) {
  ArchiveReader reader(archive);
  std::unordered_map<ImageId, std::uint64_t> position;
  for (std::uint64_t i = 0; i < reader.header().record_count; ++i) {
    position.emplace(reader.ReadIdAt(i), i);
  }
  std::vector<MaskJob> jobs;
  jobs.reserve(plan.size());
  EmbeddingRecord record;
  bool loaded = false;
  for (const auto& [image_id, concept_id] : plan) {
    if (!loaded || record.image_id != image_id) {
      const auto it = position.find(image_id);
      if (it == position.end()) {
        throw InvalidArgument("image " + std::to_string(image_id) +
                              " is not in " + archive.string());
      }
      reader.ReadAt(it->second, record);
      loaded = true;
    }
    const ConceptMask mask =
        ComputeConceptMask(model, record, concept_id, mask_threshold);
    jobs.push_back({image_id, concept_id, class_name, mask.side, mask.grid});
  }
  return jobs;
}

AlignmentResult AlignmentScores(std::span<const ConfidenceTriple> triples) {
  struct Group {
    AlignmentScore score;
    double n_sum = 0.0;
    double s_sum = 0.0;
    std::uint64_t seen = 0;
  };
  std::vector<Group> groups;
  std::map<std::pair<std::string, ConceptId>, std::size_t> index;
  AlignmentResult result;
  for (const auto& t : triples) {
    const auto key = std::make_pair(t.class_name, t.concept_id);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, groups.size()).first;
      Group g;
      g.score.class_name = t.class_name;
      g.score.concept_id = t.concept_id;
      groups.push_back(std::move(g));
    }
    Group& g = groups[it->second];
    ++g.seen;
    if (!(t.p_full > 0.0) || !(t.p_removed > 0.0)) {
      ++result.dropped;
      continue;
    }
    g.n_sum += t.p_full / t.p_removed;
    g.s_sum += t.p_only / t.p_full;
    ++g.score.n_images;
  }
  for (auto& g : groups) {
    if (g.score.n_images == 0) {
      throw InvalidArgument("all " + std::to_string(g.seen) +
                            " triples dropped for class '" +
                            g.score.class_name + "', concept " +
                            std::to_string(g.score.concept_id));
    }
    const double n = static_cast<double>(g.score.n_images);
    g.score.necessity = g.n_sum / n;
    g.score.sufficiency = g.s_sum / n;
    g.score.alignment = (g.score.necessity + g.score.sufficiency) / 2.0;
    result.scores.push_back(std::move(g.score));
  }
  return result;
}

double SplitSilhouette(std::span<const double> values, double threshold) {
  std::vector<double> low;
  std::vector<double> high;
  for (double v : values) (v < threshold ? low : high).push_back(v);
  if (low.empty() || high.empty()) return 0.0;
  std::sort(low.begin(), low.end());
  std::sort(high.begin(), high.end());
  const double low_mean =
      std::accumulate(low.begin(), low.end(), 0.0) / static_cast<double>(low.size());
  const double high_mean = std::accumulate(high.begin(), high.end(), 0.0) /
                           static_cast<double>(high.size());
  const double total = GroupSilhouetteSum(low, high_mean, true) +
                       GroupSilhouetteSum(high, low_mean, false);
  return total / static_cast<double>(values.size());
}

std::vector<double> DefaultAlphaGrid() { return {-3, -2, -1, 0, 1, 2, 3}; }

SilhouetteSelection SelectAlphaBySilhouette(std::span<const double> scores,
                                            std::span<const double> grid) {
  if (scores.size() < 2) {
    throw InvalidArgument("silhouette selection needs at least 2 scores");
  }
  if (grid.empty()) throw InvalidArgument("empty alpha grid");
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  if (*lo == *hi) return {0.0, 0.0, true};
  double mean = 0.0;
  double sigma = 0.0;
  MeanAndSigma(scores, mean, sigma);
  SilhouetteSelection best{grid[0], -2.0, false};
  for (double alpha : grid) {
    const double s = SplitSilhouette(scores, mean + alpha * sigma);
    if (s > best.silhouette || (s == best.silhouette && alpha < best.alpha)) {
      best.alpha = alpha;
      best.silhouette = s;
    }
  }
  return best;
}

std::string ToString(Category category) {
  switch (category) {
    case Category::kTarget:
      return "target";
    case Category::kContext:
      return "context";
    case Category::kBias:
      return "bias";
    case Category::kInactive:
      return "inactive";
  }
  return "inactive";
}

Category CategoryFromString(const std::string& text) {
  if (text == "target") return Category::kTarget;
  if (text == "context") return Category::kContext;
  if (text == "bias") return Category::kBias;
  if (text == "inactive") return Category::kInactive;
  throw FormatError("category", "unknown category '" + text + "'");
}

std::vector<ConceptId> ClassConceptProfile::Of(Category category) const {
  std::vector<ConceptId> ids;
  for (const auto& e : entries) {
    if (e.category == category) ids.push_back(e.concept_id);
  }
  return ids;
}

ClassConceptProfile Categorize(const std::string& class_name,
                               std::span<const double> strengths,
                               std::span<const ConceptId> retained,
                               std::span<const AlignmentScore> scores,
                               const CategorizeOptions& options) {
  std::map<ConceptId, const AlignmentScore*> scored;
  std::vector<double> a_values;
  for (const auto& s : scores) {
    if (s.class_name != class_name) continue;
    if (!scored.emplace(s.concept_id, &s).second) {
      throw InvalidArgument("duplicate alignment score for concept " +
                            std::to_string(s.concept_id));
    }
    a_values.push_back(s.alignment);
  }
  if (a_values.size() < 2) {
    throw InvalidArgument("class '" + class_name + "' has " +
                          std::to_string(a_values.size()) +
                          " scored concepts; at least 2 are needed");
  }

  ClassConceptProfile profile;
  profile.class_name = class_name;
  profile.alpha_cs = options.alpha_cs;
  if (options.alpha_align) {
    profile.alpha_align = *options.alpha_align;
  } else {
    const auto selection = SelectAlphaBySilhouette(a_values);
    profile.alpha_align = selection.alpha;
    profile.silhouette = selection.silhouette;
    profile.alpha_auto = true;
  }
  double mean = 0.0;
  double sigma = 0.0;
  MeanAndSigma(a_values, mean, sigma);
  profile.target_threshold = mean + profile.alpha_align * sigma;

  std::vector<ConceptId> ids(retained.begin(), retained.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  for (const auto& [c, s] : scored) {
    if (!std::binary_search(ids.begin(), ids.end(), c)) {
      throw InvalidArgument("scored concept " + std::to_string(c) +
                            " is not retained");
    }
  }

  std::vector<double> context_strengths;
  for (ConceptId c : ids) {
    if (c >= strengths.size()) {
      throw InvalidArgument("retained concept out of range");
    }
    ProfileEntry e;
    e.concept_id = c;
    e.strength = strengths[c];
    const auto it = scored.find(c);
    if (it != scored.end()) e.alignment = *it->second;
    if (e.alignment && e.alignment->alignment >= profile.target_threshold) {
      e.category = Category::kTarget;
    } else if (e.strength > 0.0) {
      e.category = Category::kContext;
      context_strengths.push_back(e.strength);
    } else {
      e.category = Category::kInactive;
    }
    profile.entries.push_back(std::move(e));
  }

  if (!context_strengths.empty()) {
    double cs_mean = 0.0;
    double cs_sigma = 0.0;
    MeanAndSigma(context_strengths, cs_mean, cs_sigma);
    profile.bias_threshold = cs_mean + options.alpha_cs * cs_sigma;
    profile.bias_strict = cs_sigma < kFlatSigma;
    for (auto& e : profile.entries) {
      if (e.category != Category::kContext) continue;
      const bool is_bias = profile.bias_strict
                               ? e.strength > profile.bias_threshold
                               : e.strength >= profile.bias_threshold;
      if (is_bias) e.category = Category::kBias;
    }
  }
  return profile;
}

std::string ProfilesToJson(std::span<const ClassConceptProfile> profiles) {
  json doc = json::array();
  for (const auto& p : profiles) {
    json entries = json::array();
    for (const auto& e : p.entries) {
      json item = {{"concept_id", e.concept_id},
                   {"strength", e.strength},
                   {"category", ToString(e.category)}};
      if (e.alignment) item["alignment"] = ScoreToJson(*e.alignment);
      entries.push_back(std::move(item));
    }
    doc.push_back({{"class", p.class_name},
                   {"alpha_align", p.alpha_align},
                   {"alpha_auto", p.alpha_auto},
                   {"silhouette", p.silhouette},
                   {"alpha_cs", p.alpha_cs},
                   {"target_threshold", p.target_threshold},
                   {"bias_threshold", p.bias_threshold},
                   {"bias_strict", p.bias_strict},
                   {"targets", p.Of(Category::kTarget)},
                   {"bias", p.Of(Category::kBias)},
                   {"entries", std::move(entries)}});
  }
  return doc.dump(2);
}

std::vector<ClassConceptProfile> ProfilesFromJson(const std::string& text) {
  std::vector<ClassConceptProfile> profiles;
  try {
    const json doc = json::parse(text);
    for (const auto& item : doc) {
      ClassConceptProfile p;
      p.class_name = item.at("class").get<std::string>();
      p.alpha_align = item.at("alpha_align").get<double>();
      p.alpha_auto = item.at("alpha_auto").get<bool>();
      p.silhouette = item.at("silhouette").get<double>();
      p.alpha_cs = item.at("alpha_cs").get<double>();
      p.target_threshold = item.at("target_threshold").get<double>();
      p.bias_threshold = item.at("bias_threshold").get<double>();
      p.bias_strict = item.at("bias_strict").get<bool>();
      for (const auto& e : item.at("entries")) {
        ProfileEntry entry;
        entry.concept_id = e.at("concept_id").get<ConceptId>();
        entry.strength = e.at("strength").get<double>();
        entry.category = CategoryFromString(e.at("category").get<std::string>());
        if (e.contains("alignment")) {
          const auto& a = e.at("alignment");
          AlignmentScore s;
          s.class_name = p.class_name;
          s.concept_id = entry.concept_id;
          s.necessity = a.at("necessity").get<double>();
          s.sufficiency = a.at("sufficiency").get<double>();
          s.alignment = a.at("alignment").get<double>();
          s.n_images = a.at("n_images").get<std::uint64_t>();
          entry.alignment = s;
        }
        p.entries.push_back(std::move(entry));
      }
      profiles.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw FormatError("profile", e.what());
  }
  return profiles;
}

void SaveProfiles(const std::filesystem::path& path,
                  std::span<const ClassConceptProfile> profiles) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing", 0);
  out << ProfilesToJson(profiles) << '\n';
  if (!out) throw IoError("write failed for " + path.string(), 0);
}

std::vector<ClassConceptProfile> LoadProfiles(const std::filesystem::path& path) {
  return ProfilesFromJson(ReadText(path));
}

CategorizationRun CategorizeDataset(const SaeModel& model,
                                    const std::filesystem::path& archive,
                                    const DatasetManifest& manifest,
                                    const ConceptStrengthTable& strengths,
                                    std::span<const ConceptId> retained,
                                    ConfidenceProvider& provider,
                                    const DatasetCategorizeOptions& options) {
  CategorizationRun run;
  std::vector<MaskJob> all_jobs;
  for (const auto& class_name : manifest.class_index) {
    const auto plan =
        PlanMaskJobs(class_name, manifest, strengths, retained, options.plan);
    auto jobs = BuildMaskJobs(model, archive, class_name, plan,
                              options.mask_threshold);
    run.jobs += jobs.size();
    ProviderOutput out = provider.Evaluate(jobs);
    run.warnings.insert(run.warnings.end(), out.warnings.begin(),
                        out.warnings.end());
    std::vector<ConfidenceTriple> triples;
    for (auto& t : out.triples) {
      if (t) {
        triples.push_back(std::move(*t));
      } else {
        ++run.unscored;
      }
    }
    if (options.mask_jobs_out) {
      all_jobs.insert(all_jobs.end(), std::make_move_iterator(jobs.begin()),
                      std::make_move_iterator(jobs.end()));
    }
    const AlignmentResult alignment = AlignmentScores(triples);
    run.dropped += alignment.dropped;
    run.scores.insert(run.scores.end(), alignment.scores.begin(),
                      alignment.scores.end());
    run.triples.insert(run.triples.end(), triples.begin(), triples.end());
    if (alignment.scores.size() < 2) {
      run.warnings.push_back("class '" + class_name + "' skipped: " +
                             std::to_string(alignment.scores.size()) +
                             " scored concepts");
      continue;
    }
    const std::size_t y = strengths.ClassPosition(class_name);
    run.profiles.push_back(Categorize(class_name, strengths.row(y), retained,
                                      alignment.scores, options.categorize));
  }
  if (options.mask_jobs_out) SaveMaskJobs(*options.mask_jobs_out, all_jobs);
  return run;
}

}  // namespace conceptscope
