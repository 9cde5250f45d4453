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

#include "conceptscope/evaluation.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "conceptscope/binary_io.h"
#include "conceptscope/embedding_io.h"
#include "conceptscope/mask_codec.h"
#include "conceptscope/parallel.h"
#include "text_util.h"

namespace conceptscope {
namespace {

using json = nlohmann::ordered_json;
using text::FormatDouble;
using text::ParseNumber;
using text::SplitCommas;

bool LooksNumeric(std::string_view cell) {
  return !cell.empty() && std::all_of(cell.begin(), cell.end(), [](char ch) {
    return ch >= '0' && ch <= '9';
  });
}

std::mt19937_64 ClassRng(std::uint64_t seed, const std::string& name) {
  const std::uint32_t salt =
      binary::Crc32(std::span<const char>(name.data(), name.size()));
  return std::mt19937_64(seed ^ (std::uint64_t{salt} << 32 | salt));
}

// Sparse image-level activations transposed into per-concept columns over a
// fixed list of rows.
class ColumnView {
 public:
  ColumnView(const ActivationSet& set, const std::vector<std::size_t>& rows)
      : rows_(rows.size()), columns_(set.latent_dim) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& v = set.records[rows[r]].image_level;
      for (std::size_t k = 0; k < v.nnz(); ++k) {
        columns_[v.indices[k]].emplace_back(static_cast<std::uint32_t>(r),
                                            v.values[k]);
      }
    }
  }

  std::vector<double> Scores(ConceptId c) const {
    std::vector<double> scores(rows_, 0.0);
    for (const auto& [r, v] : columns_.at(c)) scores[r] = v;
    return scores;
  }

 private:
  std::size_t rows_;
  std::vector<std::vector<std::pair<std::uint32_t, float>>> columns_;
};

std::size_t PositionOf(const std::unordered_map<ImageId, std::size_t>& index,
                       ImageId id, const char* what) {
  const auto it = index.find(id);
  if (it == index.end()) {
    throw InvalidArgument("image " + std::to_string(id) + " missing from " +
                          what);
  }
  return it->second;
}

std::map<ImageId, double> LoadIdValueCsv(const std::filesystem::path& path,
                                         const std::string& field) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string(), 0);
  std::map<ImageId, double> values;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    const std::string_view row = text::StripCr(line);
    if (row.empty()) continue;
    const auto cells = SplitCommas(row);
    if (cells.size() != 2) {
      throw FormatError(field, "expected 2 columns in '" + line + "'");
    }
    if (first && !LooksNumeric(cells[0])) {
      first = false;
      continue;
    }
    first = false;
    const auto id = ParseNumber<ImageId>(cells[0], field, "image id");
    if (!values.emplace(id, ParseNumber<double>(cells[1], field, "value"))
             .second) {
      throw FormatError(field, "duplicate image id " + std::to_string(id));
    }
  }
  return values;
}

}  // namespace

PrCurve ComputePrCurve(std::span<const double> scores,
                       std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("scores and labels differ in length");
  }
  PrCurve curve;
  curve.total = scores.size();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) {
      throw InvalidArgument("non-finite score at position " +
                            std::to_string(i));
    }
    curve.positives += labels[i] != 0;
  }
  if (curve.positives == 0) throw InvalidArgument("no positive labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double p = static_cast<double>(curve.positives);
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  double prev_recall = 0.0;
  curve.best_f1 = -1.0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == threshold; ++i) {
      (labels[order[i]] ? tp : fp) += 1;
    }
    const double precision =
        static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / p;
    curve.auprc += (recall - prev_recall) * precision;
    prev_recall = recall;
    const double f1 =
        tp == 0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    if (f1 > curve.best_f1) {
      curve.best_f1 = f1;
      curve.best_threshold = threshold;
    }
    curve.points.push_back({threshold, precision, recall});
  }
  std::reverse(curve.points.begin(), curve.points.end());
  return curve;
}

double F1AtThreshold(std::span<const double> scores,
                     std::span<const std::uint8_t> labels, double threshold) {
  if (scores.size() != labels.size()) {
    throw DimensionError("scores and labels differ in length");
  }
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (predicted && labels[i]) ++tp;
    if (predicted && !labels[i]) ++fp;
    if (!predicted && labels[i]) ++fn;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

AttributeLabels LoadAttributeLabels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string(), 0);
  AttributeLabels labels;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    const std::string_view row = text::StripCr(line);
    if (row.empty()) continue;
    const auto cells = SplitCommas(row);
    if (cells.size() != 3) {
      throw FormatError("attributes", "expected 3 columns in '" + line + "'");
    }
    if (first && !LooksNumeric(cells[0])) {
      first = false;
      continue;
    }
    first = false;
    const auto id = ParseNumber<ImageId>(cells[0], "attributes", "image id");
    if (cells[2] != "0" && cells[2] != "1") {
      throw FormatError("attributes",
                        "label must be 0 or 1 in '" + line + "'");
    }
    const std::uint8_t value = cells[2] == "1" ? 1 : 0;
    auto& column = labels[std::string(cells[1])];
    const auto [it, inserted] = column.emplace(id, value);
    if (!inserted && it->second != value) {
      throw FormatError("attributes", "conflicting labels for image " +
                                          std::to_string(id) + ", '" +
                                          std::string(cells[1]) + "'");
    }
  }
  return labels;
}

void SaveAttributeLabels(const std::filesystem::path& path,
                         const AttributeLabels& labels) {
  std::ostringstream out;
  out << "image_id,attribute,value\n";
  for (const auto& [attribute, column] : labels) {
    if (attribute.find_first_of(",\n") != std::string::npos) {
      throw InvalidArgument("attribute '" + attribute +
                            "' cannot be written to CSV");
    }
    for (const auto& [id, value] : column) {
      out << id << ',' << attribute << ',' << int{value} << '\n';
    }
  }
  text::WriteText(path, out.str());
}

std::vector<ImageId> SampleImagesPerClass(const DatasetManifest& manifest,
                                          std::size_t per_class,
                                          std::uint64_t seed) {
  std::set<ImageId> chosen;
  for (const auto& name : manifest.class_index) {
    const std::vector<ImageId> images = manifest.ImagesOfClass(name);
    if (images.size() <= per_class) {
      chosen.insert(images.begin(), images.end());
      continue;
    }
    std::vector<ImageId> sample;
    auto rng = ClassRng(seed, name);
    std::sample(images.begin(), images.end(), std::back_inserter(sample),
                per_class, rng);
    chosen.insert(sample.begin(), sample.end());
  }
  return {chosen.begin(), chosen.end()};
}

LatentAssignment AssignLatents(const ActivationSet& train,
                               const DatasetManifest& manifest,
                               const AttributeLabels& labels,
                               std::span<const ConceptId> retained,
                               const AssignOptions& options) {
  if (retained.empty()) throw InvalidArgument("no retained concepts");
  std::vector<ConceptId> concepts(retained.begin(), retained.end());
  std::sort(concepts.begin(), concepts.end());
  concepts.erase(std::unique(concepts.begin(), concepts.end()), concepts.end());
  if (concepts.back() >= train.latent_dim) {
    throw InvalidArgument("retained concept out of range");
  }

  const auto index = train.IndexById();
  const std::vector<ImageId> sample =
      SampleImagesPerClass(manifest, options.sample_per_class, options.seed);

  LatentAssignment assignment;
  for (const auto& [attribute, column] : labels) {
    std::vector<std::size_t> rows;
    std::vector<std::uint8_t> y;
    for (ImageId id : sample) {
      const auto it = column.find(id);
      if (it == column.end()) continue;
      rows.push_back(PositionOf(index, id, "train activations"));
      y.push_back(it->second);
    }
    const auto positives = std::count(y.begin(), y.end(), std::uint8_t{1});
    if (positives == 0) {
      throw InvalidArgument("attribute '" + attribute +
                            "' has no positives in the sample");
    }
    if (static_cast<std::size_t>(positives) == y.size()) {
      throw InvalidArgument("attribute '" + attribute +
                            "' has no negatives in the sample");
    }
    const ColumnView view(train, rows);
    std::vector<LatentChoice> results(concepts.size());
    ParallelFor(concepts.size(), options.workers, [&](std::size_t i) {
      const auto scores = view.Scores(concepts[i]);
      const PrCurve curve = ComputePrCurve(scores, y);
      results[i] = {concepts[i], curve.auprc, curve.best_threshold,
                    curve.best_f1};
    });
    LatentChoice best = results[0];
    for (const auto& r : results) {
      if (r.train_auprc > best.train_auprc) best = r;
    }
    assignment.emplace(attribute, best);
  }
  return assignment;
}

std::string AssignmentToJson(const LatentAssignment& assignment) {
  json doc = json::object();
  for (const auto& [attribute, choice] : assignment) {
    doc[attribute] = {{"concept_id", choice.concept_id},
                      {"train_auprc", choice.train_auprc},
                      {"threshold", choice.threshold},
                      {"train_f1", choice.train_f1}};
  }
  return doc.dump(2);
}

LatentAssignment AssignmentFromJson(const std::string& text) {
  LatentAssignment assignment;
  try {
    const json doc = json::parse(text);
    if (!doc.is_object()) throw FormatError("assignment", "expected an object");
    for (const auto& [attribute, item] : doc.items()) {
      LatentChoice c;
      c.concept_id = item.at("concept_id").get<ConceptId>();
      c.train_auprc = item.at("train_auprc").get<double>();
      c.threshold = item.at("threshold").get<double>();
      c.train_f1 = item.at("train_f1").get<double>();
      assignment.emplace(attribute, c);
    }
  } catch (const json::exception& e) {
    throw FormatError("assignment", e.what());
  }
  return assignment;
}

ConceptPredictionReport EvaluateConceptPrediction(
    const LatentAssignment& assignment, const ActivationSet& test,
    const AttributeLabels& labels) {
  ConceptPredictionReport report;
  const auto index = test.IndexById();
  for (const auto& [attribute, choice] : assignment) {
    const auto column = labels.find(attribute);
    if (column == labels.end()) {
      report.skipped.push_back(attribute + ": no test labels");
      continue;
    }
    std::vector<double> scores;
    std::vector<std::uint8_t> y;
    for (const auto& [id, value] : column->second) {
      const auto it = index.find(id);
      if (it == index.end()) continue;
      scores.push_back(test.records[it->second].image_level.at(choice.concept_id));
      y.push_back(value);
    }
    if (std::find(y.begin(), y.end(), std::uint8_t{1}) == y.end()) {
      report.skipped.push_back(attribute + ": no positive test images");
      continue;
    }
    const PrCurve curve = ComputePrCurve(scores, y);
    report.rows.push_back({attribute, choice.concept_id, curve.auprc,
                           F1AtThreshold(scores, y, choice.threshold),
                           curve.total, curve.positives});
  }
  for (const auto& r : report.rows) {
    report.mean_auprc += r.auprc;
    report.mean_f1 += r.f1;
  }
  if (!report.rows.empty()) {
    report.mean_auprc /= static_cast<double>(report.rows.size());
    report.mean_f1 /= static_cast<double>(report.rows.size());
  }
  return report;
}

std::string ToJson(const ConceptPredictionReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"attribute", r.attribute},
                    {"concept_id", r.concept_id},
                    {"auprc", r.auprc},
                    {"f1", r.f1},
                    {"images", r.images},
                    {"positives", r.positives}});
  }
  return json{{"rows", rows},
              {"mean_auprc", report.mean_auprc},
              {"mean_f1", report.mean_f1},
              {"skipped", report.skipped}}
      .dump(2);
}

std::string ToCsv(const ConceptPredictionReport& report) {
  std::ostringstream out;
  out << "attribute,concept_id,auprc,f1,images,positives\n";
  for (const auto& r : report.rows) {
    out << r.attribute << ',' << r.concept_id << ',' << FormatDouble(r.auprc)
        << ',' << FormatDouble(r.f1) << ',' << r.images << ',' << r.positives
        << '\n';
  }
  out << "mean,," << FormatDouble(report.mean_auprc) << ','
      << FormatDouble(report.mean_f1) << ",,\n";
  return out.str();
}

std::vector<GroundTruthMask> LoadGroundTruthMasks(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string(), 0);
  std::vector<GroundTruthMask> masks;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::StripCr(line).empty()) continue;
    try {
      const json item = json::parse(line);
      GroundTruthMask m;
      m.image_id = item.at("image_id").get<ImageId>();
      m.attribute = item.at("attribute").get<std::string>();
      const auto runs = item.at("mask").get<std::vector<std::uint32_t>>();
      std::size_t size = 0;
      if (item.contains("height")) {
        m.height = item.at("height").get<std::size_t>();
        m.width = item.at("width").get<std::size_t>();
        size = m.height * m.width;
      } else {
        m.side = item.at("side").get<std::size_t>();
        size = m.side * m.side;
      }
      m.bits = DecodeRle(runs, size);
      masks.push_back(std::move(m));
    } catch (const json::exception& e) {
      throw FormatError("gt_mask",
                        "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return masks;
}

void SaveGroundTruthMasks(const std::filesystem::path& path,
                          std::span<const GroundTruthMask> masks) {
  std::ostringstream out;
  for (const auto& m : masks) {
    json item = {{"image_id", m.image_id}, {"attribute", m.attribute}};
    if (m.height > 0) {
      item["height"] = m.height;
      item["width"] = m.width;
    } else {
      item["side"] = m.side;
    }
    item["mask"] = EncodeRle(m.bits);
    out << item.dump() << '\n';
  }
  text::WriteText(path, out.str());
}

SegmentationReport EvaluateSegmentation(const SaeModel& model,
                                        const std::filesystem::path& archive,
                                        std::span<const GroundTruthMask> masks,
                                        const LatentAssignment& assignment) {
  ArchiveReader reader(archive);
  const std::size_t side = GridSide(reader.header().num_tokens);
  std::unordered_map<ImageId, std::uint64_t> position;
  for (std::uint64_t i = 0; i < reader.header().record_count; ++i) {
    position.emplace(reader.ReadIdAt(i), i);
  }

  std::map<std::string, std::vector<const GroundTruthMask*>> by_attribute;
  for (const auto& m : masks) by_attribute[m.attribute].push_back(&m);

  SegmentationReport report;
  EmbeddingRecord record;
  for (const auto& [attribute, list] : by_attribute) {
    const auto choice = assignment.find(attribute);
    if (choice == assignment.end()) {
      report.skipped.push_back(attribute + ": no assigned latent");
      continue;
    }
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (const GroundTruthMask* m : list) {
      const auto it = position.find(m->image_id);
      if (it == position.end()) {
        throw InvalidArgument("image " + std::to_string(m->image_id) +
                              " missing from " + archive.string());
      }
      std::vector<std::uint8_t> truth;
      if (m->height > 0) {
        truth = DownsamplePixelMask(m->bits, m->height, m->width, side);
      } else if (m->side == side) {
        truth = m->bits;
      } else {
        throw DimensionError("mask for image " + std::to_string(m->image_id) +
                             " has side " + std::to_string(m->side) +
                             ", archive grid is " + std::to_string(side));
      }
      reader.ReadAt(it->second, record);
      const auto map = NormalizeMap(
          PatchActivations(model, record, choice->second.concept_id));
      scores.insert(scores.end(), map.begin(), map.end());
      labels.insert(labels.end(), truth.begin(), truth.end());
    }
    if (std::find(labels.begin(), labels.end(), std::uint8_t{1}) ==
        labels.end()) {
      throw InvalidArgument("attribute '" + attribute +
                            "' has no ground-truth positive patches");
    }
    const PrCurve curve = ComputePrCurve(scores, labels);
    report.rows.push_back({attribute, choice->second.concept_id, curve.auprc,
                           list.size(), curve.total, curve.positives});
  }
  for (const auto& r : report.rows) report.mean_auprc += r.auprc;
  if (!report.rows.empty()) {
    report.mean_auprc /= static_cast<double>(report.rows.size());
  }
  return report;
}

std::string ToJson(const SegmentationReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"attribute", r.attribute},
                    {"concept_id", r.concept_id},
                    {"auprc", r.auprc},
                    {"images", r.images},
                    {"patches", r.patches},
                    {"positives", r.positives}});
  }
  return json{{"rows", rows},
              {"mean_auprc", report.mean_auprc},
              {"skipped", report.skipped}}
      .dump(2);
}

std::string ToCsv(const SegmentationReport& report) {
  std::ostringstream out;
  out << "attribute,concept_id,auprc,images,patches,positives\n";
  for (const auto& r : report.rows) {
    out << r.attribute << ',' << r.concept_id << ',' << FormatDouble(r.auprc)
        << ',' << r.images << ',' << r.patches << ',' << r.positives << '\n';
  }
  out << "mean,," << FormatDouble(report.mean_auprc) << ",,,\n";
  return out.str();
}

double Pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("length mismatch");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nan("");
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> AverageRanks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] < values[b];
  });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    // 1-based ranks i+1..j share their mean.
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

double Spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = AverageRanks(x);
  const auto ry = AverageRanks(y);
  return Pearson(rx, ry);
}

CorrelationResult ActivationSimilarityCorrelation(
    std::span<const ScoredPair> pairs, std::size_t n_bins) {
  if (n_bins == 0) throw InvalidArgument("n_bins must be >= 1");
  std::vector<ScoredPair> active;
  for (const auto& p : pairs) {
    if (p.activation > 0.0) active.push_back(p);
  }
  CorrelationResult result;
  result.images = active.size();
  if (active.size() < 2) {
    throw InvalidArgument("need at least 2 images with activation > 0, got " +
                          std::to_string(active.size()));
  }
  std::sort(active.begin(), active.end(),
            [](const ScoredPair& a, const ScoredPair& b) {
              if (a.activation != b.activation) {
                return a.activation < b.activation;
              }
              return a.image_id < b.image_id;
            });
  result.bins = n_bins;
  if (active.size() < n_bins) {
    result.bins = active.size();
    result.warnings.push_back("only " + std::to_string(active.size()) +
                              " active images; using " +
                              std::to_string(result.bins) + " bins");
  }
  const std::size_t n = active.size();
  std::vector<double> act(result.bins), sim(result.bins);
  for (std::size_t b = 0; b < result.bins; ++b) {
    const std::size_t lo = b * n / result.bins;
    const std::size_t hi = (b + 1) * n / result.bins;
    for (std::size_t i = lo; i < hi; ++i) {
      act[b] += active[i].activation;
      sim[b] += active[i].similarity;
    }
    act[b] /= static_cast<double>(hi - lo);
    sim[b] /= static_cast<double>(hi - lo);
  }
  result.pearson = Pearson(act, sim);
  result.spearman = Spearman(act, sim);
  if (std::isnan(result.pearson) || std::isnan(result.spearman)) {
    result.warnings.push_back("correlation undefined: constant bin means");
  }
  return result;
}

std::map<ImageId, double> LoadSimilarities(const std::filesystem::path& path) {
  return LoadIdValueCsv(path, "similarities");
}

std::string ToJson(const CorrelationResult& result) {
  json doc = {{"pearson", nullptr},
              {"spearman", nullptr},
              {"bins", result.bins},
              {"images", result.images},
              {"warnings", result.warnings}};
  if (!std::isnan(result.pearson)) doc["pearson"] = result.pearson;
  if (!std::isnan(result.spearman)) doc["spearman"] = result.spearman;
  return doc.dump(2);
}

std::string ToCsv(const CorrelationResult& result) {
  auto cell = [](double v) {
    return std::isnan(v) ? std::string() : FormatDouble(v);
  };
  std::ostringstream out;
  out << "pearson,spearman,bins,images\n"
      << cell(result.pearson) << ',' << cell(result.spearman) << ','
      << result.bins << ',' << result.images << '\n';
  return out.str();
}

std::string ConceptAttributesToJson(const ConceptAttributes& attributes) {
  json doc = json::object();
  for (const auto& [c, attribute] : attributes) doc[std::to_string(c)] = attribute;
  return doc.dump(2);
}

ConceptAttributes ConceptAttributesFromJson(const std::string& text) {
  ConceptAttributes attributes;
  try {
    const json doc = json::parse(text);
    if (!doc.is_object()) {
      throw FormatError("concept_attributes", "expected an object");
    }
    for (const auto& [key, value] : doc.items()) {
      const auto c =
          text::ParseNumber<ConceptId>(key, "concept_attributes", "concept id");
      attributes.emplace(c, value.get<std::string>());
    }
  } catch (const json::exception& e) {
    throw FormatError("concept_attributes", e.what());
  }
  return attributes;
}

ConceptAttributes LabelConceptsByAttribute(const ActivationSet& activations,
                                           const AttributeLabels& labels,
                                           std::span<const ConceptId> concepts) {
  const auto index = activations.IndexById();
  struct Column {
    std::string attribute;
    std::vector<std::size_t> rows;
    std::vector<std::uint8_t> y;
  };
  std::vector<Column> columns;
  for (const auto& [attribute, values] : labels) {
    Column col{attribute, {}, {}};
    for (const auto& [id, value] : values) {
      const auto it = index.find(id);
      if (it == index.end()) continue;
      col.rows.push_back(it->second);
      col.y.push_back(value);
    }
    if (std::find(col.y.begin(), col.y.end(), std::uint8_t{1}) != col.y.end()) {
      columns.push_back(std::move(col));
    }
  }
  ConceptAttributes named;
  for (ConceptId c : concepts) {
    if (c >= activations.latent_dim) {
      throw InvalidArgument("concept " + std::to_string(c) + " out of range");
    }
    double best = -1.0;
    const std::string* best_name = nullptr;
    for (const auto& col : columns) {
      std::vector<double> scores(col.rows.size());
      for (std::size_t i = 0; i < col.rows.size(); ++i) {
        scores[i] = activations.records[col.rows[i]].image_level.at(c);
      }
      const double auprc = ComputePrCurve(scores, col.y).auprc;
      if (auprc > best) {
        best = auprc;
        best_name = &col.attribute;
      }
    }
    if (best_name != nullptr) named.emplace(c, *best_name);
  }
  return named;
}

BiasDiscoveryResult DiscoverBias(std::span<const ClassConceptProfile> profiles,
                                 const ActivationSet& test,
                                 const DatasetManifest& test_manifest,
                                 const AttributeLabels& test_labels,
                                 const ConceptAttributes& concept_attributes,
                                 std::size_t k) {
  if (k == 0) throw InvalidArgument("k must be >= 1");
  BiasDiscoveryResult result;
  std::map<ConceptId, std::vector<std::string>> bias_sources;
  for (const auto& p : profiles) {
    const auto bias = p.Of(Category::kBias);
    if (bias.empty()) result.classes_without_bias.push_back(p.class_name);
    for (ConceptId c : bias) bias_sources[c].push_back(p.class_name);
  }
  std::set<ConceptId> unnamed;
  for (const auto& [c, sources] : bias_sources) {
    if (!concept_attributes.count(c)) {
      unnamed.insert(c);
      result.warnings.push_back("bias concept " + std::to_string(c) +
                                " has no attribute; skipped");
    }
  }

  const auto index = test.IndexById();
  for (const auto& class_name : test_manifest.class_index) {
    const std::vector<ImageId> images = test_manifest.ImagesOfClass(class_name);
    if (images.empty()) {
      result.warnings.push_back("class '" + class_name + "' has no test images");
      continue;
    }
    std::vector<std::size_t> rows;
    rows.reserve(images.size());
    for (ImageId id : images) {
      rows.push_back(PositionOf(index, id, "test activations"));
    }
    for (const auto& [c, sources] : bias_sources) {
      if (unnamed.count(c)) continue;
      BiasPair pair;
      pair.class_name = class_name;
      pair.concept_id = c;
      pair.attribute = concept_attributes.at(c);
      for (const auto& s : sources) {
        if (s != class_name) pair.source_classes.push_back(s);
      }
      if (pair.source_classes.empty()) continue;

      TopK top(k);
      for (std::size_t i = 0; i < images.size(); ++i) {
        top.Offer(images[i], test.records[rows[i]].image_level.at(c));
      }
      const auto column = test_labels.find(pair.attribute);
      for (const auto& [id, value] : top.Sorted()) {
        pair.retrieved.push_back(id);
        if (column == test_labels.end()) continue;
        const auto label = column->second.find(id);
        if (label != column->second.end() && label->second) ++pair.hits;
      }
      pair.denominator = std::min(k, images.size());
      pair.short_list = images.size() < k;
      if (pair.short_list) {
        result.warnings.push_back("class '" + class_name + "' has only " +
                                  std::to_string(images.size()) +
                                  " test images; precision over that count");
      }
      pair.precision =
          static_cast<double>(pair.hits) / static_cast<double>(pair.denominator);
      result.pairs.push_back(std::move(pair));
    }
  }
  for (const auto& p : result.pairs) result.mean_precision += p.precision;
  if (result.pairs.empty()) {
    result.warnings.push_back("no (class, bias concept) pairs evaluated");
  } else {
    result.mean_precision /= static_cast<double>(result.pairs.size());
  }
  return result;
}

std::string ToJson(const BiasDiscoveryResult& result) {
  json pairs = json::array();
  for (const auto& p : result.pairs) {
    pairs.push_back({{"class", p.class_name},
                     {"concept_id", p.concept_id},
                     {"attribute", p.attribute},
                     {"source_classes", p.source_classes},
                     {"retrieved", p.retrieved},
                     {"hits", p.hits},
                     {"denominator", p.denominator},
                     {"precision", p.precision},
                     {"short_list", p.short_list}});
  }
  return json{{"pairs", pairs},
              {"mean_precision", result.mean_precision},
              {"classes_without_bias", result.classes_without_bias},
              {"warnings", result.warnings}}
      .dump(2);
}

std::string ToCsv(const BiasDiscoveryResult& result) {
  std::ostringstream out;
  out << "class,concept_id,attribute,hits,denominator,precision\n";
  for (const auto& p : result.pairs) {
    out << p.class_name << ',' << p.concept_id << ',' << p.attribute << ','
        << p.hits << ',' << p.denominator << ',' << FormatDouble(p.precision)
        << '\n';
  }
  out << "mean,,,,," << FormatDouble(result.mean_precision) << '\n';
  return out.str();
}

}  // namespace conceptscope
