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

#include "conceptscope/synth.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "conceptscope/confidence_provider.h"
#include "conceptscope/embedding_io.h"
#include "conceptscope/evaluation.h"
#include "conceptscope/robustness.h"
#include "text_util.h"

namespace conceptscope {
namespace {

using json = nlohmann::ordered_json;
using Vec = std::vector<double>;

double Norm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Vec RandomUnit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> normal;
  Vec v(dim);
  for (double& x : v) x = normal(rng);
  const double n = Norm(v);
  for (double& x : v) x /= n;
  return v;
}

// Gram-Schmidt over Gaussian draws.
std::vector<Vec> Orthonormal(std::mt19937_64& rng, std::size_t count,
                             std::size_t dim) {
  if (count > dim) {
    throw InvalidArgument("cannot place " + std::to_string(count) +
                          " orthonormal atoms in d=" + std::to_string(dim));
  }
  std::vector<Vec> basis;
  while (basis.size() < count) {
    Vec v = RandomUnit(rng, dim);
    for (const Vec& b : basis) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += v[i] * b[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * b[i];
    }
    const double n = Norm(v);
    if (n < 1e-6) continue;
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  return basis;
}

void AddScaled(std::span<float> token, const Vec& atom, double scale) {
  for (std::size_t i = 0; i < token.size(); ++i) {
    token[i] = static_cast<float>(token[i] + scale * atom[i]);
  }
}

void WriteJson(const std::filesystem::path& path, const json& doc) {
  text::WriteText(path, doc.dump(2) + "\n");
}

json AtomsJson(const std::vector<Vec>& atoms) {
  json out = json::array();
  for (const Vec& a : atoms) out.push_back(a);
  return out;
}

struct PlantedImage {
  EmbeddingRecord record;
  std::vector<std::uint8_t> object_mask;
  std::vector<std::uint8_t> background_mask;
};

struct Atoms {
  std::vector<Vec> objects;
  std::vector<Vec> backgrounds;
  Vec cls;
  Vec texture;
};

struct ImageSpec {
  std::size_t cls = 0;
  std::size_t background = 0;
  double object_lo = 0.0;
  double object_hi = 0.0;
  double background_lo = 0.0;
  double background_hi = 0.0;
  double cover = 0.0;
};

PlantedImage RenderImage(const PlantedBiasConfig& config, const Atoms& atoms,
                         const ImageSpec& image, ImageId id,
                         std::mt19937_64& rng) {
  const std::size_t side = config.side;
  const std::size_t patches = side * side;
  const std::size_t l = patches + 1;
  const std::size_t d = config.dim;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> noise(0.0, config.noise);

  PlantedImage img;
  img.record.image_id = id;
  img.record.num_tokens = static_cast<std::uint16_t>(l);
  img.record.dim = static_cast<std::uint16_t>(d);
  img.record.tokens.assign(l * d, 0.0f);
  img.object_mask.assign(patches, 0);
  img.background_mask.assign(patches, 0);

  const std::size_t block = std::min<std::size_t>(2, side);
  const std::size_t r0 = rng() % (side - block + 1);
  const std::size_t c0 = rng() % (side - block + 1);
  const double object_coef = uniform(image.object_lo, image.object_hi);
  double background_sum = 0.0;
  std::size_t background_count = 0;
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      const std::size_t p = r * side + c;
      auto token = img.record.token(p + 1);
      const bool in_object =
          r >= r0 && r < r0 + block && c >= c0 && c < c0 + block;
      if (in_object) {
        AddScaled(token, atoms.objects[image.cls], object_coef);
        img.object_mask[p] = 1;
      } else if (unit(rng) < image.cover) {
        const double coef = uniform(image.background_lo, image.background_hi);
        AddScaled(token, atoms.backgrounds[image.background], coef);
        img.background_mask[p] = 1;
        background_sum += coef;
        ++background_count;
      }
      AddScaled(token, atoms.texture,
                uniform(config.texture_lo, config.texture_hi));
    }
  }
  auto cls = img.record.token(0);
  AddScaled(cls, atoms.cls, 1.0);
  AddScaled(cls, atoms.objects[image.cls], 0.2 * object_coef);
  if (background_count > 0) {
    AddScaled(cls, atoms.backgrounds[image.background],
              0.2 * background_sum / static_cast<double>(background_count));
  }
  if (config.noise > 0.0) {
    for (float& v : img.record.tokens) {
      v = static_cast<float>(v + noise(rng));
    }
  }
  return img;
}

}  // namespace

PlantedDictionary GeneratePlantedDictionary(const PlantedDictionaryConfig& config,
                                            const std::filesystem::path& out) {
  if (config.active == 0 || config.active > config.atoms) {
    throw InvalidArgument("active atoms must be in [1, atoms]");
  }
  if (!IsValidTokenCount(config.tokens)) {
    throw InvalidArgument("token count " + std::to_string(config.tokens) +
                          " is not 1 + a square");
  }
  std::filesystem::create_directories(out);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> coef(config.coef_lo, config.coef_hi);
  std::normal_distribution<double> noise(0.0, config.noise);

  PlantedDictionary dict;
  dict.dim = config.dim;
  dict.atoms.assign(config.atoms, Vec(config.dim));
  for (auto& atom : dict.atoms) {
    for (double& v : atom) v = normal(rng);
    const double n = Norm(atom);
    for (double& v : atom) v /= n;
  }

  const std::size_t d = config.dim;
  ArchiveWriter writer(out / "train.csem",
                       static_cast<std::uint16_t>(config.tokens),
                       static_cast<std::uint16_t>(d));
  EmbeddingRecord record;
  record.num_tokens = static_cast<std::uint16_t>(config.tokens);
  record.dim = static_cast<std::uint16_t>(d);
  record.tokens.resize(config.tokens * d);
  std::vector<std::size_t> ids(config.atoms);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  DatasetManifest manifest;
  manifest.class_index = {"all"};
  manifest.split_tag = "train";
  for (std::size_t i = 0; i < config.images; ++i) {
    record.image_id = i;
    std::fill(record.tokens.begin(), record.tokens.end(), 0.0f);
    for (std::size_t t = 0; t < config.tokens; ++t) {
      std::shuffle(ids.begin(), ids.end(), rng);
      for (std::size_t s = 0; s < config.active; ++s) {
        const double c = coef(rng);
        for (std::size_t q = 0; q < d; ++q) {
          record.tokens[t * d + q] +=
              static_cast<float>(c * dict.atoms[ids[s]][q]);
        }
      }
    }
    if (config.noise > 0.0) {
      for (float& v : record.tokens) v = static_cast<float>(v + noise(rng));
    }
    writer.Append(record);
    manifest.entries.push_back({i, "synth/" + std::to_string(i), {"all"}});
  }
  writer.Finish();
  SaveManifest(manifest, out / "manifest.json");
  WriteJson(out / "atoms.json", AtomsJson(dict.atoms));
  return dict;
}

TrainConfig PlantedDictionaryTrainConfig(std::uint64_t seed) {
  TrainConfig config;
  config.lambda = 0.3;
  config.learning_rate = 5e-3;
  config.warmup_steps = 100;
  config.batch_size = 64;
  config.epochs = 10;
  config.expansion_factor = 2;
  config.dead_window = 2000;
  config.seed = seed;
  return config;
}

TrainConfig PlantedBiasTrainConfig(std::uint64_t seed) {
  TrainConfig config;
  config.lambda = 0.03;
  config.learning_rate = 5e-3;
  config.warmup_steps = 100;
  config.batch_size = 64;
  config.epochs = 20;
  config.expansion_factor = 4;
  config.dead_window = 50000;
  config.seed = seed;
  return config;
}

AtomMatch MatchAtoms(const std::vector<std::vector<double>>& atoms,
                     const SaeModel& model, double min_abs_cosine) {
  AtomMatch match;
  match.atoms = atoms.size();
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < atoms.size(); ++a) {
    if (atoms[a].size() != model.input_dim) {
      throw DimensionError("atom and model dimensions differ");
    }
    const double na = Norm(atoms[a]);
    for (std::size_t j = 0; j < model.latent_dim; ++j) {
      const auto row = model.decoder_row(j);
      double dot = 0.0, nr = 0.0;
      for (std::size_t i = 0; i < row.size(); ++i) {
        dot += row[i] * atoms[a][i];
        nr += row[i] * row[i];
      }
      if (nr == 0.0 || na == 0.0) continue;
      pairs.emplace_back(std::abs(dot) / std::sqrt(nr) / na, a, j);
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
    if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
    return std::tie(std::get<1>(x), std::get<2>(x)) <
           std::tie(std::get<1>(y), std::get<2>(y));
  });
  std::vector<bool> atom_used(atoms.size(), false);
  std::vector<bool> latent_used(model.latent_dim, false);
  std::size_t paired = 0;
  double total = 0.0;
  for (const auto& [cos, a, j] : pairs) {
    if (atom_used[a] || latent_used[j]) continue;
    atom_used[a] = latent_used[j] = true;
    ++paired;
    total += cos;
    if (cos >= min_abs_cosine) ++match.matched;
  }
  if (paired > 0) match.mean_abs_cosine = total / static_cast<double>(paired);
  return match;
}

std::vector<std::string> PlantedClassNames(std::size_t count) {
  static const char* kNames[] = {"bird", "cow",  "car",   "boat",
                                 "dog",  "horse", "train", "plane"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < count; ++i) {
    names.push_back(i < std::size(kNames) ? kNames[i]
                                          : "class" + std::to_string(i));
  }
  return names;
}

std::vector<std::string> PlantedBackgroundNames(std::size_t count) {
  static const char* kNames[] = {"water", "grass", "road", "sand",
                                 "snow",  "forest", "sky",  "rock"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < count; ++i) {
    names.push_back(i < std::size(kNames) ? kNames[i]
                                          : "bg" + std::to_string(i));
  }
  return names;
}

PlantedBiasCorpus GeneratePlantedBias(const PlantedBiasConfig& config,
                                      const std::filesystem::path& out) {
  const std::size_t k = config.classes;
  if (k < 2) throw InvalidArgument("need at least 2 classes");
  if (config.side < 2) throw InvalidArgument("grid side must be >= 2");
  if (config.correlation < 0.0 || config.correlation > 1.0) {
    throw InvalidArgument("correlation must be in [0, 1]");
  }
  if (config.train_per_class == 0 || config.test_per_class == 0) {
    throw InvalidArgument("empty split");
  }
  std::filesystem::create_directories(out);
  std::mt19937_64 rng(config.seed);

  const auto basis = Orthonormal(rng, 2 * k + 2, config.dim);
  Atoms atoms;
  atoms.objects.assign(basis.begin(), basis.begin() + k);
  atoms.backgrounds.assign(basis.begin() + k, basis.begin() + 2 * k);
  atoms.cls = basis[2 * k];
  atoms.texture = basis[2 * k + 1];

  PlantedBiasCorpus corpus;
  corpus.classes = PlantedClassNames(k);
  corpus.backgrounds = PlantedBackgroundNames(k);
  for (std::size_t y = 0; y < k; ++y) {
    corpus.biased_background[corpus.classes[y]] = corpus.backgrounds[y];
    corpus.atoms[corpus.classes[y]] = atoms.objects[y];
    corpus.atoms[corpus.backgrounds[y]] = atoms.backgrounds[y];
  }
  corpus.atoms["class_token"] = atoms.cls;
  corpus.atoms["texture"] = atoms.texture;

  const auto l = static_cast<std::uint16_t>(config.side * config.side + 1);
  const auto d = static_cast<std::uint16_t>(config.dim);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto labels_for = [&](AttributeLabels& labels, ImageId id, std::size_t y,
                        std::size_t b) {
    for (std::size_t j = 0; j < k; ++j) {
      labels[corpus.classes[j]][id] = j == y;
      labels[corpus.backgrounds[j]][id] = j == b;
    }
  };

  // Train: class-major, background drawn with the planted correlation.
  ImageId next_id = 0;
  {
    ArchiveWriter writer(out / "train.csem", l, d);
    DatasetManifest manifest;
    manifest.class_index = corpus.classes;
    manifest.split_tag = "train";
    AttributeLabels labels;
    for (std::size_t y = 0; y < k; ++y) {
      for (std::size_t i = 0; i < config.train_per_class; ++i) {
        std::size_t b = y;
        if (unit(rng) >= config.correlation) {
          b = (y + 1 + rng() % (k - 1)) % k;
        }
        const ImageSpec image{y,
                             b,
                             config.object_lo,
                             config.object_hi,
                             config.background_lo,
                             config.background_hi,
                             config.background_cover};
        const ImageId id = next_id++;
        writer.Append(RenderImage(config, atoms, image, id, rng).record);
        manifest.entries.push_back(
            {id, "synth/train/" + std::to_string(id), {corpus.classes[y]}});
        labels_for(labels, id, y, b);
      }
    }
    writer.Finish();
    SaveManifest(manifest, out / "train_manifest.json");
    SaveAttributeLabels(out / "train_attributes.csv", labels);
  }

  // Test: every class sees every background equally often. With
  // `subgroups`, images cycle through four planted groups instead.
  {
    ArchiveWriter writer(out / "test.csem", l, d);
    DatasetManifest manifest;
    manifest.class_index = corpus.classes;
    manifest.split_tag = "test";
    AttributeLabels labels;
    std::vector<GroundTruthMask> masks;
    std::ostringstream groups;
    groups << "image_id,class,group\n";
    const double object_mid = (config.object_lo + config.object_hi) / 2.0;
    for (std::size_t y = 0; y < k; ++y) {
      for (std::size_t i = 0; i < config.test_per_class; ++i) {
        ImageSpec image{y,
                       i % k,
                       config.object_lo,
                       config.object_hi,
                       config.background_lo,
                       config.background_hi,
                       config.background_cover};
        int group = 0;
        if (config.subgroups) {
          group = 1 + static_cast<int>(i % 4);
          const bool target_high = group <= 2;
          const bool bias_high = group == 1 || group == 3;
          const double span = config.object_hi - config.object_lo;
          image.object_lo = target_high ? config.object_hi : config.object_lo;
          image.object_hi = target_high ? config.object_hi + 0.25 * span
                                       : object_mid - 0.25 * span;
          image.background = bias_high ? y : (y + 1 + (i / 4) % (k - 1)) % k;
          if (bias_high) {
            image.background_lo = config.background_hi;
            image.background_hi = config.background_hi + 0.25;
            image.cover = 1.0;
          }
        }
        const ImageId id = next_id++;
        const PlantedImage img = RenderImage(config, atoms, image, id, rng);
        writer.Append(img.record);
        manifest.entries.push_back(
            {id, "synth/test/" + std::to_string(id), {corpus.classes[y]}});
        labels_for(labels, id, y, image.background);
        masks.push_back({id, corpus.classes[y], config.side, 0, 0,
                         img.object_mask});
        masks.push_back({id, corpus.backgrounds[image.background], config.side,
                         0, 0, img.background_mask});
        if (config.subgroups) {
          groups << id << ',' << corpus.classes[y] << ',' << group << '\n';
        }
      }
    }
    writer.Finish();
    SaveManifest(manifest, out / "test_manifest.json");
    SaveAttributeLabels(out / "test_attributes.csv", labels);
    SaveGroundTruthMasks(out / "test_gt_masks.jsonl", masks);
    if (config.subgroups) text::WriteText(out / "planted_groups.csv", groups.str());
  }

  ClassEmbeddings embeddings;
  embeddings.classes = corpus.classes;
  embeddings.dim = config.dim;
  for (std::size_t y = 0; y < k; ++y) {
    Vec e(config.dim);
    for (std::size_t i = 0; i < config.dim; ++i) {
      e[i] = atoms.objects[y][i] + 0.5 * atoms.cls[i];
    }
    const double n = Norm(e);
    for (double v : e) embeddings.values.push_back(static_cast<float>(v / n));
  }
  SaveClassEmbeddings(out / "class_embeddings.bin", embeddings);

  const DatasetManifest train_manifest = LoadManifest(out / "train_manifest.json");
  const auto classifier =
      CentroidClassifier::Fit(out / "train.csem", train_manifest);
  SavePredictions(out / "predictions.csv", classifier.Predict(out / "test.csem"));

  json atoms_doc = json::object();
  for (const auto& [name, atom] : corpus.atoms) atoms_doc[name] = atom;
  WriteJson(out / "synth.json",
            {{"preset", config.subgroups ? "planted-subgroups" : "planted-bias"},
             {"seed", config.seed},
             {"classes", corpus.classes},
             {"backgrounds", corpus.backgrounds},
             {"biased_background", corpus.biased_background},
             {"config",
              {{"classes", config.classes},
               {"dim", config.dim},
               {"side", config.side},
               {"correlation", config.correlation},
               {"train_per_class", config.train_per_class},
               {"test_per_class", config.test_per_class},
               {"object", {config.object_lo, config.object_hi}},
               {"background", {config.background_lo, config.background_hi}},
               {"background_cover", config.background_cover},
               {"texture", {config.texture_lo, config.texture_hi}},
               {"noise", config.noise}}},
             {"atoms", atoms_doc}});
  return corpus;
}

CentroidClassifier CentroidClassifier::Fit(const std::filesystem::path& archive,
                                           const DatasetManifest& manifest) {
  CentroidClassifier model;
  model.classes_ = manifest.class_index;
  ArchiveReader reader(archive);
  const std::size_t d = reader.header().dim;
  model.centroids_.assign(model.classes_.size(), Vec(d, 0.0));
  std::vector<std::size_t> counts(model.classes_.size(), 0);
  const auto index = manifest.IndexById();
  EmbeddingRecord record;
  while (reader.Next(record)) {
    const auto it = index.find(record.image_id);
    if (it == index.end()) continue;
    for (const auto& label : manifest.entries[it->second].labels) {
      const auto y = manifest.ClassPosition(label);
      if (!y) continue;
      for (std::size_t t = 0; t < record.num_tokens; ++t) {
        const auto tok = record.token(t);
        for (std::size_t i = 0; i < d; ++i) model.centroids_[*y][i] += tok[i];
      }
      ++counts[*y];
    }
  }
  for (std::size_t y = 0; y < model.classes_.size(); ++y) {
    if (counts[y] == 0) {
      throw InvalidArgument("class '" + model.classes_[y] + "' has no images");
    }
    const double n = Norm(model.centroids_[y]);
    if (n > 0.0) {
      for (double& v : model.centroids_[y]) v /= n;
    }
  }
  return model;
}

std::map<ImageId, std::string> CentroidClassifier::Predict(
    const std::filesystem::path& archive) const {
  ArchiveReader reader(archive);
  std::map<ImageId, std::string> predictions;
  EmbeddingRecord record;
  while (reader.Next(record)) {
    Vec mean(record.dim, 0.0);
    for (std::size_t t = 0; t < record.num_tokens; ++t) {
      const auto tok = record.token(t);
      for (std::size_t i = 0; i < record.dim; ++i) mean[i] += tok[i];
    }
    std::size_t best = 0;
    double best_dot = -1e300;
    for (std::size_t y = 0; y < centroids_.size(); ++y) {
      if (centroids_[y].size() != mean.size()) {
        throw DimensionError("archive dimension differs from the classifier");
      }
      double dot = 0.0;
      for (std::size_t i = 0; i < mean.size(); ++i) {
        dot += mean[i] * centroids_[y][i];
      }
      if (dot > best_dot) {
        best_dot = dot;
        best = y;
      }
    }
    predictions[record.image_id] = classes_[best];
  }
  return predictions;
}

}  // namespace conceptscope
