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

// conceptscope command line: one subcommand per pipeline stage.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "conceptscope/activations.h"
#include "conceptscope/binary_io.h"
#include "conceptscope/categorizer.h"
#include "conceptscope/concept_dictionary.h"
#include "conceptscope/confidence_provider.h"
#include "conceptscope/embedding_io.h"
#include "conceptscope/evaluation.h"
#include "conceptscope/parallel.h"
#include "conceptscope/robustness.h"
#include "conceptscope/run_record.h"
#include "conceptscope/sae_model.h"
#include "conceptscope/sae_train.h"
#include "conceptscope/synth.h"

namespace cs = conceptscope;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void Log(const std::string& message) {
  std::cerr << "conceptscope: " << message << '\n';
}

std::string ReadFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cs::IoError("cannot open " + path.string(), 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void WriteFile(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw cs::IoError("cannot write " + path.string(), 0);
  out << text;
  if (!out) throw cs::IoError("write failed for " + path.string(), 0);
}

fs::path DirOf(const fs::path& file) {
  return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

// run.json entry name for commands that write a single file.
std::string Key(const std::string& command, const fs::path& out) {
  return command + ":" + out.filename().string();
}

void MakeParent(const fs::path& file) { fs::create_directories(DirOf(file)); }

// --threads, then CONCEPTSCOPE_THREADS, then the hardware.
std::size_t Workers(std::size_t flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("CONCEPTSCOPE_THREADS")) {
    char* end = nullptr;
    const unsigned long n = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0' || n == 0) {
      throw cs::InvalidArgument(std::string("CONCEPTSCOPE_THREADS must be a "
                                            "positive integer, got '") +
                                env + "'");
    }
    return n;
  }
  return cs::DefaultWorkerCount();
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string Seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fs", s);
  return buf;
}

// ---- synth

struct SynthArgs {
  std::string preset;
  fs::path out;
  std::uint64_t seed = 0;
  std::optional<std::size_t> images, train_per_class, test_per_class, classes;
  std::optional<double> correlation;
};

void RunSynth(const SynthArgs& a) {
  json config = {{"preset", a.preset}, {"seed", a.seed}};
  if (a.preset == "planted-dictionary") {
    cs::PlantedDictionaryConfig c;
    c.seed = a.seed;
    if (a.images) c.images = *a.images;
    const auto dict = cs::GeneratePlantedDictionary(c, a.out);
    config["images"] = c.images;
    config["atoms"] = c.atoms;
    config["dim"] = c.dim;
    config["active"] = c.active;
    config["tokens"] = c.tokens;
    Log("planted dictionary: " + std::to_string(dict.atoms.size()) +
        " atoms, " + std::to_string(c.images) + " images -> " + a.out.string());
  } else if (a.preset == "planted-bias" || a.preset == "planted-subgroups") {
    cs::PlantedBiasConfig c;
    c.seed = a.seed;
    c.subgroups = a.preset == "planted-subgroups";
    if (a.train_per_class) c.train_per_class = *a.train_per_class;
    if (a.test_per_class) c.test_per_class = *a.test_per_class;
    if (a.classes) c.classes = *a.classes;
    if (a.correlation) c.correlation = *a.correlation;
    const auto corpus = cs::GeneratePlantedBias(c, a.out);
    config["classes"] = c.classes;
    config["correlation"] = c.correlation;
    config["train_per_class"] = c.train_per_class;
    config["test_per_class"] = c.test_per_class;
    Log(a.preset + ": " + std::to_string(corpus.classes.size()) +
        " classes -> " + a.out.string());
  } else {
    throw cs::InvalidArgument("unknown preset '" + a.preset + "'");
  }
  cs::WriteRunRecord(a.out, {"synth", config.dump(), {}});
}

// ---- train

struct TrainArgs {
  fs::path archive, out;
  std::optional<fs::path> config_file;
  std::string preset;
  std::optional<double> lambda, lr;
  std::optional<std::size_t> warmup, batch, epochs, expansion, dead_window,
      shuffle_window;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;
};

cs::TrainConfig ResolveTrainConfig(const TrainArgs& a) {
  cs::TrainConfig c;
  if (a.preset == "planted-dictionary") {
    c = cs::PlantedDictionaryTrainConfig();
  } else if (a.preset == "planted-bias") {
    c = cs::PlantedBiasTrainConfig();
  } else if (!a.preset.empty()) {
    throw cs::InvalidArgument("unknown training preset '" + a.preset + "'");
  }
  if (a.config_file) c = cs::TrainConfig::FromJson(ReadFile(*a.config_file));
  if (a.lambda) c.lambda = *a.lambda;
  if (a.lr) c.learning_rate = *a.lr;
  if (a.warmup) c.warmup_steps = *a.warmup;
  if (a.batch) c.batch_size = *a.batch;
  if (a.epochs) c.epochs = *a.epochs;
  if (a.expansion) c.expansion_factor = *a.expansion;
  if (a.dead_window) c.dead_window = *a.dead_window;
  if (a.shuffle_window) c.shuffle_window = *a.shuffle_window;
  if (a.seed) c.seed = *a.seed;
  c.Validate();
  return c;
}

fs::path WithSuffix(const fs::path& path, const std::string& suffix) {
  fs::path p = path;
  p.replace_extension();
  return p.string() + suffix;
}

void RunTrain(const TrainArgs& a) {
  cs::TrainConfig config = ResolveTrainConfig(a);
  config.workers = Workers(a.threads);
  MakeParent(a.out);
  Timer timer;
  cs::TrainResult result;
  try {
    result = cs::Train(a.archive, config);
  } catch (const cs::TrainingDivergedError& e) {
    const fs::path last = WithSuffix(a.out, ".last_good.csae");
    cs::SaveCheckpoint(e.last_good(), last);
    Log("training diverged at step " + std::to_string(e.step()) +
        "; last finite parameters in " + last.string());
    throw;
  }
  cs::SaveCheckpoint(result.model, a.out);
  WriteFile(WithSuffix(a.out, ".report.json"),
            result.report.ToJson(false) + "\n");
  cs::WriteRunRecord(DirOf(a.out),
                     {Key("train", a.out), config.ToJson(), {{"archive", a.archive}}});
  const auto& last = result.report.epochs;
  std::ostringstream msg;
  msg << "trained " << result.report.steps << " steps in "
      << Seconds(timer.seconds());
  if (!last.empty()) {
    msg << ", reconstruction " << result.report.initial_reconstruction << " -> "
        << last.back().mean_loss.reconstruction;
  }
  msg << ", " << result.report.resample_events.size() << " resample events";
  Log(msg.str());
}

// ---- activate

struct ActivateArgs {
  fs::path model, archive, out;
  std::optional<fs::path> manifest, strengths_out;
  std::size_t threads = 0;
};

void RunActivate(const ActivateArgs& a) {
  const cs::SaeModel model = cs::LoadCheckpoint(a.model);
  std::optional<cs::DatasetManifest> manifest;
  std::optional<cs::StrengthAccumulator> strengths;
  if (a.manifest) {
    manifest = cs::LoadManifest(*a.manifest);
    strengths.emplace(*manifest, model.latent_dim);
  }
  MakeParent(a.out);
  cs::ActivationWriter writer(a.out, static_cast<std::uint32_t>(model.latent_dim));
  std::uint64_t count = 0;
  cs::ComputeActivations(
      model, a.archive, {},
      [&](cs::ActivationRecord&& r) {
        writer.Append(r.image_id, r.image_level);
        if (strengths) strengths->Add(r);
        ++count;
      },
      Workers(a.threads));
  writer.Finish();
  cs::RunEntry entry{Key("activate", a.out), "{}", {{"model", a.model}, {"archive", a.archive}}};
  if (strengths) {
    const fs::path path =
        a.strengths_out ? *a.strengths_out : DirOf(a.out) / "strengths.csv";
    cs::SaveStrengthCsv(path, strengths->Finish());
    entry.inputs["manifest"] = *a.manifest;
    entry.config_json = json{{"strengths", path.string()}}.dump();
  }
  cs::WriteRunRecord(DirOf(a.out), entry);
  Log("activations for " + std::to_string(count) + " images -> " +
      a.out.string());
}

// ---- dict

struct DictBuildArgs {
  fs::path activations, out;
  std::optional<fs::path> model;
  double max_act_floor = 0.5;
  double strength_ceiling = 0.1;
  std::size_t exemplars = 5;
};

void RunDictBuild(const DictBuildArgs& a) {
  const cs::ActivationSet acts = cs::LoadActivations(a.activations);
  const std::uint32_t checksum =
      a.model ? cs::ModelChecksum(cs::LoadCheckpoint(*a.model)) : 0;
  cs::ConceptDictionary dict = cs::FilterLatents(
      acts.records, acts.latent_dim, {a.max_act_floor, a.strength_ceiling},
      checksum);
  cs::AttachExemplars(dict, acts.records, a.exemplars);
  MakeParent(a.out);
  cs::SaveDictionary(dict, a.out);
  cs::RunEntry entry{Key("dict-build", a.out),
                     json{{"max_act_floor", a.max_act_floor},
                          {"strength_ceiling", a.strength_ceiling},
                          {"exemplars", a.exemplars}}
                         .dump(),
                     {{"activations", a.activations}}};
  if (a.model) entry.inputs["model"] = *a.model;
  cs::WriteRunRecord(DirOf(a.out), entry);
  std::printf("%zu of %zu latents retained (%.2f%%)\n",
              dict.RetainedIds().size(), dict.entries.size(),
              100.0 * dict.RetainedFraction());
}

struct DictAnnotateArgs {
  fs::path dict, descriptions;
  std::optional<fs::path> out;
  std::string source = "manual";
};

void RunDictAnnotate(const DictAnnotateArgs& a) {
  cs::ConceptDictionary dict = cs::LoadDictionary(a.dict);
  const auto report = cs::IngestDescriptionsFile(dict, a.descriptions, a.source);
  const fs::path out = a.out ? *a.out : a.dict;
  MakeParent(out);
  cs::SaveDictionary(dict, out);
  for (const auto& w : report.warnings) Log("warning: " + w);
  cs::WriteRunRecord(DirOf(out), {Key("dict-annotate", out),
                                  json{{"source", a.source}}.dump(),
                                  {{"descriptions", a.descriptions}}});
  std::printf("%zu descriptions attached\n", report.attached);
}

struct DictShowArgs {
  fs::path dict;
  std::optional<cs::ConceptId> concept_id;
  bool retained_only = false;
  bool export_descriptions = false;
};

void RunDictShow(const DictShowArgs& a) {
  const cs::ConceptDictionary dict = cs::LoadDictionary(a.dict);
  if (a.export_descriptions) {
    std::cout << cs::ExportDescriptions(dict) << '\n';
    return;
  }
  if (a.concept_id) {
    if (*a.concept_id >= dict.entries.size()) {
      throw cs::InvalidArgument("concept " + std::to_string(*a.concept_id) +
                                " out of range");
    }
    json doc = json::parse(cs::DictionaryToJson(dict));
    std::cout << doc["entries"][*a.concept_id].dump(2) << '\n';
    return;
  }
  std::printf("model_checksum %08x\n", dict.model_checksum);
  std::printf("retained %zu of %zu (%.2f%%), floor %g, ceiling %g\n",
              dict.RetainedIds().size(), dict.entries.size(),
              100.0 * dict.RetainedFraction(), dict.thresholds.max_act_floor,
              dict.thresholds.strength_ceiling);
  std::printf("concept_id,retained,max_activation,global_strength,description\n");
  for (const auto& e : dict.entries) {
    if (a.retained_only && !e.retained) continue;
    std::printf("%u,%d,%.6g,%.6g,%s\n", e.concept_id, e.retained ? 1 : 0,
                e.max_activation, e.global_strength,
                e.description ? e.description->c_str() : "");
  }
}

// ---- categorize

struct CategorizeArgs {
  fs::path model, archive, manifest, strengths, dict, out;
  std::string provider = "offline";
  std::optional<fs::path> class_embeddings, triples, workdir;
  std::string bridge_command;
  std::optional<double> alpha_align;
  double alpha_cs = 1.0;
  std::size_t sample_n = 128;
  std::size_t top_m = 20;
  double mask_threshold = cs::kDefaultMaskThreshold;
  std::uint64_t seed = 0;
};

std::string ScoresCsv(const std::vector<cs::AlignmentScore>& scores) {
  std::ostringstream out;
  out.precision(17);
  out << "class,concept_id,necessity,sufficiency,alignment,n_images\n";
  for (const auto& s : scores) {
    out << s.class_name << ',' << s.concept_id << ',' << s.necessity << ','
        << s.sufficiency << ',' << s.alignment << ',' << s.n_images << '\n';
  }
  return out.str();
}

void RunCategorize(const CategorizeArgs& a) {
  Timer timer;
  const cs::SaeModel model = cs::LoadCheckpoint(a.model);
  const cs::DatasetManifest manifest = cs::LoadManifest(a.manifest);
  const cs::ConceptStrengthTable strengths = cs::LoadStrengthCsv(a.strengths);
  const cs::ConceptDictionary dict = cs::LoadDictionary(a.dict);
  if (dict.model_checksum != 0 &&
      dict.model_checksum != cs::ModelChecksum(model)) {
    throw cs::InvalidArgument("dictionary was built for a different model");
  }
  const auto retained = dict.RetainedIds();

  cs::RunEntry entry{"categorize", "{}",
                     {{"model", a.model},
                      {"archive", a.archive},
                      {"manifest", a.manifest},
                      {"strengths", a.strengths},
                      {"dict", a.dict}}};
  std::unique_ptr<cs::ConfidenceProvider> provider;
  if (a.provider == "offline") {
    if (!a.class_embeddings) {
      throw cs::InvalidArgument("--class-embeddings is required for --provider offline");
    }
    provider = std::make_unique<cs::OfflineConfidenceProvider>(
        a.archive, cs::LoadClassEmbeddings(*a.class_embeddings));
    entry.inputs["class_embeddings"] = *a.class_embeddings;
  } else if (a.provider == "replay") {
    if (!a.triples) {
      throw cs::InvalidArgument("--triples is required for --provider replay");
    }
    provider = std::make_unique<cs::ReplayConfidenceProvider>(
        cs::ReplayConfidenceProvider::FromFile(*a.triples));
    entry.inputs["triples"] = *a.triples;
  } else if (a.provider == "bridge") {
    if (a.bridge_command.empty()) {
      throw cs::InvalidArgument("--bridge-command is required for --provider bridge");
    }
    provider = std::make_unique<cs::BridgeConfidenceProvider>(
        a.bridge_command, a.workdir ? *a.workdir : a.out / "bridge");
  } else {
    throw cs::InvalidArgument("unknown provider '" + a.provider + "'");
  }

  cs::DatasetCategorizeOptions options;
  options.plan = {a.sample_n, a.top_m, a.seed};
  options.categorize.alpha_align = a.alpha_align;
  options.categorize.alpha_cs = a.alpha_cs;
  options.mask_threshold = a.mask_threshold;
  options.mask_jobs_out = a.out / "mask_jobs.jsonl";
  fs::create_directories(a.out);
  const cs::CategorizationRun run = cs::CategorizeDataset(
      model, a.archive, manifest, strengths, retained, *provider, options);

  cs::SaveProfiles(a.out / "profiles.json", run.profiles);
  cs::SaveTriples(a.out / "triples.jsonl", run.triples);
  WriteFile(a.out / "alignment_scores.csv", ScoresCsv(run.scores));
  json config = {{"provider", a.provider},
                 {"alpha_align", a.alpha_align ? json(*a.alpha_align) : json("auto")},
                 {"alpha_cs", a.alpha_cs},
                 {"sample_n", a.sample_n},
                 {"top_m", a.top_m},
                 {"mask_threshold", a.mask_threshold},
                 {"seed", a.seed}};
  if (a.provider == "bridge") config["bridge_command"] = a.bridge_command;
  entry.config_json = config.dump();
  cs::WriteRunRecord(a.out, entry);
  for (const auto& w : run.warnings) Log("warning: " + w);
  Log(std::to_string(run.jobs) + " mask jobs, " + std::to_string(run.unscored) +
      " unscored, " + std::to_string(run.dropped) + " dropped, " +
      std::to_string(run.profiles.size()) + " classes categorized in " +
      Seconds(timer.seconds()));
}

// ---- eval

struct ConceptPredArgs {
  fs::path train_activations, train_manifest, train_labels, test_activations,
      test_labels, dict, out;
  std::size_t sample_per_class = 100;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
};

void RunConceptPred(const ConceptPredArgs& a) {
  const auto train = cs::LoadActivations(a.train_activations);
  const auto manifest = cs::LoadManifest(a.train_manifest);
  const auto labels = cs::LoadAttributeLabels(a.train_labels);
  const auto retained = cs::LoadDictionary(a.dict).RetainedIds();
  const auto assignment = cs::AssignLatents(
      train, manifest, labels, retained,
      {a.sample_per_class, a.seed, Workers(a.threads)});
  const auto report = cs::EvaluateConceptPrediction(
      assignment, cs::LoadActivations(a.test_activations),
      cs::LoadAttributeLabels(a.test_labels));
  fs::create_directories(a.out);
  WriteFile(a.out / "assignment.json", cs::AssignmentToJson(assignment) + "\n");
  WriteFile(a.out / "concept_prediction.json", cs::ToJson(report) + "\n");
  WriteFile(a.out / "concept_prediction.csv", cs::ToCsv(report));
  cs::WriteRunRecord(a.out, {"eval-concept-pred",
                             json{{"sample_per_class", a.sample_per_class},
                                  {"seed", a.seed}}
                                 .dump(),
                             {{"train_activations", a.train_activations},
                              {"train_manifest", a.train_manifest},
                              {"train_labels", a.train_labels},
                              {"test_activations", a.test_activations},
                              {"test_labels", a.test_labels},
                              {"dict", a.dict}}});
  std::printf("mean AUPRC %.4f, mean F1 %.4f over %zu attributes\n",
              report.mean_auprc, report.mean_f1, report.rows.size());
}

struct SegmentationArgs {
  fs::path model, archive, masks, assignment, out;
};

void RunSegmentation(const SegmentationArgs& a) {
  const auto report = cs::EvaluateSegmentation(
      cs::LoadCheckpoint(a.model), a.archive, cs::LoadGroundTruthMasks(a.masks),
      cs::AssignmentFromJson(ReadFile(a.assignment)));
  fs::create_directories(a.out);
  WriteFile(a.out / "segmentation.json", cs::ToJson(report) + "\n");
  WriteFile(a.out / "segmentation.csv", cs::ToCsv(report));
  cs::WriteRunRecord(a.out, {"eval-segmentation", "{}",
                             {{"model", a.model},
                              {"archive", a.archive},
                              {"masks", a.masks},
                              {"assignment", a.assignment}}});
  std::printf("mean AUPRC %.4f over %zu attributes\n", report.mean_auprc,
              report.rows.size());
}

struct CorrelationArgs {
  fs::path activations, similarities, out;
  cs::ConceptId concept_id = 0;
  std::size_t bins = 100;
};

void RunCorrelation(const CorrelationArgs& a) {
  const auto acts = cs::LoadActivations(a.activations);
  if (a.concept_id >= acts.latent_dim) {
    throw cs::InvalidArgument("concept " + std::to_string(a.concept_id) +
                              " out of range");
  }
  const auto similarities = cs::LoadSimilarities(a.similarities);
  std::vector<cs::ScoredPair> pairs;
  std::size_t missing = 0;
  for (const auto& r : acts.records) {
    const auto it = similarities.find(r.image_id);
    if (it == similarities.end()) {
      ++missing;
      continue;
    }
    pairs.push_back({r.image_id, r.image_level.at(a.concept_id), it->second});
  }
  if (missing > 0) {
    Log("warning: " + std::to_string(missing) + " images have no similarity");
  }
  const auto result = cs::ActivationSimilarityCorrelation(pairs, a.bins);
  fs::create_directories(a.out);
  WriteFile(a.out / "correlation.json", cs::ToJson(result) + "\n");
  WriteFile(a.out / "correlation.csv", cs::ToCsv(result));
  cs::WriteRunRecord(a.out, {"eval-correlation",
                             json{{"concept_id", a.concept_id}, {"bins", a.bins}}
                                 .dump(),
                             {{"activations", a.activations},
                              {"similarities", a.similarities}}});
  for (const auto& w : result.warnings) Log("warning: " + w);
  std::printf("pearson %.4f, spearman %.4f, %zu bins\n", result.pearson,
              result.spearman, result.bins);
}

struct BiasDiscoveryArgs {
  fs::path profiles, test_activations, test_manifest, test_labels, out;
  std::optional<fs::path> concept_attributes, name_activations, name_labels,
      dict;
  std::size_t k = 10;
};

void RunBiasDiscovery(const BiasDiscoveryArgs& a) {
  cs::RunEntry entry{"eval-bias-discovery", json{{"k", a.k}}.dump(),
                     {{"profiles", a.profiles},
                      {"test_activations", a.test_activations},
                      {"test_manifest", a.test_manifest},
                      {"test_labels", a.test_labels}}};
  cs::ConceptAttributes names;
  if (a.concept_attributes) {
    names = cs::ConceptAttributesFromJson(ReadFile(*a.concept_attributes));
    entry.inputs["concept_attributes"] = *a.concept_attributes;
  } else if (a.name_activations && a.name_labels && a.dict) {
    names = cs::LabelConceptsByAttribute(cs::LoadActivations(*a.name_activations),
                                         cs::LoadAttributeLabels(*a.name_labels),
                                         cs::LoadDictionary(*a.dict).RetainedIds());
    entry.inputs["name_activations"] = *a.name_activations;
    entry.inputs["name_labels"] = *a.name_labels;
    entry.inputs["dict"] = *a.dict;
  } else {
    throw cs::InvalidArgument(
        "give --concept-attributes, or --name-activations with --name-labels "
        "and --dict");
  }
  const auto profiles = cs::LoadProfiles(a.profiles);
  const auto result = cs::DiscoverBias(
      profiles, cs::LoadActivations(a.test_activations),
      cs::LoadManifest(a.test_manifest), cs::LoadAttributeLabels(a.test_labels),
      names, a.k);
  fs::create_directories(a.out);
  WriteFile(a.out / "concept_attributes.json",
            cs::ConceptAttributesToJson(names) + "\n");
  WriteFile(a.out / "bias_discovery.json", cs::ToJson(result) + "\n");
  WriteFile(a.out / "bias_discovery.csv", cs::ToCsv(result));
  cs::WriteRunRecord(a.out, entry);
  for (const auto& w : result.warnings) Log("warning: " + w);
  std::printf("mean precision@%zu %.4f over %zu pairs\n", a.k,
              result.mean_precision, result.pairs.size());
}

// ---- robustness

struct RobustnessArgs {
  fs::path model, train_archive, train_manifest, test_archive, test_manifest,
      profiles, predictions, out;
  std::string high_rule = "any";
  std::size_t threads = 0;
};

void RunRobustness(const RobustnessArgs& a) {
  const cs::HighRule rule = cs::HighRuleFromString(a.high_rule);
  const cs::SaeModel model = cs::LoadCheckpoint(a.model);
  const std::size_t workers = Workers(a.threads);
  const auto train_manifest = cs::LoadManifest(a.train_manifest);
  cs::StrengthAccumulator acc(train_manifest, model.latent_dim);
  cs::ComputeActivations(
      model, a.train_archive, {},
      [&](cs::ActivationRecord&& r) { acc.Add(r); }, workers);
  const auto train_strengths = acc.Finish();
  cs::ActivationSet test;
  test.latent_dim = static_cast<std::uint32_t>(model.latent_dim);
  test.records = cs::ComputeActivations(model, a.test_archive, workers);
  const auto profiles = cs::LoadProfiles(a.profiles);
  const auto groups = cs::AssignSubgroups(
      train_strengths, test, cs::LoadManifest(a.test_manifest), profiles, rule);
  const auto report =
      cs::GroupAccuracy(groups.assignments, cs::LoadPredictions(a.predictions));
  fs::create_directories(a.out);
  WriteFile(a.out / "subgroups.csv", cs::AssignmentsToCsv(groups.assignments));
  WriteFile(a.out / "group_accuracy.json",
            cs::ToJson(report, groups.skipped) + "\n");
  WriteFile(a.out / "group_accuracy.csv", cs::ToCsv(report));
  cs::WriteRunRecord(a.out, {"robustness",
                             json{{"high_rule", a.high_rule}}.dump(),
                             {{"model", a.model},
                              {"train_archive", a.train_archive},
                              {"train_manifest", a.train_manifest},
                              {"test_archive", a.test_archive},
                              {"test_manifest", a.test_manifest},
                              {"profiles", a.profiles},
                              {"predictions", a.predictions}}});
  for (const auto& s : groups.skipped) Log("skipped " + s);
  const auto& p = report.pooled;
  for (int g = 0; g < 4; ++g) {
    std::printf("G%d size %llu accuracy %s\n", g + 1,
                static_cast<unsigned long long>(p.sizes[g]),
                p.accuracy[g] ? std::to_string(*p.accuracy[g]).c_str() : "n/a");
  }
}

// ---- inspect

void RunInspect(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cs::IoError("cannot open " + path.string(), 0);
  char magic[4] = {};
  in.read(magic, 4);
  const std::string m(magic, static_cast<std::size_t>(in.gcount()));
  json doc;
  if (m == "CSEM") {
    const auto h = cs::ReadArchiveHeader(path);
    doc = {{"format", "embedding archive"},
           {"records", h.record_count},
           {"tokens", h.num_tokens},
           {"grid_side", cs::GridSide(h.num_tokens)},
           {"dim", h.dim},
           {"complete", h.complete()}};
  } else if (m == "CSAE") {
    const auto model = cs::LoadCheckpoint(path);
    char crc[9];
    std::snprintf(crc, sizeof crc, "%08x", cs::ModelChecksum(model));
    doc = {{"format", "sae checkpoint"},
           {"input_dim", model.input_dim},
           {"latent_dim", model.latent_dim},
           {"checksum", crc}};
  } else if (m == "CSAC") {
    cs::ActivationReader reader(path);
    cs::ActivationRecord r;
    std::uint64_t records = 0, nnz = 0;
    while (reader.Next(r)) {
      ++records;
      nnz += r.image_level.nnz();
    }
    doc = {{"format", "activation archive"},
           {"latent_dim", reader.latent_dim()},
           {"records", records},
           {"mean_nnz", records ? static_cast<double>(nnz) / records : 0.0}};
  } else {
    throw cs::FormatError("magic", "unrecognized file " + path.string());
  }
  std::cout << doc.dump(2) << '\n';
}

void PrintError(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump()
            << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ConceptScope: sparse-autoencoder concept discovery and bias audit"};
  app.set_version_flag("--version", std::string(cs::kToolkitVersion));
  app.require_subcommand(1);
  std::function<void()> action;

  // synth
  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a planted synthetic corpus");
  s->add_option("--preset", synth.preset, "planted-dictionary, planted-bias or planted-subgroups")
      ->required()
      ->check(CLI::IsMember({"planted-dictionary", "planted-bias", "planted-subgroups"}));
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.seed);
  s->add_option("--images", synth.images, "Images (planted-dictionary)");
  s->add_option("--classes", synth.classes);
  s->add_option("--train-per-class", synth.train_per_class);
  s->add_option("--test-per-class", synth.test_per_class);
  s->add_option("--correlation", synth.correlation);
  s->callback([&] { action = [&] { RunSynth(synth); }; });

  // train
  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a sparse autoencoder on an archive");
  t->add_option("--archive", train.archive)->required()->check(CLI::ExistingFile);
  t->add_option("--out", train.out, "Checkpoint path (.csae)")->required();
  t->add_option("--config", train.config_file, "Training config JSON")
      ->check(CLI::ExistingFile);
  t->add_option("--preset", train.preset, "planted-dictionary or planted-bias");
  t->add_option("--lambda", train.lambda);
  t->add_option("--lr", train.lr);
  t->add_option("--warmup", train.warmup);
  t->add_option("--batch", train.batch);
  t->add_option("--epochs", train.epochs);
  t->add_option("--expansion", train.expansion);
  t->add_option("--dead-window", train.dead_window);
  t->add_option("--shuffle-window", train.shuffle_window);
  t->add_option("--seed", train.seed);
  t->add_option("--threads", train.threads);
  t->callback([&] { action = [&] { RunTrain(train); }; });

  // activate
  ActivateArgs activate;
  auto* a = app.add_subcommand("activate", "Compute image-level activations");
  a->add_option("--model", activate.model)->required()->check(CLI::ExistingFile);
  a->add_option("--archive", activate.archive)->required()->check(CLI::ExistingFile);
  a->add_option("--out", activate.out, "Activation archive (.csac)")->required();
  a->add_option("--manifest", activate.manifest, "Also write per-class strengths")
      ->check(CLI::ExistingFile);
  a->add_option("--strengths-out", activate.strengths_out);
  a->add_option("--threads", activate.threads);
  a->callback([&] { action = [&] { RunActivate(activate); }; });

  // dict
  auto* d = app.add_subcommand("dict", "Build, annotate or show a concept dictionary");
  d->require_subcommand(1);
  DictBuildArgs dict_build;
  auto* db = d->add_subcommand("build", "Filter latents into a concept dictionary");
  db->add_option("--activations", dict_build.activations)
      ->required()
      ->check(CLI::ExistingFile);
  db->add_option("--out", dict_build.out)->required();
  db->add_option("--model", dict_build.model)->check(CLI::ExistingFile);
  db->add_option("--max-act-floor", dict_build.max_act_floor);
  db->add_option("--strength-ceiling", dict_build.strength_ceiling);
  db->add_option("--exemplars", dict_build.exemplars);
  db->callback([&] { action = [&] { RunDictBuild(dict_build); }; });
  DictAnnotateArgs dict_annotate;
  auto* da = d->add_subcommand("annotate", "Attach concept descriptions");
  da->add_option("--dict", dict_annotate.dict)->required()->check(CLI::ExistingFile);
  da->add_option("--descriptions", dict_annotate.descriptions)
      ->required()
      ->check(CLI::ExistingFile);
  da->add_option("--source", dict_annotate.source);
  da->add_option("--out", dict_annotate.out, "Defaults to rewriting --dict");
  da->callback([&] { action = [&] { RunDictAnnotate(dict_annotate); }; });
  DictShowArgs dict_show;
  auto* ds = d->add_subcommand("show", "Print a concept dictionary");
  ds->add_option("--dict", dict_show.dict)->required()->check(CLI::ExistingFile);
  ds->add_option("--concept", dict_show.concept_id);
  ds->add_flag("--retained-only", dict_show.retained_only);
  ds->add_flag("--export-descriptions", dict_show.export_descriptions);
  ds->callback([&] { action = [&] { RunDictShow(dict_show); }; });

  // categorize
  CategorizeArgs cat;
  auto* c = app.add_subcommand("categorize", "Score and categorize concepts per class");
  c->add_option("--model", cat.model)->required()->check(CLI::ExistingFile);
  c->add_option("--archive", cat.archive)->required()->check(CLI::ExistingFile);
  c->add_option("--manifest", cat.manifest)->required()->check(CLI::ExistingFile);
  c->add_option("--strengths", cat.strengths)->required()->check(CLI::ExistingFile);
  c->add_option("--dict", cat.dict)->required()->check(CLI::ExistingFile);
  c->add_option("--out", cat.out, "Output directory")->required();
  c->add_option("--provider", cat.provider)
      ->check(CLI::IsMember({"offline", "replay", "bridge"}));
  c->add_option("--class-embeddings", cat.class_embeddings)->check(CLI::ExistingFile);
  c->add_option("--triples", cat.triples)->check(CLI::ExistingFile);
  c->add_option("--bridge-command", cat.bridge_command,
                "Shell command; {jobs} and {out} are replaced by file paths");
  c->add_option("--bridge-workdir", cat.workdir);
  c->add_option("--alpha-align", cat.alpha_align, "Fixed alpha; default picks by silhouette");
  c->add_option("--alpha-cs", cat.alpha_cs);
  c->add_option("--sample-n", cat.sample_n);
  c->add_option("--top-m", cat.top_m);
  c->add_option("--mask-threshold", cat.mask_threshold);
  c->add_option("--seed", cat.seed);
  c->callback([&] { action = [&] { RunCategorize(cat); }; });

  // eval
  auto* e = app.add_subcommand("eval", "Evaluation protocols");
  e->require_subcommand(1);
  ConceptPredArgs cp;
  auto* ecp = e->add_subcommand("concept-pred", "Attribute prediction from assigned latents");
  ecp->add_option("--train-activations", cp.train_activations)->required()->check(CLI::ExistingFile);
  ecp->add_option("--train-manifest", cp.train_manifest)->required()->check(CLI::ExistingFile);
  ecp->add_option("--train-labels", cp.train_labels)->required()->check(CLI::ExistingFile);
  ecp->add_option("--test-activations", cp.test_activations)->required()->check(CLI::ExistingFile);
  ecp->add_option("--test-labels", cp.test_labels)->required()->check(CLI::ExistingFile);
  ecp->add_option("--dict", cp.dict)->required()->check(CLI::ExistingFile);
  ecp->add_option("--out", cp.out)->required();
  ecp->add_option("--sample-per-class", cp.sample_per_class);
  ecp->add_option("--seed", cp.seed);
  ecp->add_option("--threads", cp.threads);
  ecp->callback([&] { action = [&] { RunConceptPred(cp); }; });
  SegmentationArgs seg;
  auto* es = e->add_subcommand("segmentation", "Patch-level AUPRC against ground-truth masks");
  es->add_option("--model", seg.model)->required()->check(CLI::ExistingFile);
  es->add_option("--archive", seg.archive)->required()->check(CLI::ExistingFile);
  es->add_option("--masks", seg.masks)->required()->check(CLI::ExistingFile);
  es->add_option("--assignment", seg.assignment)->required()->check(CLI::ExistingFile);
  es->add_option("--out", seg.out)->required();
  es->callback([&] { action = [&] { RunSegmentation(seg); }; });
  CorrelationArgs corr;
  auto* ec = e->add_subcommand("correlation", "Activation vs. similarity correlation");
  ec->add_option("--activations", corr.activations)->required()->check(CLI::ExistingFile);
  ec->add_option("--similarities", corr.similarities)->required()->check(CLI::ExistingFile);
  ec->add_option("--concept", corr.concept_id)->required();
  ec->add_option("--bins", corr.bins);
  ec->add_option("--out", corr.out)->required();
  ec->callback([&] { action = [&] { RunCorrelation(corr); }; });
  BiasDiscoveryArgs bd;
  auto* eb = e->add_subcommand("bias-discovery", "Precision@k of other classes' bias concepts");
  eb->add_option("--profiles", bd.profiles)->required()->check(CLI::ExistingFile);
  eb->add_option("--test-activations", bd.test_activations)->required()->check(CLI::ExistingFile);
  eb->add_option("--test-manifest", bd.test_manifest)->required()->check(CLI::ExistingFile);
  eb->add_option("--test-labels", bd.test_labels)->required()->check(CLI::ExistingFile);
  eb->add_option("--concept-attributes", bd.concept_attributes)->check(CLI::ExistingFile);
  eb->add_option("--name-activations", bd.name_activations)->check(CLI::ExistingFile);
  eb->add_option("--name-labels", bd.name_labels)->check(CLI::ExistingFile);
  eb->add_option("--dict", bd.dict)->check(CLI::ExistingFile);
  eb->add_option("--k", bd.k);
  eb->add_option("--out", bd.out)->required();
  eb->callback([&] { action = [&] { RunBiasDiscovery(bd); }; });

  // robustness
  RobustnessArgs rob;
  auto* r = app.add_subcommand("robustness", "Per-subgroup accuracy of a classifier");
  r->add_option("--model", rob.model)->required()->check(CLI::ExistingFile);
  r->add_option("--train-archive", rob.train_archive)->required()->check(CLI::ExistingFile);
  r->add_option("--train-manifest", rob.train_manifest)->required()->check(CLI::ExistingFile);
  r->add_option("--test-archive", rob.test_archive)->required()->check(CLI::ExistingFile);
  r->add_option("--test-manifest", rob.test_manifest)->required()->check(CLI::ExistingFile);
  r->add_option("--profiles", rob.profiles)->required()->check(CLI::ExistingFile);
  r->add_option("--predictions", rob.predictions)->required()->check(CLI::ExistingFile);
  r->add_option("--out", rob.out)->required();
  r->add_option("--high-rule", rob.high_rule)->check(CLI::IsMember({"any", "mean"}));
  r->add_option("--threads", rob.threads);
  r->callback([&] { action = [&] { RunRobustness(rob); }; });

  // inspect
  fs::path inspect_path;
  auto* i = app.add_subcommand("inspect", "Describe a .csem, .csae or .csac file");
  i->add_option("file", inspect_path)->required()->check(CLI::ExistingFile);
  i->callback([&] { action = [&] { RunInspect(inspect_path); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ok) {
    return app.exit(ok);
  } catch (const CLI::ParseError& err) {
    PrintError("usage", err.what());
    return 2;
  }
  try {
    action();
  } catch (const cs::Error& err) {
    PrintError(err.kind(), err.what());
    return 1;
  } catch (const std::exception& err) {
    PrintError("internal", err.what());
    return 1;
  }
  return 0;
}
