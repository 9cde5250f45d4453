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

#include "conceptscope/sae_train.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>

#include "conceptscope/embedding_io.h"
#include "test_util.h"

namespace conceptscope {
namespace {

using testing::TempDir;

double Norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

SaeGradients ConstantGradients(const SaeModel& model, double value) {
  SaeGradients g = SaeGradients::ZerosLike(model);
  for (auto* block : {&g.w_enc, &g.b_enc, &g.w_dec, &g.b_dec}) {
    std::fill(block->begin(), block->end(), value);
  }
  return g;
}

TEST(WarmupTest, LinearThenFlat) {
  TrainConfig config;
  config.learning_rate = 1e-3;
  config.warmup_steps = 4;
  EXPECT_DOUBLE_EQ(WarmupLearningRate(1, config), 2.5e-4);
  EXPECT_DOUBLE_EQ(WarmupLearningRate(2, config), 5e-4);
  EXPECT_DOUBLE_EQ(WarmupLearningRate(4, config), 1e-3);
  EXPECT_DOUBLE_EQ(WarmupLearningRate(400, config), 1e-3);
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  // With bias correction, m_hat = g and v_hat = g^2 on step one, so each
  // parameter moves by lr * g / (|g| + eps).
  TrainConfig config;
  config.learning_rate = 0.01;
  config.warmup_steps = 1;
  SaeModel model = SaeModel::Zeros(3, 2);
  model.b_dec = {1.0, 2.0, 3.0};
  AdamState state = AdamState::ZerosLike(model);
  SaeGradients grads = ConstantGradients(model, 0.0);
  grads.b_dec = {0.5, -2.0, 0.0};
  AdamStep(model, grads, state, 1, config);
  const double eps = config.epsilon;
  EXPECT_NEAR(model.b_dec[0], 1.0 - 0.01 * 0.5 / (0.5 + eps), 1e-15);
  EXPECT_NEAR(model.b_dec[1], 2.0 + 0.01 * 2.0 / (2.0 + eps), 1e-15);
  EXPECT_DOUBLE_EQ(model.b_dec[2], 3.0);
  EXPECT_DOUBLE_EQ(state.first.b_dec[0], 0.05);
  EXPECT_NEAR(state.second.b_dec[1], 0.001 * 4.0, 1e-16);
}

TEST(AdamTest, SecondStepMatchesRecurrence) {
  TrainConfig config;
  config.learning_rate = 0.1;
  config.warmup_steps = 1;
  SaeModel model = SaeModel::Zeros(1, 1);
  AdamState state = AdamState::ZerosLike(model);
  SaeGradients g1 = ConstantGradients(model, 0.0);
  g1.b_dec = {1.0};
  SaeGradients g2 = ConstantGradients(model, 0.0);
  g2.b_dec = {-3.0};
  AdamStep(model, g1, state, 1, config);
  const double after_one = model.b_dec[0];
  AdamStep(model, g2, state, 2, config);

  double m = 0.1 * 1.0;
  double v = 0.001 * 1.0;
  m = 0.9 * m + 0.1 * -3.0;
  v = 0.999 * v + 0.001 * 9.0;
  const double m_hat = m / (1.0 - 0.81);
  const double v_hat = v / (1.0 - 0.999 * 0.999);
  const double expected = after_one - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
  EXPECT_NEAR(model.b_dec[0], expected, 1e-14);
}

TEST(AdamTest, ZeroGradientLeavesParameters) {
  TrainConfig config;
  SaeModel model = SaeModel::Initialize(4, 2, 3);
  const SaeModel before = model;
  AdamState state = AdamState::ZerosLike(model);
  AdamStep(model, ConstantGradients(model, 0.0), state, 1, config);
  EXPECT_EQ(model.w_enc, before.w_enc);
  EXPECT_EQ(model.b_dec, before.b_dec);
  for (std::size_t j = 0; j < model.latent_dim; ++j) {
    EXPECT_NEAR(Norm(model.decoder_row(j)), 1.0, 1e-12);
  }
}

TEST(AdamTest, RenormalizesDecoderRows) {
  TrainConfig config;
  config.learning_rate = 0.5;
  config.warmup_steps = 1;
  SaeModel model = SaeModel::Initialize(5, 2, 9);
  AdamState state = AdamState::ZerosLike(model);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  for (std::uint64_t step = 1; step <= 5; ++step) {
    SaeGradients g = SaeGradients::ZerosLike(model);
    for (double& v : g.w_dec) v = normal(rng);
    AdamStep(model, g, state, step, config);
    for (std::size_t j = 0; j < model.latent_dim; ++j) {
      EXPECT_NEAR(Norm(model.decoder_row(j)), 1.0, 1e-12);
    }
  }
}

TEST(AdamTest, NonFiniteUpdateLeavesModelUntouched) {
  TrainConfig config;
  config.warmup_steps = 1;
  SaeModel model = SaeModel::Initialize(3, 1, 2);
  const SaeModel before = model;
  AdamState state = AdamState::ZerosLike(model);
  SaeGradients g = ConstantGradients(model, 0.0);
  g.b_enc[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(AdamStep(model, g, state, 1, config), NumericError);
  EXPECT_EQ(model, before);
}

TEST(AdamTest, ResetLatentClearsOnlyThatLatent) {
  SaeModel model = SaeModel::Zeros(2, 3);
  AdamState state{ConstantGradients(model, 1.0), ConstantGradients(model, 2.0)};
  state.ResetLatent(model, 1);
  EXPECT_EQ(state.first.w_enc, (std::vector<double>{1, 1, 0, 0, 1, 1}));
  EXPECT_EQ(state.second.w_dec, (std::vector<double>{2, 2, 0, 0, 2, 2}));
  EXPECT_EQ(state.first.b_enc, (std::vector<double>{1, 0, 1}));
  EXPECT_EQ(state.second.b_dec, (std::vector<double>{2, 2}));
}

TEST(DeadNeuronTrackerTest, MatchesOfflineScan) {
  constexpr std::size_t kLatents = 6;
  constexpr std::size_t kWindow = 7;
  std::mt19937_64 rng(11);
  std::bernoulli_distribution fires(0.08);
  std::vector<std::vector<ConceptId>> history;
  DeadNeuronTracker tracker(kLatents, kWindow);
  for (int n = 0; n < 200; ++n) {
    std::vector<ConceptId> active;
    for (ConceptId j = 0; j < kLatents; ++j) {
      if (fires(rng)) active.push_back(j);
    }
    tracker.Observe(active);
    history.push_back(active);

    std::vector<ConceptId> expected;
    for (ConceptId j = 0; j < kLatents; ++j) {
      std::size_t run = 0;
      for (auto it = history.rbegin(); it != history.rend(); ++it) {
        if (std::find(it->begin(), it->end(), j) != it->end()) break;
        ++run;
      }
      ASSERT_EQ(tracker.since_active(j), run);
      if (run >= kWindow) expected.push_back(j);
    }
    ASSERT_EQ(tracker.Dead(), expected) << "after example " << n;
  }
}

TEST(DeadNeuronTrackerTest, ResetRestartsCount) {
  DeadNeuronTracker tracker(2, 3);
  for (int i = 0; i < 3; ++i) tracker.Observe({});
  EXPECT_EQ(tracker.Dead(), (std::vector<ConceptId>{0, 1}));
  tracker.Reset(0);
  EXPECT_EQ(tracker.Dead(), (std::vector<ConceptId>{1}));
}

TEST(ResampleTest, NoDeadNeuronsIsIdentity) {
  const SaeModel model = SaeModel::Initialize(4, 2, 1);
  Batch residuals(4);
  residuals.Append(std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(ResampleDeadNeurons(model, {}, residuals), model);
}

TEST(ResampleTest, RewritesOnlyDeadLatents) {
  SaeModel model = SaeModel::Initialize(3, 2, 5);
  model.b_enc[2] = 0.7;
  model.b_enc[4] = -0.3;
  Batch residuals(3);
  residuals.Append(std::vector<double>{0, 0, 0});
  residuals.Append(std::vector<double>{3, 0, 4});
  residuals.Append(std::vector<double>{0, -2, 0});
  const std::vector<ConceptId> dead = {2, 4};
  const SaeModel out = ResampleDeadNeurons(model, dead, residuals);

  const std::vector<double> first = {0.6, 0.0, 0.8};
  const std::vector<double> second = {0.0, -1.0, 0.0};
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_DOUBLE_EQ(out.decoder_row(2)[k], first[k]);
    EXPECT_DOUBLE_EQ(out.encoder_column(2)[k], 0.2 * first[k]);
    EXPECT_DOUBLE_EQ(out.decoder_row(4)[k], second[k]);
    EXPECT_DOUBLE_EQ(out.encoder_column(4)[k], 0.2 * second[k]);
  }
  EXPECT_EQ(out.b_enc[2], 0.0);
  EXPECT_EQ(out.b_enc[4], 0.0);
  for (std::size_t j : {0, 1, 3, 5}) {
    EXPECT_TRUE(std::ranges::equal(out.decoder_row(j), model.decoder_row(j)));
    EXPECT_TRUE(
        std::ranges::equal(out.encoder_column(j), model.encoder_column(j)));
    EXPECT_EQ(out.b_enc[j], model.b_enc[j]);
  }
  EXPECT_EQ(out.b_dec, model.b_dec);
}

TEST(ResampleTest, ResampledLatentFiresOnItsResidual) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 10; ++trial) {
    SaeModel model = SaeModel::Initialize(6, 2, trial);
    for (double& b : model.b_enc) b = -5.0;
    Batch residuals(6);
    std::vector<double> r(6);
    for (double& v : r) v = normal(rng);
    residuals.Append(std::span<const double>(r));
    std::vector<double> z(6);
    for (std::size_t k = 0; k < 6; ++k) z[k] = model.b_dec[k] + r[k];
    const std::vector<ConceptId> dead = {3};
    const SaeModel out = ResampleDeadNeurons(model, dead, residuals);
    EXPECT_GT(Encode(out, std::span<const double>(z)).at(3), 0.0);
  }
}

// Unit-norm atoms with sparse non-negative codes; returns the atoms.
std::vector<std::vector<double>> WritePlantedArchive(
    const std::filesystem::path& path, std::size_t d, std::size_t atoms,
    std::size_t images, std::uint16_t tokens, std::size_t k,
    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> coef(0.5, 1.5);
  std::vector<std::vector<double>> dict(atoms, std::vector<double>(d));
  for (auto& atom : dict) {
    for (double& v : atom) v = normal(rng);
    const double n = Norm(atom);
    for (double& v : atom) v /= n;
  }
  ArchiveWriter writer(path, tokens, static_cast<std::uint16_t>(d));
  EmbeddingRecord record;
  record.num_tokens = tokens;
  record.dim = static_cast<std::uint16_t>(d);
  record.tokens.resize(tokens * d);
  std::vector<std::size_t> ids(atoms);
  std::iota(ids.begin(), ids.end(), 0u);
  for (std::size_t i = 0; i < images; ++i) {
    record.image_id = i;
    std::fill(record.tokens.begin(), record.tokens.end(), 0.0f);
    for (std::size_t t = 0; t < tokens; ++t) {
      std::shuffle(ids.begin(), ids.end(), rng);
      for (std::size_t s = 0; s < k; ++s) {
        const double c = coef(rng);
        for (std::size_t q = 0; q < d; ++q) {
          record.tokens[t * d + q] += static_cast<float>(c * dict[ids[s]][q]);
        }
      }
    }
    writer.Append(record);
  }
  writer.Finish();
  return dict;
}

TEST(TrainTest, ZeroEpochsOnlyInitializesBias) {
  TempDir dir;
  WritePlantedArchive(dir / "a.csem", 4, 4, 20, 5, 2, 1);
  TrainConfig config;
  config.epochs = 0;
  config.expansion_factor = 2;
  config.batch_size = 16;
  const TrainResult result = Train(dir / "a.csem", config);
  EXPECT_EQ(result.report.steps, 0u);
  EXPECT_TRUE(result.report.epochs.empty());
  EXPECT_GT(result.report.initial_reconstruction, 0.0);
  SaeModel fresh = SaeModel::Initialize(4, 2, config.seed);
  fresh.b_dec = result.model.b_dec;
  EXPECT_EQ(result.model, fresh);
}

TEST(TrainTest, DeterministicForSeedAndWorkerCount) {
  TempDir dir;
  WritePlantedArchive(dir / "a.csem", 8, 8, 100, 5, 2, 2);
  TrainConfig config;
  config.epochs = 2;
  config.expansion_factor = 2;
  config.batch_size = 32;
  config.warmup_steps = 10;
  config.lambda = 1e-3;
  config.learning_rate = 1e-2;
  config.dead_window = 200;
  config.shuffle_window = 64;
  const TrainResult a = Train(dir / "a.csem", config);
  config.workers = 3;
  const TrainResult b = Train(dir / "a.csem", config);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.report.ToJson(false), b.report.ToJson(false));
  EXPECT_EQ(a.report.steps, 2u * 16u);
  EXPECT_EQ(a.report.epochs.at(0).examples, 500u);
  config.seed = 1;
  const TrainResult c = Train(dir / "a.csem", config);
  EXPECT_NE(a.model, c.model);
}

TEST(TrainTest, ObserverSeesEveryStepAndRowsStayUnit) {
  TempDir dir;
  WritePlantedArchive(dir / "a.csem", 6, 6, 40, 5, 2, 3);
  TrainConfig config;
  config.epochs = 1;
  config.expansion_factor = 2;
  config.batch_size = 50;
  config.warmup_steps = 2;
  std::vector<std::uint64_t> seen;
  const TrainResult result =
      Train(dir / "a.csem", config,
            [&](std::uint64_t step, const BatchDiagnostics& diag) {
              seen.push_back(step);
              EXPECT_EQ(diag.reconstruction.size(), 50u);
            });
  EXPECT_EQ(seen, (std::vector<std::uint64_t>{1, 2, 3, 4}));
  for (std::size_t j = 0; j < result.model.latent_dim; ++j) {
    EXPECT_NEAR(Norm(result.model.decoder_row(j)), 1.0, 1e-9);
  }
}

TEST(TrainTest, ResamplesNeuronsThatNeverFire) {
  TempDir dir;
  WritePlantedArchive(dir / "a.csem", 6, 3, 60, 5, 1, 4);
  TrainConfig config;
  config.epochs = 2;
  config.expansion_factor = 4;
  config.batch_size = 30;
  config.warmup_steps = 5;
  config.lambda = 0.5;
  config.dead_window = 60;
  const TrainResult result = Train(dir / "a.csem", config);
  ASSERT_FALSE(result.report.resample_events.empty());
  for (const auto& event : result.report.resample_events) {
    EXPECT_FALSE(event.neurons.empty());
    EXPECT_TRUE(std::ranges::is_sorted(event.neurons));
  }
}

TEST(TrainTest, RejectsWarmupLongerThanRun) {
  TempDir dir;
  WritePlantedArchive(dir / "a.csem", 4, 4, 10, 5, 1, 5);
  TrainConfig config;
  config.epochs = 1;
  config.batch_size = 10;
  config.warmup_steps = 6;
  config.expansion_factor = 1;
  EXPECT_THROW(Train(dir / "a.csem", config), InvalidArgument);
}

TEST(TrainConfigTest, DefaultsAndJsonRoundTrip) {
  const TrainConfig defaults;
  EXPECT_DOUBLE_EQ(defaults.lambda, 8e-5);
  EXPECT_DOUBLE_EQ(defaults.learning_rate, 4e-4);
  EXPECT_EQ(defaults.warmup_steps, 500u);
  EXPECT_EQ(defaults.batch_size, 64u);
  EXPECT_EQ(defaults.epochs, 5u);
  EXPECT_EQ(defaults.expansion_factor, 32u);
  EXPECT_EQ(defaults.dead_window, 10000u);

  TrainConfig custom;
  custom.lambda = 0.125;
  custom.seed = 42;
  custom.epochs = 3;
  const TrainConfig parsed = TrainConfig::FromJson(custom.ToJson());
  EXPECT_EQ(parsed.ToJson(), custom.ToJson());
  EXPECT_THROW(TrainConfig::FromJson("{"), FormatError);
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(bad.Validate(), InvalidArgument);
  bad = TrainConfig();
  bad.lambda = -1.0;
  EXPECT_THROW(bad.Validate(), InvalidArgument);
}

TEST(TrainTest, RecoversPlantedDictionary) {
  TempDir dir;
  constexpr std::size_t kDim = 16;
  constexpr std::size_t kAtoms = 32;
  const auto dict =
      WritePlantedArchive(dir / "a.csem", kDim, kAtoms, 10000, 5, 3, 6);
  TrainConfig config;
  config.epochs = 10;
  config.expansion_factor = 2;
  config.batch_size = 64;
  config.warmup_steps = 100;
  config.learning_rate = 5e-3;
  config.lambda = 0.3;
  config.dead_window = 2000;
  const TrainResult result = Train(dir / "a.csem", config);
  EXPECT_LT(result.report.epochs.back().mean_loss.reconstruction * 10.0,
            result.report.initial_reconstruction);

  // Greedy one-to-one assignment by descending |cosine|.
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < kAtoms; ++a) {
    for (std::size_t j = 0; j < result.model.latent_dim; ++j) {
      double dot = 0.0;
      for (std::size_t q = 0; q < kDim; ++q) {
        dot += dict[a][q] * result.model.decoder_row(j)[q];
      }
      pairs.emplace_back(std::abs(dot), a, j);
    }
  }
  std::ranges::sort(pairs, std::greater<>());
  std::vector<bool> atom_used(kAtoms), latent_used(result.model.latent_dim);
  std::size_t matched = 0;
  for (const auto& [cosine, a, j] : pairs) {
    if (atom_used[a] || latent_used[j]) continue;
    atom_used[a] = latent_used[j] = true;
    if (cosine >= 0.9) ++matched;
  }
  EXPECT_GE(matched * 10, kAtoms * 9);
}

}  // namespace
}  // namespace conceptscope
