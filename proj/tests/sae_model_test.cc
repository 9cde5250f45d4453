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

#include "conceptscope/sae_model.h"

#include <cmath>
#include <cstring>
#include <random>

#include "gtest/gtest.h"
#include "oracles.h"
#include "test_util.h"

namespace conceptscope {
namespace {

using testing::MinAbsPreActivation;
using testing::OracleDecode;
using testing::OracleEncode;
using testing::OracleLoss;
using testing::RandomModel;
using testing::RandomVector;
using testing::ToBatch;

TEST(EncodeTest, IdentityClipsNegatives) {
  SaeModel model = SaeModel::Zeros(2, 2);
  model.enc(0, 0) = 1;
  model.enc(1, 1) = 1;
  const std::vector<double> z = {1, -2};
  const SparseVector f = Encode(model, std::span<const double>(z));
  EXPECT_EQ(f.ToDense(), (std::vector<double>{1, 0}));
  EXPECT_EQ(f.nnz(), 1u);
}

TEST(EncodeTest, ZeroInputZeroBias) {
  const SaeModel model = RandomModel(4, 8, 1, 0.0);
  const std::vector<double> z(4, 0.0);
  EXPECT_EQ(Encode(model, std::span<const double>(z)).nnz(), 0u);
}

TEST(EncodeTest, MatchesDenseOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SaeModel model = RandomModel(4, 8, seed);
    std::mt19937_64 rng(seed + 100);
    const auto z = RandomVector(4, rng);
    const auto f = Encode(model, std::span<const double>(z)).ToDense();
    const auto oracle = OracleEncode(model, z);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(f[j], oracle[j], 1e-6);
  }
}

TEST(EncodeTest, DimensionMismatchThrows) {
  const SaeModel model = RandomModel(4, 8, 1);
  const std::vector<double> z(3, 0.0);
  EXPECT_THROW(Encode(model, std::span<const double>(z)), DimensionError);
}

TEST(EncodeTest, NonNegativeAndHomogeneous) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SaeModel model = RandomModel(5, 10, seed);
    std::fill(model.b_enc.begin(), model.b_enc.end(), 0.0);
    std::mt19937_64 rng(seed);
    const auto z = RandomVector(5, rng);
    const auto f = Encode(model, std::span<const double>(z)).ToDense();
    for (double v : f) EXPECT_GE(v, 0.0);
    const double c = 0.1 + static_cast<double>(seed);
    std::vector<double> scaled = z;
    for (double& v : scaled) v *= c;
    const auto fc = Encode(model, std::span<const double>(scaled)).ToDense();
    for (std::size_t j = 0; j < f.size(); ++j) {
      EXPECT_NEAR(fc[j], c * f[j], 1e-9 * (1 + std::abs(c * f[j])));
    }
  }
}

TEST(DecodeTest, ZeroLatentGivesDecoderBias) {
  const SaeModel model = RandomModel(4, 8, 2);
  SparseVector f;
  f.dim = 8;
  EXPECT_EQ(Decode(model, f), model.b_dec);
}

TEST(DecodeTest, OneHotReadsOutAtom) {
  SaeModel model = RandomModel(4, 8, 3);
  std::fill(model.b_dec.begin(), model.b_dec.end(), 0.0);
  SparseVector f;
  f.dim = 8;
  f.indices = {5};
  f.values = {1.0};
  const auto out = Decode(model, f);
  const auto row = model.decoder_row(5);
  EXPECT_EQ(out, std::vector<double>(row.begin(), row.end()));
}

TEST(DecodeTest, SparsePathMatchesDenseOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SaeModel model = RandomModel(4, 8, seed);
    std::mt19937_64 rng(seed);
    const auto z = RandomVector(4, rng);
    const SparseVector f = Encode(model, std::span<const double>(z));
    const auto out = Decode(model, f);
    const auto oracle = OracleDecode(model, f.ToDense());
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(out[k], oracle[k], 1e-6);
  }
}

TEST(LossTest, ZeroModel) {
  const SaeModel model = SaeModel::Zeros(2, 4);
  const std::vector<double> z = {3, 4};
  const SaeLossBreakdown loss = Loss(model, std::span<const double>(z), 0.0);
  EXPECT_EQ(loss.reconstruction, 25.0);
  EXPECT_EQ(loss.sparsity, 0.0);
  EXPECT_EQ(loss.total, 25.0);
}

TEST(LossTest, MatchesScalarLoopOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SaeModel model = RandomModel(4, 8, seed);
    std::mt19937_64 rng(seed + 7);
    const auto z = RandomVector(4, rng);
    const double lambda = 8e-5 * static_cast<double>(seed + 1) * 100;
    const SaeLossBreakdown loss = Loss(model, std::span<const double>(z), lambda);
    EXPECT_NEAR(loss.total, OracleLoss(model, {z}, lambda), 1e-6);
    EXPECT_DOUBLE_EQ(loss.total, loss.reconstruction + lambda * loss.sparsity);
  }
}

TEST(LossTest, NegativeLambdaRejected) {
  const SaeModel model = SaeModel::Zeros(2, 4);
  const std::vector<double> z = {3, 4};
  EXPECT_THROW(Loss(model, std::span<const double>(z), -1.0), InvalidArgument);
}

TEST(GradientTest, ZeroAtPerfectReconstruction) {
  SaeModel model = SaeModel::Zeros(2, 2);
  model.enc(0, 0) = model.enc(1, 1) = 1;
  model.w_dec = {1, 0, 0, 1};
  const Batch batch = ToBatch({{1.0, 2.0}, {0.5, 3.0}});
  const SaeGradients g = LossGradients(model, batch, 0.0);
  for (const auto* block : {&g.w_enc, &g.b_enc, &g.w_dec, &g.b_dec}) {
    for (double v : *block) EXPECT_EQ(v, 0.0);
  }
}

// Central finite differences, h = 1e-4, against the scalar-loop oracle loss.
TEST(GradientTest, MatchesFiniteDifferences) {
  constexpr double kStep = 1e-4;
  int checked_models = 0;
  for (std::uint64_t seed = 0; checked_models < 20; ++seed) {
    SaeModel model = RandomModel(3, 6, seed);
    std::mt19937_64 rng(seed * 31 + 5);
    std::vector<std::vector<double>> rows;
    for (int n = 0; n < 4; ++n) rows.push_back(RandomVector(3, rng));
    // Keep every pre-activation away from the ReLU kink.
    if (MinAbsPreActivation(model, rows) < 1e-2) continue;
    ++checked_models;
    const double lambda = 0.05;
    const SaeGradients g = LossGradients(model, ToBatch(rows), lambda);

    auto check_block = [&](std::vector<double>& params,
                           const std::vector<double>& grads, const char* name) {
      for (std::size_t p = 0; p < params.size(); ++p) {
        const double saved = params[p];
        params[p] = saved + kStep;
        const double up = OracleLoss(model, rows, lambda);
        params[p] = saved - kStep;
        const double down = OracleLoss(model, rows, lambda);
        params[p] = saved;
        const double fd = (up - down) / (2 * kStep);
        const double denom = std::max({std::abs(fd), std::abs(grads[p]), 1e-6});
        EXPECT_LT(std::abs(fd - grads[p]) / denom, 1e-4)
            << name << "[" << p << "] seed " << seed << " fd=" << fd
            << " analytic=" << grads[p];
      }
    };
    check_block(model.w_enc, g.w_enc, "W_enc");
    check_block(model.b_enc, g.b_enc, "b_enc");
    check_block(model.w_dec, g.w_dec, "W_dec");
    check_block(model.b_dec, g.b_dec, "b_dec");
  }
}

TEST(GradientTest, SparsityOnlyEncoderBiasGradient) {
  const SaeModel model = RandomModel(3, 6, 11);
  std::mt19937_64 rng(12);
  std::vector<std::vector<double>> rows;
  for (int n = 0; n < 8; ++n) rows.push_back(RandomVector(3, rng));
  const Batch batch = ToBatch(rows);
  const double lambda = 0.3;
  const SaeGradients with = LossGradients(model, batch, lambda);
  const SaeGradients without = LossGradients(model, batch, 0.0);
  for (std::size_t j = 0; j < 6; ++j) {
    double active = 0;
    for (const auto& z : rows) active += OracleEncode(model, z)[j] > 0 ? 1 : 0;
    const double expected = lambda * active / static_cast<double>(rows.size());
    EXPECT_NEAR(with.b_enc[j] - without.b_enc[j], expected, 1e-12);
  }
}

TEST(GradientTest, BitIdenticalAcrossWorkerCounts) {
  const SaeModel model = RandomModel(8, 32, 13);
  std::mt19937_64 rng(14);
  std::vector<std::vector<double>> rows;
  for (int n = 0; n < 100; ++n) rows.push_back(RandomVector(8, rng));
  const Batch batch = ToBatch(rows);
  const SaeGradients a = LossGradients(model, batch, 1e-3, 1);
  const SaeGradients b = LossGradients(model, batch, 1e-3, 4);
  EXPECT_EQ(a.w_enc, b.w_enc);
  EXPECT_EQ(a.b_enc, b.b_enc);
  EXPECT_EQ(a.w_dec, b.w_dec);
  EXPECT_EQ(a.b_dec, b.b_dec);
}

TEST(GradientTest, NonFiniteNamesBlock) {
  SaeModel model = RandomModel(3, 6, 15);
  const Batch batch = ToBatch({{1e200, 1e200, 1e200}});
  try {
    LossGradients(model, batch, 0.0);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("gradient in"), std::string::npos);
  }
}

TEST(GradientTest, SmallStepDoesNotIncreaseLoss) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SaeModel model = RandomModel(4, 8, seed + 50);
    std::mt19937_64 rng(seed);
    std::vector<std::vector<double>> rows;
    for (int n = 0; n < 6; ++n) rows.push_back(RandomVector(4, rng));
    const double lambda = 0.01;
    const double before = OracleLoss(model, rows, lambda);
    const SaeGradients g = LossGradients(model, ToBatch(rows), lambda);
    auto step = [](std::vector<double>& p, const std::vector<double>& gr) {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= 1e-4 * gr[i];
    };
    step(model.w_enc, g.w_enc);
    step(model.b_enc, g.b_enc);
    step(model.w_dec, g.w_dec);
    step(model.b_dec, g.b_dec);
    EXPECT_LE(OracleLoss(model, rows, lambda), before);
  }
}

TEST(GeometricMedianTest, SinglePoint) {
  const Batch points = ToBatch({{1.5, -2.0, 3.0}});
  EXPECT_EQ(GeometricMedian(points), (std::vector<double>{1.5, -2.0, 3.0}));
}

TEST(GeometricMedianTest, OneDimensionalMedian) {
  const double tol = 1e-7;
  const auto m = GeometricMedian(ToBatch({{0.0}, {1.0}, {10.0}}), tol);
  EXPECT_NEAR(m[0], 1.0, tol);
}

TEST(GeometricMedianTest, SquareCorners) {
  const double tol = 1e-7;
  const auto m =
      GeometricMedian(ToBatch({{0, 0}, {1, 0}, {0, 1}, {1, 1}}), tol);
  EXPECT_NEAR(m[0], 0.5, tol);
  EXPECT_NEAR(m[1], 0.5, tol);
}

TEST(GeometricMedianTest, NoNearbyPointHasLowerObjective) {
  std::mt19937_64 rng(3);
  std::vector<std::vector<double>> rows;
  for (int n = 0; n < 25; ++n) rows.push_back(RandomVector(3, rng));
  const auto m = GeometricMedian(ToBatch(rows), 1e-10, 10000);
  auto objective = [&](const std::vector<double>& x) {
    double s = 0;
    for (const auto& p : rows) {
      double d2 = 0;
      for (std::size_t k = 0; k < 3; ++k) d2 += (x[k] - p[k]) * (x[k] - p[k]);
      s += std::sqrt(d2);
    }
    return s;
  };
  const double best = objective(m);
  for (std::size_t k = 0; k < 3; ++k) {
    for (double delta : {-1e-3, 1e-3}) {
      auto x = m;
      x[k] += delta;
      EXPECT_GE(objective(x), best - 1e-12);
    }
  }
}

TEST(CheckpointTest, LayoutAndRoundTrip) {
  testing::TempDir dir;
  SaeModel model = RandomModel(3, 6, 21);
  // Make parameters f32-representable so read(write(m)) == m.
  for (auto* block : {&model.w_enc, &model.b_enc, &model.w_dec, &model.b_dec}) {
    for (double& v : *block) v = static_cast<float>(v);
  }
  const auto path = dir / "m.csae";
  SaveCheckpoint(model, path);
  EXPECT_EQ(std::filesystem::file_size(path),
            16u + 4u * (6 + 3 + 2 * 3 * 6) + 4u);
  const auto bytes = testing::ReadBytes(path);
  EXPECT_EQ(std::string(bytes.data(), 4), "CSAE");
  // W_enc column-major: element (i=2, j=1) sits at offset j*d + i.
  const std::size_t w_enc_offset = 16 + 4 * (6 + 3);
  float stored;
  std::memcpy(&stored, bytes.data() + w_enc_offset + 4 * (1 * 3 + 2), 4);
  EXPECT_EQ(stored, static_cast<float>(model.enc(2, 1)));
  // W_dec row-major: element (j=4, k=0).
  const std::size_t w_dec_offset = w_enc_offset + 4 * 18;
  std::memcpy(&stored, bytes.data() + w_dec_offset + 4 * (4 * 3 + 0), 4);
  EXPECT_EQ(stored, static_cast<float>(model.w_dec[12]));

  const SaeModel back = LoadCheckpoint(path);
  EXPECT_EQ(back, model);
  SaveCheckpoint(back, dir / "m2.csae");
  EXPECT_EQ(testing::ReadBytes(dir / "m2.csae"), bytes);
}

TEST(CheckpointTest, CorruptionDetected) {
  testing::TempDir dir;
  const SaeModel model = RandomModel(3, 6, 22);
  const auto path = dir / "m.csae";
  SaveCheckpoint(model, path);
  auto bytes = testing::ReadBytes(path);
  bytes[30] ^= 0x10;
  testing::WriteBytes(path, bytes);
  try {
    LoadCheckpoint(path);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.field(), "crc");
  }
}

TEST(InitializeTest, UnitDecoderRowsAndTiedEncoder) {
  const SaeModel model = SaeModel::Initialize(8, 4, 99);
  EXPECT_EQ(model.latent_dim, 32u);
  EXPECT_EQ(model.expansion_factor(), 4u);
  for (std::size_t j = 0; j < model.latent_dim; ++j) {
    double norm = 0;
    for (double v : model.decoder_row(j)) norm += v * v;
    EXPECT_NEAR(norm, 1.0, 1e-12);
    for (std::size_t i = 0; i < model.input_dim; ++i) {
      EXPECT_EQ(model.enc(i, j), model.decoder_row(j)[i]);
    }
  }
  EXPECT_EQ(SaeModel::Initialize(8, 4, 99), model);
}

}  // namespace
}  // namespace conceptscope
