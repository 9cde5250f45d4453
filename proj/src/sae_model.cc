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
#include <string>

#include "conceptscope/binary_io.h"
#include "conceptscope/parallel.h"

namespace conceptscope {
namespace {

constexpr char kCheckpointMagic[4] = {'C', 'S', 'A', 'E'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::size_t kCheckpointHeaderSize = 16;

// Examples per gradient chunk. Fixed so the reduction tree does not depend on
// the worker count.
constexpr std::size_t kGradientChunk = 16;

void CheckInput(const SaeModel& model, std::size_t size) {
  if (size != model.input_dim) {
    throw DimensionError("input has " + std::to_string(size) +
                         " dims, model expects " +
                         std::to_string(model.input_dim));
  }
}

template <typename T>
double Dot(std::span<const double> a, std::span<const T> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

template <typename T>
void EncodeInto(const SaeModel& model, std::span<const T> z,
                std::span<double> pre) {
  for (std::size_t j = 0; j < model.latent_dim; ++j) {
    pre[j] = model.b_enc[j] + Dot(model.encoder_column(j), z);
  }
}

template <typename T>
SparseVector EncodeSparse(const SaeModel& model, std::span<const T> z) {
  CheckInput(model, z.size());
  std::vector<double> pre(model.latent_dim);
  EncodeInto(model, z, std::span<double>(pre));
  SparseVector f;
  f.dim = model.latent_dim;
  for (std::size_t j = 0; j < model.latent_dim; ++j) {
    if (pre[j] > 0.0) {
      f.indices.push_back(static_cast<ConceptId>(j));
      f.values.push_back(pre[j]);
    }
  }
  return f;
}

bool AllValuesFinite(const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// Accumulates the un-normalized gradient sum of examples [begin, end).
void AccumulateExamples(const SaeModel& model, const Batch& batch,
                        double lambda, std::size_t begin, std::size_t end,
                        SaeGradients& grads, BatchDiagnostics* diag,
                        double& rec_sum, double& sparsity_sum) {
  const std::size_t d = model.input_dim;
  const std::size_t dl = model.latent_dim;
  std::vector<double> pre(dl);
  std::vector<double> residual(d);
  std::vector<ConceptId> active;
  for (std::size_t n = begin; n < end; ++n) {
    const auto z = batch.row(n);
    EncodeInto(model, z, std::span<double>(pre));
    active.clear();
    for (std::size_t j = 0; j < dl; ++j) {
      if (pre[j] > 0.0) active.push_back(static_cast<ConceptId>(j));
    }
    // residual = SAE(z) - z
    for (std::size_t k = 0; k < d; ++k) residual[k] = model.b_dec[k] - z[k];
    double sparsity = 0.0;
    for (ConceptId j : active) {
      const double f = pre[j];
      sparsity += f;
      const auto row = model.decoder_row(j);
      for (std::size_t k = 0; k < d; ++k) residual[k] += f * row[k];
    }
    double rec = 0.0;
    for (std::size_t k = 0; k < d; ++k) rec += residual[k] * residual[k];
    rec_sum += rec;
    sparsity_sum += sparsity;

    for (std::size_t k = 0; k < d; ++k) grads.b_dec[k] += 2.0 * residual[k];
    for (ConceptId j : active) {
      const double f = pre[j];
      const auto row = model.decoder_row(j);
      double grad_f = lambda;
      double* gw_dec = grads.w_dec.data() + std::size_t{j} * d;
      for (std::size_t k = 0; k < d; ++k) {
        grad_f += 2.0 * residual[k] * row[k];
        gw_dec[k] += 2.0 * f * residual[k];
      }
      grads.b_enc[j] += grad_f;
      double* gw_enc = grads.w_enc.data() + std::size_t{j} * d;
      for (std::size_t i = 0; i < d; ++i) gw_enc[i] += grad_f * z[i];
    }
    if (diag != nullptr) {
      diag->reconstruction[n] = rec;
      diag->active[n] = active;
    }
  }
}

void CheckFinite(const SaeGradients& grads) {
  if (!AllValuesFinite(grads.w_enc)) throw NumericError("non-finite gradient in W_enc");
  if (!AllValuesFinite(grads.b_enc)) throw NumericError("non-finite gradient in b_enc");
  if (!AllValuesFinite(grads.w_dec)) throw NumericError("non-finite gradient in W_dec");
  if (!AllValuesFinite(grads.b_dec)) throw NumericError("non-finite gradient in b_dec");
}

}  // namespace

SaeModel SaeModel::Zeros(std::size_t input_dim, std::size_t latent_dim) {
  SaeModel model;
  model.input_dim = input_dim;
  model.latent_dim = latent_dim;
  model.w_enc.assign(input_dim * latent_dim, 0.0);
  model.b_enc.assign(latent_dim, 0.0);
  model.w_dec.assign(input_dim * latent_dim, 0.0);
  model.b_dec.assign(input_dim, 0.0);
  return model;
}

SaeModel SaeModel::Initialize(std::size_t input_dim, std::size_t expansion,
                              std::uint64_t seed) {
  if (input_dim == 0 || expansion == 0) {
    throw InvalidArgument("input_dim and expansion must be positive");
  }
  SaeModel model = Zeros(input_dim, input_dim * expansion);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t j = 0; j < model.latent_dim; ++j) {
    auto row = model.decoder_row(j);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : row) {
        v = normal(rng);
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& v : row) v /= norm;
  }
  model.w_enc = model.w_dec;  // latent-major W_enc equals W_dec rows
  return model;
}

void SaeModel::NormalizeDecoderRows() {
  for (std::size_t j = 0; j < latent_dim; ++j) {
    auto row = decoder_row(j);
    double norm = 0.0;
    for (double v : row) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& v : row) v /= norm;
    }
  }
}

bool SaeModel::AllFinite() const {
  return AllValuesFinite(w_enc) && AllValuesFinite(b_enc) &&
         AllValuesFinite(w_dec) && AllValuesFinite(b_dec);
}

SaeGradients SaeGradients::ZerosLike(const SaeModel& model) {
  SaeGradients g;
  g.w_enc.assign(model.w_enc.size(), 0.0);
  g.b_enc.assign(model.b_enc.size(), 0.0);
  g.w_dec.assign(model.w_dec.size(), 0.0);
  g.b_dec.assign(model.b_dec.size(), 0.0);
  return g;
}

void SaeGradients::Add(const SaeGradients& other) {
  auto add = [](std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  };
  add(w_enc, other.w_enc);
  add(b_enc, other.b_enc);
  add(w_dec, other.w_dec);
  add(b_dec, other.b_dec);
}

void SaeGradients::Scale(double factor) {
  for (auto* block : {&w_enc, &b_enc, &w_dec, &b_dec}) {
    for (double& v : *block) v *= factor;
  }
}

void Batch::Append(std::span<const float> row) {
  if (row.size() != dim_) throw DimensionError("batch row size mismatch");
  values_.insert(values_.end(), row.begin(), row.end());
}

void Batch::Append(std::span<const double> row) {
  if (row.size() != dim_) throw DimensionError("batch row size mismatch");
  values_.insert(values_.end(), row.begin(), row.end());
}

SparseVector Encode(const SaeModel& model, std::span<const double> z) {
  return EncodeSparse(model, z);
}

SparseVector Encode(const SaeModel& model, std::span<const float> z) {
  return EncodeSparse(model, z);
}

void EncodeDense(const SaeModel& model, std::span<const float> z,
                 std::span<double> out) {
  CheckInput(model, z.size());
  if (out.size() != model.latent_dim) {
    throw DimensionError("output buffer does not match latent dim");
  }
  EncodeInto(model, z, out);
  for (double& v : out) v = v > 0.0 ? v : 0.0;
}

std::vector<double> Decode(const SaeModel& model, const SparseVector& f) {
  if (f.dim != model.latent_dim) {
    throw DimensionError("latent vector has " + std::to_string(f.dim) +
                         " dims, model expects " +
                         std::to_string(model.latent_dim));
  }
  std::vector<double> out = model.b_dec;
  for (std::size_t k = 0; k < f.nnz(); ++k) {
    const auto row = model.decoder_row(f.indices[k]);
    const double value = f.values[k];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += value * row[i];
  }
  return out;
}

SaeLossBreakdown Loss(const SaeModel& model, std::span<const double> z,
                      double lambda) {
  if (lambda < 0.0) throw InvalidArgument("lambda must be non-negative");
  const SparseVector f = Encode(model, z);
  const std::vector<double> recon = Decode(model, f);
  SaeLossBreakdown loss;
  loss.lambda = lambda;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double diff = z[i] - recon[i];
    loss.reconstruction += diff * diff;
  }
  for (double v : f.values) loss.sparsity += v;
  loss.total = loss.reconstruction + lambda * loss.sparsity;
  return loss;
}

SaeGradients LossGradients(const SaeModel& model, const Batch& batch,
                           double lambda, std::size_t workers,
                           BatchDiagnostics* diagnostics) {
  if (batch.empty()) throw InvalidArgument("gradient batch is empty");
  CheckInput(model, batch.dim());
  const std::size_t n = batch.size();
  const std::size_t chunks = (n + kGradientChunk - 1) / kGradientChunk;

  if (diagnostics != nullptr) {
    diagnostics->reconstruction.assign(n, 0.0);
    diagnostics->active.assign(n, {});
  }
  std::vector<SaeGradients> partial(chunks);
  std::vector<double> rec(chunks, 0.0);
  std::vector<double> sparsity(chunks, 0.0);
  ParallelFor(chunks, workers, [&](std::size_t c) {
    partial[c] = SaeGradients::ZerosLike(model);
    const std::size_t begin = c * kGradientChunk;
    const std::size_t end = std::min(n, begin + kGradientChunk);
    AccumulateExamples(model, batch, lambda, begin, end, partial[c],
                       diagnostics, rec[c], sparsity[c]);
  });

  // Pairwise tree: stride 1, 2, 4, ...
  for (std::size_t stride = 1; stride < chunks; stride *= 2) {
    for (std::size_t c = 0; c + stride < chunks; c += 2 * stride) {
      partial[c].Add(partial[c + stride]);
      rec[c] += rec[c + stride];
      sparsity[c] += sparsity[c + stride];
    }
  }
  SaeGradients grads = std::move(partial[0]);
  const double inv_n = 1.0 / static_cast<double>(n);
  grads.Scale(inv_n);
  CheckFinite(grads);
  if (diagnostics != nullptr) {
    auto& loss = diagnostics->mean_loss;
    loss.lambda = lambda;
    loss.reconstruction = rec[0] * inv_n;
    loss.sparsity = sparsity[0] * inv_n;
    loss.total = loss.reconstruction + lambda * loss.sparsity;
  }
  return grads;
}

std::vector<double> GeometricMedian(const Batch& points, double tol,
                                    std::size_t max_iter) {
  if (points.empty()) throw InvalidArgument("geometric median of no points");
  const std::size_t d = points.dim();
  const std::size_t n = points.size();
  std::vector<double> x(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = points.row(i);
    for (std::size_t k = 0; k < d; ++k) x[k] += p[k];
  }
  for (double& v : x) v /= static_cast<double>(n);
  if (n == 1) return x;

  std::vector<double> next(d);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    // Move off any data point deterministically before weighting.
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = points.row(i);
      double dist2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        dist2 += (x[k] - p[k]) * (x[k] - p[k]);
      }
      if (std::sqrt(dist2) < 1e-12) {
        x[0] += 1e-9;
        break;
      }
    }
    std::fill(next.begin(), next.end(), 0.0);
    double weight_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = points.row(i);
      double dist2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        dist2 += (x[k] - p[k]) * (x[k] - p[k]);
      }
      const double w = 1.0 / std::max(std::sqrt(dist2), 1e-12);
      weight_sum += w;
      for (std::size_t k = 0; k < d; ++k) next[k] += w * p[k];
    }
    double step2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      next[k] /= weight_sum;
      step2 += (next[k] - x[k]) * (next[k] - x[k]);
    }
    x.swap(next);
    if (std::sqrt(step2) < tol) break;
  }
  return x;
}

std::vector<char> SerializeCheckpoint(const SaeModel& model) {
  std::vector<char> bytes;
  bytes.reserve(kCheckpointHeaderSize +
                4 * (model.b_enc.size() + model.b_dec.size() +
                     model.w_enc.size() + model.w_dec.size()) +
                4);
  auto append = [&bytes](auto value) {
    const auto encoded = binary::EncodeLe(value);
    bytes.insert(bytes.end(), encoded.begin(), encoded.end());
  };
  bytes.insert(bytes.end(), kCheckpointMagic, kCheckpointMagic + 4);
  append(kCheckpointVersion);
  append(static_cast<std::uint32_t>(model.input_dim));
  append(static_cast<std::uint32_t>(model.latent_dim));
  for (const auto* block : {&model.b_enc, &model.b_dec, &model.w_enc,
                            &model.w_dec}) {
    for (double v : *block) append(static_cast<float>(v));
  }
  const std::uint32_t crc = binary::Crc32(std::span<const char>(
      bytes.data() + kCheckpointHeaderSize,
      bytes.size() - kCheckpointHeaderSize));
  append(crc);
  return bytes;
}

SaeModel DeserializeCheckpoint(std::span<const char> bytes) {
  if (bytes.size() < kCheckpointHeaderSize + 4) {
    throw FormatError("header", "checkpoint shorter than header");
  }
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("magic", "bad checkpoint magic, expected CSAE");
  }
  const auto version = binary::DecodeLe<std::uint32_t>(bytes.data() + 4);
  if (version != kCheckpointVersion) {
    throw FormatError("version",
                      "unsupported checkpoint version " + std::to_string(version));
  }
  const auto d = binary::DecodeLe<std::uint32_t>(bytes.data() + 8);
  const auto dl = binary::DecodeLe<std::uint32_t>(bytes.data() + 12);
  const std::uint64_t floats =
      std::uint64_t{dl} + d + 2 * std::uint64_t{d} * dl;
  const std::uint64_t expected = kCheckpointHeaderSize + 4 * floats + 4;
  if (bytes.size() != expected) {
    throw FormatError("length", "checkpoint is " + std::to_string(bytes.size()) +
                                    " bytes, expected " +
                                    std::to_string(expected));
  }
  const std::span<const char> payload(bytes.data() + kCheckpointHeaderSize,
                                      4 * floats);
  const auto stored_crc =
      binary::DecodeLe<std::uint32_t>(bytes.data() + expected - 4);
  if (binary::Crc32(payload) != stored_crc) {
    throw FormatError("crc", "checkpoint CRC-32 mismatch");
  }
  SaeModel model = SaeModel::Zeros(d, dl);
  const char* cursor = payload.data();
  for (auto* block : {&model.b_enc, &model.b_dec, &model.w_enc,
                      &model.w_dec}) {
    for (double& v : *block) {
      v = binary::DecodeLe<float>(cursor);
      cursor += 4;
    }
  }
  return model;
}

void SaveCheckpoint(const SaeModel& model, const std::filesystem::path& path) {
  const auto bytes = SerializeCheckpoint(model);
  binary::Writer out(path);
  out.Write(bytes.data(), bytes.size());
  out.Flush();
}

SaeModel LoadCheckpoint(const std::filesystem::path& path) {
  binary::Reader in(path);
  std::vector<char> bytes(in.file_size());
  in.Read(bytes.data(), bytes.size());
  return DeserializeCheckpoint(bytes);
}

std::uint32_t ModelChecksum(const SaeModel& model) {
  const auto bytes = SerializeCheckpoint(model);
  return binary::DecodeLe<std::uint32_t>(bytes.data() + bytes.size() - 4);
}

}  // namespace conceptscope
