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

#ifndef CONCEPTSCOPE_SAE_MODEL_H_
#define CONCEPTSCOPE_SAE_MODEL_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "conceptscope/common.h"

namespace conceptscope {

// Single-hidden-layer sparse autoencoder
//   f(z)   = ReLU(W_enc^T z + b_enc)
//   SAE(z) = W_dec^T f(z) + b_dec
// with W_enc in R^{d x d'} and W_dec in R^{d' x d}. Each row of W_dec is a
// concept atom.
//
// Parameters are held in double precision; checkpoints store them as f32.
// W_enc is stored latent-major (column j of W_enc is contiguous), which is
// also the column-major order of the checkpoint file.
struct SaeModel {
  std::size_t input_dim = 0;   // d
  std::size_t latent_dim = 0;  // d'
  std::vector<double> w_enc;   // d' x d, latent-major
  std::vector<double> b_enc;   // d'
  std::vector<double> w_dec;   // d' x d, row-major
  std::vector<double> b_dec;   // d

  static SaeModel Zeros(std::size_t input_dim, std::size_t latent_dim);
  // Decoder rows uniform on the unit sphere, W_enc = W_dec^T, zero biases.
  static SaeModel Initialize(std::size_t input_dim, std::size_t expansion,
                             std::uint64_t seed);

  std::size_t expansion_factor() const {
    return input_dim == 0 ? 0 : latent_dim / input_dim;
  }

  // W_enc[i][j]: input coordinate i, latent j.
  double& enc(std::size_t i, std::size_t j) { return w_enc[j * input_dim + i]; }
  double enc(std::size_t i, std::size_t j) const {
    return w_enc[j * input_dim + i];
  }
  std::span<const double> encoder_column(std::size_t j) const {
    return {w_enc.data() + j * input_dim, input_dim};
  }
  std::span<double> encoder_column(std::size_t j) {
    return {w_enc.data() + j * input_dim, input_dim};
  }
  std::span<const double> decoder_row(std::size_t j) const {
    return {w_dec.data() + j * input_dim, input_dim};
  }
  std::span<double> decoder_row(std::size_t j) {
    return {w_dec.data() + j * input_dim, input_dim};
  }

  void NormalizeDecoderRows();
  bool AllFinite() const;

  bool operator==(const SaeModel&) const = default;
};

struct SaeLossBreakdown {
  double reconstruction = 0.0;
  double sparsity = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

// Same shapes and layouts as the corresponding SaeModel members.
struct SaeGradients {
  std::vector<double> w_enc;
  std::vector<double> b_enc;
  std::vector<double> w_dec;
  std::vector<double> b_dec;

  static SaeGradients ZerosLike(const SaeModel& model);
  void Add(const SaeGradients& other);
  void Scale(double factor);
};

// Rows of equal length stored contiguously.
class Batch {
 public:
  explicit Batch(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return dim_ == 0 ? 0 : values_.size() / dim_; }
  bool empty() const { return values_.empty(); }
  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * dim_, dim_};
  }
  std::span<double> row(std::size_t i) {
    return {values_.data() + i * dim_, dim_};
  }

  void Append(std::span<const float> row);
  void Append(std::span<const double> row);
  void Clear() { values_.clear(); }

 private:
  std::size_t dim_;
  std::vector<double> values_;
};

SparseVector Encode(const SaeModel& model, std::span<const double> z);
SparseVector Encode(const SaeModel& model, std::span<const float> z);
// Dense f(z) written into `out` (size d'). Hot path for activation passes.
void EncodeDense(const SaeModel& model, std::span<const float> z,
                 std::span<double> out);

std::vector<double> Decode(const SaeModel& model, const SparseVector& f);

SaeLossBreakdown Loss(const SaeModel& model, std::span<const double> z,
                      double lambda);

// Per-example side outputs of a backward pass, used by the trainer.
struct BatchDiagnostics {
  SaeLossBreakdown mean_loss;
  std::vector<double> reconstruction;             // per example
  std::vector<std::vector<ConceptId>> active;     // per example, f_j > 0
};

// Mean-over-batch gradients of ||z - SAE(z)||^2 + lambda * ||f(z)||_1.
// The reduction is a fixed pairwise tree over fixed-size chunks, so the
// result is bit-identical for any worker count. Throws NumericError naming
// the parameter block on non-finite values.
SaeGradients LossGradients(const SaeModel& model, const Batch& batch,
                           double lambda, std::size_t workers = 1,
                           BatchDiagnostics* diagnostics = nullptr);

// Weiszfeld iteration for argmin_x sum_i ||x - p_i||_2, starting from the
// coordinate mean. Stops when the step norm drops below `tol`.
std::vector<double> GeometricMedian(const Batch& points, double tol = 1e-7,
                                    std::size_t max_iter = 1000);

// .csae checkpoint:
//   magic "CSAE", version u32 = 1, d u32, d' u32,
//   b_enc, b_dec, W_enc (column-major), W_dec (row-major) as f32 LE,
//   CRC-32 (u32) of the float payload.
void SaveCheckpoint(const SaeModel& model, const std::filesystem::path& path);
SaeModel LoadCheckpoint(const std::filesystem::path& path);
std::vector<char> SerializeCheckpoint(const SaeModel& model);
SaeModel DeserializeCheckpoint(std::span<const char> bytes);
// CRC-32 of the checkpoint payload; identifies a model in downstream files.
std::uint32_t ModelChecksum(const SaeModel& model);

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_SAE_MODEL_H_
