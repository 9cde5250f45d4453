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

#ifndef CONCEPTSCOPE_SAE_TRAIN_H_
#define CONCEPTSCOPE_SAE_TRAIN_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conceptscope/sae_model.h"

namespace conceptscope {

struct TrainConfig {
  double lambda = 8e-5;
  double learning_rate = 4e-4;
  std::size_t warmup_steps = 500;
  std::size_t batch_size = 64;
  std::size_t epochs = 5;
  std::size_t expansion_factor = 32;
  // Consecutive training examples without activation before a latent is
  // considered dead.
  std::size_t dead_window = 10000;
  std::uint64_t seed = 0;

  // Streaming shuffle: seeded permutation inside windows of this many tokens.
  std::size_t shuffle_window = 4096;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Workers for gradient chunks; results do not depend on this value.
  std::size_t workers = 1;

  // Throws InvalidArgument on non-positive fields.
  void Validate() const;
  std::string ToJson() const;
  static TrainConfig FromJson(const std::string& text);
};

struct EpochStats {
  SaeLossBreakdown mean_loss;
  std::uint64_t examples = 0;
};

struct ResampleEvent {
  std::uint64_t step = 0;
  std::vector<ConceptId> neurons;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::vector<ResampleEvent> resample_events;
  // Mean number of non-zero latents per example during the last epoch.
  double final_sparsity = 0.0;
  // Mean reconstruction error of the first batch, after decoder-bias init and
  // before any update.
  double initial_reconstruction = 0.0;
  std::uint64_t steps = 0;
  double wall_seconds = 0.0;

  std::string ToJson(bool include_timing) const;
};

// First and second moment estimates, shaped like the model parameters.
struct AdamState {
  SaeGradients first;
  SaeGradients second;

  static AdamState ZerosLike(const SaeModel& model);
  // Clears the moments of latent `j` (encoder column, encoder bias, decoder
  // row).
  void ResetLatent(const SaeModel& model, ConceptId j);
};

// lr * s / warmup for s <= warmup, lr afterwards. `step_index` starts at 1.
double WarmupLearningRate(std::uint64_t step_index, const TrainConfig& config);

// One Adam update with bias correction and warmup-scaled learning rate,
// followed by decoder-row renormalization. Throws NumericError if the update
// produces non-finite parameters; `params` is left untouched in that case.
void AdamStep(SaeModel& params, const SaeGradients& grads, AdamState& state,
              std::uint64_t step_index, const TrainConfig& config);

// For each dead latent, in order: decoder row <- r / ||r||, encoder column <-
// 0.2 * r / ||r||, encoder bias <- 0, where r cycles through `residuals`.
// Zero-norm residuals are skipped. Every other parameter is untouched.
SaeModel ResampleDeadNeurons(SaeModel model, std::span<const ConceptId> dead_ids,
                             const Batch& residuals);

// Counts, per latent, the run of consecutive examples with zero activation.
class DeadNeuronTracker {
 public:
  DeadNeuronTracker(std::size_t latent_dim, std::size_t window);

  // One training example; `active` lists latents with f_j > 0.
  void Observe(std::span<const ConceptId> active);
  // Latents whose zero run has reached the window, ascending.
  std::vector<ConceptId> Dead() const;
  void Reset(ConceptId latent) { since_active_[latent] = 0; }
  std::uint64_t since_active(ConceptId latent) const {
    return since_active_[latent];
  }

 private:
  std::size_t window_;
  std::vector<std::uint64_t> since_active_;
};

struct TrainResult {
  SaeModel model;
  TrainReport report;
};

// Raised when the loss or parameters go non-finite. Carries the most recent
// snapshot that was still finite.
class TrainingDivergedError : public NumericError {
 public:
  TrainingDivergedError(const std::string& message, SaeModel last_good,
                        std::uint64_t step)
      : NumericError(message), last_good_(std::move(last_good)), step_(step) {}
  const SaeModel& last_good() const { return last_good_; }
  std::uint64_t step() const { return step_; }

 private:
  SaeModel last_good_;
  std::uint64_t step_;
};

// Called after every optimizer step with (step, batch diagnostics).
using TrainObserver =
    std::function<void(std::uint64_t, const BatchDiagnostics&)>;

// Streams every token of every image in the archive as a training example.
TrainResult Train(const std::filesystem::path& archive,
                  const TrainConfig& config,
                  const TrainObserver& observer = nullptr);

}  // namespace conceptscope

#endif  // CONCEPTSCOPE_SAE_TRAIN_H_
