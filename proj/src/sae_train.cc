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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "conceptscope/embedding_io.h"
#include "json.hpp"

namespace conceptscope {
namespace {

using nlohmann::json;

// Snapshot cadence for the last-good model kept in case of divergence.
constexpr std::uint64_t kSnapshotInterval = 100;

// Yields the archive's tokens through a seeded permutation applied inside
// consecutive windows of roughly `window` tokens.
class ShuffledTokenStream {
 public:
  ShuffledTokenStream(ArchiveReader& reader, std::size_t window,
                      std::mt19937_64& rng)
      : reader_(reader), window_(window), rng_(rng),
        dim_(reader.header().dim) {}

  // Appends up to `count` tokens to `batch`; returns how many were added.
  std::size_t Fill(Batch& batch, std::size_t count) {
    std::size_t added = 0;
    while (added < count) {
      if (pos_ == order_.size() && !Refill()) break;
      const std::uint32_t t = order_[pos_++];
      batch.Append(std::span<const float>(buffer_.data() + t * dim_, dim_));
      ++added;
    }
    return added;
  }

  void Restart() {
    reader_.Rewind();
    buffer_.clear();
    order_.clear();
    pos_ = 0;
  }

 private:
  bool Refill() {
    buffer_.clear();
    while (buffer_.size() / dim_ < window_ && reader_.Next(record_)) {
      buffer_.insert(buffer_.end(), record_.tokens.begin(),
                     record_.tokens.end());
    }
    order_.resize(buffer_.size() / dim_);
    std::iota(order_.begin(), order_.end(), 0u);
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
    return !order_.empty();
  }

  ArchiveReader& reader_;
  std::size_t window_;
  std::mt19937_64& rng_;
  std::size_t dim_;
  EmbeddingRecord record_;
  std::vector<float> buffer_;
  std::vector<std::uint32_t> order_;
  std::size_t pos_ = 0;
};

bool Finite(const SaeLossBreakdown& loss) {
  return std::isfinite(loss.reconstruction) && std::isfinite(loss.sparsity) &&
         std::isfinite(loss.total);
}

// Residuals z - SAE(z) of the batch, highest reconstruction error first.
Batch HighResidualInputs(const SaeModel& model, const Batch& batch,
                         const BatchDiagnostics& diag) {
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return diag.reconstruction[a] > diag.reconstruction[b];
  });
  Batch residuals(batch.dim());
  std::vector<double> r(batch.dim());
  for (std::size_t n : order) {
    if (diag.reconstruction[n] <= 0.0) break;
    const auto z = batch.row(n);
    const auto recon = Decode(model, Encode(model, z));
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = z[k] - recon[k];
    residuals.Append(std::span<const double>(r));
  }
  return residuals;
}

void AddScaled(SaeLossBreakdown& acc, const SaeLossBreakdown& loss,
               double weight) {
  acc.reconstruction += weight * loss.reconstruction;
  acc.sparsity += weight * loss.sparsity;
  acc.total += weight * loss.total;
  acc.lambda = loss.lambda;
}

}  // namespace

void TrainConfig::Validate() const {
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be > 0");
  if (warmup_steps == 0) throw InvalidArgument("warmup steps must be > 0");
  if (batch_size == 0) throw InvalidArgument("batch size must be > 0");
  if (expansion_factor == 0) throw InvalidArgument("expansion must be > 0");
  if (dead_window == 0) throw InvalidArgument("dead window must be > 0");
  if (shuffle_window == 0) throw InvalidArgument("shuffle window must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw InvalidArgument("Adam epsilon must be > 0");
}

std::string TrainConfig::ToJson() const {
  json doc = {{"lambda", lambda},
              {"learning_rate", learning_rate},
              {"warmup_steps", warmup_steps},
              {"batch_size", batch_size},
              {"epochs", epochs},
              {"expansion_factor", expansion_factor},
              {"dead_window", dead_window},
              {"seed", seed},
              {"shuffle_window", shuffle_window},
              {"beta1", beta1},
              {"beta2", beta2},
              {"epsilon", epsilon}};
  return doc.dump(2);
}

TrainConfig TrainConfig::FromJson(const std::string& text) {
  TrainConfig config;
  try {
    const json doc = json::parse(text);
    config.lambda = doc.value("lambda", config.lambda);
    config.learning_rate = doc.value("learning_rate", config.learning_rate);
    config.warmup_steps = doc.value("warmup_steps", config.warmup_steps);
    config.batch_size = doc.value("batch_size", config.batch_size);
    config.epochs = doc.value("epochs", config.epochs);
    config.expansion_factor =
        doc.value("expansion_factor", config.expansion_factor);
    config.dead_window = doc.value("dead_window", config.dead_window);
    config.seed = doc.value("seed", config.seed);
    config.shuffle_window = doc.value("shuffle_window", config.shuffle_window);
    config.beta1 = doc.value("beta1", config.beta1);
    config.beta2 = doc.value("beta2", config.beta2);
    config.epsilon = doc.value("epsilon", config.epsilon);
  } catch (const json::exception& e) {
    throw FormatError("train_config", e.what());
  }
  return config;
}

std::string TrainReport::ToJson(bool include_timing) const {
  json doc;
  doc["epochs"] = json::array();
  for (const auto& epoch : epochs) {
    doc["epochs"].push_back({{"reconstruction", epoch.mean_loss.reconstruction},
                             {"sparsity", epoch.mean_loss.sparsity},
                             {"lambda", epoch.mean_loss.lambda},
                             {"total", epoch.mean_loss.total},
                             {"examples", epoch.examples}});
  }
  doc["resample_events"] = json::array();
  for (const auto& event : resample_events) {
    doc["resample_events"].push_back(
        {{"step", event.step}, {"neurons", event.neurons}});
  }
  doc["final_sparsity"] = final_sparsity;
  doc["initial_reconstruction"] = initial_reconstruction;
  doc["steps"] = steps;
  if (include_timing) doc["wall_seconds"] = wall_seconds;
  return doc.dump(2);
}

AdamState AdamState::ZerosLike(const SaeModel& model) {
  return {SaeGradients::ZerosLike(model), SaeGradients::ZerosLike(model)};
}

void AdamState::ResetLatent(const SaeModel& model, ConceptId j) {
  const std::size_t d = model.input_dim;
  for (SaeGradients* moments : {&first, &second}) {
    std::fill_n(moments->w_enc.begin() + std::size_t{j} * d, d, 0.0);
    std::fill_n(moments->w_dec.begin() + std::size_t{j} * d, d, 0.0);
    moments->b_enc[j] = 0.0;
  }
}

double WarmupLearningRate(std::uint64_t step_index, const TrainConfig& config) {
  if (step_index >= config.warmup_steps) return config.learning_rate;
  return config.learning_rate * static_cast<double>(step_index) /
         static_cast<double>(config.warmup_steps);
}

void AdamStep(SaeModel& params, const SaeGradients& grads, AdamState& state,
              std::uint64_t step_index, const TrainConfig& config) {
  if (step_index == 0) throw InvalidArgument("Adam step index starts at 1");
  if (grads.w_enc.size() != params.w_enc.size() ||
      grads.b_enc.size() != params.b_enc.size() ||
      grads.w_dec.size() != params.w_dec.size() ||
      grads.b_dec.size() != params.b_dec.size()) {
    throw DimensionError("gradient shapes do not match the model");
  }
  const double lr = WarmupLearningRate(step_index, config);
  const double t = static_cast<double>(step_index);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);

  SaeModel updated = params;
  AdamState next = state;
  auto update = [&](std::vector<double>& p, const std::vector<double>& g,
                    std::vector<double>& m, std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  };
  update(updated.w_enc, grads.w_enc, next.first.w_enc, next.second.w_enc);
  update(updated.b_enc, grads.b_enc, next.first.b_enc, next.second.b_enc);
  update(updated.w_dec, grads.w_dec, next.first.w_dec, next.second.w_dec);
  update(updated.b_dec, grads.b_dec, next.first.b_dec, next.second.b_dec);
  updated.NormalizeDecoderRows();
  if (!updated.AllFinite()) {
    throw NumericError("Adam update produced non-finite parameters at step " +
                       std::to_string(step_index));
  }
  params = std::move(updated);
  state = std::move(next);
}

SaeModel ResampleDeadNeurons(SaeModel model,
                             std::span<const ConceptId> dead_ids,
                             const Batch& residuals) {
  if (dead_ids.empty() || residuals.empty()) return model;
  if (residuals.dim() != model.input_dim) {
    throw DimensionError("residual dimension does not match the model");
  }
  std::size_t cursor = 0;
  for (ConceptId j : dead_ids) {
    if (j >= model.latent_dim) {
      throw InvalidArgument("dead latent id out of range");
    }
    // Cycle through residuals, skipping zero vectors.
    double norm = 0.0;
    std::span<const double> r;
    for (std::size_t tries = 0; tries < residuals.size(); ++tries) {
      r = residuals.row(cursor++ % residuals.size());
      norm = 0.0;
      for (double v : r) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > 0.0) break;
    }
    if (norm == 0.0) return model;
    auto dec = model.decoder_row(j);
    auto enc = model.encoder_column(j);
    for (std::size_t k = 0; k < model.input_dim; ++k) {
      dec[k] = r[k] / norm;
      enc[k] = 0.2 * r[k] / norm;
    }
    model.b_enc[j] = 0.0;
  }
  return model;
}

DeadNeuronTracker::DeadNeuronTracker(std::size_t latent_dim, std::size_t window)
    : window_(window), since_active_(latent_dim, 0) {}

void DeadNeuronTracker::Observe(std::span<const ConceptId> active) {
  for (auto& count : since_active_) ++count;
  for (ConceptId j : active) since_active_[j] = 0;
}

std::vector<ConceptId> DeadNeuronTracker::Dead() const {
  std::vector<ConceptId> dead;
  for (std::size_t j = 0; j < since_active_.size(); ++j) {
    if (since_active_[j] >= window_) dead.push_back(static_cast<ConceptId>(j));
  }
  return dead;
}

TrainResult Train(const std::filesystem::path& archive,
                  const TrainConfig& config, const TrainObserver& observer) {
  config.Validate();
  const auto start_time = std::chrono::steady_clock::now();
  ArchiveReader reader(archive);
  const ArchiveHeader& header = reader.header();
  const std::uint64_t total_tokens = header.record_count * header.num_tokens;
  if (total_tokens == 0) {
    throw InvalidArgument("training archive " + archive.string() +
                          " holds no tokens");
  }
  const std::uint64_t steps_per_epoch =
      (total_tokens + config.batch_size - 1) / config.batch_size;
  if (config.epochs > 0 &&
      config.warmup_steps > steps_per_epoch * config.epochs) {
    throw InvalidArgument(
        "warmup steps (" + std::to_string(config.warmup_steps) +
        ") exceed total training steps (" +
        std::to_string(steps_per_epoch * config.epochs) + ")");
  }

  TrainResult result;
  SaeModel& model = result.model;
  TrainReport& report = result.report;
  model = SaeModel::Initialize(header.dim, config.expansion_factor, config.seed);
  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  ShuffledTokenStream stream(reader, config.shuffle_window, shuffle_rng);

  Batch batch(header.dim);
  stream.Fill(batch, config.batch_size);
  model.b_dec = GeometricMedian(batch);
  {
    double rec = 0.0;
    for (std::size_t n = 0; n < batch.size(); ++n) {
      rec += Loss(model, batch.row(n), config.lambda).reconstruction;
    }
    report.initial_reconstruction = rec / static_cast<double>(batch.size());
  }

  AdamState adam = AdamState::ZerosLike(model);
  DeadNeuronTracker tracker(model.latent_dim, config.dead_window);
  SaeModel last_good = model;
  BatchDiagnostics diag;
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (epoch > 0) {
      stream.Restart();
      batch.Clear();
      stream.Fill(batch, config.batch_size);
    }
    EpochStats stats;
    double nnz_sum = 0.0;
    while (!batch.empty()) {
      SaeGradients grads;
      try {
        grads = LossGradients(model, batch, config.lambda, config.workers, &diag);
      } catch (const NumericError& e) {
        throw TrainingDivergedError(e.what(), last_good, step);
      }
      if (!Finite(diag.mean_loss)) {
        throw TrainingDivergedError("non-finite loss at step " +
                                        std::to_string(step + 1),
                                    last_good, step);
      }
      ++step;
      try {
        AdamStep(model, grads, adam, step, config);
      } catch (const NumericError& e) {
        throw TrainingDivergedError(e.what(), last_good, step);
      }

      const auto n = static_cast<double>(batch.size());
      AddScaled(stats.mean_loss, diag.mean_loss, n);
      stats.examples += batch.size();
      for (const auto& active : diag.active) {
        tracker.Observe(active);
        nnz_sum += static_cast<double>(active.size());
      }

      const std::vector<ConceptId> dead = tracker.Dead();
      if (!dead.empty()) {
        const Batch residuals = HighResidualInputs(model, batch, diag);
        if (!residuals.empty()) {
          model = ResampleDeadNeurons(std::move(model), dead, residuals);
          for (ConceptId j : dead) {
            adam.ResetLatent(model, j);
            tracker.Reset(j);
          }
          report.resample_events.push_back({step, dead});
        }
      }
      if (observer) observer(step, diag);
      if (step % kSnapshotInterval == 0) last_good = model;

      batch.Clear();
      stream.Fill(batch, config.batch_size);
    }
    if (stats.examples > 0) {
      const double inv = 1.0 / static_cast<double>(stats.examples);
      stats.mean_loss.reconstruction *= inv;
      stats.mean_loss.sparsity *= inv;
      stats.mean_loss.total *= inv;
      report.final_sparsity = nnz_sum * inv;
    }
    report.epochs.push_back(stats);
  }
  report.steps = step;
  report.wall_seconds = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start_time)
                            .count();
  return result;
}

}  // namespace conceptscope
