/*
 * Copyright 2026 The pgekit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Plain minibatch SGD on softmax cross-entropy (no momentum, no weight decay).

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pge/dataset.hpp"
#include "pge/model.hpp"

namespace pge {

struct SgdOptions {
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    double base_lr = 0.1;
    /// Cosine-anneal the step size from base_lr towards 0 over all steps.
    bool cosine = true;
    /// Update only the head partition (linear probing).
    bool freeze_backbone = false;
    /// Minibatch shuffling seed.
    std::uint64_t seed = 0;
};

struct SgdSummary {
    std::size_t steps = 0;
    double final_loss = 0.0;
};

/// Trains `state` (classifier head) in place on `data`. Throws NumericError on
/// a non-finite loss, with the step index attached.
SgdSummary train_sgd(ModelState& state, const LabeledDataset& data, const SgdOptions& options);

/// Learning rate at `step` of `total` under cosine annealing.
double cosine_lr(double base_lr, std::size_t step, std::size_t total) noexcept;

/// Optimizer steps taken by this process so far, across all threads.
std::uint64_t optimizer_steps_taken() noexcept;

std::vector<std::size_t> predict(const ModelState& state, const LabeledDataset& data);

/// Fraction of rows whose argmax logit equals the label.
double accuracy(const ModelState& state, const LabeledDataset& data);

}  // namespace pge
