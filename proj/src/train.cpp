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

#include "pge/train.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <numeric>

#include "pge/error.hpp"
#include "pge/rng.hpp"

namespace pge {

namespace {

std::atomic<std::uint64_t> g_steps{0};

// Linear probing only touches the head, so the backbone features are computed
// once and the head is trained as a softmax regression on them.
SgdSummary train_head_only(ModelState& state, const LabeledDataset& data, const SgdOptions& opt) {
    const Tensor features = backbone_features(state, full_batch(data).inputs);
    const std::size_t n = data.size(), f = features.dim(1);
    const auto& layout = state.layout();
    const ParamBlock& wblock = layout[layout.size() - 2];
    const ParamBlock& bblock = layout[layout.size() - 1];
    auto params = state.params();

    const std::size_t bs = std::min(opt.batch_size, n);
    const std::size_t per_epoch = (n + bs - 1) / bs;
    const std::size_t total = per_epoch * opt.epochs;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(opt.seed, "sgd"));

    SgdSummary summary;
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t m = std::min(bs, n - start);
            std::vector<double> rows(m * f);
            std::vector<std::size_t> labels(m);
            for (std::size_t k = 0; k < m; ++k) {
                const std::size_t i = order[start + k];
                std::copy_n(features.values().begin() + static_cast<std::ptrdiff_t>(i * f), f,
                            rows.begin() + static_cast<std::ptrdiff_t>(k * f));
                labels[k] = data.labels[i];
            }
            Tape tape;
            NodeId x = tape.input(Tensor({m, f}, std::move(rows)));
            NodeId w = tape.parameter(Tensor(wblock.shape, std::vector<double>(params.begin() + static_cast<std::ptrdiff_t>(wblock.offset),
                                                            params.begin() + static_cast<std::ptrdiff_t>(wblock.offset + wblock.size()))));
            NodeId b = tape.parameter(Tensor(bblock.shape, std::vector<double>(params.begin() + static_cast<std::ptrdiff_t>(bblock.offset),
                                                            params.begin() + static_cast<std::ptrdiff_t>(bblock.offset + bblock.size()))));
            NodeId loss;
            try {
                loss = tape.softmax_cross_entropy(tape.bias_add(tape.matmul(x, w), b), std::move(labels));
            } catch (const NumericError& e) {
                throw NumericError("training diverged at step " + std::to_string(summary.steps) + ": " + e.what(),
                                   summary.steps);
            }
            auto grads = backward(tape, loss);
            const double lr = opt.cosine ? cosine_lr(opt.base_lr, summary.steps, total) : opt.base_lr;
            for (std::size_t k = 0; k < wblock.size(); ++k) params[wblock.offset + k] -= lr * grads[0][k];
            for (std::size_t k = 0; k < bblock.size(); ++k) params[bblock.offset + k] -= lr * grads[1][k];
            summary.final_loss = tape.value(loss).item();
            ++summary.steps;
            g_steps.fetch_add(1, std::memory_order_relaxed);
        }
    }
    return summary;
}

}  // namespace

double cosine_lr(double base_lr, std::size_t step, std::size_t total) noexcept {
    if (total == 0) return base_lr;
    return 0.5 * base_lr *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

std::uint64_t optimizer_steps_taken() noexcept { return g_steps.load(std::memory_order_relaxed); }

SgdSummary train_sgd(ModelState& state, const LabeledDataset& data, const SgdOptions& opt) {
    if (state.spec().head.kind != HeadKind::Classifier) {
        throw InvalidArgument("train_sgd: model needs a classifier head");
    }
    if (state.spec().head.outputs != data.num_classes) {
        throw InvalidArgument("train_sgd: head has " + std::to_string(state.spec().head.outputs) +
                              " outputs but the data has " + std::to_string(data.num_classes) + " classes");
    }
    if (data.size() == 0) throw InvalidArgument("train_sgd: empty training set");
    if (opt.batch_size == 0) throw InvalidArgument("train_sgd: batch size must be positive");
    if (opt.epochs == 0) return {};
    if (opt.freeze_backbone) return train_head_only(state, data, opt);

    const std::size_t n = data.size();
    const std::size_t bs = std::min(opt.batch_size, n);
    const std::size_t per_epoch = (n + bs - 1) / bs;
    const std::size_t total = per_epoch * opt.epochs;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(opt.seed, "sgd"));
    auto params = state.params();

    SgdSummary summary;
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t m = std::min(bs, n - start);
            const Batch batch = gather(data, std::span<const std::size_t>(order).subspan(start, m));
            LossGradient lg;
            try {
                lg = loss_and_grad(state, batch, LossMode::SupervisedCrossEntropy, summary.steps);
            } catch (const NumericError& e) {
                throw NumericError(std::string("training diverged: ") + e.what(), summary.steps);
            }
            const double lr = opt.cosine ? cosine_lr(opt.base_lr, summary.steps, total) : opt.base_lr;
            for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr * lg.grad[k];
            summary.final_loss = lg.loss;
            ++summary.steps;
            g_steps.fetch_add(1, std::memory_order_relaxed);
        }
    }
    return summary;
}

std::vector<std::size_t> predict(const ModelState& state, const LabeledDataset& data) {
    const Tensor logits = head_outputs(state, full_batch(data).inputs);
    const std::size_t K = logits.dim(1);
    std::vector<std::size_t> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k) {
            if (logits[i * K + k] > logits[i * K + best]) best = k;
        }
        out[i] = best;
    }
    return out;
}

double accuracy(const ModelState& state, const LabeledDataset& data) {
    if (data.size() == 0) throw InvalidArgument("accuracy: empty dataset");
    const auto pred = predict(state, data);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace pge
