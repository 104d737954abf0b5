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

// Comparison transferability metrics. Unlike the gradient expectation, all of
// them need a source model trained on the source data first; features and
// pseudo-labels come from that model applied to target samples.
//
// Every score is "higher is better".

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "pge/dataset.hpp"
#include "pge/model.hpp"

namespace pge {

/// Backbone features of target samples (rows) with their target labels.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    /// n >= num_classes and every class present.
    void validate() const;
};

/// Source-class probabilities for each target sample.
struct PseudoLabelMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    /// Entries in [0, 1], rows summing to 1 within 1e-9.
    void validate() const;
};

struct PretrainOptions {
    std::size_t epochs = 100;
    double lr = 0.05;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

struct PretrainedSource {
    ModelState state;
    double train_accuracy = 0.0;
    std::size_t steps = 0;
};

/// SGD on cross-entropy with a classifier head over the source classes.
/// `source` must already match spec.input_dim.
PretrainedSource pretrain_source(const LabeledDataset& source, const ModelSpec& spec, const PretrainOptions& options);

FeatureMatrix extract_features(const ModelState& source_model, const LabeledDataset& target);
PseudoLabelMatrix pseudo_labels(const ModelState& source_model, const LabeledDataset& target);
std::vector<std::size_t> argmax_labels(const PseudoLabelMatrix& pseudo);

/// Log expected empirical prediction. Probabilities below 1e-12 are floored
/// inside the log.
double leep(const PseudoLabelMatrix& pseudo, std::span<const std::size_t> target_labels);

/// Negative conditional entropy -H(Y | Z) in nats from joint label counts.
double nce(std::span<const std::size_t> source_labels, std::span<const std::size_t> target_labels);

/// tr((cov(F) + lambda I)^-1 cov(E[F | y])) with lambda = 1e-8 * tr(cov(F)) / d.
double hscore(const FeatureMatrix& features);

struct LogmeFit {
    double alpha = 1.0;
    double beta = 1.0;
    double evidence = 0.0;  // per sample
    std::size_t iterations = 0;
    std::vector<double> trace;  // per-sample evidence after every update
};

/// Per-sample log evidence of y under y = F w + noise, w ~ N(0, I / alpha),
/// noise ~ N(0, 1 / beta).
double logme_evidence(const FeatureMatrix& features, std::span<const double> y, double alpha, double beta);

/// Fixed-point maximisation over (alpha, beta); stops when both move less than
/// 1e-6 relative, or after 100 iterations.
LogmeFit logme_fit(const FeatureMatrix& features, std::span<const double> y);

/// Mean of logme_fit evidence over one-vs-all class indicator targets.
double logme(const FeatureMatrix& features);

/// Bhattacharyya distance between two diagonal Gaussians.
double bhattacharyya_diagonal(std::span<const double> mean_a, std::span<const double> var_a,
                              std::span<const double> mean_b, std::span<const double> var_b);

/// -sum over class pairs of exp(-BD) with per-class diagonal Gaussians
/// (variance floor 1e-6).
double gbc(const FeatureMatrix& features);

enum class BaselineMetric { Leep, Nce, HScore, LogMe, Gbc };

std::string_view to_string(BaselineMetric metric) noexcept;
/// Throws InvalidArgument listing the valid names.
BaselineMetric parse_baseline_metric(std::string_view text);
std::vector<BaselineMetric> all_baseline_metrics();

/// Scores one pretrained source against a prepared target.
double baseline_score(BaselineMetric metric, const ModelState& source_model, const LabeledDataset& target);

void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_feature_csv(const std::filesystem::path& path);

}  // namespace pge
