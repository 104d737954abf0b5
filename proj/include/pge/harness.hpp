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

// Ground-truth transfer performance and the evaluation suites built on it.
//
// Stability:   gaps against many target subsets stay close to the full-target
//              gaps and keep the same source order.
// Reliability: the gap ranking agrees (Kendall's tau) with the ranking by
//              transfer performance, measured as the normalised area under an
//              accuracy-vs-subset-size curve for linear probing and fine-tuning.
// Efficiency:  the gap ranking needs no optimizer steps, whereas every
//              baseline pipeline must pretrain each source first.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pge/baselines.hpp"
#include "pge/dataset.hpp"
#include "pge/model.hpp"
#include "pge/pge.hpp"

namespace pge {

enum class TransferMethod { LinearProbe, FineTune };

std::string_view to_string(TransferMethod method) noexcept;

/// 0.1 * batch_size / 256.
double base_lr_rule(std::size_t batch_size) noexcept;

struct TrainConfig {
    TransferMethod method = TransferMethod::LinearProbe;
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    /// Zero selects base_lr_rule(batch_size).
    double base_lr = 0.0;
    std::uint64_t seed = 0;

    double lr() const noexcept { return base_lr > 0.0 ? base_lr : base_lr_rule(batch_size); }
};

/// Replaces the head with a fresh classifier for `train`, runs cosine-annealed
/// SGD (backbone frozen for linear probing) and returns accuracy on `test`.
double transfer_train(const ModelState& pretrained, const LabeledDataset& train, const LabeledDataset& test,
                      const TrainConfig& cfg);

/// As above on a seeded stratified 80/20 split of `target`.
double transfer_train(const ModelState& pretrained, const LabeledDataset& target, const TrainConfig& cfg);

struct PerformanceCurve {
    SubsampleStrategy strategy = SubsampleStrategy::SII;
    std::vector<std::pair<double, double>> points;  // (ratio, accuracy)

    /// Ratios strictly increasing in (0, 1]; accuracies in [0, 1].
    void validate() const;
};

/// Trapezoidal area divided by the ratio span.
double performance_auc(const PerformanceCurve& curve);

/// (2 / (n (n - 1))) * sum_{i<j} sgn(x_i - x_j) sgn(y_i - y_j); ties count 0.
double kendall_tau(std::span<const double> x, std::span<const double> y);

/// 1-based positions after sorting `scores` (ascending when `ascending`,
/// else descending); ties are broken by `names`.
std::vector<double> rank_positions(std::span<const double> scores, std::span<const std::string> names,
                                   bool ascending);

/// Lower bound on subset ratios for each strategy (SI 5%, SII 10%).
double min_ratio(SubsampleStrategy strategy) noexcept;

/// Seed of the r-th ratio / k-th repeat target subset; shared by all sources.
std::uint64_t subset_seed(std::uint64_t seed, std::size_t ratio_index, std::size_t repeat) noexcept;

// ---------------------------------------------------------------------------
// Stability

struct StabilityOptions {
    SubsampleStrategy strategy = SubsampleStrategy::SII;
    std::vector<double> ratios{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::size_t repeats = 100;
    std::uint64_t seed = 0;
    PgeParams pge;
    LossMode mode = LossMode::UnsupervisedReconstruction;
    Execution exec = Execution::Parallel;
};

struct StabilityCell {
    double ratio = 0.0;
    std::size_t repeat = 0;
    std::vector<double> gaps;  // source input order
    std::vector<std::string> ranking;
    bool ranking_matches = false;
};

struct StabilityReport {
    std::string target;
    SubsampleStrategy strategy = SubsampleStrategy::SII;
    std::vector<std::string> sources;
    std::vector<double> full_gaps;
    std::vector<std::string> full_ranking;
    std::vector<StabilityCell> cells;
    std::vector<double> epsilon;  // max |full gap - subset gap| per source
    std::vector<double> gap_mean;
    std::vector<double> gap_stddev;
    std::vector<double> gap_cv;
    bool rankings_identical = true;
    std::size_t schwarz_checked = 0;
    std::size_t schwarz_violations = 0;
};

/// Datasets must already match spec.input_dim.
StabilityReport evaluate_stability(std::span<const LabeledDataset> sources, const LabeledDataset& target,
                                   const ModelSpec& spec, const StabilityOptions& options);

// ---------------------------------------------------------------------------
// Reliability

struct ReliabilityOptions {
    PgeParams pge;
    LossMode mode = LossMode::UnsupervisedReconstruction;
    PretrainOptions pretrain;
    TrainConfig linear_probe{TransferMethod::LinearProbe};
    TrainConfig fine_tune{TransferMethod::FineTune};
    SubsampleStrategy strategy = SubsampleStrategy::SII;
    std::vector<double> ratios{0.1, 0.2, 0.4, 0.6, 0.8, 1.0};
    /// Subsets per ratio; accuracy at a ratio is their mean.
    std::size_t repeats = 1;
    /// Independently seeded pretrainings per source. Accuracy is averaged
    /// over them, which damps the run-to-run spread of SGD on small data.
    std::size_t pretrain_runs = 1;
    /// Seeds the 80/20 target split and the subsets.
    std::uint64_t seed = 0;
    Execution exec = Execution::Parallel;
};

struct SourceOutcome {
    std::string name;
    double gap = 0.0;
    double pretrain_accuracy = 0.0;
    PerformanceCurve lp_curve;
    PerformanceCurve ft_curve;
    double lp_auc = 0.0;
    double ft_auc = 0.0;
    double lp_final = 0.0;  // accuracy at the largest ratio
    double ft_final = 0.0;
    double gap_rank = 0.0;  // 1 = lowest gap
    double lp_rank = 0.0;   // 1 = highest AUC
    double ft_rank = 0.0;
    double gap_dispersion = 0.0;  // coefficient of variation over target subsets
};

struct TransferReport {
    std::string target;
    LossMode mode = LossMode::UnsupervisedReconstruction;
    std::vector<SourceOutcome> sources;  // input order
    std::vector<std::string> gap_ranking;
    double tau_lp = 0.0;
    double tau_ft = 0.0;
    double tau_lp_final = 0.0;
    double tau_ft_final = 0.0;
    std::size_t schwarz_checked = 0;
    std::size_t schwarz_violations = 0;
};

/// Needs at least two sources (three for a meaningful tau).
TransferReport evaluate_reliability(std::span<const LabeledDataset> sources, const LabeledDataset& target,
                                    const ModelSpec& spec, const ReliabilityOptions& options);

// ---------------------------------------------------------------------------
// Efficiency

struct EfficiencyOptions {
    PgeParams pge;
    LossMode mode = LossMode::UnsupervisedReconstruction;
    PretrainOptions pretrain;
    std::vector<BaselineMetric> metrics = all_baseline_metrics();
    Execution exec = Execution::Parallel;
};

struct BaselinePipeline {
    BaselineMetric metric = BaselineMetric::Leep;
    double seconds = 0.0;
    std::uint64_t optimizer_steps = 0;
    std::size_t pretrain_invocations = 0;
    std::vector<double> scores;  // source input order
};

struct EfficiencyReport {
    std::vector<std::string> sources;
    double pge_seconds = 0.0;
    std::uint64_t pge_optimizer_steps = 0;
    std::vector<GapScore> ranking;
    std::vector<BaselinePipeline> baselines;

    /// Smallest baseline time divided by the gap-ranking time.
    double min_speedup() const;
};

/// Times the gap ranking against each baseline pipeline (pretrain every
/// source, extract target features, score), both end to end.
EfficiencyReport evaluate_efficiency(std::span<const LabeledDataset> sources, const LabeledDataset& target,
                                     const ModelSpec& spec, const EfficiencyOptions& options);

// ---------------------------------------------------------------------------
// Loss-mode ablation

struct AblationOptions {
    PgeParams pge;
    /// Master seeds to repeat the ranking under; pge.master_seed is ignored.
    std::vector<std::uint64_t> master_seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    Execution exec = Execution::Parallel;
};

struct ModeSpread {
    LossMode mode = LossMode::UnsupervisedReconstruction;
    std::vector<std::vector<double>> gaps;  // [seed][source], source input order
    std::vector<std::vector<std::string>> rankings;
    bool invariant = true;
    /// Mean over seed pairs of the normalised Kendall distance (1 - tau) / 2
    /// between their rankings. Zero when every seed gives the same order.
    double ranking_dispersion = 0.0;
    /// Coefficient of variation of each source's gap across seeds.
    std::vector<double> gap_cv;
    std::size_t schwarz_checked = 0;
    std::size_t schwarz_violations = 0;
};

struct AblationReport {
    std::string target;
    std::vector<std::string> sources;
    std::vector<std::uint64_t> master_seeds;
    ModeSpread unsupervised;
    ModeSpread supervised;
};

/// Ranks the sources under each master seed with both loss modes.
AblationReport evaluate_ablation(std::span<const LabeledDataset> sources, const LabeledDataset& target,
                                 const ModelSpec& spec, const AblationOptions& options);

}  // namespace pge
