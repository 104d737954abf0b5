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

#include "pge/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <optional>

#include "pge/error.hpp"
#include "pge/rng.hpp"
#include "pge/train.hpp"

namespace pge {

namespace {

// Runs body(i) for i in [0, n), on OpenMP threads when exec is Parallel.
// The first exception (lowest index) is rethrown after all cells finish.
template <typename Body>
void for_each_cell(std::size_t n, Execution exec, Body&& body) {
    if (exec == Execution::Serial) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct Moments {
    double mean = 0.0;
    double stddev = 0.0;
    double cv = 0.0;
};

Moments moments(std::span<const double> xs) {
    Moments m;
    if (xs.empty()) return m;
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - m.mean) * (x - m.mean);
    m.stddev = std::sqrt(var / static_cast<double>(xs.size()));
    m.cv = m.mean != 0.0 ? m.stddev / std::abs(m.mean) : 0.0;
    return m;
}

void check_ratios(std::span<const double> ratios, SubsampleStrategy strategy) {
    if (ratios.empty()) throw InvalidArgument("at least one subset ratio is required");
    for (double r : ratios) {
        if (!(r >= min_ratio(strategy) - 1e-12 && r <= 1.0)) {
            throw InvalidArgument("ratio " + std::to_string(r) + " outside [" + std::to_string(min_ratio(strategy)) +
                                  ", 1] for " + std::string(to_string(strategy)));
        }
    }
}

LabeledDataset target_subset(const LabeledDataset& ds, SubsampleStrategy strategy, double ratio, std::uint64_t seed) {
    return subsample(ds, SubsampleSpec{strategy, ratio, seed});
}

}  // namespace

std::string_view to_string(TransferMethod method) noexcept {
    return method == TransferMethod::LinearProbe ? "linear-probe" : "fine-tune";
}

double base_lr_rule(std::size_t batch_size) noexcept { return 0.1 * static_cast<double>(batch_size) / 256.0; }

double min_ratio(SubsampleStrategy strategy) noexcept { return strategy == SubsampleStrategy::SI ? 0.05 : 0.10; }

std::uint64_t subset_seed(std::uint64_t seed, std::size_t ratio_index, std::size_t repeat) noexcept {
    return hash_combine(hash_combine(derive_seed(seed, "subset"), ratio_index), repeat);
}

double transfer_train(const ModelState& pretrained, const LabeledDataset& train, const LabeledDataset& test,
                      const TrainConfig& cfg) {
    if (train.num_classes != test.num_classes) {
        throw InvalidArgument("transfer_train: train and test label spaces differ");
    }
    ModelState state =
        pretrained.with_head(HeadSpec::classifier(train.num_classes),
                             InitSpec{InitDistribution::FanInScaledGaussian, derive_seed(cfg.seed, "head")});
    SgdOptions sgd;
    sgd.epochs = cfg.epochs;
    sgd.batch_size = cfg.batch_size;
    sgd.base_lr = cfg.lr();
    sgd.cosine = true;
    sgd.freeze_backbone = cfg.method == TransferMethod::LinearProbe;
    sgd.seed = cfg.seed;
    train_sgd(state, train, sgd);
    return accuracy(state, test);
}

double transfer_train(const ModelState& pretrained, const LabeledDataset& target, const TrainConfig& cfg) {
    auto [train, test] = split_train_test(target, 0.2, derive_seed(cfg.seed, "split"));
    return transfer_train(pretrained, train, test, cfg);
}

void PerformanceCurve::validate() const {
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto [r, a] = points[i];
        if (!(r > 0.0 && r <= 1.0)) throw InvalidArgument("curve: ratio outside (0, 1]");
        if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("curve: accuracy outside [0, 1]");
        if (i > 0 && !(r > points[i - 1].first)) throw InvalidArgument("curve: ratios must be strictly increasing");
    }
}

double performance_auc(const PerformanceCurve& curve) {
    if (curve.points.size() < 2) throw InvalidArgument("performance_auc: need at least 2 points");
    curve.validate();
    double area = 0.0;
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        const auto [r0, a0] = curve.points[i - 1];
        const auto [r1, a1] = curve.points[i];
        area += 0.5 * (a0 + a1) * (r1 - r0);
    }
    return area / (curve.points.back().first - curve.points.front().first);
}

double kendall_tau(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw InvalidArgument("kendall_tau: rankings differ in length");
    const std::size_t n = x.size();
    if (n < 2) throw InvalidArgument("kendall_tau: need at least 2 items");
    auto sgn = [](double v) { return (v > 0.0) - (v < 0.0); };
    long long sum = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) sum += sgn(x[i] - x[j]) * sgn(y[i] - y[j]);
    return 2.0 * static_cast<double>(sum) / (static_cast<double>(n) * static_cast<double>(n - 1));
}

std::vector<double> rank_positions(std::span<const double> scores, std::span<const std::string> names,
                                   bool ascending) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return ascending ? scores[a] < scores[b] : scores[a] > scores[b];
        return names[a] < names[b];
    });
    std::vector<double> pos(scores.size());
    for (std::size_t k = 0; k < order.size(); ++k) pos[order[k]] = static_cast<double>(k + 1);
    return pos;
}

// ---------------------------------------------------------------------------

StabilityReport evaluate_stability(std::span<const LabeledDataset> sources, const LabeledDataset& target,
                                   const ModelSpec& spec, const StabilityOptions& opt) {
    check_ratios(opt.ratios, opt.strategy);
    if (opt.repeats == 0) throw InvalidArgument("stability: repeats must be positive");
    const Ranking full = rank_sources(sources, target, spec, opt.mode, opt.pge, opt.exec);
    const auto seeds = seed_schedule(opt.pge.master_seed, opt.pge.restarts);

    StabilityReport report;
    report.target = target.name;
    report.strategy = opt.strategy;
    for (const auto& s : sources) report.sources.push_back(s.name);
    for (const auto& g : full.sources) report.full_gaps.push_back(transfer_gap(g, full.target).value);
    for (const auto& g : full.order) report.full_ranking.push_back(g.source);
    report.schwarz_checked = full.schwarz_checked;
    report.schwarz_violations = full.schwarz_violations;

    const std::size_t n_cells = opt.ratios.size() * opt.repeats;
    report.cells.resize(n_cells);
    std::vector<std::size_t> violations(n_cells, 0);
    for_each_cell(n_cells, opt.exec, [&](std::size_t cell) {
        const std::size_t r = cell / opt.repeats, k = cell % opt.repeats;
        const LabeledDataset subset = target_subset(target, opt.strategy, opt.ratios[r], subset_seed(opt.seed, r, k));
        const GradientExpectation pge_t = estimate_pge(subset, spec, opt.mode, std::min(opt.pge.batch_size, subset.size()),
                                                       seeds, opt.pge.init, Execution::Serial);
        StabilityCell& c = report.cells[cell];
        c.ratio = opt.ratios[r];
        c.repeat = k;
        for (const auto& s : full.sources) c.gaps.push_back(transfer_gap(s, pge_t).value);
        for (const auto& g : rank_against(pge_t, full.sources, &violations[cell])) c.ranking.push_back(g.source);
        c.ranking_matches = c.ranking == report.full_ranking;
    });

    const std::size_t S = sources.size();
    report.epsilon.assign(S, 0.0);
    for (const auto& c : report.cells) {
        report.rankings_identical = report.rankings_identical && c.ranking_matches;
        for (std::size_t s = 0; s < S; ++s) {
            report.epsilon[s] = std::max(report.epsilon[s], std::abs(report.full_gaps[s] - c.gaps[s]));
        }
    }
    for (std::size_t s = 0; s < S; ++s) {
        std::vector<double> gaps;
        for (const auto& c : report.cells) gaps.push_back(c.gaps[s]);
        const Moments m = moments(gaps);
        report.gap_mean.push_back(m.mean);
        report.gap_stddev.push_back(m.stddev);
        report.gap_cv.push_back(m.cv);
    }
    for (std::size_t v : violations) report.schwarz_violations += v;
    report.schwarz_checked += n_cells * S;
    return report;
}

// ---------------------------------------------------------------------------

TransferReport evaluate_reliability(std::span<const LabeledDataset> sources, const LabeledDataset& target,
                                    const ModelSpec& spec, const ReliabilityOptions& opt) {
    check_ratios(opt.ratios, opt.strategy);
    if (opt.ratios.size() < 2) throw InvalidArgument("reliability: need at least two ratios for a curve");
    if (opt.repeats == 0) throw InvalidArgument("reliability: repeats must be positive");
    const std::size_t S = sources.size();
    const Ranking ranking = rank_sources(sources, target, spec, opt.mode, opt.pge, opt.exec);

    TransferReport report;
    report.target = target.name;
    report.mode = opt.mode;
    report.schwarz_checked = ranking.schwarz_checked;
    report.schwarz_violations = ranking.schwarz_violations;
    for (const auto& g : ranking.order) report.gap_ranking.push_back(g.source);

    if (opt.pretrain_runs == 0) throw InvalidArgument("reliability: pretrain_runs must be positive");
    const std::size_t P = opt.pretrain_runs;
    std::vector<std::optional<PretrainedSource>> pretrained(S * P);
    for_each_cell(S * P, opt.exec, [&](std::size_t cell) {
        PretrainOptions po = opt.pretrain;
        if (cell % P != 0) po.seed = hash_combine(derive_seed(po.seed, "pretrain-run"), cell % P);
        pretrained[cell] = pretrain_source(sources[cell / P], spec, po);
    });

    auto [train, test] = split_train_test(target, 0.2, derive_seed(opt.seed, "split"));
    const std::size_t R = opt.ratios.size(), K = opt.repeats;
    std::vector<LabeledDataset> train_subsets(R * K), test_subsets(R * K);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t k = 0; k < K; ++k) {
            const std::uint64_t seed = subset_seed(opt.seed, r, k);
            train_subsets[r * K + k] = target_subset(train, opt.strategy, opt.ratios[r], seed);
            if (opt.strategy == SubsampleStrategy::SI) {
                const auto classes = select_categories(train.num_classes, opt.ratios[r], seed);
                test_subsets[r * K + k] = restrict_to_classes(test, classes);
            } else {
                test_subsets[r * K + k] = test;
            }
        }

    // cell = (((source * 2 + method) * R + ratio) * K + repeat) * P + run
    const std::size_t n_cells = S * 2 * R * K * P;
    std::vector<double> acc(n_cells, 0.0);
    for_each_cell(n_cells, opt.exec, [&](std::size_t cell) {
        const std::size_t p = cell % P;
        const std::size_t k = (cell / P) % K;
        const std::size_t r = (cell / (P * K)) % R;
        const std::size_t method = (cell / (P * K * R)) % 2;
        const std::size_t s = cell / (P * K * R * 2);
        TrainConfig cfg = method == 0 ? opt.linear_probe : opt.fine_tune;
        cfg.seed = subset_seed(cfg.seed, r, k);
        acc[cell] = transfer_train(pretrained[s * P + p]->state, train_subsets[r * K + k], test_subsets[r * K + k], cfg);
    });

    // Gap dispersion over subsets of the full target, seeded like the curves.
    const auto seeds = seed_schedule(opt.pge.master_seed, opt.pge.restarts);
    std::vector<std::vector<double>> subset_gaps(R * K);
    for_each_cell(R * K, opt.exec, [&](std::size_t cell) {
        const LabeledDataset subset =
            target_subset(target, opt.strategy, opt.ratios[cell / K], subset_seed(opt.seed, cell / K, cell % K));
        const GradientExpectation pge_t = estimate_pge(subset, spec, opt.mode, std::min(opt.pge.batch_size, subset.size()),
                                                       seeds, opt.pge.init, Execution::Serial);
        for (const auto& src : ranking.sources) subset_gaps[cell].push_back(transfer_gap(src, pge_t).value);
    });

    std::vector<std::string> names;
    std::vector<double> gaps, lp_auc, ft_auc, lp_final, ft_final;
    for (std::size_t s = 0; s < S; ++s) {
        SourceOutcome o;
        o.name = sources[s].name;
        o.gap = transfer_gap(ranking.sources[s], ranking.target).value;
        o.pretrain_accuracy = 0.0;
        for (std::size_t p = 0; p < P; ++p) o.pretrain_accuracy += pretrained[s * P + p]->train_accuracy / static_cast<double>(P);
        o.lp_curve.strategy = o.ft_curve.strategy = opt.strategy;
        for (std::size_t r = 0; r < R; ++r) {
            double lp = 0.0, ft = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t p = 0; p < P; ++p) {
                    lp += acc[(((s * 2 + 0) * R + r) * K + k) * P + p];
                    ft += acc[(((s * 2 + 1) * R + r) * K + k) * P + p];
                }
            }
            const double count = static_cast<double>(K * P);
            o.lp_curve.points.emplace_back(opt.ratios[r], lp / count);
            o.ft_curve.points.emplace_back(opt.ratios[r], ft / count);
        }
        o.lp_auc = performance_auc(o.lp_curve);
        o.ft_auc = performance_auc(o.ft_curve);
        o.lp_final = o.lp_curve.points.back().second;
        o.ft_final = o.ft_curve.points.back().second;
        std::vector<double> g;
        for (const auto& row : subset_gaps) g.push_back(row[s]);
        o.gap_dispersion = moments(g).cv;

        names.push_back(o.name);
        gaps.push_back(o.gap);
        lp_auc.push_back(o.lp_auc);
        ft_auc.push_back(o.ft_auc);
        lp_final.push_back(o.lp_final);
        ft_final.push_back(o.ft_final);
        report.sources.push_back(std::move(o));
    }

    const auto gap_pos = rank_positions(gaps, names, true);
    const auto lp_pos = rank_positions(lp_auc, names, false);
    const auto ft_pos = rank_positions(ft_auc, names, false);
    for (std::size_t s = 0; s < S; ++s) {
        report.sources[s].gap_rank = gap_pos[s];
        report.sources[s].lp_rank = lp_pos[s];
        report.sources[s].ft_rank = ft_pos[s];
    }
    report.tau_lp = kendall_tau(gap_pos, lp_pos);
    report.tau_ft = kendall_tau(gap_pos, ft_pos);
    report.tau_lp_final = kendall_tau(gap_pos, rank_positions(lp_final, names, false));
    report.tau_ft_final = kendall_tau(gap_pos, rank_positions(ft_final, names, false));
    return report;
}

// ---------------------------------------------------------------------------

double EfficiencyReport::min_speedup() const {
    if (baselines.empty() || pge_seconds <= 0.0) return 0.0;
    double fastest = baselines.front().seconds;
    for (const auto& b : baselines) fastest = std::min(fastest, b.seconds);
    return fastest / pge_seconds;
}

EfficiencyReport evaluate_efficiency(std::span<const LabeledDataset> sources, const LabeledDataset& target,
                                     const ModelSpec& spec, const EfficiencyOptions& opt) {
    EfficiencyReport report;
    for (const auto& s : sources) report.sources.push_back(s.name);

    const std::uint64_t steps_before = optimizer_steps_taken();
    const auto t0 = std::chrono::steady_clock::now();
    const Ranking ranking = rank_sources(sources, target, spec, opt.mode, opt.pge, opt.exec);
    report.pge_seconds = seconds_since(t0);
    report.pge_optimizer_steps = optimizer_steps_taken() - steps_before;
    report.ranking = ranking.order;

    for (BaselineMetric metric : opt.metrics) {
        BaselinePipeline p;
        p.metric = metric;
        const std::uint64_t before = optimizer_steps_taken();
        const auto start = std::chrono::steady_clock::now();
        std::vector<PretrainedSource> models;
        models.reserve(sources.size());
        for (const auto& s : sources) {
            models.push_back(pretrain_source(s, spec, opt.pretrain));
            ++p.pretrain_invocations;
        }
        for (const auto& m : models) p.scores.push_back(baseline_score(metric, m.state, target));
        p.seconds = seconds_since(start);
        p.optimizer_steps = optimizer_steps_taken() - before;
        report.baselines.push_back(std::move(p));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Loss-mode ablation

AblationReport evaluate_ablation(std::span<const LabeledDataset> sources, const LabeledDataset& target,
                                 const ModelSpec& spec, const AblationOptions& opt) {
    if (sources.size() < 2) throw InvalidArgument("ablation: needs at least two sources");
    if (opt.master_seeds.size() < 2) throw InvalidArgument("ablation: needs at least two master seeds");
    const std::size_t S = sources.size(), M = opt.master_seeds.size();

    AblationReport report;
    report.target = target.name;
    report.master_seeds = opt.master_seeds;
    std::vector<std::string> names;
    for (const auto& s : sources) names.push_back(s.name);
    report.sources = names;

    std::vector<Ranking> runs(2 * M);
    for_each_cell(2 * M, opt.exec, [&](std::size_t cell) {
        const LossMode mode = cell < M ? LossMode::UnsupervisedReconstruction : LossMode::SupervisedCrossEntropy;
        PgeParams p = opt.pge;
        p.master_seed = opt.master_seeds[cell % M];
        runs[cell] = rank_sources(sources, target, spec, mode, p, Execution::Serial);
    });

    for (std::size_t m = 0; m < 2; ++m) {
        ModeSpread& out = m == 0 ? report.unsupervised : report.supervised;
        out.mode = m == 0 ? LossMode::UnsupervisedReconstruction : LossMode::SupervisedCrossEntropy;
        std::vector<std::vector<double>> positions;
        for (std::size_t k = 0; k < M; ++k) {
            const Ranking& r = runs[m * M + k];
            std::vector<double> gaps;
            for (const auto& src : r.sources) gaps.push_back(transfer_gap(src, r.target).value);
            std::vector<std::string> order;
            for (const auto& g : r.order) order.push_back(g.source);
            positions.push_back(rank_positions(gaps, names, true));
            out.gaps.push_back(std::move(gaps));
            out.rankings.push_back(std::move(order));
            out.schwarz_checked += r.schwarz_checked;
            out.schwarz_violations += r.schwarz_violations;
        }
        double distance = 0.0;
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < M; ++a) {
            for (std::size_t b = a + 1; b < M; ++b, ++pairs) {
                distance += (1.0 - kendall_tau(positions[a], positions[b])) / 2.0;
            }
            out.invariant = out.invariant && out.rankings[a] == out.rankings[0];
        }
        out.ranking_dispersion = distance / static_cast<double>(pairs);
        for (std::size_t s = 0; s < S; ++s) {
            std::vector<double> column;
            for (std::size_t k = 0; k < M; ++k) column.push_back(out.gaps[k][s]);
            out.gap_cv.push_back(moments(column).cv);
        }
    }
    return report;
}

}  // namespace pge
