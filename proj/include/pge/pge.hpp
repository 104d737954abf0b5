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

// Principal gradient expectation (PGE) and the transferability gap.
//
// A PGE is the mean backbone gradient at random initialisation: for every
// restart the model is re-initialised from the restart's seed, one seeded
// batch is drawn, and the backbone gradient at the fresh weights is folded into
// a running mean. Parameters are never updated.
//
// The gap between a source and a target PGE is
//
//     ||pge_t - pge_s||_2 / (||pge_t||_2 * ||pge_s||_2)
//
// and a lower gap predicts better transfer.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pge/dataset.hpp"
#include "pge/model.hpp"

namespace pge {

/// Serial runs restarts in index order on the calling thread; Parallel
/// spreads them over OpenMP threads. Both fold gradients into the mean in
/// restart order and produce bit-identical results.
enum class Execution { Serial, Parallel };

/// Running mean with the exact update E <- ((i - 1) * E + g) / i.
class RunningMean {
public:
    explicit RunningMean(std::size_t dim) : mean_(dim, 0.0) {}

    void add(std::span<const double> g);
    std::size_t count() const noexcept { return count_; }
    const std::vector<double>& mean() const noexcept { return mean_; }

private:
    std::vector<double> mean_;
    std::size_t count_ = 0;
};

struct GradientExpectation {
    std::string dataset;
    std::vector<double> vector;
    std::size_t restarts = 0;
    LossMode mode = LossMode::UnsupervisedReconstruction;
    std::size_t batch_size = 0;
    std::vector<std::uint64_t> seed_schedule;

    /// restarts == seed_schedule.size() >= 1 and every coordinate finite.
    void validate() const;
};

struct PgeParams {
    std::size_t restarts = 10;
    /// Upper bound; each dataset uses min(batch_size, its size).
    std::size_t batch_size = 256;
    std::uint64_t master_seed = 0;
    InitDistribution init = InitDistribution::FanInScaledGaussian;
};

/// Restart seeds derived from a master seed. Shared by every dataset ranked
/// together so all PGEs see the same initialisations and batch draws.
std::vector<std::uint64_t> seed_schedule(std::uint64_t master_seed, std::size_t restarts);

/// Seed of the batch drawn at a restart.
std::uint64_t batch_seed(std::uint64_t restart_seed) noexcept;

using RestartGradient = std::function<std::vector<double>(std::size_t restart, std::uint64_t seed)>;

/// Averages `gradient(i, seeds[i])` over all restarts with RunningMean. Any
/// non-finite coordinate raises NumericError carrying the restart index.
std::vector<double> expected_gradient(std::span<const std::uint64_t> seeds, const RestartGradient& gradient,
                                      Execution exec = Execution::Parallel);

/// Backbone gradient for one restart: fresh weights from `seed`, one batch of
/// `batch_size` rows drawn with batch_seed(seed). The model head is chosen by
/// `mode` (classifier over ds.num_classes, or input reconstructor).
LossGradient restart_gradient(const LabeledDataset& ds, const ModelSpec& spec, LossMode mode,
                              std::size_t batch_size, std::uint64_t seed, InitDistribution init,
                              std::size_t restart_index = 0);

/// `ds` must already match spec.input_dim (see prepare()).
GradientExpectation estimate_pge(const LabeledDataset& ds, const ModelSpec& spec, LossMode mode,
                                 std::size_t batch_size, std::span<const std::uint64_t> seeds,
                                 InitDistribution init = InitDistribution::FanInScaledGaussian,
                                 Execution exec = Execution::Parallel);

struct GapScore {
    double value = 0.0;
    std::string source;
    std::string target;
};

/// The gap formula on raw vectors. Throws on length mismatch or a zero norm.
double gap_value(std::span<const double> source, std::span<const double> target);

GapScore transfer_gap(const GradientExpectation& source, const GradientExpectation& target);

/// Compares the elementwise-product denominator ||g_t o g_s|| with the
/// product of norms ||g_t|| * ||g_s|| it is deflated to.
struct SchwarzCheck {
    double numerator = 0.0;      // ||g_t - g_s||
    double hadamard_norm = 0.0;  // ||g_t o g_s||
    double norm_product = 0.0;   // ||g_t|| * ||g_s||
    double elementwise_quotient = 0.0;
    double product_quotient = 0.0;

    bool holds() const noexcept { return hadamard_norm <= norm_product; }
};

SchwarzCheck schwarz_check(std::span<const double> g_s, std::span<const double> g_t);

struct Ranking {
    GradientExpectation target;
    std::vector<GradientExpectation> sources;  // input order
    std::vector<GapScore> order;               // ascending gap, ties by name
    std::size_t schwarz_checked = 0;
    std::size_t schwarz_violations = 0;
};

/// Sorts sources by gap against an already-estimated target PGE.
std::vector<GapScore> rank_against(const GradientExpectation& target,
                                   std::span<const GradientExpectation> sources,
                                   std::size_t* schwarz_violations = nullptr);

/// Estimates the target and every source PGE under the same seed schedule and
/// ranks the sources. Datasets must already match spec.input_dim.
Ranking rank_sources(std::span<const LabeledDataset> sources, const LabeledDataset& target, const ModelSpec& spec,
                     LossMode mode, const PgeParams& params, Execution exec = Execution::Parallel);

// Binary artifact: "PGE1", u64 length, u32 restarts (16 bytes, little-endian),
// then `length` little-endian doubles.

struct PgeArtifact {
    std::vector<double> vector;
    std::uint32_t restarts = 0;
};

/// Writes via a temporary file and rename, so readers never see a partial file.
void write_pge_artifact(const std::filesystem::path& path, const GradientExpectation& pge);
PgeArtifact read_pge_artifact(const std::filesystem::path& path);

}  // namespace pge
