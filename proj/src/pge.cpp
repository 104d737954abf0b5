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

#include "pge/pge.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>

#include "pge/error.hpp"
#include "pge/io.hpp"
#include "pge/rng.hpp"

namespace pge {

void RunningMean::add(std::span<const double> g) {
    if (g.size() != mean_.size()) {
        throw ShapeError("running mean: gradient has " + std::to_string(g.size()) + " entries, expected " +
                         std::to_string(mean_.size()));
    }
    ++count_;
    const auto i = static_cast<double>(count_);
    for (std::size_t k = 0; k < mean_.size(); ++k) mean_[k] = ((i - 1.0) * mean_[k] + g[k]) / i;
}

void GradientExpectation::validate() const {
    if (restarts == 0 || restarts != seed_schedule.size()) {
        throw InvalidArgument("gradient expectation '" + dataset + "': restarts must equal the seed schedule length");
    }
    for (double v : vector) {
        if (!std::isfinite(v)) throw NumericError("gradient expectation '" + dataset + "' is not finite");
    }
}

std::vector<std::uint64_t> seed_schedule(std::uint64_t master_seed, std::size_t restarts) {
    const std::uint64_t key = derive_seed(master_seed, "restarts");
    std::vector<std::uint64_t> seeds(restarts);
    for (std::size_t i = 0; i < restarts; ++i) seeds[i] = hash_combine(key, i);
    return seeds;
}

std::uint64_t batch_seed(std::uint64_t restart_seed) noexcept { return derive_seed(restart_seed, "batch"); }

namespace {

void require_finite(std::span<const double> g, std::size_t restart) {
    for (double v : g) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite gradient at restart " + std::to_string(restart), restart);
        }
    }
}

}  // namespace

std::vector<double> expected_gradient(std::span<const std::uint64_t> seeds, const RestartGradient& gradient,
                                      Execution exec) {
    if (seeds.empty()) throw InvalidArgument("expected_gradient: need at least one restart");
    const std::size_t I = seeds.size();

    if (exec == Execution::Serial) {
        std::vector<double> first = gradient(0, seeds[0]);
        require_finite(first, 0);
        RunningMean mean(first.size());
        mean.add(first);
        for (std::size_t i = 1; i < I; ++i) {
            std::vector<double> g = gradient(i, seeds[i]);
            require_finite(g, i);
            mean.add(g);
        }
        return mean.mean();
    }

    std::vector<std::vector<double>> grads(I);
    std::vector<std::exception_ptr> errors(I);
    const auto count = static_cast<std::ptrdiff_t>(I);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        const auto r = static_cast<std::size_t>(i);
        try {
            grads[r] = gradient(r, seeds[r]);
        } catch (...) {
            errors[r] = std::current_exception();
        }
    }
    for (std::size_t i = 0; i < I; ++i) {
        if (errors[i]) std::rethrow_exception(errors[i]);
    }
    RunningMean mean(grads[0].size());
    for (std::size_t i = 0; i < I; ++i) {
        require_finite(grads[i], i);
        mean.add(grads[i]);
    }
    return mean.mean();
}

LossGradient restart_gradient(const LabeledDataset& ds, const ModelSpec& spec, LossMode mode,
                              std::size_t batch_size, std::uint64_t seed, InitDistribution init,
                              std::size_t restart_index) {
    const ModelSpec model = spec.for_mode(mode, ds.num_classes);
    const ModelState state = init_params(model, InitSpec{init, seed});
    const auto indices = draw_batch_indices(ds.size(), batch_size, batch_seed(seed));
    const Batch batch = gather(ds, indices);
    try {
        return loss_and_backbone_grad(state, batch, mode, restart_index);
    } catch (const NumericError& e) {
        throw NumericError("restart " + std::to_string(restart_index) + ": " + e.what(), restart_index);
    }
}

GradientExpectation estimate_pge(const LabeledDataset& ds, const ModelSpec& spec, LossMode mode,
                                 std::size_t batch_size, std::span<const std::uint64_t> seeds,
                                 InitDistribution init, Execution exec) {
    if (seeds.empty()) throw InvalidArgument("estimate_pge: need at least one restart");
    if (ds.feature_dim != spec.input_dim) {
        throw ShapeError("estimate_pge: dataset '" + ds.name + "' has feature dim " + std::to_string(ds.feature_dim) +
                         " but the model expects " + std::to_string(spec.input_dim));
    }
    if (batch_size == 0 || batch_size > ds.size()) {
        throw InvalidArgument("estimate_pge: batch size " + std::to_string(batch_size) + " exceeds dataset '" +
                              ds.name + "' of " + std::to_string(ds.size()) + " samples");
    }
    if (mode == LossMode::SupervisedCrossEntropy && ds.num_classes < 2) {
        throw InvalidArgument("estimate_pge: supervised mode needs at least two classes");
    }

    GradientExpectation out;
    out.dataset = ds.name;
    out.restarts = seeds.size();
    out.mode = mode;
    out.batch_size = batch_size;
    out.seed_schedule.assign(seeds.begin(), seeds.end());
    out.vector = expected_gradient(
        seeds,
        [&](std::size_t i, std::uint64_t seed) {
            return restart_gradient(ds, spec, mode, batch_size, seed, init, i).grad;
        },
        exec);
    return out;
}

namespace {

double norm2(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

double distance2(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

}  // namespace

double gap_value(std::span<const double> source, std::span<const double> target) {
    if (source.size() != target.size()) {
        throw ShapeError("transfer gap: vectors have lengths " + std::to_string(source.size()) + " and " +
                         std::to_string(target.size()));
    }
    const double ns = norm2(source);
    const double nt = norm2(target);
    if (ns == 0.0 || nt == 0.0) {
        throw NumericError(
            "transfer gap is undefined for a zero-norm gradient expectation; raise the restart count or batch "
            "size, or check for degenerate (e.g. all-zero) inputs");
    }
    return distance2(target, source) / (nt * ns);
}

GapScore transfer_gap(const GradientExpectation& source, const GradientExpectation& target) {
    return GapScore{gap_value(source.vector, target.vector), source.dataset, target.dataset};
}

SchwarzCheck schwarz_check(std::span<const double> g_s, std::span<const double> g_t) {
    if (g_s.size() != g_t.size()) throw ShapeError("schwarz_check: vectors differ in length");
    SchwarzCheck c;
    double had = 0.0;
    for (std::size_t i = 0; i < g_s.size(); ++i) {
        const double p = g_t[i] * g_s[i];
        had += p * p;
    }
    c.hadamard_norm = std::sqrt(had);
    const double nt = norm2(g_t), ns = norm2(g_s);
    if (nt == 0.0 || ns == 0.0) throw InvalidArgument("schwarz_check: both vectors must be nonzero");
    c.norm_product = nt * ns;
    c.numerator = distance2(g_t, g_s);
    c.elementwise_quotient = c.numerator / c.hadamard_norm;  // +inf for disjoint supports
    c.product_quotient = c.numerator / c.norm_product;
    return c;
}

std::vector<GapScore> rank_against(const GradientExpectation& target,
                                   std::span<const GradientExpectation> sources,
                                   std::size_t* schwarz_violations) {
    std::vector<GapScore> order;
    order.reserve(sources.size());
    std::size_t violations = 0;
    for (const auto& s : sources) {
        order.push_back(transfer_gap(s, target));
        if (!schwarz_check(s.vector, target.vector).holds()) ++violations;
    }
    std::sort(order.begin(), order.end(), [](const GapScore& a, const GapScore& b) {
        if (a.value != b.value) return a.value < b.value;
        return a.source < b.source;
    });
    if (schwarz_violations) *schwarz_violations = violations;
    return order;
}

Ranking rank_sources(std::span<const LabeledDataset> sources, const LabeledDataset& target, const ModelSpec& spec,
                     LossMode mode, const PgeParams& params, Execution exec) {
    if (sources.size() < 2) throw InvalidArgument("rank_sources: need at least two sources");
    const auto seeds = seed_schedule(params.master_seed, params.restarts);
    auto estimate = [&](const LabeledDataset& ds) {
        return estimate_pge(ds, spec, mode, std::min(params.batch_size, ds.size()), seeds, params.init, exec);
    };
    Ranking r;
    r.target = estimate(target);
    r.sources.reserve(sources.size());
    for (const auto& s : sources) r.sources.push_back(estimate(s));
    r.order = rank_against(r.target, r.sources, &r.schwarz_violations);
    r.schwarz_checked = sources.size();
    return r;
}

// ---------------------------------------------------------------------------
// Artifact I/O

namespace {

constexpr char kMagic[4] = {'P', 'G', 'E', '1'};

void put_le(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& in, std::size_t offset, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t{static_cast<unsigned char>(in[offset + i])} << (8 * i);
    return v;
}

}  // namespace

void write_pge_artifact(const std::filesystem::path& path, const GradientExpectation& pge) {
    std::string buf;
    buf.reserve(16 + 8 * pge.vector.size());
    buf.append(kMagic, 4);
    put_le(buf, pge.vector.size(), 8);
    put_le(buf, pge.restarts, 4);
    for (double v : pge.vector) put_le(buf, std::bit_cast<std::uint64_t>(v), 8);
    write_file_atomic(path, buf);
}

PgeArtifact read_pge_artifact(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    if (buf.size() < 16) throw ParseError(path.string() + ": truncated PGE header");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw ParseError(path.string() + ": bad PGE magic");
    const std::uint64_t length = get_le(buf, 4, 8);
    PgeArtifact a;
    a.restarts = static_cast<std::uint32_t>(get_le(buf, 12, 4));
    if (buf.size() != 16 + 8 * length) {
        throw ParseError(path.string() + ": PGE payload has " + std::to_string(buf.size() - 16) + " bytes, expected " +
                         std::to_string(8 * length));
    }
    a.vector.resize(length);
    for (std::uint64_t i = 0; i < length; ++i) a.vector[i] = std::bit_cast<double>(get_le(buf, 16 + 8 * i, 8));
    return a;
}

}  // namespace pge
