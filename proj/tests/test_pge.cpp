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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "pge/error.hpp"
#include "pge/io.hpp"
#include "pge/pge.hpp"
#include "pge/rng.hpp"
#include "pge/train.hpp"

using namespace pge;
namespace fs = std::filesystem;

namespace {

LabeledDataset blobs(std::uint64_t seed, std::size_t dim = 4, double angle = 0.0, const char* name = "blobs") {
    SyntheticSpec s;
    s.family = angle == 0.0 ? SyntheticFamily::GaussianBlobs : SyntheticFamily::RotatedVariant;
    s.angle_degrees = angle;
    s.num_classes = 4;
    s.samples_per_class = 30;
    s.feature_dim = dim;
    s.seed = seed;
    s.name = name;
    return standardize(make_synthetic(s));
}

ModelSpec small_spec(std::size_t dim) {
    ModelSpec spec = default_model_spec(dim);
    spec.backbone.widths = {8, 6};
    return spec;
}

std::vector<double> random_vector(std::mt19937_64& gen, std::size_t n) {
    std::normal_distribution<double> nd;
    std::vector<double> v(n);
    for (auto& x : v) x = nd(gen);
    return v;
}

}  // namespace

TEST_CASE("scalar restart example averages to 4") {
    // L(theta) = (theta * x - y)^2 with x = 1, y = 0; theta_0 taken from the seed.
    const std::vector<std::uint64_t> seeds{1, 3};
    auto grad = [](std::size_t, std::uint64_t seed) {
        Tape tape;
        const NodeId theta = tape.parameter(Tensor({1, 1}, {static_cast<double>(seed)}));
        const NodeId loss = tape.mse(tape.matmul(tape.input(Tensor({1, 1}, {1.0})), theta),
                                     tape.input(Tensor({1, 1}, {0.0})));
        return std::vector<double>{backward(tape, loss)[0][0]};
    };
    CHECK(grad(0, 1)[0] == 2.0);
    CHECK(grad(1, 3)[0] == 6.0);
    CHECK(expected_gradient(seeds, grad, Execution::Serial) == std::vector<double>{4.0});
    CHECK(expected_gradient(seeds, grad, Execution::Parallel) == std::vector<double>{4.0});
}

TEST_CASE("one restart is that restart's gradient") {
    const auto ds = blobs(1);
    const auto spec = small_spec(4);
    const auto seeds = seed_schedule(5, 1);
    const auto pge = estimate_pge(ds, spec, LossMode::UnsupervisedReconstruction, 16, seeds);
    const auto g = restart_gradient(ds, spec, LossMode::UnsupervisedReconstruction, 16, seeds[0],
                                    InitDistribution::FanInScaledGaussian);
    CHECK(pge.vector == g.grad);
    CHECK(pge.vector.size() == backbone_parameter_count(spec));
    CHECK_NOTHROW(pge.validate());
}

TEST_CASE("running mean equals the direct mean") {
    const auto ds = blobs(2);
    const auto spec = small_spec(4);
    for (std::size_t I : {1, 2, 8, 64}) {
        const auto seeds = seed_schedule(11, I);
        const auto pge = estimate_pge(ds, spec, LossMode::UnsupervisedReconstruction, 32, seeds);
        std::vector<long double> sum(pge.vector.size(), 0.0L);
        for (std::size_t i = 0; i < I; ++i) {
            const auto g = restart_gradient(ds, spec, LossMode::UnsupervisedReconstruction, 32, seeds[i],
                                            InitDistribution::FanInScaledGaussian);
            for (std::size_t k = 0; k < g.grad.size(); ++k) sum[k] += g.grad[k];
        }
        std::vector<double> direct(sum.size());
        for (std::size_t k = 0; k < sum.size(); ++k) direct[k] = static_cast<double>(sum[k] / static_cast<long double>(I));
        CHECK(oracle::max_relative_error(pge.vector, direct, 1e-300) <= 1e-12);
    }
}

TEST_CASE("serial and parallel estimates are bit-identical") {
    const auto ds = blobs(3);
    const auto spec = small_spec(4);
    const auto seeds = seed_schedule(4, 12);
    for (LossMode mode : {LossMode::UnsupervisedReconstruction, LossMode::SupervisedCrossEntropy}) {
        const auto a = estimate_pge(ds, spec, mode, 24, seeds, InitDistribution::FanInScaledGaussian, Execution::Serial);
        const auto b = estimate_pge(ds, spec, mode, 24, seeds, InitDistribution::FanInScaledGaussian, Execution::Parallel);
        CHECK(a.vector == b.vector);
    }
}

TEST_CASE("estimation performs no optimizer steps") {
    const auto before = optimizer_steps_taken();
    const auto ds = blobs(3);
    const auto spec = small_spec(4);
    const auto seeds = seed_schedule(4, 6);
    const auto a = estimate_pge(ds, spec, LossMode::UnsupervisedReconstruction, 24, seeds);
    const auto b = estimate_pge(ds, spec, LossMode::UnsupervisedReconstruction, 24, seeds);
    CHECK(optimizer_steps_taken() == before);
    CHECK(a.vector == b.vector);
}

TEST_CASE("estimation preconditions") {
    const auto ds = blobs(3);
    const auto spec = small_spec(4);
    CHECK_THROWS_AS(estimate_pge(ds, spec, LossMode::UnsupervisedReconstruction, 10, {}), InvalidArgument);
    CHECK_THROWS_AS(estimate_pge(ds, spec, LossMode::UnsupervisedReconstruction, ds.size() + 1, seed_schedule(1, 2)),
                    InvalidArgument);
    CHECK_THROWS_AS(estimate_pge(ds, small_spec(5), LossMode::UnsupervisedReconstruction, 10, seed_schedule(1, 2)),
                    ShapeError);
}

TEST_CASE("non-finite gradients name the restart") {
    const std::vector<std::uint64_t> seeds{0, 0, 0};
    auto grad = [](std::size_t i, std::uint64_t) {
        return std::vector<double>{i == 2 ? std::nan("") : 1.0};
    };
    for (Execution exec : {Execution::Serial, Execution::Parallel}) {
        try {
            expected_gradient(seeds, grad, exec);
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(e.index() == 2);
        }
    }
}

TEST_CASE("gap hand values") {
    CHECK(gap_value(std::vector<double>{0, 1}, std::vector<double>{1, 0}) == doctest::Approx(1.4142135624).epsilon(1e-10));
    CHECK(gap_value(std::vector<double>{3, 4}, std::vector<double>{3, 4}) == 0.0);
    CHECK_THROWS_AS(gap_value(std::vector<double>{0, 0}, std::vector<double>{1, 0}), NumericError);
    CHECK_THROWS_AS(gap_value(std::vector<double>{1}, std::vector<double>{1, 0}), ShapeError);
}

TEST_CASE("gap agrees with a high-precision evaluation") {
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const auto a = random_vector(gen, 5), b = random_vector(gen, 5);
        const double g = gap_value(a, b);
        CHECK(g >= 0.0);
        CHECK(g == gap_value(b, a));
        CHECK(oracle::relative_error(g, oracle::gap_high_precision(a, b)) <= 1e-12);
    }
}

TEST_CASE("schwarz inequality") {
    const auto c = schwarz_check(std::vector<double>{1, 1}, std::vector<double>{1, 1});
    CHECK(c.hadamard_norm == doctest::Approx(std::sqrt(2.0)));
    CHECK(c.norm_product == doctest::Approx(2.0));
    CHECK(c.holds());
    const auto eq = schwarz_check(std::vector<double>{0, 3, 0}, std::vector<double>{0, 2, 0});
    CHECK(eq.hadamard_norm == eq.norm_product);
    CHECK(eq.holds());

    std::mt19937_64 gen(7);
    std::uniform_int_distribution<std::size_t> len(1, 64);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = len(gen);
        const auto a = random_vector(gen, n), b = random_vector(gen, n);
        const auto r = schwarz_check(a, b);
        CHECK(r.holds());
        CHECK(r.elementwise_quotient >= r.product_quotient);
    }
}

TEST_CASE("ranking with the target among the sources") {
    const auto target = blobs(5, 4, 0.0, "target");
    std::vector<LabeledDataset> sources{blobs(6, 4, 0.0, "other"), target, blobs(7, 4, 0.0, "third")};
    const PgeParams params{6, 32, 9, InitDistribution::FanInScaledGaussian};
    const auto r = rank_sources(sources, target, small_spec(4), LossMode::UnsupervisedReconstruction, params);
    CHECK(r.order.front().source == "target");
    CHECK(r.order.front().value == 0.0);
    CHECK(r.schwarz_violations == 0);

    std::vector<LabeledDataset> shuffled{sources[2], sources[0], sources[1]};
    const auto s = rank_sources(shuffled, target, small_spec(4), LossMode::UnsupervisedReconstruction, params);
    REQUIRE(s.order.size() == r.order.size());
    for (std::size_t i = 0; i < r.order.size(); ++i) {
        CHECK(s.order[i].source == r.order[i].source);
        CHECK(s.order[i].value == r.order[i].value);
    }
    CHECK_THROWS_AS(rank_sources(std::span(sources).first(1), target, small_spec(4),
                                 LossMode::UnsupervisedReconstruction, params),
                    InvalidArgument);
}

TEST_CASE("rotated variants rank by angle") {
    const auto target = blobs(8, 4, 0.0, "target");
    std::vector<LabeledDataset> sources;
    for (int a : {40, 0, 20, 10, 30}) sources.push_back(blobs(8, 4, a, ("rot" + std::to_string(a)).c_str()));
    const PgeParams params{10, 64, 3, InitDistribution::FanInScaledGaussian};
    const auto r = rank_sources(sources, target, small_spec(4), LossMode::UnsupervisedReconstruction, params);
    std::vector<std::string> names;
    for (const auto& g : r.order) names.push_back(g.source);
    CHECK(names == std::vector<std::string>{"rot0", "rot10", "rot20", "rot30", "rot40"});
}

TEST_CASE("more restarts reduce the spread of the gap") {
    const auto source = blobs(9, 4, 0.0, "source");
    const auto target = blobs(10, 4, 0.0, "target");
    const auto spec = small_spec(4);
    auto spread = [&](std::size_t I) {
        std::vector<double> gaps;
        for (std::uint64_t trial = 0; trial < 30; ++trial) {
            const auto seeds = seed_schedule(1000 + trial, I);
            const auto s = estimate_pge(source, spec, LossMode::UnsupervisedReconstruction, 32, seeds);
            const auto t = estimate_pge(target, spec, LossMode::UnsupervisedReconstruction, 32, seeds);
            gaps.push_back(transfer_gap(s, t).value);
        }
        double mean = 0.0, var = 0.0;
        for (double g : gaps) mean += g / static_cast<double>(gaps.size());
        for (double g : gaps) var += (g - mean) * (g - mean) / static_cast<double>(gaps.size() - 1);
        return var;
    };
    CHECK(spread(32) / spread(4) < 1.0);
}

TEST_CASE("artifact round trip and header") {
    const fs::path dir = fs::temp_directory_path() / "pgekit_test_pge";
    fs::create_directories(dir);
    const auto ds = blobs(11);
    const auto pge = estimate_pge(ds, small_spec(4), LossMode::UnsupervisedReconstruction, 16, seed_schedule(1, 3));
    write_pge_artifact(dir / "a.pge", pge);
    const auto back = read_pge_artifact(dir / "a.pge");
    CHECK(back.vector == pge.vector);
    CHECK(back.restarts == 3);

    const std::string bytes = read_file(dir / "a.pge");
    CHECK(bytes.size() == 16 + 8 * pge.vector.size());
    CHECK(bytes.substr(0, 4) == "PGE1");
    CHECK(static_cast<unsigned char>(bytes[4]) == (pge.vector.size() & 0xff));
    CHECK(static_cast<unsigned char>(bytes[12]) == 3);

    write_file_atomic(dir / "bad.pge", "PGE2" + bytes.substr(4));
    CHECK_THROWS_AS(read_pge_artifact(dir / "bad.pge"), ParseError);
    write_file_atomic(dir / "short.pge", bytes.substr(0, bytes.size() - 1));
    CHECK_THROWS_AS(read_pge_artifact(dir / "short.pge"), ParseError);
}
