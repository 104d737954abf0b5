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

// Serial against OpenMP execution for the two parallel kernels: restarts
// inside one estimate, and subset cells inside the stability suite.

#include <benchmark/benchmark.h>

#include <cmath>

#include "pge/harness.hpp"

using namespace pge;

namespace {

LabeledDataset blobs(double angle, const char* name) {
    SyntheticSpec s;
    s.family = angle == 0.0 ? SyntheticFamily::GaussianBlobs : SyntheticFamily::RotatedVariant;
    s.angle_degrees = angle;
    s.num_classes = 10;
    s.samples_per_class = 100;
    s.feature_dim = 16;
    s.seed = 1;
    s.name = name;
    return standardize(make_synthetic(s));
}

Execution mode(const benchmark::State& state) { return state.range(0) ? Execution::Parallel : Execution::Serial; }

void BM_EstimatePge(benchmark::State& state) {
    const auto ds = blobs(0.0, "target");
    const auto spec = default_model_spec(16);
    const auto seeds = seed_schedule(1, 32);
    for (auto _ : state) {
        auto g = estimate_pge(ds, spec, LossMode::UnsupervisedReconstruction, 256, seeds,
                              InitDistribution::FanInScaledGaussian, mode(state));
        benchmark::DoNotOptimize(g.vector.data());
    }
    state.SetLabel(state.range(0) ? "parallel" : "serial");
}
BENCHMARK(BM_EstimatePge)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_StabilityCells(benchmark::State& state) {
    const auto target = blobs(0.0, "target");
    const std::vector<LabeledDataset> sources{blobs(10.0, "a"), blobs(30.0, "b"), blobs(50.0, "c")};
    StabilityOptions o;
    o.ratios = {0.2, 0.6, 1.0};
    o.repeats = 4;
    o.pge = PgeParams{8, 256, 1, InitDistribution::FanInScaledGaussian};
    o.exec = mode(state);
    const auto spec = default_model_spec(16);
    for (auto _ : state) {
        auto r = evaluate_stability(sources, target, spec, o);
        benchmark::DoNotOptimize(r.gap_cv.data());
    }
    state.SetLabel(state.range(0) ? "parallel" : "serial");
}
BENCHMARK(BM_StabilityCells)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Gap(benchmark::State& state) {
    std::vector<double> a(static_cast<std::size_t>(state.range(0))), b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::sin(0.1 * i), b[i] = std::cos(0.3 * i);
    for (auto _ : state) benchmark::DoNotOptimize(gap_value(a, b));
}
BENCHMARK(BM_Gap)->Arg(1 << 10)->Arg(1 << 16);

}  // namespace

BENCHMARK_MAIN();
