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

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "pge/baselines.hpp"
#include "pge/error.hpp"
#include "pge/train.hpp"

using namespace pge;

namespace {

FeatureMatrix features(std::size_t cols, std::vector<double> values, std::vector<std::size_t> labels,
                       std::size_t classes) {
    FeatureMatrix f;
    f.rows = labels.size();
    f.cols = cols;
    f.values = std::move(values);
    f.labels = std::move(labels);
    f.num_classes = classes;
    return f;
}

FeatureMatrix random_features(std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd;
    std::vector<double> v(n * d);
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % classes;
        for (std::size_t j = 0; j < d; ++j) v[i * d + j] = nd(gen) + (j == y[i] % d ? 1.5 : 0.0);
    }
    return features(d, v, y, classes);
}

FeatureMatrix permuted(const FeatureMatrix& f, std::uint64_t seed) {
    std::vector<std::size_t> order(f.rows);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), std::mt19937_64(seed));
    FeatureMatrix out = f;
    for (std::size_t i = 0; i < f.rows; ++i) {
        out.labels[i] = f.labels[order[i]];
        for (std::size_t j = 0; j < f.cols; ++j) out.values[i * f.cols + j] = f.at(order[i], j);
    }
    return out;
}

// log N(y | 0, F F^T / alpha + I / beta) / n for a single feature column f.
double evidence_1d(const std::vector<double>& f, const std::vector<double>& y, double alpha, double beta) {
    const double n = static_cast<double>(f.size());
    double ff = 0, fy = 0, yy = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        ff += f[i] * f[i];
        fy += f[i] * y[i];
        yy += y[i] * y[i];
    }
    const double logdet = -n * std::log(beta) + std::log1p(beta * ff / alpha);
    const double quad = beta * yy - beta * beta * fy * fy / (alpha + beta * ff);
    return (-0.5 * n * std::log(2 * std::numbers::pi) - 0.5 * logdet - 0.5 * quad) / n;
}

LabeledDataset separable(std::uint64_t seed) {
    SyntheticSpec s;
    s.num_classes = 2;
    s.samples_per_class = 40;
    s.feature_dim = 4;
    s.center_spread = 6.0;
    s.seed = seed;
    return standardize(make_synthetic(s));
}

}  // namespace

TEST_CASE("leep") {
    PseudoLabelMatrix onehot{4, 2, {1, 0, 0, 1, 1, 0, 0, 1}};
    CHECK(leep(onehot, std::vector<std::size_t>{0, 1, 0, 1}) == doctest::Approx(0.0));

    // Uniform pseudo rows: P(y, z) = 1/4 for all pairs, P(y | z) = 1/2, so
    // every predicted probability is 1/2.
    PseudoLabelMatrix uniform{4, 2, std::vector<double>(8, 0.5)};
    CHECK(leep(uniform, std::vector<std::size_t>{0, 1, 0, 1}) == doctest::Approx(std::log(0.5)).epsilon(1e-12));

    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int t = 0; t < 20; ++t) {
        PseudoLabelMatrix p{10, 3, std::vector<double>(30)};
        for (std::size_t i = 0; i < 10; ++i) {
            double s = 0;
            for (std::size_t z = 0; z < 3; ++z) s += p.values[i * 3 + z] = u(gen);
            for (std::size_t z = 0; z < 3; ++z) p.values[i * 3 + z] /= s;
        }
        std::vector<std::size_t> y(10);
        for (std::size_t i = 0; i < 10; ++i) y[i] = i % 2;
        CHECK(leep(p, y) <= 0.0);
    }
}

TEST_CASE("nce") {
    CHECK(nce(std::vector<std::size_t>{0, 1, 2, 1}, std::vector<std::size_t>{0, 1, 2, 1}) == 0.0);
    CHECK(nce(std::vector<std::size_t>{0, 0, 0, 0}, std::vector<std::size_t>{0, 1, 0, 1}) ==
          doctest::Approx(-std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS(nce(std::vector<std::size_t>{}, std::vector<std::size_t>{}));

    std::mt19937_64 gen(5);
    std::uniform_int_distribution<std::size_t> zd(0, 3), yd(0, 2);
    for (int t = 0; t < 50; ++t) {
        std::vector<std::size_t> z(40), y(40);
        std::map<std::pair<std::size_t, std::size_t>, double> joint;
        std::map<std::size_t, double> zc;
        for (std::size_t i = 0; i < 40; ++i) {
            z[i] = zd(gen);
            y[i] = yd(gen);
            joint[{z[i], y[i]}] += 1;
            zc[z[i]] += 1;
        }
        double h = 0.0;
        for (const auto& [k, c] : joint) h -= (c / 40.0) * std::log(c / zc[k.first]);
        CHECK(oracle::relative_error(nce(z, y), -h, 1e-300) <= 1e-12);
    }
}

TEST_CASE("hscore") {
    // Equal class means.
    CHECK(hscore(features(2, {1, 0, -1, 0, 1, 0, -1, 0}, {0, 0, 1, 1}, 2)) == doctest::Approx(0.0));

    const std::vector<double> v{1.0, 2.0, 2.0, 0.5, -1.0, 1.0, 0.0, -2.0};
    const std::vector<std::size_t> y{0, 0, 1, 1};
    const double h = hscore(features(2, v, y, 2));
    // Oracle with explicit 2x2 algebra.
    double m[2] = {0, 0};
    for (int i = 0; i < 4; ++i) m[0] += v[2 * i] / 4, m[1] += v[2 * i + 1] / 4;
    double c[2][2] = {{0, 0}, {0, 0}};
    for (int i = 0; i < 4; ++i)
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) c[a][b] += (v[2 * i + a] - m[a]) * (v[2 * i + b] - m[b]) / 4;
    const double g0[2] = {(v[0] + v[2]) / 2 - m[0], (v[1] + v[3]) / 2 - m[1]};
    const double g1[2] = {(v[4] + v[6]) / 2 - m[0], (v[5] + v[7]) / 2 - m[1]};
    double cb[2][2];
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) cb[a][b] = (g0[a] * g0[b] + g1[a] * g1[b]) / 2;
    const double lambda = 1e-8 * (c[0][0] + c[1][1]) / 2;
    c[0][0] += lambda;
    c[1][1] += lambda;
    const double det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    const double inv[2][2] = {{c[1][1] / det, -c[0][1] / det}, {-c[1][0] / det, c[0][0] / det}};
    double expect = 0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) expect += inv[a][b] * cb[b][a];
    CHECK(std::abs(h - expect) <= 1e-9);

    std::vector<double> vv = v;
    vv.insert(vv.end(), v.begin(), v.end());
    std::vector<std::size_t> yy = y;
    yy.insert(yy.end(), y.begin(), y.end());
    CHECK(hscore(features(2, vv, yy, 2)) == doctest::Approx(h).epsilon(1e-9));
    CHECK(hscore(random_features(30, 4, 3, 1)) >= 0.0);
}

TEST_CASE("logme matches a grid search") {
    const std::vector<double> f{0.5, -1.0, 2.0, 0.3};
    const std::vector<double> y{1.0, 0.0, 1.0, 0.0};
    const auto F = features(1, f, {0, 1, 0, 1}, 2);
    const auto fit = logme_fit(F, y);
    CHECK(logme_evidence(F, y, fit.alpha, fit.beta) == doctest::Approx(fit.evidence).epsilon(1e-12));
    CHECK(evidence_1d(f, y, fit.alpha, fit.beta) == doctest::Approx(fit.evidence).epsilon(1e-10));

    double best = -1e300, la = 0, lb = 0;
    for (int i = 0; i <= 400; ++i)
        for (int j = 0; j <= 400; ++j) {
            const double a = -4 + 8.0 * i / 400, b = -4 + 8.0 * j / 400;
            const double e = evidence_1d(f, y, std::pow(10.0, a), std::pow(10.0, b));
            if (e > best) best = e, la = a, lb = b;
        }
    for (int i = -200; i <= 200; ++i)
        for (int j = -200; j <= 200; ++j) {
            const double a = la + 0.02 * i / 200, b = lb + 0.02 * j / 200;
            best = std::max(best, evidence_1d(f, y, std::pow(10.0, a), std::pow(10.0, b)));
        }
    CHECK(std::abs(fit.evidence - best) <= 1e-3);
}

TEST_CASE("logme evidence never decreases") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto F = random_features(40, 5, 3, seed);
        std::vector<double> y(40);
        for (std::size_t i = 0; i < 40; ++i) y[i] = F.labels[i] == 1 ? 1.0 : 0.0;
        const auto fit = logme_fit(F, y);
        CHECK(fit.iterations <= 100);
        for (std::size_t k = 1; k < fit.trace.size(); ++k) CHECK(fit.trace[k] >= fit.trace[k - 1] - 1e-12);
    }
}

TEST_CASE("logme ranking survives a common rescale") {
    const auto a = random_features(40, 3, 2, 1);
    auto b = random_features(40, 3, 2, 2);
    for (auto& v : b.values) v *= 0.3;
    auto scaled = [](FeatureMatrix f) {
        for (auto& v : f.values) v *= 10.0;
        return f;
    };
    const bool before = logme(a) > logme(b);
    CHECK(logme(scaled(a)) != logme(a));
    CHECK((logme(scaled(a)) > logme(scaled(b))) == before);
}

TEST_CASE("gbc") {
    CHECK(gbc(features(1, {-1, 1, -1, 1}, {0, 0, 1, 1}, 2)) == doctest::Approx(-1.0));
    // Means 0 and 1, unit population variance in both classes.
    const double expect = -std::exp(-1.0 / 8.0);
    CHECK(std::abs(gbc(features(1, {-1, 1, 0, 2}, {0, 0, 1, 1}, 2)) - expect) <= 1e-12);
    CHECK(gbc(features(1, {-1, 1, 199, 201}, {0, 0, 1, 1}, 2)) > -1e-10);
    CHECK_THROWS_AS(gbc(features(1, {-1, 1, 3}, {0, 0, 1}, 2)), InvalidArgument);
    const double s = gbc(random_features(30, 3, 3, 4));
    CHECK(s < 0.0);
    CHECK(s > -3.0);
}

TEST_CASE("scores ignore sample order") {
    const auto F = random_features(24, 3, 3, 9);
    const auto P = permuted(F, 1);
    CHECK(hscore(P) == doctest::Approx(hscore(F)).epsilon(1e-10));
    CHECK(logme(P) == doctest::Approx(logme(F)).epsilon(1e-10));
    CHECK(gbc(P) == doctest::Approx(gbc(F)).epsilon(1e-12));
}

TEST_CASE("pretraining") {
    const auto ds = separable(3);
    ModelSpec spec = default_model_spec(4);
    spec.backbone.widths = {8};
    PretrainOptions opt;
    opt.epochs = 200;
    opt.seed = 5;
    const auto a = pretrain_source(ds, spec, opt);
    CHECK(a.train_accuracy == 1.0);
    CHECK(pretrain_source(ds, spec, opt).state == a.state);

    opt.epochs = 0;
    const auto none = pretrain_source(ds, spec, opt);
    CHECK(none.steps == 0);
    CHECK(none.state == init_params(spec.for_mode(LossMode::SupervisedCrossEntropy, 2),
                                    {InitDistribution::FanInScaledGaussian, 5}));
}

TEST_CASE("pipeline from a pretrained source") {
    const auto ds = separable(4);
    ModelSpec spec = default_model_spec(4);
    spec.backbone.widths = {8};
    PretrainOptions opt;
    opt.epochs = 20;
    const auto src = pretrain_source(ds, spec, opt);
    const auto pseudo = pseudo_labels(src.state, ds);
    CHECK_NOTHROW(pseudo.validate());
    const auto feats = extract_features(src.state, ds);
    CHECK(feats.cols == 8);
    CHECK(feats.rows == ds.size());
    for (BaselineMetric m : all_baseline_metrics()) CHECK(std::isfinite(baseline_score(m, src.state, ds)));
    CHECK(baseline_score(BaselineMetric::Leep, src.state, ds) <= 0.0);
    CHECK(baseline_score(BaselineMetric::Nce, src.state, ds) <= 0.0);
}

TEST_CASE("metric names") {
    CHECK(parse_baseline_metric("logme") == BaselineMetric::LogMe);
    try {
        parse_baseline_metric("kl");
        FAIL("expected InvalidArgument");
    } catch (const InvalidArgument& e) {
        const std::string msg = e.what();
        for (const char* name : {"leep", "nce", "hscore", "logme", "gbc"}) CHECK(msg.find(name) != std::string::npos);
    }
}

TEST_CASE("feature csv round trip") {
    const auto path = std::filesystem::temp_directory_path() / "pgekit_features.csv";
    const auto F = random_features(12, 3, 3, 8);
    write_feature_csv(path, F);
    const auto back = read_feature_csv(path);
    CHECK(back.values == F.values);
    CHECK(back.labels == F.labels);
    CHECK(back.num_classes == 3);
}
