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
#include <random>

#include "oracles.hpp"
#include "pge/error.hpp"
#include "pge/rng.hpp"
#include "pge/tape.hpp"

using namespace pge;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

// Builds a loss from parameter tensors and checks backward against central
// differences on every coordinate.
void check_gradients(const std::vector<Shape>& shapes, std::uint64_t seed,
                     const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& build) {
    std::vector<double> flat;
    for (const auto& s : shapes) {
        auto v = random_values(element_count(s), seed + flat.size());
        flat.insert(flat.end(), v.begin(), v.end());
    }
    auto eval = [&](const std::vector<double>& x, std::vector<Tensor>* grads) {
        Tape tape;
        std::vector<NodeId> ids;
        std::size_t off = 0;
        for (const auto& s : shapes) {
            const std::size_t n = element_count(s);
            ids.push_back(tape.parameter(Tensor(s, std::vector<double>(x.begin() + off, x.begin() + off + n))));
            off += n;
        }
        const NodeId loss = build(tape, ids);
        if (grads) *grads = backward(tape, loss);
        return tape.value(loss).item();
    };
    std::vector<Tensor> grads;
    eval(flat, &grads);
    std::vector<double> analytic;
    for (const auto& g : grads) analytic.insert(analytic.end(), g.values().begin(), g.values().end());
    const auto numeric = oracle::central_difference([&](const std::vector<double>& x) { return eval(x, nullptr); }, flat);
    CHECK(oracle::max_relative_error(analytic, numeric) <= 1e-6);
}

}  // namespace

TEST_CASE("scalar linear layer with squared error") {
    Tape tape;
    const NodeId theta = tape.parameter(Tensor({1, 1}, {0.0}));
    const NodeId x = tape.input(Tensor({1, 1}, {1.0}));
    const NodeId t = tape.input(Tensor({1, 1}, {2.0}));
    const NodeId loss = tape.mse(tape.matmul(x, theta), t);
    CHECK(tape.value(loss).item() == 4.0);
    const auto g = backward(tape, loss);
    REQUIRE(g.size() == 1);
    CHECK(g[0][0] == -4.0);
}

TEST_CASE("reshape to the same shape is the identity") {
    Tape tape;
    Tensor v({2, 3}, random_values(6, 3));
    const NodeId a = tape.input(v);
    CHECK(tape.value(tape.reshape(a, {2, 3})) == v);
}

TEST_CASE("unused parameter gets a zero gradient") {
    Tape tape;
    const NodeId a = tape.parameter(Tensor({2, 2}, {1, 2, 3, 4}));
    const NodeId unused = tape.parameter(Tensor({3}, {5, 6, 7}));
    const NodeId loss = tape.mean(tape.relu(a));
    const auto g = backward(tape, loss);
    CHECK(g[1] == Tensor({3}));
    CHECK(g[0] == Tensor({2, 2}, {0.25, 0.25, 0.25, 0.25}));
    (void)unused;
}

TEST_CASE("backward needs a scalar loss") {
    Tape tape;
    const NodeId a = tape.parameter(Tensor({2, 2}, {1, 2, 3, 4}));
    CHECK_THROWS_AS(backward(tape, tape.relu(a)), ShapeError);
}

TEST_CASE("shape errors name the primitive and both shapes") {
    Tape tape;
    const NodeId a = tape.input(Tensor({2, 3}));
    const NodeId b = tape.input(Tensor({2, 3}));
    try {
        tape.matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2, 3]") != std::string::npos);
    }
    CHECK_THROWS_AS(tape.bias_add(a, tape.input(Tensor({2}))), ShapeError);
    CHECK_THROWS_AS(tape.mse(a, tape.input(Tensor({3, 2}))), ShapeError);
    CHECK_THROWS_AS(tape.softmax_cross_entropy(a, {0}), ShapeError);
    CHECK_THROWS_AS(tape.softmax_cross_entropy(a, {0, 3}), InvalidArgument);
    CHECK_THROWS_AS(tape.reshape(a, {4}), ShapeError);
}

TEST_CASE("non-finite values surface as errors") {
    Tape tape;
    const NodeId a = tape.parameter(Tensor({1, 1}, {1e300}));
    const NodeId b = tape.input(Tensor({1, 1}, {1e300}));
    CHECK_THROWS_AS(tape.matmul(a, b), NumericError);
}

TEST_CASE("two-layer MLP loss matches a scalar re-evaluation") {
    const std::size_t n = 4, d = 3, h = 5, o = 2;
    const auto x = random_values(n * d, 11), w1 = random_values(d * h, 12), b1 = random_values(h, 13),
               w2 = random_values(h * o, 14), b2 = random_values(o, 15), t = random_values(n * o, 16);
    Tape tape;
    const NodeId X = tape.input(Tensor({n, d}, x));
    const NodeId hidden = tape.relu(tape.bias_add(tape.matmul(X, tape.parameter(Tensor({d, h}, w1))),
                                                  tape.parameter(Tensor({h}, b1))));
    const NodeId out = tape.bias_add(tape.matmul(hidden, tape.parameter(Tensor({h, o}, w2))),
                                     tape.parameter(Tensor({o}, b2)));
    const double loss = tape.value(tape.mse(out, tape.input(Tensor({n, o}, t)))).item();

    double expect = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> a(h);
        for (std::size_t j = 0; j < h; ++j) {
            double z = b1[j];
            for (std::size_t k = 0; k < d; ++k) z += x[i * d + k] * w1[k * h + j];
            a[j] = z > 0 ? z : 0.0;
        }
        for (std::size_t c = 0; c < o; ++c) {
            double y = b2[c];
            for (std::size_t j = 0; j < h; ++j) y += a[j] * w2[j * o + c];
            expect += (y - t[i * o + c]) * (y - t[i * o + c]);
        }
    }
    expect /= static_cast<double>(n * o);
    CHECK(oracle::relative_error(loss, expect) <= 1e-12);
}

TEST_CASE("matmul gradient matches finite differences") {
    check_gradients({{3, 4}, {4, 2}}, 21, [](Tape& t, const std::vector<NodeId>& p) { return t.mean(t.matmul(p[0], p[1])); });
}

TEST_CASE("bias add gradient matches finite differences") {
    check_gradients({{3, 4}, {4}, {3, 4}}, 22, [](Tape& t, const std::vector<NodeId>& p) {
        return t.mse(t.bias_add(p[0], p[1]), p[2]);
    });
    check_gradients({{2, 3, 2, 2}, {3}, {2, 3, 2, 2}}, 23, [](Tape& t, const std::vector<NodeId>& p) {
        return t.mse(t.bias_add(p[0], p[1]), p[2]);
    });
}

TEST_CASE("relu gradient matches finite differences") {
    check_gradients({{4, 5}, {4, 5}}, 24, [](Tape& t, const std::vector<NodeId>& p) { return t.mse(t.relu(p[0]), p[1]); });
}

TEST_CASE("conv2d gradient matches finite differences") {
    check_gradients({{2, 2, 5, 4}, {3, 2, 3, 3}, {2, 3, 3, 2}}, 25, [](Tape& t, const std::vector<NodeId>& p) {
        return t.mse(t.conv2d(p[0], p[1]), p[2]);
    });
}

TEST_CASE("reshape gradient matches finite differences") {
    check_gradients({{2, 6}, {3, 4}}, 26, [](Tape& t, const std::vector<NodeId>& p) {
        return t.mse(t.reshape(p[0], {3, 4}), p[1]);
    });
}

TEST_CASE("softmax cross-entropy gradient matches finite differences") {
    check_gradients({{5, 4}}, 27, [](Tape& t, const std::vector<NodeId>& p) {
        return t.softmax_cross_entropy(p[0], {0, 3, 1, 1, 2});
    });
}

TEST_CASE("softmax cross-entropy is stable for large logits") {
    Tape tape;
    const NodeId l = tape.parameter(Tensor({1, 2}, {1000.0, 0.0}));
    CHECK(tape.value(tape.softmax_cross_entropy(l, {0})).item() == doctest::Approx(0.0));
}

TEST_CASE("seed gradient scales backward linearly") {
    Tape tape;
    const NodeId a = tape.parameter(Tensor({3, 3}, random_values(9, 30)));
    const NodeId b = tape.parameter(Tensor({3, 2}, random_values(6, 31)));
    const NodeId loss = tape.softmax_cross_entropy(tape.relu(tape.matmul(a, b)), {0, 1, 1});
    const auto g1 = backward(tape, loss, 1.0);
    const auto g2 = backward(tape, loss, 2.0);
    for (std::size_t p = 0; p < g1.size(); ++p)
        for (std::size_t i = 0; i < g1[p].size(); ++i) CHECK(g2[p][i] == 2.0 * g1[p][i]);
}

TEST_CASE("forward and backward are deterministic") {
    auto run = [] {
        Tape tape;
        const NodeId a = tape.parameter(Tensor({4, 3}, random_values(12, 40)));
        const NodeId b = tape.parameter(Tensor({3, 3}, random_values(9, 41)));
        const NodeId loss = tape.mean(tape.relu(tape.matmul(a, b)));
        return backward(tape, loss);
    };
    CHECK(run() == run());
}
