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

#include "pge/tape.hpp"

#include <cmath>
#include <optional>
#include <string>

#include "pge/error.hpp"

namespace pge {

std::string_view op_name(OpKind kind) noexcept {
    switch (kind) {
        case OpKind::Input: return "input";
        case OpKind::Parameter: return "parameter";
        case OpKind::MatMul: return "matmul";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::BiasAdd: return "bias_add";
        case OpKind::Relu: return "relu";
        case OpKind::Reshape: return "reshape";
        case OpKind::MeanSquaredError: return "mse";
        case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
        case OpKind::Mean: return "mean";
    }
    return "unknown";
}

namespace {

[[noreturn]] void shape_mismatch(std::string_view primitive, const Shape& a, const Shape& b,
                                 std::string_view detail) {
    throw ShapeError(std::string(primitive) + ": " + std::string(detail) + " (got " +
                     to_string(a) + " and " + to_string(b) + ")");
}

void accumulate(std::optional<Tensor>& slot, const Tensor& delta) {
    if (!slot) {
        slot = delta;
        return;
    }
    auto dst = slot->values();
    auto src = delta.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

const Tape::Node& Tape::node(NodeId id, std::string_view primitive) const {
    if (id.index >= nodes_.size()) {
        throw InvalidArgument(std::string(primitive) + ": node " + std::to_string(id.index) +
                              " is not on this tape");
    }
    return nodes_[id.index];
}

NodeId Tape::push(Node n) {
    if (!n.value.all_finite()) {
        throw NumericError(std::string(op_name(n.op)) + ": produced a non-finite value");
    }
    nodes_.push_back(std::move(n));
    return NodeId{nodes_.size() - 1};
}

const Tensor& Tape::value(NodeId id) const { return node(id, "value").value; }

OpKind Tape::kind(NodeId id) const { return node(id, "kind").op; }

NodeId Tape::input(Tensor value) {
    Node n{OpKind::Input};
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Tape::parameter(Tensor value) {
    Node n{OpKind::Parameter};
    n.value = std::move(value);
    n.needs_grad = true;
    NodeId id = push(std::move(n));
    parameters_.push_back(id);
    return id;
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Tensor& x = node(a, "matmul").value;
    const Tensor& y = node(b, "matmul").value;
    if (x.rank() != 2 || y.rank() != 2) shape_mismatch("matmul", x.shape(), y.shape(), "operands must be rank 2");
    if (x.dim(1) != y.dim(0)) shape_mismatch("matmul", x.shape(), y.shape(), "inner dimensions differ");
    const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = x[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += xv * y[p * n + j];
        }
    }
    Node r{OpKind::MatMul, a.index, b.index};
    r.value = std::move(out);
    r.needs_grad = nodes_[a.index].needs_grad || nodes_[b.index].needs_grad;
    return push(std::move(r));
}

NodeId Tape::conv2d(NodeId xi, NodeId wi) {
    const Tensor& x = node(xi, "conv2d").value;
    const Tensor& w = node(wi, "conv2d").value;
    if (x.rank() != 4 || w.rank() != 4) shape_mismatch("conv2d", x.shape(), w.shape(), "operands must be rank 4");
    if (x.dim(1) != w.dim(1)) shape_mismatch("conv2d", x.shape(), w.shape(), "channel counts differ");
    if (w.dim(2) > x.dim(2) || w.dim(3) > x.dim(3)) {
        shape_mismatch("conv2d", x.shape(), w.shape(), "kernel larger than input");
    }
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const std::size_t OH = H - KH + 1, OW = W - KW + 1;
    Tensor out({N, O, OH, OW});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < OH; ++i)
                for (std::size_t j = 0; j < OW; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t u = 0; u < KH; ++u)
                            for (std::size_t v = 0; v < KW; ++v)
                                acc += x[((n * C + c) * H + i + u) * W + j + v] *
                                       w[((o * C + c) * KH + u) * KW + v];
                    out[((n * O + o) * OH + i) * OW + j] = acc;
                }
    Node r{OpKind::Conv2d, xi.index, wi.index};
    r.value = std::move(out);
    r.needs_grad = nodes_[xi.index].needs_grad || nodes_[wi.index].needs_grad;
    return push(std::move(r));
}

NodeId Tape::bias_add(NodeId xi, NodeId bi) {
    const Tensor& x = node(xi, "bias_add").value;
    const Tensor& b = node(bi, "bias_add").value;
    if (x.rank() < 2 || b.rank() != 1 || b.dim(0) != x.dim(1)) {
        shape_mismatch("bias_add", x.shape(), b.shape(), "bias length must equal axis 1 of the input");
    }
    const std::size_t channels = x.dim(1);
    const std::size_t inner = x.size() / (x.dim(0) * channels);
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[(i / inner) % channels];
    Node r{OpKind::BiasAdd, xi.index, bi.index};
    r.value = std::move(out);
    r.needs_grad = nodes_[xi.index].needs_grad || nodes_[bi.index].needs_grad;
    return push(std::move(r));
}

NodeId Tape::relu(NodeId xi) {
    Tensor out = node(xi, "relu").value;
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    Node r{OpKind::Relu, xi.index};
    r.value = std::move(out);
    r.needs_grad = nodes_[xi.index].needs_grad;
    return push(std::move(r));
}

NodeId Tape::reshape(NodeId xi, Shape shape) {
    const Tensor& x = node(xi, "reshape").value;
    if (element_count(shape) != x.size()) shape_mismatch("reshape", x.shape(), shape, "element counts differ");
    Node r{OpKind::Reshape, xi.index};
    r.value = x.reshaped(std::move(shape));
    r.needs_grad = nodes_[xi.index].needs_grad;
    return push(std::move(r));
}

NodeId Tape::mse(NodeId pi, NodeId ti) {
    const Tensor& p = node(pi, "mse").value;
    const Tensor& t = node(ti, "mse").value;
    if (p.shape() != t.shape()) shape_mismatch("mse", p.shape(), t.shape(), "prediction and target shapes differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - t[i];
        acc += d * d;
    }
    Node r{OpKind::MeanSquaredError, pi.index, ti.index};
    r.value = Tensor::scalar(acc / static_cast<double>(p.size()));
    r.needs_grad = nodes_[pi.index].needs_grad || nodes_[ti.index].needs_grad;
    return push(std::move(r));
}

NodeId Tape::softmax_cross_entropy(NodeId li, std::vector<std::size_t> labels) {
    const Tensor& z = node(li, "softmax_cross_entropy").value;
    if (z.rank() != 2) shape_mismatch("softmax_cross_entropy", z.shape(), Shape{labels.size()}, "logits must be rank 2");
    const std::size_t N = z.dim(0), K = z.dim(1);
    if (labels.size() != N) {
        shape_mismatch("softmax_cross_entropy", z.shape(), Shape{labels.size()}, "one label per row required");
    }
    Tensor probs({N, K});
    double total = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        if (labels[n] >= K) {
            throw InvalidArgument("softmax_cross_entropy: label " + std::to_string(labels[n]) +
                                  " out of range for " + std::to_string(K) + " classes");
        }
        double top = z[n * K];
        for (std::size_t k = 1; k < K; ++k) top = std::max(top, z[n * K + k]);
        double denom = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            probs[n * K + k] = std::exp(z[n * K + k] - top);
            denom += probs[n * K + k];
        }
        for (std::size_t k = 0; k < K; ++k) probs[n * K + k] /= denom;
        total += std::log(denom) + top - z[n * K + labels[n]];
    }
    Node r{OpKind::SoftmaxCrossEntropy, li.index};
    r.value = Tensor::scalar(total / static_cast<double>(N));
    r.needs_grad = nodes_[li.index].needs_grad;
    r.labels = std::move(labels);
    r.cache = std::move(probs);
    return push(std::move(r));
}

NodeId Tape::mean(NodeId xi) {
    const Tensor& x = node(xi, "mean").value;
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    Node r{OpKind::Mean, xi.index};
    r.value = Tensor::scalar(acc / static_cast<double>(x.size()));
    r.needs_grad = nodes_[xi.index].needs_grad;
    return push(std::move(r));
}

std::vector<Tensor> backward(const Tape& tape, NodeId loss, double seed) {
    const auto& nodes = tape.nodes_;
    if (loss.index >= nodes.size()) throw InvalidArgument("backward: loss node is not on this tape");
    if (nodes[loss.index].value.size() != 1) {
        throw ShapeError("backward: record must terminate in a scalar, got shape " +
                         to_string(nodes[loss.index].value.shape()));
    }

    std::vector<std::optional<Tensor>> grads(loss.index + 1);
    grads[loss.index] = Tensor(nodes[loss.index].value.shape(), {seed});

    for (std::size_t id = loss.index + 1; id-- > 0;) {
        const auto& n = nodes[id];
        if (!grads[id] || !n.needs_grad) continue;
        const Tensor& g = *grads[id];

        switch (n.op) {
            case OpKind::Input:
            case OpKind::Parameter:
                break;
            case OpKind::MatMul: {
                const Tensor& a = nodes[n.lhs].value;
                const Tensor& b = nodes[n.rhs].value;
                const std::size_t m = a.dim(0), k = a.dim(1), cols = b.dim(1);
                if (nodes[n.lhs].needs_grad) {
                    Tensor da(a.shape());
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            double acc = 0.0;
                            for (std::size_t j = 0; j < cols; ++j) acc += g[i * cols + j] * b[p * cols + j];
                            da[i * k + p] = acc;
                        }
                    accumulate(grads[n.lhs], da);
                }
                if (nodes[n.rhs].needs_grad) {
                    Tensor db(b.shape());
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            const double av = a[i * k + p];
                            for (std::size_t j = 0; j < cols; ++j) db[p * cols + j] += av * g[i * cols + j];
                        }
                    accumulate(grads[n.rhs], db);
                }
                break;
            }
            case OpKind::Conv2d: {
                const Tensor& x = nodes[n.lhs].value;
                const Tensor& w = nodes[n.rhs].value;
                const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
                const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
                const std::size_t OH = H - KH + 1, OW = W - KW + 1;
                const bool want_x = nodes[n.lhs].needs_grad;
                const bool want_w = nodes[n.rhs].needs_grad;
                Tensor dx(x.shape());
                Tensor dw(w.shape());
                for (std::size_t b = 0; b < N; ++b)
                    for (std::size_t o = 0; o < O; ++o)
                        for (std::size_t i = 0; i < OH; ++i)
                            for (std::size_t j = 0; j < OW; ++j) {
                                const double gy = g[((b * O + o) * OH + i) * OW + j];
                                for (std::size_t c = 0; c < C; ++c)
                                    for (std::size_t u = 0; u < KH; ++u)
                                        for (std::size_t v = 0; v < KW; ++v) {
                                            const std::size_t xi = ((b * C + c) * H + i + u) * W + j + v;
                                            const std::size_t wi = ((o * C + c) * KH + u) * KW + v;
                                            if (want_x) dx[xi] += gy * w[wi];
                                            if (want_w) dw[wi] += gy * x[xi];
                                        }
                            }
                if (want_x) accumulate(grads[n.lhs], dx);
                if (want_w) accumulate(grads[n.rhs], dw);
                break;
            }
            case OpKind::BiasAdd: {
                if (nodes[n.lhs].needs_grad) accumulate(grads[n.lhs], g);
                if (nodes[n.rhs].needs_grad) {
                    const Tensor& x = nodes[n.lhs].value;
                    const std::size_t channels = x.dim(1);
                    const std::size_t inner = x.size() / (x.dim(0) * channels);
                    Tensor db({channels});
                    for (std::size_t i = 0; i < g.size(); ++i) db[(i / inner) % channels] += g[i];
                    accumulate(grads[n.rhs], db);
                }
                break;
            }
            case OpKind::Relu: {
                const Tensor& x = nodes[n.lhs].value;
                Tensor dx(x.shape());
                for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? g[i] : 0.0;
                accumulate(grads[n.lhs], dx);
                break;
            }
            case OpKind::Reshape:
                accumulate(grads[n.lhs], g.reshaped(nodes[n.lhs].value.shape()));
                break;
            case OpKind::MeanSquaredError: {
                const Tensor& p = nodes[n.lhs].value;
                const Tensor& t = nodes[n.rhs].value;
                const double scale = 2.0 * g[0] / static_cast<double>(p.size());
                Tensor dp(p.shape());
                for (std::size_t i = 0; i < p.size(); ++i) dp[i] = scale * (p[i] - t[i]);
                if (nodes[n.rhs].needs_grad) {
                    Tensor dt(t.shape());
                    for (std::size_t i = 0; i < t.size(); ++i) dt[i] = -dp[i];
                    accumulate(grads[n.rhs], dt);
                }
                if (nodes[n.lhs].needs_grad) accumulate(grads[n.lhs], dp);
                break;
            }
            case OpKind::SoftmaxCrossEntropy: {
                const Tensor& probs = n.cache;
                const std::size_t N = probs.dim(0), K = probs.dim(1);
                const double scale = g[0] / static_cast<double>(N);
                Tensor dz(probs.shape());
                for (std::size_t r = 0; r < N; ++r)
                    for (std::size_t k = 0; k < K; ++k) {
                        const double target = k == n.labels[r] ? 1.0 : 0.0;
                        dz[r * K + k] = scale * (probs[r * K + k] - target);
                    }
                accumulate(grads[n.lhs], dz);
                break;
            }
            case OpKind::Mean: {
                const Tensor& x = nodes[n.lhs].value;
                Tensor dx(x.shape());
                const double share = g[0] / static_cast<double>(x.size());
                for (double& v : dx.values()) v = share;
                accumulate(grads[n.lhs], dx);
                break;
            }
        }
    }

    std::vector<Tensor> out;
    out.reserve(tape.parameters_.size());
    for (NodeId p : tape.parameters_) {
        if (p.index < grads.size() && grads[p.index]) {
            out.push_back(std::move(*grads[p.index]));
        } else {
            out.emplace_back(nodes[p.index].value.shape());
        }
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!out[i].all_finite()) {
            throw NumericError("backward: non-finite gradient for parameter " + std::to_string(i));
        }
    }
    return out;
}

}  // namespace pge
