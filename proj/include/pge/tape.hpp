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

// Reverse-mode differentiation over a closed set of dense primitives.
//
// A Tape is the computation record: each primitive is evaluated eagerly when
// it is appended, so building the tape *is* the forward pass. Nodes are stored
// in creation order, which is a topological order by construction. backward()
// walks that order in reverse exactly once.
//
// Every reduction sums in a fixed index order. Nothing in here is threaded;
// callers parallelise across independent tapes.

#include <compare>
#include <cstddef>
#include <string_view>
#include <vector>

#include "pge/tensor.hpp"

namespace pge {

struct NodeId {
    std::size_t index = 0;
    friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

enum class OpKind {
    Input,
    Parameter,
    MatMul,
    Conv2d,
    BiasAdd,
    Relu,
    Reshape,
    MeanSquaredError,
    SoftmaxCrossEntropy,
    Mean,
};

std::string_view op_name(OpKind kind) noexcept;

class Tape {
public:
    /// Constant leaf; never receives a gradient.
    NodeId input(Tensor value);
    /// Differentiable leaf. backward() returns gradients in registration order.
    NodeId parameter(Tensor value);

    /// [m, k] x [k, n] -> [m, n].
    NodeId matmul(NodeId a, NodeId b);
    /// Valid (unpadded) stride-1 convolution: x [N, C, H, W], w [O, C, KH, KW] -> [N, O, H-KH+1, W-KW+1].
    NodeId conv2d(NodeId x, NodeId w);
    /// Adds b[c] along axis 1 of x (features for [N, F], channels for [N, C, H, W]).
    NodeId bias_add(NodeId x, NodeId b);
    NodeId relu(NodeId x);
    NodeId reshape(NodeId x, Shape shape);
    /// Mean over all elements of (pred - target)^2. Scalar result.
    NodeId mse(NodeId pred, NodeId target);
    /// Mean over the batch of -log softmax(logits)[label]. logits is [N, K].
    NodeId softmax_cross_entropy(NodeId logits, std::vector<std::size_t> labels);
    /// Mean over all elements. Scalar result.
    NodeId mean(NodeId x);

    const Tensor& value(NodeId id) const;
    OpKind kind(NodeId id) const;
    std::size_t size() const noexcept { return nodes_.size(); }
    const std::vector<NodeId>& parameters() const noexcept { return parameters_; }

private:
    struct Node {
        OpKind op;
        std::size_t lhs = 0;
        std::size_t rhs = 0;
        Tensor value;
        bool needs_grad = false;
        std::vector<std::size_t> labels;  // SoftmaxCrossEntropy only
        Tensor cache;                     // softmax probabilities
    };

    const Node& node(NodeId id, std::string_view primitive) const;
    NodeId push(Node node);

    std::vector<Node> nodes_;
    std::vector<NodeId> parameters_;

    friend std::vector<Tensor> backward(const Tape& tape, NodeId loss, double seed);
};

/// Gradient of the scalar `loss` with respect to every parameter of the tape,
/// scaled by `seed`. Parameters the loss does not depend on get zeros.
std::vector<Tensor> backward(const Tape& tape, NodeId loss, double seed = 1.0);

}  // namespace pge
