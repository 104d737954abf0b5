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

// Small models split into a backbone (feature extractor) and a head.
//
// Parameters live in one flat vector. Backbone blocks always come first, so
// the backbone range [0, backbone_size) depends on the backbone spec alone and
// swapping heads never moves it.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pge/batch.hpp"
#include "pge/tape.hpp"

namespace pge {

enum class BackboneKind { Mlp, Cnn };

struct BackboneSpec {
    BackboneKind kind = BackboneKind::Mlp;
    /// Hidden widths for an MLP, output channels per 3x3 conv layer for a CNN.
    std::vector<std::size_t> widths{64, 32};

    friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

enum class HeadKind { Classifier, Reconstructor };

struct HeadSpec {
    HeadKind kind = HeadKind::Reconstructor;
    /// Class count for a classifier, reconstructed input dim for a reconstructor.
    std::size_t outputs = 0;

    static HeadSpec classifier(std::size_t classes) { return {HeadKind::Classifier, classes}; }
    static HeadSpec reconstructor(std::size_t dim) { return {HeadKind::Reconstructor, dim}; }
    friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

enum class LossMode { SupervisedCrossEntropy, UnsupervisedReconstruction };

std::string_view to_string(LossMode mode) noexcept;
LossMode parse_loss_mode(std::string_view text);

struct ModelSpec {
    std::size_t input_dim = 0;
    /// Required by CNN backbones; image->size() must equal input_dim.
    std::optional<ImageShape> image;
    BackboneSpec backbone;
    HeadSpec head;

    /// Throws InvalidArgument when the spec is inconsistent.
    void validate() const;
    std::size_t backbone_output_dim() const;
    ModelSpec with_head(HeadSpec h) const;
    /// Head required by a loss mode: a classifier over `num_classes`, or a
    /// reconstructor of the input.
    ModelSpec for_mode(LossMode mode, std::size_t num_classes) const;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Default desk-scale backbone: MLP input -> 64 -> 32 with a reconstructor head.
ModelSpec default_model_spec(std::size_t input_dim);

enum class Role { Backbone, Head };

struct ParamBlock {
    std::string name;
    Role role = Role::Backbone;
    Shape shape;
    std::size_t offset = 0;
    std::size_t fan_in = 0;
    bool is_bias = false;

    std::size_t size() const { return element_count(shape); }
};

std::vector<ParamBlock> parameter_layout(const ModelSpec& spec);
std::size_t backbone_parameter_count(const ModelSpec& spec);

enum class InitDistribution { UnitGaussian, FanInScaledGaussian };

std::string_view to_string(InitDistribution dist) noexcept;
InitDistribution parse_init_distribution(std::string_view text);

struct InitSpec {
    InitDistribution distribution = InitDistribution::FanInScaledGaussian;
    std::uint64_t seed = 0;
};

class ModelState {
public:
    ModelState(ModelSpec spec, std::vector<double> params);

    const ModelSpec& spec() const noexcept { return spec_; }
    const std::vector<ParamBlock>& layout() const noexcept { return layout_; }

    std::span<const double> params() const noexcept { return params_; }
    std::span<double> params() noexcept { return params_; }
    std::size_t backbone_size() const noexcept { return backbone_size_; }
    std::span<const double> backbone() const noexcept { return params().first(backbone_size_); }
    std::span<const double> head() const noexcept { return params().subspan(backbone_size_); }

    /// Same backbone weights under a different head; the new head is
    /// initialised from `init`.
    ModelState with_head(HeadSpec head, const InitSpec& init) const;

    friend bool operator==(const ModelState& a, const ModelState& b) {
        return a.spec_ == b.spec_ && a.params_ == b.params_;
    }

private:
    ModelSpec spec_;
    std::vector<ParamBlock> layout_;
    std::vector<double> params_;
    std::size_t backbone_size_ = 0;
};

/// Weights drawn i.i.d. per flat index from a counter-based generator keyed by
/// the seed; biases start at zero.
ModelState init_params(const ModelSpec& spec, const InitSpec& init);

/// Tape holding one forward pass. `features` is the backbone output [N, F].
struct ForwardPass {
    Tape tape;
    NodeId features;
    NodeId output;
};

ForwardPass forward(const ModelState& state, const Tensor& inputs);

/// Backbone output for every row of `inputs`.
Tensor backbone_features(const ModelState& state, const Tensor& inputs);

/// Head output (logits or reconstruction) for every row of `inputs`.
Tensor head_outputs(const ModelState& state, const Tensor& inputs);

struct LossGradient {
    double loss = 0.0;
    std::vector<double> grad;
};

/// Mean loss over the batch and its gradient over all parameters.
/// `batch_index` is reported if the loss turns non-finite.
LossGradient loss_and_grad(const ModelState& state, const Batch& batch, LossMode mode,
                           std::size_t batch_index = 0);

/// As loss_and_grad, with the gradient restricted to the backbone partition.
LossGradient loss_and_backbone_grad(const ModelState& state, const Batch& batch, LossMode mode,
                                    std::size_t batch_index = 0);

}  // namespace pge
