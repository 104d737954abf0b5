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

#include "pge/model.hpp"

#include <cmath>

#include "pge/error.hpp"
#include "pge/rng.hpp"

namespace pge {

namespace {

constexpr std::size_t kKernel = 3;

std::string block_name(Role role, std::size_t layer, bool bias) {
    return std::string(role == Role::Backbone ? "backbone." : "head.") + std::to_string(layer) +
           (bias ? ".bias" : ".weight");
}

}  // namespace

std::string_view to_string(LossMode mode) noexcept {
    return mode == LossMode::SupervisedCrossEntropy ? "supervised" : "unsupervised";
}

LossMode parse_loss_mode(std::string_view text) {
    if (text == "supervised" || text == "supervised-cross-entropy") return LossMode::SupervisedCrossEntropy;
    if (text == "unsupervised" || text == "unsupervised-reconstruction") return LossMode::UnsupervisedReconstruction;
    throw InvalidArgument("unknown loss mode '" + std::string(text) + "' (expected supervised|unsupervised)");
}

std::string_view to_string(InitDistribution dist) noexcept {
    return dist == InitDistribution::UnitGaussian ? "unit-gaussian" : "fan-in-scaled-gaussian";
}

InitDistribution parse_init_distribution(std::string_view text) {
    if (text == "unit-gaussian") return InitDistribution::UnitGaussian;
    if (text == "fan-in-scaled-gaussian" || text == "fan-in-scaled") return InitDistribution::FanInScaledGaussian;
    throw InvalidArgument("unknown init distribution '" + std::string(text) +
                          "' (expected unit-gaussian|fan-in-scaled-gaussian)");
}

void ModelSpec::validate() const {
    if (input_dim == 0) throw InvalidArgument("model: input_dim must be positive");
    if (backbone.widths.empty()) throw InvalidArgument("model: backbone needs at least one layer");
    for (std::size_t w : backbone.widths) {
        if (w == 0) throw InvalidArgument("model: backbone widths must be positive");
    }
    if (backbone.kind == BackboneKind::Cnn) {
        if (!image) throw InvalidArgument("model: cnn backbone requires an image shape");
        if (image->size() != input_dim) {
            throw InvalidArgument("model: image shape has " + std::to_string(image->size()) +
                                  " elements but input_dim is " + std::to_string(input_dim));
        }
        const std::size_t shrink = backbone.widths.size() * (kKernel - 1);
        if (image->height <= shrink || image->width <= shrink) {
            throw InvalidArgument("model: image too small for " + std::to_string(backbone.widths.size()) +
                                  " valid 3x3 convolutions");
        }
    }
    if (head.kind == HeadKind::Classifier && head.outputs < 2) {
        throw InvalidArgument("model: classifier head requires num-classes >= 2");
    }
    if (head.kind == HeadKind::Reconstructor && head.outputs != input_dim) {
        throw InvalidArgument("model: reconstructor head must output input_dim values");
    }
}

std::size_t ModelSpec::backbone_output_dim() const {
    if (backbone.kind == BackboneKind::Mlp) return backbone.widths.back();
    const std::size_t shrink = backbone.widths.size() * (kKernel - 1);
    return backbone.widths.back() * (image->height - shrink) * (image->width - shrink);
}

ModelSpec ModelSpec::with_head(HeadSpec h) const {
    ModelSpec copy = *this;
    copy.head = h;
    return copy;
}

ModelSpec ModelSpec::for_mode(LossMode mode, std::size_t num_classes) const {
    return with_head(mode == LossMode::SupervisedCrossEntropy ? HeadSpec::classifier(num_classes)
                                                              : HeadSpec::reconstructor(input_dim));
}

ModelSpec default_model_spec(std::size_t input_dim) {
    ModelSpec spec;
    spec.input_dim = input_dim;
    spec.head = HeadSpec::reconstructor(input_dim);
    return spec;
}

std::vector<ParamBlock> parameter_layout(const ModelSpec& spec) {
    spec.validate();
    std::vector<ParamBlock> blocks;
    std::size_t offset = 0;
    auto add = [&](Role role, std::size_t layer, bool bias, Shape shape, std::size_t fan_in) {
        ParamBlock b{block_name(role, layer, bias), role, std::move(shape), offset, fan_in, bias};
        offset += b.size();
        blocks.push_back(std::move(b));
    };

    if (spec.backbone.kind == BackboneKind::Mlp) {
        std::size_t in = spec.input_dim;
        for (std::size_t l = 0; l < spec.backbone.widths.size(); ++l) {
            const std::size_t out = spec.backbone.widths[l];
            add(Role::Backbone, l, false, {in, out}, in);
            add(Role::Backbone, l, true, {out}, in);
            in = out;
        }
    } else {
        std::size_t in = spec.image->channels;
        for (std::size_t l = 0; l < spec.backbone.widths.size(); ++l) {
            const std::size_t out = spec.backbone.widths[l];
            add(Role::Backbone, l, false, {out, in, kKernel, kKernel}, in * kKernel * kKernel);
            add(Role::Backbone, l, true, {out}, in * kKernel * kKernel);
            in = out;
        }
    }
    const std::size_t features = spec.backbone_output_dim();
    add(Role::Head, 0, false, {features, spec.head.outputs}, features);
    add(Role::Head, 0, true, {spec.head.outputs}, features);
    return blocks;
}

std::size_t backbone_parameter_count(const ModelSpec& spec) {
    std::size_t n = 0;
    for (const auto& b : parameter_layout(spec)) {
        if (b.role == Role::Backbone) n += b.size();
    }
    return n;
}

ModelState::ModelState(ModelSpec spec, std::vector<double> params)
    : spec_(std::move(spec)), layout_(parameter_layout(spec_)), params_(std::move(params)) {
    std::size_t total = 0;
    for (const auto& b : layout_) {
        total += b.size();
        if (b.role == Role::Backbone) backbone_size_ += b.size();
    }
    if (params_.size() != total) {
        throw InvalidArgument("model state: expected " + std::to_string(total) + " parameters, got " +
                              std::to_string(params_.size()));
    }
}

namespace {

void fill_blocks(std::span<double> params, const std::vector<ParamBlock>& layout, Role role,
                 const InitSpec& init) {
    const std::uint64_t key = derive_seed(init.seed, "init");
    for (const auto& b : layout) {
        if (b.role != role) continue;
        const double scale = init.distribution == InitDistribution::UnitGaussian
                                 ? 1.0
                                 : 1.0 / std::sqrt(static_cast<double>(b.fan_in));
        for (std::size_t i = b.offset; i < b.offset + b.size(); ++i) {
            params[i] = b.is_bias ? 0.0 : scale * counter_normal(key, i);
        }
    }
}

}  // namespace

ModelState init_params(const ModelSpec& spec, const InitSpec& init) {
    auto layout = parameter_layout(spec);
    std::size_t total = 0;
    for (const auto& b : layout) total += b.size();
    std::vector<double> params(total);
    fill_blocks(params, layout, Role::Backbone, init);
    fill_blocks(params, layout, Role::Head, init);
    return ModelState(spec, std::move(params));
}

ModelState ModelState::with_head(HeadSpec head, const InitSpec& init) const {
    ModelSpec spec = spec_.with_head(head);
    auto layout = parameter_layout(spec);
    std::size_t total = 0;
    for (const auto& b : layout) total += b.size();
    std::vector<double> params(total);
    std::copy(params_.begin(), params_.begin() + static_cast<std::ptrdiff_t>(backbone_size_), params.begin());
    fill_blocks(params, layout, Role::Head, init);
    return ModelState(std::move(spec), std::move(params));
}

ForwardPass forward(const ModelState& state, const Tensor& inputs) {
    const ModelSpec& spec = state.spec();
    if (inputs.rank() != 2 || inputs.dim(1) != spec.input_dim) {
        throw ShapeError("forward: inputs must be [N, " + std::to_string(spec.input_dim) + "], got " +
                         to_string(inputs.shape()));
    }
    const std::size_t batch = inputs.dim(0);
    ForwardPass pass;
    Tape& tape = pass.tape;
    auto params = state.params();
    auto block = [&](const ParamBlock& b) {
        std::vector<double> values(params.begin() + static_cast<std::ptrdiff_t>(b.offset),
                                   params.begin() + static_cast<std::ptrdiff_t>(b.offset + b.size()));
        return tape.parameter(Tensor(b.shape, std::move(values)));
    };

    const auto& layout = state.layout();
    NodeId x = tape.input(inputs);
    std::size_t next = 0;
    const std::size_t layers = spec.backbone.widths.size();
    if (spec.backbone.kind == BackboneKind::Mlp) {
        for (std::size_t l = 0; l < layers; ++l) {
            NodeId w = block(layout[next++]);
            NodeId b = block(layout[next++]);
            x = tape.relu(tape.bias_add(tape.matmul(x, w), b));
        }
    } else {
        const ImageShape& img = *spec.image;
        x = tape.reshape(x, {batch, img.channels, img.height, img.width});
        for (std::size_t l = 0; l < layers; ++l) {
            NodeId w = block(layout[next++]);
            NodeId b = block(layout[next++]);
            x = tape.relu(tape.bias_add(tape.conv2d(x, w), b));
        }
        x = tape.reshape(x, {batch, spec.backbone_output_dim()});
    }
    pass.features = x;
    NodeId hw = block(layout[next++]);
    NodeId hb = block(layout[next++]);
    pass.output = tape.bias_add(tape.matmul(x, hw), hb);
    return pass;
}

Tensor backbone_features(const ModelState& state, const Tensor& inputs) {
    ForwardPass pass = forward(state, inputs);
    return pass.tape.value(pass.features);
}

Tensor head_outputs(const ModelState& state, const Tensor& inputs) {
    ForwardPass pass = forward(state, inputs);
    return pass.tape.value(pass.output);
}

LossGradient loss_and_grad(const ModelState& state, const Batch& batch, LossMode mode,
                           std::size_t batch_index) {
    const ModelSpec& spec = state.spec();
    if (batch.inputs.rank() != 2 || batch.inputs.dim(1) != spec.input_dim) {
        throw ShapeError("loss: batch feature dim " + to_string(batch.inputs.shape()) +
                         " does not match model input_dim " + std::to_string(spec.input_dim));
    }
    if (mode == LossMode::SupervisedCrossEntropy && spec.head.kind != HeadKind::Classifier) {
        throw InvalidArgument("loss: supervised mode requires a classifier head");
    }
    if (mode == LossMode::UnsupervisedReconstruction && spec.head.kind != HeadKind::Reconstructor) {
        throw InvalidArgument("loss: unsupervised mode requires a reconstructor head");
    }
    if (mode == LossMode::SupervisedCrossEntropy && batch.labels.size() != batch.size()) {
        throw InvalidArgument("loss: supervised mode requires one label per sample");
    }

    try {
        ForwardPass pass = forward(state, batch.inputs);
        Tape& tape = pass.tape;
        NodeId loss = mode == LossMode::SupervisedCrossEntropy
                          ? tape.softmax_cross_entropy(pass.output, batch.labels)
                          : tape.mse(pass.output, tape.input(batch.inputs));
        const double value = tape.value(loss).item();
        std::vector<Tensor> grads = backward(tape, loss);

        LossGradient out{value, std::vector<double>(state.params().size())};
        const auto& layout = state.layout();
        for (std::size_t i = 0; i < layout.size(); ++i) {
            auto src = grads[i].values();
            std::copy(src.begin(), src.end(), out.grad.begin() + static_cast<std::ptrdiff_t>(layout[i].offset));
        }
        return out;
    } catch (const NumericError& e) {
        throw NumericError(std::string("non-finite loss at batch ") + std::to_string(batch_index) + ": " +
                               e.what(),
                           batch_index);
    }
}

LossGradient loss_and_backbone_grad(const ModelState& state, const Batch& batch, LossMode mode,
                                    std::size_t batch_index) {
    LossGradient full = loss_and_grad(state, batch, mode, batch_index);
    full.grad.resize(state.backbone_size());
    return full;
}

}  // namespace pge
