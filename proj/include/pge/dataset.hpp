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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pge/batch.hpp"
#include "pge/error.hpp"
#include "pge/model.hpp"

namespace pge {

/// Classification samples stored row-major. Immutable once built.
struct LabeledDataset {
    std::string name;
    std::size_t feature_dim = 0;
    std::size_t num_classes = 0;
    std::vector<double> features;
    std::vector<std::size_t> labels;
    /// Set when rows are flattened images (channel-major).
    std::optional<ImageShape> image;

    std::size_t size() const noexcept { return labels.size(); }
    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(features).subspan(i * feature_dim, feature_dim);
    }
    std::vector<std::size_t> class_counts() const;

    /// Checks shape consistency and label range. With `require_all_classes`
    /// every class in [0, num_classes) must have a sample.
    void validate(bool require_all_classes = true) const;
};

class IdxError : public ParseError {
public:
    enum class Kind { BadMagic, Truncated, CountMismatch };
    IdxError(Kind kind, const std::string& what) : ParseError(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled to [0, 1]; labels are re-indexed densely in ascending
/// order of their byte value.
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Reads a numeric CSV with a header row. Every column except `label_column`
/// becomes a feature, in header order. Labels are re-indexed 0..K-1 in order of
/// first appearance.
LabeledDataset load_csv(const std::filesystem::path& path, std::string_view label_column);

enum class SyntheticFamily { GaussianBlobs, RotatedVariant, LabelPermuted };

std::string_view to_string(SyntheticFamily family) noexcept;
SyntheticFamily parse_synthetic_family(std::string_view text);

struct SyntheticSpec {
    SyntheticFamily family = SyntheticFamily::GaussianBlobs;
    double angle_degrees = 0.0;     // RotatedVariant
    double permute_fraction = 0.0;  // LabelPermuted
    std::size_t num_classes = 10;
    std::size_t samples_per_class = 100;
    std::size_t feature_dim = 16;
    std::uint64_t seed = 0;
    /// Seeds the per-sample noise; `seed` when unset. A different value gives a
    /// fresh draw around the same class centres.
    std::optional<std::uint64_t> sample_seed;
    /// Standard deviation of the class centres around the origin.
    double center_spread = 2.0;
    std::string name;
};

/// Gaussian blobs with unit isotropic noise around seeded centres. The rotated
/// variant rotates every row in the (feature 0, feature 1) plane; the
/// label-permuted variant reassigns round(fraction * n) labels uniformly.
LabeledDataset make_synthetic(const SyntheticSpec& spec);

enum class SubsampleStrategy { SI, SII };

std::string_view to_string(SubsampleStrategy s) noexcept;
SubsampleStrategy parse_subsample_strategy(std::string_view text);

struct SubsampleSpec {
    SubsampleStrategy strategy = SubsampleStrategy::SII;
    double ratio = 1.0;
    std::uint64_t seed = 0;
};

/// Original class ids kept by SI: max(2, round(ratio * num_classes)) of them,
/// seeded-random, returned in ascending order.
std::vector<std::size_t> select_categories(std::size_t num_classes, double ratio, std::uint64_t seed);

/// Keeps samples whose label is in `classes` (ascending original ids) and
/// re-indexes labels densely in that order. Sample order is preserved.
LabeledDataset restrict_to_classes(const LabeledDataset& ds, std::span<const std::size_t> classes);

/// SI keeps whole categories; SII keeps max(1, floor(ratio * n_c)) samples of
/// every class c. Surviving samples keep their original relative order, so a
/// ratio of 1.0 returns the input unchanged.
LabeledDataset subsample(const LabeledDataset& ds, const SubsampleSpec& spec);

/// Per-feature standardisation to zero mean and unit (population) variance.
/// Constant features become zero.
LabeledDataset standardize(const LabeledDataset& ds);

/// Maps rows to a model's input: bilinear resize when both sides are images
/// with equal channel counts, otherwise truncation or zero-padding.
LabeledDataset project(const LabeledDataset& ds, std::size_t input_dim,
                       const std::optional<ImageShape>& image = std::nullopt);

/// standardize() followed by project() onto the model's input.
LabeledDataset prepare(const LabeledDataset& ds, const ModelSpec& spec);

Batch gather(const LabeledDataset& ds, std::span<const std::size_t> indices);
Batch full_batch(const LabeledDataset& ds);

/// `batch_size` distinct indices drawn uniformly without replacement.
std::vector<std::size_t> draw_batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed);

/// Stratified seeded split; each class contributes round(test_fraction * n_c)
/// test samples (at least one when n_c >= 2). Returns {train, test}.
std::pair<LabeledDataset, LabeledDataset> split_train_test(const LabeledDataset& ds, double test_fraction,
                                                           std::uint64_t seed);

/// Hash over features, labels and shape metadata (not the name).
std::uint64_t content_hash(const LabeledDataset& ds);

}  // namespace pge
