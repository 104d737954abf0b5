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

#include "pge/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "pge/hash.hpp"
#include "pge/rng.hpp"

namespace pge {

std::vector<std::size_t> LabeledDataset::class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t y : labels) {
        if (y < num_classes) ++counts[y];
    }
    return counts;
}

void LabeledDataset::validate(bool require_all_classes) const {
    if (feature_dim == 0) throw InvalidArgument("dataset '" + name + "': feature_dim must be positive");
    if (num_classes == 0) throw InvalidArgument("dataset '" + name + "': num_classes must be positive");
    if (features.size() != labels.size() * feature_dim) {
        throw InvalidArgument("dataset '" + name + "': feature storage does not match sample count");
    }
    if (image && image->size() != feature_dim) {
        throw InvalidArgument("dataset '" + name + "': image shape disagrees with feature_dim");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) {
            throw InvalidArgument("dataset '" + name + "': label " + std::to_string(labels[i]) + " at sample " +
                                  std::to_string(i) + " is out of range");
        }
    }
    if (require_all_classes) {
        auto counts = class_counts();
        for (std::size_t c = 0; c < counts.size(); ++c) {
            if (counts[c] == 0) {
                throw InvalidArgument("dataset '" + name + "': class " + std::to_string(c) + " has no samples");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
    if (bytes.size() < offset + 4) {
        throw IdxError(IdxError::Kind::Truncated, path.string() + ": truncated IDX header");
    }
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto img = read_bytes(images);
    const auto lab = read_bytes(labels);

    const std::uint32_t img_magic = read_be32(img, 0, images);
    if (img_magic != 0x00000803) {
        throw IdxError(IdxError::Kind::BadMagic, images.string() + ": expected image magic 0x00000803");
    }
    const std::uint32_t lab_magic = read_be32(lab, 0, labels);
    if (lab_magic != 0x00000801) {
        throw IdxError(IdxError::Kind::BadMagic, labels.string() + ": expected label magic 0x00000801");
    }
    const std::size_t count = read_be32(img, 4, images);
    const std::size_t rows = read_be32(img, 8, images);
    const std::size_t cols = read_be32(img, 12, images);
    const std::size_t label_count = read_be32(lab, 4, labels);
    if (rows == 0 || cols == 0) throw ParseError(images.string() + ": zero image dimension");

    const std::size_t pixels = rows * cols;
    if (img.size() < 16 + count * pixels) {
        throw IdxError(IdxError::Kind::Truncated, images.string() + ": truncated pixel data");
    }
    if (lab.size() < 8 + label_count) {
        throw IdxError(IdxError::Kind::Truncated, labels.string() + ": truncated label data");
    }
    if (count != label_count) {
        throw IdxError(IdxError::Kind::CountMismatch, "IDX count mismatch: " + std::to_string(count) +
                                                          " images vs " + std::to_string(label_count) + " labels");
    }
    if (count == 0) throw IdxError(IdxError::Kind::Truncated, images.string() + ": no images");

    LabeledDataset ds;
    ds.name = images.stem().string();
    ds.feature_dim = pixels;
    ds.image = ImageShape{1, rows, cols};
    ds.features.resize(count * pixels);
    for (std::size_t i = 0; i < count * pixels; ++i) ds.features[i] = img[16 + i] / 255.0;

    std::map<unsigned char, std::size_t> dense;
    for (std::size_t i = 0; i < count; ++i) dense.emplace(lab[8 + i], 0);
    std::size_t next = 0;
    for (auto& [raw, id] : dense) id = next++;
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) ds.labels[i] = dense[lab[8 + i]];
    ds.num_classes = dense.size();
    return ds;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    for (auto& c : cells) {
        const auto first = c.find_first_not_of(" \t\r");
        const auto last = c.find_last_not_of(" \t\r");
        c = first == std::string::npos ? std::string() : c.substr(first, last - first + 1);
    }
    return cells;
}

}  // namespace

LabeledDataset load_csv(const std::filesystem::path& path, std::string_view label_column) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty CSV (missing header)");
    const auto header = split_csv_line(line);
    const auto label_it = std::find(header.begin(), header.end(), label_column);
    if (label_it == header.end()) {
        throw ParseError(path.string() + ": no column named '" + std::string(label_column) + "'");
    }
    const std::size_t label_index = static_cast<std::size_t>(label_it - header.begin());
    if (header.size() < 2) throw ParseError(path.string() + ": CSV needs at least one feature column");

    LabeledDataset ds;
    ds.name = path.stem().string();
    ds.feature_dim = header.size() - 1;
    std::unordered_map<std::string, std::size_t> dense;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw ParseError(path.string() + ": line " + std::to_string(line_no) + " has " +
                             std::to_string(cells.size()) + " cells, header has " + std::to_string(header.size()));
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c == label_index) continue;
            double v = 0.0;
            const auto& s = cells[c];
            const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
                throw ParseError(path.string() + ": line " + std::to_string(line_no) + ", column '" + header[c] +
                                 "': non-numeric cell '" + s + "'");
            }
            ds.features.push_back(v);
        }
        const auto& key = cells[label_index];
        if (key.empty()) {
            throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": empty label");
        }
        auto [it, inserted] = dense.emplace(key, dense.size());
        ds.labels.push_back(it->second);
    }
    if (ds.labels.empty()) throw ParseError(path.string() + ": CSV has no data rows");
    ds.num_classes = dense.size();
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic families

std::string_view to_string(SyntheticFamily family) noexcept {
    switch (family) {
        case SyntheticFamily::GaussianBlobs: return "gaussian-blobs";
        case SyntheticFamily::RotatedVariant: return "rotated-variant";
        case SyntheticFamily::LabelPermuted: return "label-permuted";
    }
    return "unknown";
}

SyntheticFamily parse_synthetic_family(std::string_view text) {
    if (text == "gaussian-blobs") return SyntheticFamily::GaussianBlobs;
    if (text == "rotated-variant") return SyntheticFamily::RotatedVariant;
    if (text == "label-permuted") return SyntheticFamily::LabelPermuted;
    throw InvalidArgument("unknown synthetic family '" + std::string(text) +
                          "' (expected gaussian-blobs|rotated-variant|label-permuted)");
}

LabeledDataset make_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 2) throw InvalidArgument("synthetic: num_classes must be >= 2");
    if (spec.samples_per_class == 0) throw InvalidArgument("synthetic: samples_per_class must be positive");
    if (spec.feature_dim == 0) throw InvalidArgument("synthetic: feature_dim must be positive");
    if (spec.family == SyntheticFamily::RotatedVariant && spec.feature_dim < 2) {
        throw InvalidArgument("synthetic: rotated-variant needs feature_dim >= 2");
    }
    if (spec.permute_fraction < 0.0 || spec.permute_fraction > 1.0) {
        throw InvalidArgument("synthetic: permute_fraction must lie in [0, 1]");
    }

    const std::size_t K = spec.num_classes, d = spec.feature_dim, per = spec.samples_per_class;
    const std::size_t n = K * per;
    const std::uint64_t mean_key = derive_seed(spec.seed, "means");
    const std::uint64_t noise_key = derive_seed(spec.sample_seed.value_or(spec.seed), "samples");

    LabeledDataset ds;
    ds.name = spec.name.empty() ? std::string(to_string(spec.family)) : spec.name;
    ds.feature_dim = d;
    ds.num_classes = K;
    ds.features.resize(n * d);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i / per;
        ds.labels[i] = c;
        for (std::size_t j = 0; j < d; ++j) {
            ds.features[i * d + j] =
                spec.center_spread * counter_normal(mean_key, c * d + j) + counter_normal(noise_key, i * d + j);
        }
    }

    if (spec.family == SyntheticFamily::RotatedVariant) {
        const double a = spec.angle_degrees * std::numbers::pi / 180.0;
        const double ca = std::cos(a), sa = std::sin(a);
        for (std::size_t i = 0; i < n; ++i) {
            double& x0 = ds.features[i * d];
            double& x1 = ds.features[i * d + 1];
            const double r0 = ca * x0 - sa * x1;
            const double r1 = sa * x0 + ca * x1;
            x0 = r0;
            x1 = r1;
        }
    }

    if (spec.family == SyntheticFamily::LabelPermuted && spec.permute_fraction > 0.0) {
        Rng rng(derive_seed(spec.seed, "permute"));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(std::span<std::size_t>(order));
        const auto count = static_cast<std::size_t>(std::llround(spec.permute_fraction * static_cast<double>(n)));
        for (std::size_t k = 0; k < count; ++k) ds.labels[order[k]] = rng.below(K);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Subsampling

std::string_view to_string(SubsampleStrategy s) noexcept { return s == SubsampleStrategy::SI ? "SI" : "SII"; }

SubsampleStrategy parse_subsample_strategy(std::string_view text) {
    if (text == "SI" || text == "si") return SubsampleStrategy::SI;
    if (text == "SII" || text == "sii") return SubsampleStrategy::SII;
    throw InvalidArgument("unknown subsample strategy '" + std::string(text) + "' (expected SI|SII)");
}

std::vector<std::size_t> select_categories(std::size_t num_classes, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw InvalidArgument("SI: ratio must lie in (0, 1]");
    if (std::ceil(ratio * static_cast<double>(num_classes)) < 2.0) {
        throw InvalidArgument("SI: ratio " + std::to_string(ratio) + " keeps fewer than 2 of " +
                              std::to_string(num_classes) + " classes");
    }
    const auto keep = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(num_classes))));
    std::vector<std::size_t> classes(num_classes);
    std::iota(classes.begin(), classes.end(), 0);
    Rng rng(derive_seed(seed, "SI"));
    rng.shuffle(std::span<std::size_t>(classes));
    classes.resize(std::min(keep, num_classes));
    std::sort(classes.begin(), classes.end());
    return classes;
}

LabeledDataset restrict_to_classes(const LabeledDataset& ds, std::span<const std::size_t> classes) {
    std::vector<std::size_t> remap(ds.num_classes, ds.num_classes);
    for (std::size_t k = 0; k < classes.size(); ++k) {
        if (classes[k] >= ds.num_classes) throw InvalidArgument("restrict_to_classes: class id out of range");
        remap[classes[k]] = k;
    }
    LabeledDataset out;
    out.name = ds.name;
    out.feature_dim = ds.feature_dim;
    out.num_classes = classes.size();
    out.image = ds.image;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::size_t mapped = remap[ds.labels[i]];
        if (mapped == ds.num_classes) continue;
        auto r = ds.row(i);
        out.features.insert(out.features.end(), r.begin(), r.end());
        out.labels.push_back(mapped);
    }
    if (out.labels.empty()) throw InvalidArgument("subsample: empty result");
    return out;
}

LabeledDataset subsample(const LabeledDataset& ds, const SubsampleSpec& spec) {
    if (!(spec.ratio > 0.0 && spec.ratio <= 1.0)) throw InvalidArgument("subsample: ratio must lie in (0, 1]");
    if (spec.strategy == SubsampleStrategy::SI) {
        const auto classes = select_categories(ds.num_classes, spec.ratio, spec.seed);
        return restrict_to_classes(ds, classes);
    }

    std::vector<std::vector<std::size_t>> members(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) members[ds.labels[i]].push_back(i);
    std::vector<std::size_t> kept;
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        auto& idx = members[c];
        if (idx.empty()) continue;
        // The epsilon keeps exact products such as 0.3 * 10 from flooring to 2.
        const auto quota = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(spec.ratio * static_cast<double>(idx.size()) + 1e-9)));
        Rng rng(hash_combine(derive_seed(spec.seed, "SII"), c));
        rng.shuffle(std::span<std::size_t>(idx));
        kept.insert(kept.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(quota, idx.size())));
    }
    if (kept.empty()) throw InvalidArgument("subsample: empty result");
    std::sort(kept.begin(), kept.end());

    LabeledDataset out;
    out.name = ds.name;
    out.feature_dim = ds.feature_dim;
    out.num_classes = ds.num_classes;
    out.image = ds.image;
    out.features.reserve(kept.size() * ds.feature_dim);
    for (std::size_t i : kept) {
        auto r = ds.row(i);
        out.features.insert(out.features.end(), r.begin(), r.end());
        out.labels.push_back(ds.labels[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

LabeledDataset standardize(const LabeledDataset& ds) {
    LabeledDataset out = ds;
    const std::size_t n = ds.size(), d = ds.feature_dim;
    if (n == 0) return out;
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += ds.features[i * d + j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double z = ds.features[i * d + j] - mean;
            var += z * z;
        }
        var /= static_cast<double>(n);
        const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
        for (std::size_t i = 0; i < n; ++i) out.features[i * d + j] = (ds.features[i * d + j] - mean) * scale;
    }
    return out;
}

namespace {

void resize_bilinear(std::span<const double> src, const ImageShape& from, std::span<double> dst,
                     const ImageShape& to) {
    const double sy = static_cast<double>(from.height) / static_cast<double>(to.height);
    const double sx = static_cast<double>(from.width) / static_cast<double>(to.width);
    for (std::size_t c = 0; c < to.channels; ++c) {
        const double* plane = src.data() + c * from.height * from.width;
        for (std::size_t y = 0; y < to.height; ++y) {
            const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                         static_cast<double>(from.height - 1));
            const auto y0 = static_cast<std::size_t>(fy);
            const std::size_t y1 = std::min(y0 + 1, from.height - 1);
            const double wy = fy - static_cast<double>(y0);
            for (std::size_t x = 0; x < to.width; ++x) {
                const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                             static_cast<double>(from.width - 1));
                const auto x0 = static_cast<std::size_t>(fx);
                const std::size_t x1 = std::min(x0 + 1, from.width - 1);
                const double wx = fx - static_cast<double>(x0);
                const double top = plane[y0 * from.width + x0] * (1.0 - wx) + plane[y0 * from.width + x1] * wx;
                const double bottom = plane[y1 * from.width + x0] * (1.0 - wx) + plane[y1 * from.width + x1] * wx;
                dst[(c * to.height + y) * to.width + x] = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
}

}  // namespace

LabeledDataset project(const LabeledDataset& ds, std::size_t input_dim, const std::optional<ImageShape>& image) {
    if (input_dim == 0) throw InvalidArgument("project: input_dim must be positive");
    if (image && image->size() != input_dim) throw InvalidArgument("project: image shape disagrees with input_dim");
    if (ds.feature_dim == input_dim && ds.image == image) return ds;

    LabeledDataset out;
    out.name = ds.name;
    out.num_classes = ds.num_classes;
    out.labels = ds.labels;
    out.feature_dim = input_dim;
    out.image = image;
    out.features.assign(ds.size() * input_dim, 0.0);

    const bool resize = image && ds.image && ds.image->channels == image->channels;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto src = ds.row(i);
        std::span<double> dst(out.features.data() + i * input_dim, input_dim);
        if (resize) {
            resize_bilinear(src, *ds.image, dst, *image);
        } else {
            std::copy_n(src.begin(), std::min(input_dim, ds.feature_dim), dst.begin());
        }
    }
    return out;
}

LabeledDataset prepare(const LabeledDataset& ds, const ModelSpec& spec) {
    return project(standardize(ds), spec.input_dim, spec.image);
}

Batch gather(const LabeledDataset& ds, std::span<const std::size_t> indices) {
    if (indices.empty()) throw InvalidArgument("gather: empty batch");
    std::vector<double> values;
    values.reserve(indices.size() * ds.feature_dim);
    std::vector<std::size_t> labels;
    labels.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= ds.size()) throw InvalidArgument("gather: index " + std::to_string(i) + " out of range");
        auto r = ds.row(i);
        values.insert(values.end(), r.begin(), r.end());
        labels.push_back(ds.labels[i]);
    }
    return Batch{Tensor({indices.size(), ds.feature_dim}, std::move(values)), std::move(labels)};
}

Batch full_batch(const LabeledDataset& ds) {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    return gather(ds, all);
}

std::vector<std::size_t> draw_batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed) {
    if (batch_size == 0 || batch_size > n) {
        throw InvalidArgument("batch size " + std::to_string(batch_size) + " must lie in [1, " +
                              std::to_string(n) + "]");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i < batch_size; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(batch_size);
    return idx;
}

std::pair<LabeledDataset, LabeledDataset> split_train_test(const LabeledDataset& ds, double test_fraction,
                                                           std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw InvalidArgument("split: test fraction must lie in (0, 1)");
    }
    std::vector<std::vector<std::size_t>> members(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) members[ds.labels[i]].push_back(i);
    std::vector<bool> is_test(ds.size(), false);
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        auto& idx = members[c];
        if (idx.size() < 2) continue;
        auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
        n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
        Rng rng(hash_combine(derive_seed(seed, "split"), c));
        rng.shuffle(std::span<std::size_t>(idx));
        for (std::size_t k = 0; k < n_test; ++k) is_test[idx[k]] = true;
    }
    LabeledDataset train, test;
    for (auto* part : {&train, &test}) {
        part->name = ds.name;
        part->feature_dim = ds.feature_dim;
        part->num_classes = ds.num_classes;
        part->image = ds.image;
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        LabeledDataset& dst = is_test[i] ? test : train;
        auto r = ds.row(i);
        dst.features.insert(dst.features.end(), r.begin(), r.end());
        dst.labels.push_back(ds.labels[i]);
    }
    return {std::move(train), std::move(test)};
}

std::uint64_t content_hash(const LabeledDataset& ds) {
    Fnv1a h;
    h.u64(ds.feature_dim).u64(ds.num_classes);
    h.u64(ds.image ? ds.image->channels : 0).u64(ds.image ? ds.image->height : 0).u64(ds.image ? ds.image->width : 0);
    h.span(std::span<const double>(ds.features));
    std::vector<std::uint64_t> labels(ds.labels.begin(), ds.labels.end());
    h.span(std::span<const std::uint64_t>(labels));
    return h.digest();
}

}  // namespace pge
