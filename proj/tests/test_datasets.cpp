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
#include <numeric>
#include <set>

#include "pge/dataset.hpp"
#include "pge/error.hpp"
#include "pge/rng.hpp"

using namespace pge;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    const fs::path dir = fs::temp_directory_path() / "pgekit_test_datasets";
    fs::create_directories(dir);
    return dir;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

// Two 2x2 images with labels 7 and 3.
std::vector<unsigned char> idx_images() {
    return {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 51, 102, 255, 255, 0, 0, 51};
}
std::vector<unsigned char> idx_labels(std::size_t count = 2) {
    std::vector<unsigned char> b{0, 0, 8, 1, 0, 0, 0, static_cast<unsigned char>(count)};
    for (std::size_t i = 0; i < count; ++i) b.push_back(i % 2 == 0 ? 7 : 3);
    return b;
}

LabeledDataset blobs(std::size_t classes, std::size_t per, std::uint64_t seed = 1) {
    SyntheticSpec s;
    s.num_classes = classes;
    s.samples_per_class = per;
    s.feature_dim = 3;
    s.seed = seed;
    return make_synthetic(s);
}

}  // namespace

TEST_CASE("idx pair parses to scaled pixels and dense labels") {
    const auto dir = scratch_dir();
    write_bytes(dir / "img", idx_images());
    write_bytes(dir / "lbl", idx_labels());
    const auto ds = load_idx(dir / "img", dir / "lbl");
    CHECK(ds.size() == 2);
    CHECK(ds.feature_dim == 4);
    CHECK(ds.num_classes == 2);
    REQUIRE(ds.image.has_value());
    CHECK(ds.image->height == 2);
    CHECK(ds.features == std::vector<double>{0.0, 0.2, 0.4, 1.0, 1.0, 0.0, 0.0, 0.2});
    // Byte values 7 and 3 become 1 and 0 (ascending order).
    CHECK(ds.labels == std::vector<std::size_t>{1, 0});
}

TEST_CASE("idx errors are distinguished") {
    const auto dir = scratch_dir();
    write_bytes(dir / "img", idx_images());
    write_bytes(dir / "empty", {});
    write_bytes(dir / "lbl3", idx_labels(3));
    auto bad = idx_images();
    bad[3] = 1;
    write_bytes(dir / "bad", bad);
    auto truncated = idx_images();
    truncated.pop_back();
    write_bytes(dir / "short", truncated);
    write_bytes(dir / "lbl", idx_labels());

    auto kind_of = [](auto&& fn) {
        try {
            fn();
        } catch (const IdxError& e) {
            return e.kind();
        }
        FAIL("expected IdxError");
        return IdxError::Kind::BadMagic;
    };
    CHECK(kind_of([&] { load_idx(dir / "empty", dir / "lbl"); }) == IdxError::Kind::Truncated);
    CHECK(kind_of([&] { load_idx(dir / "short", dir / "lbl"); }) == IdxError::Kind::Truncated);
    CHECK(kind_of([&] { load_idx(dir / "bad", dir / "lbl"); }) == IdxError::Kind::BadMagic);
    CHECK(kind_of([&] { load_idx(dir / "img", dir / "img"); }) == IdxError::Kind::BadMagic);
    CHECK(kind_of([&] { load_idx(dir / "img", dir / "lbl3"); }) == IdxError::Kind::CountMismatch);
}

TEST_CASE("csv features follow the header and labels are re-indexed") {
    const auto dir = scratch_dir();
    write_text(dir / "a.csv", "x,label,y\n1.5,5,2\n-1,9,0.25\n3,5,4e1\n");
    const auto ds = load_csv(dir / "a.csv", "label");
    CHECK(ds.feature_dim == 2);
    CHECK(ds.size() == 3);
    CHECK(ds.num_classes == 2);
    CHECK(ds.labels == std::vector<std::size_t>{0, 1, 0});
    CHECK(ds.features == std::vector<double>{1.5, 2, -1, 0.25, 3, 40});
}

TEST_CASE("csv errors name the line") {
    const auto dir = scratch_dir();
    write_text(dir / "ragged.csv", "a,label\n1,0\n2\n");
    write_text(dir / "text.csv", "a,label\n1,0\nfoo,1\n");
    try {
        load_csv(dir / "ragged.csv", "label");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    try {
        load_csv(dir / "text.csv", "label");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK_THROWS_AS(load_csv(dir / "text.csv", "missing"), ParseError);
}

TEST_CASE("synthetic families") {
    SyntheticSpec s;
    s.num_classes = 4;
    s.samples_per_class = 10;
    s.feature_dim = 5;
    s.seed = 3;
    const auto base = make_synthetic(s);
    CHECK_NOTHROW(base.validate());
    CHECK(make_synthetic(s).features == base.features);

    SyntheticSpec rot = s;
    rot.family = SyntheticFamily::RotatedVariant;
    CHECK(make_synthetic(rot).features == base.features);
    rot.angle_degrees = 90.0;
    const auto turned = make_synthetic(rot);
    for (std::size_t i = 0; i < base.size(); ++i) {
        CHECK(turned.row(i)[0] == doctest::Approx(-base.row(i)[1]));
        CHECK(turned.row(i)[1] == doctest::Approx(base.row(i)[0]));
        CHECK(turned.row(i)[4] == base.row(i)[4]);
    }

    SyntheticSpec perm = s;
    perm.family = SyntheticFamily::LabelPermuted;
    CHECK(make_synthetic(perm).labels == base.labels);
    perm.permute_fraction = 1.0;
    CHECK(make_synthetic(perm).features == base.features);

    SyntheticSpec other = s;
    other.seed = 4;
    const auto b = make_synthetic(other);
    CHECK(b.features != base.features);
    CHECK(b.class_counts() == base.class_counts());
    CHECK(b.feature_dim == base.feature_dim);
}

TEST_CASE("sample seed redraws noise around the same centres") {
    SyntheticSpec s;
    s.num_classes = 3;
    s.samples_per_class = 4000;
    s.feature_dim = 2;
    s.center_spread = 5.0;
    s.seed = 8;
    const auto base = make_synthetic(s);
    s.sample_seed = 8;
    CHECK(make_synthetic(s).features == base.features);
    s.sample_seed = 9;
    const auto fresh = make_synthetic(s);
    CHECK(fresh.features != base.features);
    // Class means agree to a few standard errors (1 / sqrt(4000) ~ 0.016).
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t j = 0; j < 2; ++j) {
            double a = 0.0, b = 0.0;
            for (std::size_t i = c * 4000; i < (c + 1) * 4000; ++i) a += base.row(i)[j], b += fresh.row(i)[j];
            CHECK(std::abs(a - b) / 4000.0 < 0.1);
        }
    }
}

TEST_CASE("ratio 1.0 is the identity for both strategies") {
    const auto ds = blobs(5, 7);
    for (auto strategy : {SubsampleStrategy::SI, SubsampleStrategy::SII}) {
        const auto sub = subsample(ds, {strategy, 1.0, 9});
        CHECK(sub.features == ds.features);
        CHECK(sub.labels == ds.labels);
        CHECK(sub.num_classes == ds.num_classes);
    }
}

TEST_CASE("SI keeps whole categories") {
    auto ds = blobs(10, 4);
    // Uneven class sizes make the sample count informative.
    ds = subsample(ds, {SubsampleStrategy::SII, 1.0, 0});
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto sub = subsample(ds, {SubsampleStrategy::SI, 0.5, seed});
        CHECK(sub.num_classes == 5);

        // Independent selector: shuffle class ids with the documented stream.
        std::vector<std::size_t> ids(10);
        std::iota(ids.begin(), ids.end(), 0);
        Rng rng(derive_seed(seed, "SI"));
        rng.shuffle(std::span<std::size_t>(ids));
        std::set<std::size_t> chosen(ids.begin(), ids.begin() + 5);
        std::size_t expected = 0;
        for (std::size_t label : ds.labels) expected += chosen.count(label);
        CHECK(sub.size() == expected);

        std::size_t k = 0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (!chosen.count(ds.labels[i])) continue;
            const std::size_t dense = static_cast<std::size_t>(std::distance(chosen.begin(), chosen.find(ds.labels[i])));
            CHECK(sub.labels[k] == dense);
            CHECK(std::equal(sub.row(k).begin(), sub.row(k).end(), ds.row(i).begin()));
            ++k;
        }
    }
    CHECK(select_categories(40, 0.05, 1).size() == 2);
    CHECK(select_categories(10, 0.2, 1).size() == 2);
    CHECK_THROWS_AS(select_categories(10, 0.1, 1), InvalidArgument);
    CHECK_THROWS_AS(select_categories(10, 0.05, 0), InvalidArgument);
}

TEST_CASE("SII keeps a fixed share of every class") {
    const auto ds = blobs(3, 20);
    const auto sub = subsample(ds, {SubsampleStrategy::SII, 0.25, 4});
    CHECK(sub.class_counts() == std::vector<std::size_t>{5, 5, 5});
    CHECK(subsample(ds, {SubsampleStrategy::SII, 0.3, 4}).class_counts() == std::vector<std::size_t>{6, 6, 6});
    CHECK(subsample(ds, {SubsampleStrategy::SII, 0.01, 4}).class_counts() == std::vector<std::size_t>{1, 1, 1});
    CHECK(subsample(ds, {SubsampleStrategy::SII, 0.25, 4}).features == sub.features);
    CHECK(subsample(ds, {SubsampleStrategy::SII, 0.25, 5}).features != sub.features);
    CHECK_THROWS_AS(subsample(ds, {SubsampleStrategy::SII, 0.0, 4}), InvalidArgument);
    CHECK_THROWS_AS(subsample(ds, {SubsampleStrategy::SII, 1.5, 4}), InvalidArgument);
}

TEST_CASE("standardize gives zero mean and unit variance") {
    const auto ds = standardize(blobs(4, 25));
    for (std::size_t j = 0; j < ds.feature_dim; ++j) {
        double sum = 0, sq = 0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            sum += ds.row(i)[j];
            sq += ds.row(i)[j] * ds.row(i)[j];
        }
        const double n = static_cast<double>(ds.size());
        CHECK(std::abs(sum / n) < 1e-12);
        CHECK(sq / n == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("project truncates, pads and resizes") {
    const auto ds = blobs(2, 3);
    const auto cut = project(ds, 2);
    CHECK(cut.feature_dim == 2);
    CHECK(cut.row(1)[1] == ds.row(1)[1]);
    const auto pad = project(ds, 5);
    CHECK(pad.row(2)[2] == ds.row(2)[2]);
    CHECK(pad.row(2)[4] == 0.0);

    LabeledDataset img;
    img.name = "img";
    img.feature_dim = 4;
    img.num_classes = 1;
    img.features = {0.0, 1.0, 2.0, 3.0};
    img.labels = {0};
    img.image = ImageShape{1, 2, 2};
    const auto same = project(img, 4, ImageShape{1, 2, 2});
    CHECK(same.features == img.features);
    const auto up = project(img, 9, ImageShape{1, 3, 3});
    // Corners are preserved, the centre is the mean of the four pixels.
    CHECK(up.features[0] == doctest::Approx(0.0));
    CHECK(up.features[8] == doctest::Approx(3.0));
    CHECK(up.features[4] == doctest::Approx(1.5));
}

TEST_CASE("stratified split") {
    const auto ds = blobs(3, 10);
    const auto [train, test] = split_train_test(ds, 0.2, 11);
    CHECK(test.class_counts() == std::vector<std::size_t>{2, 2, 2});
    CHECK(train.class_counts() == std::vector<std::size_t>{8, 8, 8});
    const auto [train2, test2] = split_train_test(ds, 0.2, 11);
    CHECK(test2.features == test.features);
}

TEST_CASE("batch indices are distinct and seeded") {
    const auto idx = draw_batch_indices(50, 20, 3);
    CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 20);
    CHECK(draw_batch_indices(50, 20, 3) == idx);
    CHECK(draw_batch_indices(50, 20, 4) != idx);
    CHECK_THROWS_AS(draw_batch_indices(5, 6, 0), InvalidArgument);
}

TEST_CASE("content hash ignores the name") {
    auto a = blobs(2, 3);
    auto b = a;
    b.name = "other";
    CHECK(content_hash(a) == content_hash(b));
    b.features[0] += 1e-9;
    CHECK(content_hash(a) != content_hash(b));
}
