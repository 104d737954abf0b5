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

#include "pge/config.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "pge/error.hpp"
#include "pge/hash.hpp"
#include "pge/io.hpp"

namespace pge {
namespace {

namespace fs = std::filesystem;

// Typed access to one JSON object. Keys read through it are remembered so
// finish() can reject the rest.
class Fields {
public:
    Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j.is_object()) throw ConfigError(path_, "expected an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    std::string at(const std::string& key) const { return path_ + "." + key; }

    const Json& value(const std::string& key) {
        if (!has(key)) throw ConfigError(at(key), "required field is missing");
        return j_.at(key);
    }

    std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
        return has(key) ? as_u64(j_.at(key), at(key)) : fallback;
    }
    std::size_t size(const std::string& key, std::size_t fallback, std::size_t min = 0) {
        const std::uint64_t v = u64(key, fallback);
        if (v < min) throw ConfigError(at(key), "must be at least " + std::to_string(min));
        return static_cast<std::size_t>(v);
    }
    double real(const std::string& key, double fallback) {
        return has(key) ? as_real(j_.at(key), at(key)) : fallback;
    }
    std::string text(const std::string& key, const std::string& fallback) {
        return has(key) ? as_text(j_.at(key), at(key)) : fallback;
    }
    std::string text(const std::string& key) { return as_text(value(key), at(key)); }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) throw ConfigError(at(item.key()), "unknown key");
        }
    }

    static std::uint64_t as_u64(const Json& v, const std::string& path) {
        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
            throw ConfigError(path, "expected a non-negative integer");
        }
        return v.get<std::uint64_t>();
    }
    static double as_real(const Json& v, const std::string& path) {
        if (!v.is_number()) throw ConfigError(path, "expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw ConfigError(path, "expected a finite number");
        return d;
    }
    static std::string as_text(const Json& v, const std::string& path) {
        if (!v.is_string()) throw ConfigError(path, "expected a string");
        return v.get<std::string>();
    }

private:
    const Json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

// Converts library InvalidArgument from a parse_* helper into a field error.
template <typename F>
auto parse_enum(const std::string& path, F&& parse) {
    try {
        return parse();
    } catch (const InvalidArgument& e) {
        throw ConfigError(path, e.what());
    }
}

const Json& array_field(Fields& f, const std::string& key) {
    const Json& v = f.value(key);
    if (!v.is_array()) throw ConfigError(f.at(key), "expected an array");
    return v;
}

ModelSpec parse_model(const Json& j, const std::string& path) {
    Fields f(j, path);
    ModelSpec spec;
    if (!f.has("input_dim")) throw ConfigError(f.at("input_dim"), "required field is missing");
    spec.input_dim = f.size("input_dim", 0, 1);
    if (f.has("image")) {
        Fields img(j.at("image"), f.at("image"));
        ImageShape shape;
        shape.channels = img.size("channels", 1, 1);
        shape.height = img.size("height", 0, 1);
        shape.width = img.size("width", 0, 1);
        img.finish();
        spec.image = shape;
    }
    if (f.has("backbone")) {
        Fields bb(j.at("backbone"), f.at("backbone"));
        const std::string kind = bb.text("kind", "mlp");
        if (kind == "mlp") spec.backbone.kind = BackboneKind::Mlp;
        else if (kind == "cnn") spec.backbone.kind = BackboneKind::Cnn;
        else throw ConfigError(bb.at("kind"), "expected mlp|cnn, got '" + kind + "'");
        if (bb.has("widths")) {
            const Json& w = array_field(bb, "widths");
            spec.backbone.widths.clear();
            for (std::size_t i = 0; i < w.size(); ++i) {
                const std::string p = bb.at("widths") + "[" + std::to_string(i) + "]";
                const std::uint64_t v = Fields::as_u64(w[i], p);
                if (v == 0) throw ConfigError(p, "must be positive");
                spec.backbone.widths.push_back(v);
            }
        }
        bb.finish();
    }
    f.finish();
    spec.head = HeadSpec::reconstructor(spec.input_dim);
    try {
        spec.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(path, e.what());
    }
    return spec;
}

DatasetEntry parse_dataset(const Json& j, const std::string& path, const fs::path& base) {
    Fields f(j, path);
    DatasetEntry e;
    e.name = f.text("name");
    if (e.name.empty()) throw ConfigError(f.at("name"), "must not be empty");
    const std::string format = f.text("format");
    auto resolve = [&](const std::string& key) {
        fs::path p = f.text(key);
        return p.is_relative() && !base.empty() ? base / p : p;
    };
    if (format == "idx") {
        e.format = DatasetFormat::Idx;
        e.images = resolve("images");
        e.labels = resolve("labels");
    } else if (format == "csv") {
        e.format = DatasetFormat::Csv;
        e.path = resolve("path");
        e.label_column = f.text("label_column", "label");
    } else if (format == "synthetic") {
        e.format = DatasetFormat::Synthetic;
        SyntheticSpec& s = e.synthetic;
        s.family = parse_enum(f.at("family"),
                              [&] { return parse_synthetic_family(f.text("family", "gaussian-blobs")); });
        s.angle_degrees = f.real("angle_degrees", 0.0);
        s.permute_fraction = f.real("permute_fraction", 0.0);
        s.num_classes = f.size("classes", s.num_classes, 2);
        s.samples_per_class = f.size("samples_per_class", s.samples_per_class, 1);
        s.feature_dim = f.size("feature_dim", s.feature_dim, 2);
        s.seed = f.u64("seed", 0);
        if (f.has("sample_seed")) s.sample_seed = f.u64("sample_seed", 0);
        s.center_spread = f.real("center_spread", s.center_spread);
        if (s.permute_fraction < 0.0 || s.permute_fraction > 1.0) {
            throw ConfigError(f.at("permute_fraction"), "must lie in [0, 1]");
        }
        if (!(s.center_spread > 0.0)) throw ConfigError(f.at("center_spread"), "must be positive");
        s.name = e.name;
    } else {
        throw ConfigError(f.at("format"), "expected idx|csv|synthetic, got '" + format + "'");
    }
    f.finish();
    return e;
}

void parse_train(const Json& j, const std::string& path, TrainConfig& cfg) {
    Fields f(j, path);
    cfg.epochs = f.size("epochs", cfg.epochs);
    cfg.batch_size = f.size("batch_size", cfg.batch_size, 1);
    cfg.base_lr = f.real("base_lr", cfg.base_lr);
    if (cfg.base_lr < 0.0) throw ConfigError(f.at("base_lr"), "must be non-negative");
    f.finish();
}

}  // namespace

RunConfig parse_config(const Json& j, const fs::path& base_dir) {
    Fields f(j, "$");
    RunConfig c;
    c.model = parse_model(f.value("model"), "$.model");
    c.mode = parse_enum(f.at("loss_mode"), [&] { return parse_loss_mode(f.text("loss_mode", "unsupervised")); });
    c.seed = f.u64("seed", 0);

    c.pge.master_seed = c.seed;
    if (f.has("pge")) {
        Fields p(j.at("pge"), "$.pge");
        c.pge.restarts = p.size("restarts", c.pge.restarts, 1);
        c.pge.batch_size = p.size("batch_size", c.pge.batch_size, 1);
        c.pge.master_seed = p.u64("master_seed", c.pge.master_seed);
        c.pge.init = parse_enum(p.at("init"),
                                [&] { return parse_init_distribution(p.text("init", "fan-in-scaled-gaussian")); });
        p.finish();
    }

    c.target = parse_dataset(f.value("target"), "$.target", base_dir);
    const Json& sources = array_field(f, "sources");
    if (sources.empty()) throw ConfigError("$.sources", "at least one source is required");
    std::set<std::string> names;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const std::string p = "$.sources[" + std::to_string(i) + "]";
        c.sources.push_back(parse_dataset(sources[i], p, base_dir));
        if (!names.insert(c.sources.back().name).second) {
            throw ConfigError(p + ".name", "duplicate source name '" + c.sources.back().name + "'");
        }
    }

    if (f.has("subsample")) {
        Fields s(j.at("subsample"), "$.subsample");
        c.strategy = parse_enum(s.at("strategy"), [&] { return parse_subsample_strategy(s.text("strategy", "SII")); });
        if (s.has("ratios")) {
            const Json& r = array_field(s, "ratios");
            if (r.empty()) throw ConfigError(s.at("ratios"), "must not be empty");
            c.ratios.clear();
            for (std::size_t i = 0; i < r.size(); ++i) {
                const std::string p = s.at("ratios") + "[" + std::to_string(i) + "]";
                const double v = Fields::as_real(r[i], p);
                if (v < min_ratio(c.strategy) || v > 1.0) {
                    throw ConfigError(p, "must lie in [" + std::to_string(min_ratio(c.strategy)) + ", 1]");
                }
                if (!c.ratios.empty() && v <= c.ratios.back()) throw ConfigError(p, "ratios must be increasing");
                c.ratios.push_back(v);
            }
        }
        c.repeats = s.size("repeats", c.repeats, 1);
        s.finish();
    }

    c.pretrain.seed = c.seed;
    c.linear_probe.seed = c.seed;
    c.fine_tune.seed = c.seed;
    if (f.has("training")) {
        Fields t(j.at("training"), "$.training");
        if (t.has("pretrain")) {
            Fields p(j.at("training").at("pretrain"), "$.training.pretrain");
            c.pretrain.epochs = p.size("epochs", c.pretrain.epochs);
            c.pretrain.batch_size = p.size("batch_size", c.pretrain.batch_size, 1);
            c.pretrain.lr = p.real("lr", c.pretrain.lr);
            if (!(c.pretrain.lr > 0.0)) throw ConfigError(p.at("lr"), "must be positive");
            p.finish();
        }
        if (t.has("linear_probe")) parse_train(j.at("training").at("linear_probe"), t.at("linear_probe"), c.linear_probe);
        if (t.has("fine_tune")) parse_train(j.at("training").at("fine_tune"), t.at("fine_tune"), c.fine_tune);
        c.pretrain_runs = t.size("pretrain_runs", c.pretrain_runs, 1);
        t.finish();
    }

    if (f.has("metrics")) {
        const Json& m = array_field(f, "metrics");
        c.metrics.clear();
        for (std::size_t i = 0; i < m.size(); ++i) {
            const std::string p = "$.metrics[" + std::to_string(i) + "]";
            c.metrics.push_back(parse_enum(p, [&] { return parse_baseline_metric(Fields::as_text(m[i], p)); }));
        }
    }

    if (f.has("output_dir")) {
        fs::path out = f.text("output_dir");
        c.output_dir = out.is_relative() && !base_dir.empty() ? base_dir / out : out;
    }
    f.finish();
    return c;
}

Json read_config_json(const fs::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        throw ConfigError("$", e.what());
    }
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ConfigError("$", std::string("malformed JSON: ") + e.what());
    }
}

std::string config_hash(const Json& j) {
    const nlohmann::json canonical = nlohmann::json::parse(j.dump());
    return Fnv1a().text(canonical.dump()).hex();
}

LabeledDataset load_dataset(const DatasetEntry& entry, const ModelSpec& model) {
    LabeledDataset ds;
    switch (entry.format) {
        case DatasetFormat::Idx: ds = load_idx(entry.images, entry.labels); break;
        case DatasetFormat::Csv: ds = load_csv(entry.path, entry.label_column); break;
        case DatasetFormat::Synthetic: ds = make_synthetic(entry.synthetic); break;
    }
    ds.name = entry.name;
    return prepare(ds, model);
}

std::string describe(const ModelSpec& spec) {
    std::ostringstream os;
    os << "in=" << spec.input_dim << ";kind=" << (spec.backbone.kind == BackboneKind::Mlp ? "mlp" : "cnn") << ";w=";
    for (std::size_t w : spec.backbone.widths) os << w << ",";
    if (spec.image) os << ";img=" << spec.image->channels << "x" << spec.image->height << "x" << spec.image->width;
    return os.str();
}

}  // namespace pge
