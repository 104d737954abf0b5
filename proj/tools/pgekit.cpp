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

// pgekit: rank source datasets by transfer gap, run the evaluation suites and
// the comparison metrics from a JSON run config.
//
// Exit codes: 0 success, 1 invalid config or arguments, 2 runtime failure.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pge/config.hpp"
#include "pge/error.hpp"
#include "pge/hash.hpp"
#include "pge/io.hpp"
#include "pge/report.hpp"

namespace fs = std::filesystem;
using namespace pge;

namespace {

struct Flags {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    std::string suite;
    std::string metric;
};

struct Run {
    Json raw;
    RunConfig cfg;
    std::string hash;
    fs::path out;
    fs::path cache;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

Run load_run(const Flags& flags) {
    if (flags.config.empty()) throw ConfigError("--config", "a config file is required");
    Run run;
    run.raw = read_config_json(flags.config);
    if (flags.seed) {
        if (!run.raw.is_object()) throw ConfigError("$", "expected an object");
        run.raw["seed"] = *flags.seed;
        if (run.raw.contains("pge") && run.raw["pge"].is_object() && run.raw["pge"].contains("master_seed")) {
            run.raw["pge"]["master_seed"] = *flags.seed;
        }
    }
    run.cfg = parse_config(run.raw, fs::path(flags.config).parent_path());
    run.hash = config_hash(run.raw);
    run.out = flags.out.empty() ? run.cfg.output_dir : fs::path(flags.out);
    const char* env = std::getenv("PGE_CACHE_DIR");
    run.cache = env && *env ? fs::path(env) : run.out / "cache";
    return run;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void append_record(const Run& run, const std::string& command, Json payload, double seconds) {
    Json rec;
    rec["timestamp"] = utc_timestamp();
    rec["config_hash"] = run.hash;
    rec["command"] = command;
    rec["payload"] = std::move(payload);
    rec["seconds"] = seconds;
    fs::create_directories(run.out);
    std::ofstream log(run.out / "results.jsonl", std::ios::app);
    log << rec.dump() << "\n";
    if (!log) throw Error("cannot append to " + (run.out / "results.jsonl").string());
}

struct Datasets {
    LabeledDataset target;
    std::vector<LabeledDataset> sources;
};

Datasets load_datasets(const RunConfig& cfg) {
    Datasets d{load_dataset(cfg.target, cfg.model), {}};
    for (const auto& e : cfg.sources) d.sources.push_back(load_dataset(e, cfg.model));
    return d;
}

// ---------------------------------------------------------------------------

struct PgeCache {
    const Run& run;
    std::vector<std::uint64_t> seeds;
    std::size_t hits = 0;
    std::size_t misses = 0;

    GradientExpectation get(const LabeledDataset& ds) {
        const RunConfig& c = run.cfg;
        const std::size_t batch = std::min(c.pge.batch_size, ds.size());
        const std::string key = Fnv1a()
                                    .text("pge")
                                    .u64(content_hash(ds))
                                    .text(describe(c.model))
                                    .text(to_string(c.mode))
                                    .text(to_string(c.pge.init))
                                    .u64(batch)
                                    .u64(c.pge.master_seed)
                                    .u64(c.pge.restarts)
                                    .hex();
        const fs::path file = run.cache / ("pge-" + key + ".bin");
        GradientExpectation g;
        if (fs::exists(file)) {
            PgeArtifact a = read_pge_artifact(file);
            if (a.restarts == c.pge.restarts && a.vector.size() == backbone_parameter_count(c.model)) {
                ++hits;
                g.dataset = ds.name;
                g.vector = std::move(a.vector);
                g.restarts = a.restarts;
                g.mode = c.mode;
                g.batch_size = batch;
                g.seed_schedule = seeds;
                g.validate();
                return g;
            }
        }
        ++misses;
        g = estimate_pge(ds, c.model, c.mode, batch, seeds, c.pge.init, Execution::Parallel);
        write_pge_artifact(file, g);
        return g;
    }
};

int cmd_estimate(const Flags& flags) {
    const Run run = load_run(flags);
    Stopwatch clock;
    const Datasets d = load_datasets(run.cfg);

    PgeCache cache{run, seed_schedule(run.cfg.pge.master_seed, run.cfg.pge.restarts)};
    const GradientExpectation target = cache.get(d.target);
    std::vector<GradientExpectation> sources;
    for (const auto& s : d.sources) sources.push_back(cache.get(s));

    write_pge_artifact(run.out / "pge" / (target.dataset + ".pge"), target);
    for (const auto& s : sources) write_pge_artifact(run.out / "pge" / (s.dataset + ".pge"), s);

    std::size_t violations = 0;
    const auto gaps = rank_against(target, sources, &violations);
    const Json table = gap_table_json(gaps);
    write_file_atomic(run.out / "gaps.json", dump_json(table));

    const double secs = clock.seconds();
    std::printf("rank  gap                  source -> %s\n", target.dataset.c_str());
    for (std::size_t i = 0; i < gaps.size(); ++i) {
        std::printf("%4zu  %-19.12g  %s\n", i + 1, gaps[i].value, gaps[i].source.c_str());
    }
    std::printf("pge cache: %zu hit, %zu miss\n", cache.hits, cache.misses);
    if (violations) std::printf("warning: %zu elementwise bound violations\n", violations);
    std::printf("elapsed: %.3f s\n", secs);
    append_record(run, "estimate", {{"gaps", table}, {"cache_hits", cache.hits}, {"cache_misses", cache.misses}},
                  secs);
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_evaluate(const Flags& flags) {
    const Run run = load_run(flags);
    const RunConfig& c = run.cfg;
    Stopwatch clock;
    const Datasets d = load_datasets(c);
    Json payload;

    if (flags.suite == "stability") {
        StabilityOptions o;
        o.strategy = c.strategy;
        o.ratios = c.ratios;
        o.repeats = c.repeats;
        o.seed = c.seed;
        o.pge = c.pge;
        o.mode = c.mode;
        const auto r = evaluate_stability(d.sources, d.target, c.model, o);
        const Json j = to_json(r);
        write_file_atomic(run.out / "stability.json", dump_json(j));
        std::printf("rankings identical at every subset: %s\n", r.rankings_identical ? "yes" : "no");
        std::printf("%-20s %-12s %-12s %s\n", "source", "full gap", "cv", "max |dev|");
        for (std::size_t i = 0; i < r.sources.size(); ++i) {
            std::printf("%-20s %-12.6g %-12.4g %.4g\n", r.sources[i].c_str(), r.full_gaps[i], r.gap_cv[i],
                        r.epsilon[i]);
        }
        payload = {{"report", "stability.json"}};
    } else if (flags.suite == "reliability") {
        ReliabilityOptions o;
        o.pge = c.pge;
        o.mode = c.mode;
        o.pretrain = c.pretrain;
        o.linear_probe = c.linear_probe;
        o.fine_tune = c.fine_tune;
        o.strategy = c.strategy;
        o.ratios = c.ratios;
        o.repeats = c.repeats;
        o.pretrain_runs = c.pretrain_runs;
        o.seed = c.seed;
        const auto r = evaluate_reliability(d.sources, d.target, c.model, o);
        write_file_atomic(run.out / "reliability.json", dump_json(to_json(r)));
        for (const auto& s : r.sources) {
            write_curve_csv(run.out / "curves" / (s.name + ".lp.csv"), s.lp_curve);
            write_curve_csv(run.out / "curves" / (s.name + ".ft.csv"), s.ft_curve);
        }
        std::printf("%-20s %-12s %-10s %s\n", "source", "gap", "lp auc", "ft auc");
        for (const auto& s : r.sources) {
            std::printf("%-20s %-12.6g %-10.4f %.4f\n", s.name.c_str(), s.gap, s.lp_auc, s.ft_auc);
        }
        std::printf("kendall tau: linear probe %.4f, fine-tune %.4f\n", r.tau_lp, r.tau_ft);
        payload = {{"report", "reliability.json"}, {"tau_lp", r.tau_lp}, {"tau_ft", r.tau_ft}};
    } else {
        EfficiencyOptions o;
        o.pge = c.pge;
        o.mode = c.mode;
        o.pretrain = c.pretrain;
        o.metrics = c.metrics;
        const auto r = evaluate_efficiency(d.sources, d.target, c.model, o);
        write_file_atomic(run.out / "efficiency.json", dump_json(to_json(r)));
        std::printf("%-10s %-10s %-16s %s\n", "pipeline", "seconds", "optimizer steps", "pretrainings");
        std::printf("%-10s %-10.4f %-16llu %d\n", "pge", r.pge_seconds,
                    static_cast<unsigned long long>(r.pge_optimizer_steps), 0);
        Json timings = {{"pge", r.pge_seconds}};
        for (const auto& b : r.baselines) {
            const std::string name(to_string(b.metric));
            std::printf("%-10s %-10.4f %-16llu %zu\n", name.c_str(), b.seconds,
                        static_cast<unsigned long long>(b.optimizer_steps), b.pretrain_invocations);
            timings[name] = b.seconds;
        }
        if (!r.baselines.empty()) std::printf("smallest speedup: %.2fx\n", r.min_speedup());
        payload = {{"report", "efficiency.json"}, {"seconds", timings}};
    }
    const double secs = clock.seconds();
    std::printf("elapsed: %.3f s\n", secs);
    append_record(run, "evaluate " + flags.suite, payload, secs);
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_baseline(const Flags& flags) {
    BaselineMetric metric;
    try {
        metric = parse_baseline_metric(flags.metric);
    } catch (const InvalidArgument& e) {
        throw ConfigError("--metric", e.what());
    }
    const Run run = load_run(flags);
    const RunConfig& c = run.cfg;
    Stopwatch clock;
    const Datasets d = load_datasets(c);

    BaselineTable table{metric, {}, {}};
    std::size_t trained = 0;
    std::size_t cached = 0;
    for (const auto& src : d.sources) {
        const ModelSpec model = c.model.for_mode(LossMode::SupervisedCrossEntropy, src.num_classes);
        const std::string key = Fnv1a()
                                    .text("pretrain")
                                    .u64(content_hash(src))
                                    .text(describe(c.model))
                                    .u64(c.pretrain.epochs)
                                    .u64(c.pretrain.batch_size)
                                    .f64(c.pretrain.lr)
                                    .u64(c.pretrain.seed)
                                    .hex();
        const fs::path file = run.cache / ("pretrain-" + key + ".pgm");
        std::optional<ModelState> state;
        if (fs::exists(file)) {
            std::vector<double> params = read_params(file);
            if (params.size() == parameter_layout(model).back().offset + parameter_layout(model).back().size()) {
                state.emplace(model, std::move(params));
                ++cached;
            }
        }
        if (!state) {
            PretrainedSource p = pretrain_source(src, c.model, c.pretrain);
            write_params(file, std::vector<double>(p.state.params().begin(), p.state.params().end()));
            state.emplace(std::move(p.state));
            ++trained;
        }
        table.sources.push_back(src.name);
        table.scores.push_back(baseline_score(metric, *state, d.target));
    }
    const std::string name(to_string(metric));
    write_file_atomic(run.out / ("baseline-" + name + ".json"), dump_json(to_json(table)));

    const double secs = clock.seconds();
    std::printf("%s scores against %s (higher is better)\n", name.c_str(), d.target.name.c_str());
    for (std::size_t i = 0; i < table.sources.size(); ++i) {
        std::printf("  %-20s %.12g\n", table.sources[i].c_str(), table.scores[i]);
    }
    std::printf("pretraining: %zu run, %zu cached\n", trained, cached);
    std::printf("elapsed: %.3f s\n", secs);
    append_record(run, "baseline " + name, {{"table", to_json(table)}, {"pretrained", trained}, {"cached", cached}},
                  secs);
    return 0;
}

// ---------------------------------------------------------------------------

// Parses every file the other commands emit and prints a summary of each.
int cmd_report(const Flags& flags) {
    fs::path out = flags.out;
    if (out.empty()) out = load_run(flags).out;
    if (!fs::is_directory(out)) throw Error("no output directory at " + out.string());

    auto load = [&](const fs::path& p) { return Json::parse(read_file(p)); };
    std::size_t parsed = 0;

    if (fs::exists(out / "gaps.json")) {
        const auto gaps = gap_table_from_json(load(out / "gaps.json"));
        std::printf("gaps.json: %zu sources, best %s (%.6g)\n", gaps.size(),
                    gaps.empty() ? "-" : gaps.front().source.c_str(), gaps.empty() ? 0.0 : gaps.front().value);
        ++parsed;
    }
    if (fs::exists(out / "stability.json")) {
        const auto r = stability_from_json(load(out / "stability.json"));
        double worst = 0.0;
        for (double cv : r.gap_cv) worst = std::max(worst, cv);
        std::printf("stability.json: %zu cells, rankings identical %s, largest cv %.4g\n", r.cells.size(),
                    r.rankings_identical ? "yes" : "no", worst);
        ++parsed;
    }
    if (fs::exists(out / "reliability.json")) {
        const auto r = transfer_from_json(load(out / "reliability.json"));
        std::printf("reliability.json: %zu sources, tau lp %.4f ft %.4f\n", r.sources.size(), r.tau_lp, r.tau_ft);
        ++parsed;
    }
    if (fs::exists(out / "efficiency.json")) {
        const auto r = efficiency_from_json(load(out / "efficiency.json"));
        std::printf("efficiency.json: pge optimizer steps %llu, %zu baseline pipelines\n",
                    static_cast<unsigned long long>(r.pge_optimizer_steps), r.baselines.size());
        ++parsed;
    }
    for (BaselineMetric m : all_baseline_metrics()) {
        const fs::path p = out / ("baseline-" + std::string(to_string(m)) + ".json");
        if (!fs::exists(p)) continue;
        const auto t = baseline_table_from_json(load(p));
        std::printf("%s: %zu scores\n", p.filename().c_str(), t.scores.size());
        ++parsed;
    }
    if (fs::is_directory(out / "curves")) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(out / "curves")) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& p : files) {
            const auto curve = read_curve_csv(p, SubsampleStrategy::SII);
            std::printf("curves/%s: %zu points, auc %.4f\n", p.filename().c_str(), curve.points.size(),
                        performance_auc(curve));
            ++parsed;
        }
    }
    if (fs::is_directory(out / "pge")) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(out / "pge")) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& p : files) {
            const auto a = read_pge_artifact(p);
            std::printf("pge/%s: length %zu, %u restarts\n", p.filename().c_str(), a.vector.size(), a.restarts);
            ++parsed;
        }
    }
    if (fs::exists(out / "results.jsonl")) {
        std::ifstream in(out / "results.jsonl");
        std::size_t lines = 0;
        for (std::string line; std::getline(in, line); ++lines) {
            const Json rec = Json::parse(line);
            for (const char* key : {"timestamp", "config_hash", "command", "payload"}) {
                if (!rec.contains(key)) throw ParseError("results.jsonl line " + std::to_string(lines + 1) +
                                                         ": missing \"" + key + "\"");
            }
        }
        std::printf("results.jsonl: %zu records\n", lines);
        ++parsed;
    }
    if (parsed == 0) throw Error("nothing to report in " + out.string());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transferability ranking by principal gradient expectation"};
    app.require_subcommand(1);
    Flags flags;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", flags.config, "JSON run config");
        sub->add_option("--out", flags.out, "Output directory (overrides output_dir)");
        sub->add_option("--seed", flags.seed, "Overrides seed and pge.master_seed");
        sub->add_option("--threads", flags.threads, "OpenMP threads (0 keeps the default)")->check(CLI::NonNegativeNumber);
    };
    CLI::App* estimate = app.add_subcommand("estimate", "Estimate PGEs and print the gap table");
    common(estimate);
    CLI::App* evaluate = app.add_subcommand("evaluate", "Run an evaluation suite");
    common(evaluate);
    evaluate->add_option("--suite", flags.suite, "stability|reliability|efficiency")
        ->required()
        ->check(CLI::IsMember({"stability", "reliability", "efficiency"}));
    CLI::App* baseline = app.add_subcommand("baseline", "Score sources with a comparison metric");
    common(baseline);
    baseline->add_option("--metric", flags.metric, "leep|nce|hscore|logme|gbc")->required();
    CLI::App* report = app.add_subcommand("report", "Parse emitted files and summarise them");
    common(report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    if (flags.threads > 0) omp_set_num_threads(flags.threads);

    std::string context;
    try {
        if (estimate->parsed()) return context = "estimate", cmd_estimate(flags);
        if (evaluate->parsed()) return context = "evaluate " + flags.suite, cmd_evaluate(flags);
        if (baseline->parsed()) return context = "baseline", cmd_baseline(flags);
        return context = "report", cmd_report(flags);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s: %s\n", context.c_str(), e.what());
        return 2;
    }
}
