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

#include "pge/report.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "pge/error.hpp"
#include "pge/io.hpp"

namespace pge {

namespace {

constexpr char kParamMagic[4] = {'P', 'G', 'M', '1'};

template <typename T>
T field(const Json& j, const char* key) {
    if (!j.contains(key)) throw ParseError(std::string("report is missing \"") + key + "\"");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("report field \"") + key + "\": " + e.what());
    }
}

Json curve_json(const PerformanceCurve& c) {
    Json pts = Json::array();
    for (const auto& [r, a] : c.points) pts.push_back(Json::array({r, a}));
    return pts;
}

PerformanceCurve curve_from_json(const Json& pts, SubsampleStrategy strategy) {
    PerformanceCurve c;
    c.strategy = strategy;
    for (const auto& p : pts) c.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    c.validate();
    return c;
}

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

Json gap_table_json(const std::vector<GapScore>& gaps) {
    Json rows = Json::array();
    for (std::size_t i = 0; i < gaps.size(); ++i) {
        rows.push_back({{"rank", i + 1}, {"source", gaps[i].source}, {"target", gaps[i].target}, {"gap", gaps[i].value}});
    }
    return rows;
}

std::vector<GapScore> gap_table_from_json(const Json& j) {
    if (!j.is_array()) throw ParseError("gap table must be an array");
    std::vector<GapScore> out;
    for (const auto& row : j) {
        out.push_back(GapScore{field<double>(row, "gap"), field<std::string>(row, "source"),
                               field<std::string>(row, "target")});
    }
    return out;
}

Json to_json(const StabilityReport& r) {
    Json cells = Json::array();
    for (const auto& c : r.cells) {
        cells.push_back({{"ratio", c.ratio},
                         {"repeat", c.repeat},
                         {"gaps", c.gaps},
                         {"ranking", c.ranking},
                         {"ranking_matches", c.ranking_matches}});
    }
    return Json{{"suite", "stability"},
                {"target", r.target},
                {"strategy", std::string(to_string(r.strategy))},
                {"sources", r.sources},
                {"full_gaps", r.full_gaps},
                {"full_ranking", r.full_ranking},
                {"epsilon", r.epsilon},
                {"gap_mean", r.gap_mean},
                {"gap_stddev", r.gap_stddev},
                {"gap_cv", r.gap_cv},
                {"rankings_identical", r.rankings_identical},
                {"schwarz_checked", r.schwarz_checked},
                {"schwarz_violations", r.schwarz_violations},
                {"cells", cells}};
}

StabilityReport stability_from_json(const Json& j) {
    StabilityReport r;
    r.target = field<std::string>(j, "target");
    r.strategy = parse_subsample_strategy(field<std::string>(j, "strategy"));
    r.sources = field<std::vector<std::string>>(j, "sources");
    r.full_gaps = field<std::vector<double>>(j, "full_gaps");
    r.full_ranking = field<std::vector<std::string>>(j, "full_ranking");
    r.epsilon = field<std::vector<double>>(j, "epsilon");
    r.gap_mean = field<std::vector<double>>(j, "gap_mean");
    r.gap_stddev = field<std::vector<double>>(j, "gap_stddev");
    r.gap_cv = field<std::vector<double>>(j, "gap_cv");
    r.rankings_identical = field<bool>(j, "rankings_identical");
    r.schwarz_checked = field<std::size_t>(j, "schwarz_checked");
    r.schwarz_violations = field<std::size_t>(j, "schwarz_violations");
    for (const auto& c : field<Json>(j, "cells")) {
        StabilityCell cell;
        cell.ratio = field<double>(c, "ratio");
        cell.repeat = field<std::size_t>(c, "repeat");
        cell.gaps = field<std::vector<double>>(c, "gaps");
        cell.ranking = field<std::vector<std::string>>(c, "ranking");
        cell.ranking_matches = field<bool>(c, "ranking_matches");
        r.cells.push_back(std::move(cell));
    }
    return r;
}

Json to_json(const TransferReport& r) {
    Json sources = Json::array();
    for (const auto& s : r.sources) {
        sources.push_back({{"name", s.name},
                           {"gap", s.gap},
                           {"pretrain_accuracy", s.pretrain_accuracy},
                           {"strategy", std::string(to_string(s.lp_curve.strategy))},
                           {"lp_curve", curve_json(s.lp_curve)},
                           {"ft_curve", curve_json(s.ft_curve)},
                           {"lp_auc", s.lp_auc},
                           {"ft_auc", s.ft_auc},
                           {"lp_final", s.lp_final},
                           {"ft_final", s.ft_final},
                           {"gap_rank", s.gap_rank},
                           {"lp_rank", s.lp_rank},
                           {"ft_rank", s.ft_rank},
                           {"gap_dispersion", s.gap_dispersion}});
    }
    return Json{{"suite", "reliability"},
                {"target", r.target},
                {"mode", std::string(to_string(r.mode))},
                {"gap_ranking", r.gap_ranking},
                {"tau_lp", r.tau_lp},
                {"tau_ft", r.tau_ft},
                {"tau_lp_final", r.tau_lp_final},
                {"tau_ft_final", r.tau_ft_final},
                {"schwarz_checked", r.schwarz_checked},
                {"schwarz_violations", r.schwarz_violations},
                {"sources", sources}};
}

TransferReport transfer_from_json(const Json& j) {
    TransferReport r;
    r.target = field<std::string>(j, "target");
    r.mode = parse_loss_mode(field<std::string>(j, "mode"));
    r.gap_ranking = field<std::vector<std::string>>(j, "gap_ranking");
    r.tau_lp = field<double>(j, "tau_lp");
    r.tau_ft = field<double>(j, "tau_ft");
    r.tau_lp_final = field<double>(j, "tau_lp_final");
    r.tau_ft_final = field<double>(j, "tau_ft_final");
    r.schwarz_checked = field<std::size_t>(j, "schwarz_checked");
    r.schwarz_violations = field<std::size_t>(j, "schwarz_violations");
    for (const auto& s : field<Json>(j, "sources")) {
        SourceOutcome o;
        const SubsampleStrategy strategy = parse_subsample_strategy(field<std::string>(s, "strategy"));
        o.name = field<std::string>(s, "name");
        o.gap = field<double>(s, "gap");
        o.pretrain_accuracy = field<double>(s, "pretrain_accuracy");
        o.lp_curve = curve_from_json(field<Json>(s, "lp_curve"), strategy);
        o.ft_curve = curve_from_json(field<Json>(s, "ft_curve"), strategy);
        o.lp_auc = field<double>(s, "lp_auc");
        o.ft_auc = field<double>(s, "ft_auc");
        o.lp_final = field<double>(s, "lp_final");
        o.ft_final = field<double>(s, "ft_final");
        o.gap_rank = field<double>(s, "gap_rank");
        o.lp_rank = field<double>(s, "lp_rank");
        o.ft_rank = field<double>(s, "ft_rank");
        o.gap_dispersion = field<double>(s, "gap_dispersion");
        r.sources.push_back(std::move(o));
    }
    return r;
}

Json to_json(const EfficiencyReport& r) {
    Json baselines = Json::array();
    for (const auto& b : r.baselines) {
        baselines.push_back({{"metric", std::string(to_string(b.metric))},
                             {"optimizer_steps", b.optimizer_steps},
                             {"pretrain_invocations", b.pretrain_invocations},
                             {"scores", b.scores}});
    }
    return Json{{"suite", "efficiency"},
                {"sources", r.sources},
                {"pge_optimizer_steps", r.pge_optimizer_steps},
                {"ranking", gap_table_json(r.ranking)},
                {"baselines", baselines}};
}

EfficiencyReport efficiency_from_json(const Json& j) {
    EfficiencyReport r;
    r.sources = field<std::vector<std::string>>(j, "sources");
    r.pge_optimizer_steps = field<std::uint64_t>(j, "pge_optimizer_steps");
    r.ranking = gap_table_from_json(field<Json>(j, "ranking"));
    for (const auto& b : field<Json>(j, "baselines")) {
        BaselinePipeline p;
        p.metric = parse_baseline_metric(field<std::string>(b, "metric"));
        p.optimizer_steps = field<std::uint64_t>(b, "optimizer_steps");
        p.pretrain_invocations = field<std::size_t>(b, "pretrain_invocations");
        p.scores = field<std::vector<double>>(b, "scores");
        r.baselines.push_back(std::move(p));
    }
    return r;
}

namespace {

Json spread_json(const ModeSpread& m) {
    return Json{{"mode", std::string(to_string(m.mode))},
                {"invariant", m.invariant},
                {"ranking_dispersion", m.ranking_dispersion},
                {"gap_cv", m.gap_cv},
                {"rankings", m.rankings},
                {"gaps", m.gaps},
                {"schwarz_checked", m.schwarz_checked},
                {"schwarz_violations", m.schwarz_violations}};
}

ModeSpread spread_from_json(const Json& j) {
    ModeSpread m;
    m.mode = parse_loss_mode(field<std::string>(j, "mode"));
    m.invariant = field<bool>(j, "invariant");
    m.ranking_dispersion = field<double>(j, "ranking_dispersion");
    m.gap_cv = field<std::vector<double>>(j, "gap_cv");
    m.rankings = field<std::vector<std::vector<std::string>>>(j, "rankings");
    m.gaps = field<std::vector<std::vector<double>>>(j, "gaps");
    m.schwarz_checked = field<std::size_t>(j, "schwarz_checked");
    m.schwarz_violations = field<std::size_t>(j, "schwarz_violations");
    return m;
}

}  // namespace

Json to_json(const AblationReport& r) {
    return Json{{"suite", "ablation"},
                {"target", r.target},
                {"sources", r.sources},
                {"master_seeds", r.master_seeds},
                {"unsupervised", spread_json(r.unsupervised)},
                {"supervised", spread_json(r.supervised)}};
}

AblationReport ablation_from_json(const Json& j) {
    AblationReport r;
    r.target = field<std::string>(j, "target");
    r.sources = field<std::vector<std::string>>(j, "sources");
    r.master_seeds = field<std::vector<std::uint64_t>>(j, "master_seeds");
    r.unsupervised = spread_from_json(field<Json>(j, "unsupervised"));
    r.supervised = spread_from_json(field<Json>(j, "supervised"));
    return r;
}

Json to_json(const BaselineTable& t) {
    Json j;
    j["metric"] = std::string(to_string(t.metric));
    j["higher_is_better"] = true;
    Json rows = Json::array();
    for (std::size_t i = 0; i < t.sources.size(); ++i) rows.push_back({{"source", t.sources[i]}, {"score", t.scores[i]}});
    j["scores"] = std::move(rows);
    return j;
}

BaselineTable baseline_table_from_json(const Json& j) {
    BaselineTable t;
    t.metric = parse_baseline_metric(field<std::string>(j, "metric"));
    for (const auto& row : field<Json>(j, "scores")) {
        t.sources.push_back(field<std::string>(row, "source"));
        t.scores.push_back(field<double>(row, "score"));
    }
    return t;
}

void write_curve_csv(const std::filesystem::path& path, const PerformanceCurve& curve) {
    std::string out = "ratio,accuracy\n";
    for (const auto& [r, a] : curve.points) out += fmt17(r) + "," + fmt17(a) + "\n";
    write_file_atomic(path, out);
}

PerformanceCurve read_curve_csv(const std::filesystem::path& path, SubsampleStrategy strategy) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) || line != "ratio,accuracy") {
        throw ParseError(path.string() + ": expected header \"ratio,accuracy\"");
    }
    PerformanceCurve curve;
    curve.strategy = strategy;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        double r = 0.0, a = 0.0;
        const char* end = line.data() + line.size();
        if (comma == std::string::npos ||
            std::from_chars(line.data(), line.data() + comma, r).ec != std::errc{} ||
            std::from_chars(line.data() + comma + 1, end, a).ec != std::errc{}) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed curve row");
        }
        curve.points.emplace_back(r, a);
    }
    curve.validate();
    return curve;
}

void write_params(const std::filesystem::path& path, const std::vector<double>& params) {
    std::string buf(kParamMagic, 4);
    const std::uint64_t n = params.size();
    for (int b = 0; b < 8; ++b) buf.push_back(static_cast<char>((n >> (8 * b)) & 0xFF));
    for (double v : params) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) buf.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
    write_file_atomic(path, buf);
}

std::vector<double> read_params(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    auto le = [&](std::size_t at) {
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[at + b])) << (8 * b);
        return v;
    };
    if (buf.size() < 12 || std::memcmp(buf.data(), kParamMagic, 4) != 0) {
        throw ParseError(path.string() + ": not a parameter file");
    }
    const std::uint64_t n = le(4);
    if (buf.size() != 12 + 8 * n) throw ParseError(path.string() + ": truncated parameter file");
    std::vector<double> out(n);
    for (std::uint64_t i = 0; i < n; ++i) out[i] = std::bit_cast<double>(le(12 + 8 * i));
    return out;
}

}  // namespace pge
