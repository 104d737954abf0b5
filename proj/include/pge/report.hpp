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

// JSON and CSV forms of the evaluation reports. Every writer has a matching
// reader so emitted files can be parsed back by the tool itself.
//
// Wall-clock times are kept out of the efficiency JSON: reports must be
// byte-identical across reruns, timings never are.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pge/harness.hpp"
#include "pge/pge.hpp"

namespace pge {

using Json = nlohmann::ordered_json;

/// Two-space indented dump with a trailing newline.
std::string dump_json(const Json& j);

Json gap_table_json(const std::vector<GapScore>& gaps);
std::vector<GapScore> gap_table_from_json(const Json& j);

Json to_json(const StabilityReport& report);
StabilityReport stability_from_json(const Json& j);

Json to_json(const TransferReport& report);
TransferReport transfer_from_json(const Json& j);

Json to_json(const EfficiencyReport& report);
EfficiencyReport efficiency_from_json(const Json& j);

Json to_json(const AblationReport& report);
AblationReport ablation_from_json(const Json& j);

/// Per-source scores of one baseline metric, in source input order.
struct BaselineTable {
    BaselineMetric metric = BaselineMetric::Leep;
    std::vector<std::string> sources;
    std::vector<double> scores;
};

Json to_json(const BaselineTable& table);
BaselineTable baseline_table_from_json(const Json& j);

/// Header "ratio,accuracy", one row per point, values at 17 significant digits.
void write_curve_csv(const std::filesystem::path& path, const PerformanceCurve& curve);
PerformanceCurve read_curve_csv(const std::filesystem::path& path, SubsampleStrategy strategy);

/// Raw parameter vector: magic "PGM1", u64 count, little-endian doubles.
void write_params(const std::filesystem::path& path, const std::vector<double>& params);
std::vector<double> read_params(const std::filesystem::path& path);

}  // namespace pge
