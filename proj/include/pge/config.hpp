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

// Run configuration for the command-line tool. One JSON file describes the
// model, the datasets, the estimator and the training budgets. Every object
// rejects keys it does not know, and every error names the field path.
//
//   {
//     "model":   {"input_dim": 16, "backbone": {"kind": "mlp", "widths": [64, 32]}},
//     "loss_mode": "unsupervised",
//     "pge":     {"restarts": 10, "batch_size": 256, "master_seed": 0},
//     "target":  {"name": "t", "format": "synthetic", "classes": 10},
//     "sources": [{"name": "a", "format": "csv", "path": "a.csv", "label_column": "label"}],
//     "subsample": {"strategy": "SII", "ratios": [0.1, 0.5, 1.0], "repeats": 10},
//     "training":  {"pretrain": {"epochs": 100}, "linear_probe": {"epochs": 100}},
//     "seed": 0,
//     "output_dir": "out"
//   }
//
// Relative dataset paths resolve against the config file's directory.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pge/baselines.hpp"
#include "pge/dataset.hpp"
#include "pge/harness.hpp"
#include "pge/model.hpp"
#include "pge/pge.hpp"
#include "pge/report.hpp"

namespace pge {

enum class DatasetFormat { Idx, Csv, Synthetic };

struct DatasetEntry {
    std::string name;
    DatasetFormat format = DatasetFormat::Synthetic;
    std::filesystem::path images;  // idx
    std::filesystem::path labels;  // idx
    std::filesystem::path path;    // csv
    std::string label_column = "label";
    SyntheticSpec synthetic;
};

struct RunConfig {
    ModelSpec model;
    LossMode mode = LossMode::UnsupervisedReconstruction;
    PgeParams pge;
    DatasetEntry target;
    std::vector<DatasetEntry> sources;
    SubsampleStrategy strategy = SubsampleStrategy::SII;
    std::vector<double> ratios{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::size_t repeats = 10;
    PretrainOptions pretrain;
    TrainConfig linear_probe{TransferMethod::LinearProbe};
    TrainConfig fine_tune{TransferMethod::FineTune};
    std::size_t pretrain_runs = 1;
    std::vector<BaselineMetric> metrics = all_baseline_metrics();
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "out";
};

/// Validates the whole tree before returning. Throws ConfigError.
RunConfig parse_config(const Json& j, const std::filesystem::path& base_dir = {});

/// Reads and parses a config file; malformed JSON is a ConfigError at "$".
Json read_config_json(const std::filesystem::path& path);

/// Hex FNV-1a of the canonical (key-sorted, compact) form, so reordering keys
/// leaves it unchanged.
std::string config_hash(const Json& j);

/// Loads an entry and prepares it for `model` (standardise, then project).
LabeledDataset load_dataset(const DatasetEntry& entry, const ModelSpec& model);

/// Stable text form of a model spec, for cache keys.
std::string describe(const ModelSpec& spec);

}  // namespace pge
