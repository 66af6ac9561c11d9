// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment configuration, protocol runs and their artifacts.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tfmoe/engine.hpp"
#include "tfmoe/metrics.hpp"

namespace tfmoe::bench {

/// Exactly one of csv / synthetic is set.
struct DataSource {
    std::optional<std::filesystem::path> csv;       // task,node_id,bin_index,flow
    std::optional<std::filesystem::path> metadata;  // task,node_id,is_new
    int bin_minutes = 5;
    data::Weekday first_weekday = data::Weekday::Monday;
    std::optional<data::StreamSpec> synthetic;
};

struct ExperimentConfig {
    engine::EngineConfig engine;
    std::vector<std::size_t> horizons{3, 6, 12};  // 1-based forecast steps
    DataSource data;
    std::size_t eval_batch = 256;

    /// Throws ConfigError.
    void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path);
/// Hex CRC-32 of the canonical JSON dump.
std::string config_hash(const ExperimentConfig& cfg);

nlohmann::json to_json(const data::StreamSpec& s);
data::StreamSpec stream_spec_from_json(const nlohmann::json& j);

data::Weekday weekday_from_string(const std::string& s);
const char* to_string(data::Weekday d);

/// Relative paths in the data source resolve against base_dir.
std::vector<data::TaskDataset> load_tasks(const ExperimentConfig& cfg, const std::filesystem::path& base_dir = {});

/// Protocol name, with "-no<mechanism>" suffixes for disabled tfmoe mechanisms.
std::string variant_label(const engine::EngineConfig& cfg);

// ---- runs ----------------------------------------------------------------------------

struct TaskMetrics {
    int task = 0;
    std::size_t nodes = 0;
    std::size_t windows = 0;
    metrics::MetricsReport all_nodes;    // every node of the task
    metrics::MetricsReport first_nodes;  // nodes present since task 1
};

/// Test-split metrics of one task.
TaskMetrics evaluate_task(const engine::ModelState& state, const data::TaskDataset& task,
                          const data::TaskDataset& first_task, const ExperimentConfig& cfg);

/// Pre-training plus task 1, which every protocol shares.
struct FirstTask {
    engine::ModelState state;
    engine::PretrainReport pretrain;
    engine::TaskTrainReport report;
};

FirstTask run_first_task(const ExperimentConfig& cfg, const std::vector<data::TaskDataset>& tasks);

struct RunResult {
    std::string protocol;
    std::string variant;
    std::string config_hash;
    std::vector<TaskMetrics> tasks;
    metrics::MetricsReport aggregate;  // mean over tasks of the all-node metrics
    engine::PretrainReport pretrain;
    std::vector<engine::TaskTrainReport> reports;
    engine::ModelState final_state;
};

/// Runs every task of the stream. With a cache the shared first task is copied
/// instead of recomputed. With an output directory, writes train_log.jsonl,
/// metrics.json, config.json and checkpoints/task<k>.ckpt.
RunResult run_protocol(const ExperimentConfig& cfg, const std::vector<data::TaskDataset>& tasks,
                       const FirstTask* cache = nullptr, const std::optional<std::filesystem::path>& out_dir = {});

// ---- records --------------------------------------------------------------------------

nlohmann::json to_json(const metrics::MetricsReport& r);
metrics::MetricsReport metrics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TaskMetrics& m);
nlohmann::json task_record(const engine::TaskTrainReport& r);
nlohmann::json pretrain_record(const engine::PretrainReport& r);
nlohmann::json metrics_document(const RunResult& r);

/// Appends one JSON object per line.
class JsonlWriter {
public:
    explicit JsonlWriter(const std::filesystem::path& path, bool append = true);
    void write(const nlohmann::json& record);

private:
    std::filesystem::path path_;
};

/// Reads metrics.json from each run directory and writes summary.csv,
/// summary.md and plot_data.csv (per task, per protocol, per horizon).
void write_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir);

}  // namespace tfmoe::bench
