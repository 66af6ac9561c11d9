// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Evolving sensor networks: per-task node sets and flow series, CSV ingest,
// a synthetic stream generator with planted pattern clusters, z-score
// normalization, Monday-aligned week extraction, and forecasting windows.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tfmoe/tensor.hpp"

namespace tfmoe::data {

using NodeId = std::int64_t;

/// Malformed or protocol-violating input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SensorSeries {
    NodeId node_id = 0;
    std::vector<double> flow;
    int bin_minutes = 5;
};

struct NormStats {
    double mean = 0.0;
    double std = 1.0;

    static constexpr double kMinStd = 1e-12;

    double normalize(double v) const { return (v - mean) / std; }
    double denormalize(double v) const { return v * std + mean; }
};

/// Weekday of a bin, Monday = 0.
enum class Weekday : int { Monday = 0, Tuesday, Wednesday, Thursday, Friday, Saturday, Sunday };

struct TaskDataset {
    int task_index = 1;
    std::vector<NodeId> nodes;      // V^tau, ascending
    std::vector<NodeId> new_nodes;  // nodes not present in the previous task
    std::map<NodeId, SensorSeries> series;
    std::size_t steps_per_day = 288;
    Weekday calendar = Weekday::Monday;  // weekday of bin 0
    std::optional<NormStats> norm;
    std::map<NodeId, int> labels;  // planted cluster per node; synthetic streams only

    std::size_t length() const;
    std::size_t steps_per_week() const { return 7 * steps_per_day; }
    /// Position of bin t inside the Monday-based week cycle.
    std::size_t time_of_week(std::size_t t) const;
    bool has_node(NodeId id) const;
};

struct TimeRange {
    std::size_t begin = 0, end = 0;
    std::size_t size() const { return end - begin; }
    friend bool operator==(const TimeRange&, const TimeRange&) = default;
};

struct SplitRanges {
    TimeRange train, val, test;
};

// ---- access auditing --------------------------------------------------------

enum class AccessKind { Window, Week, Stats };

/// Node ids read through a FlowReader, per kind of read.
struct AccessLog {
    std::set<NodeId> window_reads;
    std::set<NodeId> week_reads;
    std::set<NodeId> stats_reads;

    /// Nodes whose flow was read for training (windows or statistics).
    std::set<NodeId> training_reads() const;
    void clear();
};

/// Read path to a task's flows. When a log is attached every read is recorded.
class FlowReader {
public:
    explicit FlowReader(const TaskDataset& ds, AccessLog* log = nullptr) : ds_(&ds), log_(log) {}

    std::span<const double> flow(NodeId id, AccessKind kind) const;
    const TaskDataset& dataset() const { return *ds_; }

private:
    const TaskDataset* ds_;
    AccessLog* log_;
};

// ---- ingest -------------------------------------------------------------------

struct LoadOptions {
    int bin_minutes = 5;
    Weekday first_weekday = Weekday::Monday;
    std::map<int, Weekday> per_task_weekday;  // overrides first_weekday
    std::optional<std::filesystem::path> task_metadata;  // task,node_id,is_new
};

/// Reads `task,node_id,bin_index,flow` rows into one dataset per task.
std::vector<TaskDataset> load_csv(const std::filesystem::path& path, const LoadOptions& opts = {});

void write_flow_csv(const std::filesystem::path& path, std::span<const TaskDataset> tasks);
void write_task_csv(const std::filesystem::path& path, std::span<const TaskDataset> tasks);

/// Checks monotone node growth and recomputes new_nodes as the set difference.
void link_tasks(std::vector<TaskDataset>& tasks);

// ---- protocol -----------------------------------------------------------------

/// Contiguous 60/20/20 split along time; boundaries rounded down.
SplitRanges split_protocol(const TaskDataset& ds, std::size_t input_steps = 12, std::size_t horizon = 12);

/// Population mean/std over the given nodes and range; std clamped to 1e-12.
NormStats fit_normalizer(const FlowReader& reader, TimeRange range, std::span<const NodeId> nodes);

struct WeekMatrix {
    std::vector<NodeId> nodes;
    std::size_t steps_per_week = 0;
    std::size_t start_bin = 0;  // first Monday bin inside the range
    Tensor weeks;               // [N, steps_per_week], normalized

    std::span<const double> row(std::size_t i) const {
        return {weeks.data() + i * steps_per_week, steps_per_week};
    }
};

/// First bin of the first full Monday-to-Sunday week inside the range.
std::size_t first_monday_bin(const TaskDataset& ds, TimeRange range);

WeekMatrix extract_week(const FlowReader& reader, TimeRange train, const NormStats& norm,
                        std::span<const NodeId> nodes);

struct WindowBatch {
    Tensor x;  // [batch, nodes, input_steps]
    Tensor y;  // [batch, nodes, horizon]
    std::vector<std::size_t> origins;       // bin index t of the last input step
    std::vector<std::size_t> week_offsets;  // time_of_week(t)
};

/// All forecasting windows of a range: x = bins [t-T'+1, t], y = bins [t+1, t+T].
/// Batches are materialized on demand so only requested nodes are read.
class WindowSet {
public:
    WindowSet(const TaskDataset& ds, TimeRange range, std::size_t input_steps, std::size_t horizon,
              std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed);

    std::size_t window_count() const { return origins_.size(); }
    std::size_t batch_count() const;
    const std::vector<std::size_t>& origins() const { return origins_; }

    WindowBatch batch(std::size_t index, const FlowReader& reader, std::span<const NodeId> nodes,
                      const NormStats& norm) const;

    std::size_t input_steps() const { return input_steps_; }
    std::size_t horizon() const { return horizon_; }

private:
    const TaskDataset* ds_;
    std::size_t input_steps_, horizon_, batch_size_;
    std::vector<std::size_t> origins_;
};

/// L - (T'+T) + 1 when positive, else 0.
std::size_t window_count(std::size_t range_length, std::size_t input_steps, std::size_t horizon);

// ---- synthetic streams ---------------------------------------------------------

struct ClusterPattern {
    double base = 100.0;       // mean flow level
    double amplitude = 60.0;   // daily swing
    std::vector<double> harmonic_weights{1.0, 0.5};  // weight of the h-th daily harmonic
    std::vector<double> harmonic_phases{0.0, 0.0};   // radians
    double weekend_factor = 0.7;
};

struct StreamSpec {
    int num_tasks = 3;
    std::size_t initial_nodes = 30;
    std::vector<std::size_t> nodes_added{10, 10};  // one entry per task after the first
    int num_clusters = 3;
    std::size_t steps_per_day = 24;
    std::size_t days_per_task = 21;
    int bin_minutes = 60;
    Weekday first_weekday = Weekday::Monday;
    std::vector<ClusterPattern> patterns;  // empty: drawn from the seed
    double noise_level = 0.05;   // i.i.d. noise sigma as a fraction of cluster amplitude
    double jitter = 0.05;        // node-level scale/phase perturbation
    double drift_phase = 0.0;    // template phase shift (radians) per task
    double drift_amplitude = 0.0;  // relative amplitude change per task
    /// Fraction of pre-existing nodes whose cluster is redrawn at each task.
    double switch_fraction = 0.0;
    /// Cluster draw weights for new nodes, per task index (1-based key); uniform otherwise.
    std::map<int, std::vector<double>> new_node_weights;
    /// First task in which a cluster may be drawn; absent clusters are available from task 1.
    std::map<int, int> cluster_first_task;
    std::uint64_t seed = 1;
};

/// Planted-cluster stream; labels are kept on every task for test oracles.
std::vector<TaskDataset> generate_stream(const StreamSpec& spec);

/// Noise-free template of a cluster at absolute bin t of the given task.
double template_flow(const StreamSpec& spec, const ClusterPattern& p, int task_index, std::size_t bin);

/// Patterns actually used by generate_stream (spec.patterns or seeded draws).
std::vector<ClusterPattern> resolve_patterns(const StreamSpec& spec);

}  // namespace tfmoe::data
