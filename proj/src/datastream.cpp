// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/datastream.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace tfmoe::data {

namespace {

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\n')) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && s[i] == ' ') ++i;
    return s.substr(i);
}

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(trim(cell));
    return out;
}

template <class T>
T parse_number(const std::string& s, const std::filesystem::path& path, std::size_t line_no) {
    T v{};
    const auto* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end)
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": cannot parse '" + s + "'");
    return v;
}

void expect_header(std::ifstream& in, const std::filesystem::path& path, const std::string& header) {
    std::string line;
    if (!std::getline(in, line) || trim(line) != header)
        throw DataError(path.string() + ": expected header '" + header + "'");
}

}  // namespace

// ---- TaskDataset ------------------------------------------------------------

std::size_t TaskDataset::length() const { return series.empty() ? 0 : series.begin()->second.flow.size(); }

std::size_t TaskDataset::time_of_week(std::size_t t) const {
    return (static_cast<std::size_t>(calendar) * steps_per_day + t) % steps_per_week();
}

bool TaskDataset::has_node(NodeId id) const { return series.count(id) != 0; }

// ---- access ---------------------------------------------------------------------

std::set<NodeId> AccessLog::training_reads() const {
    std::set<NodeId> s = window_reads;
    s.insert(stats_reads.begin(), stats_reads.end());
    return s;
}

void AccessLog::clear() {
    window_reads.clear();
    week_reads.clear();
    stats_reads.clear();
}

std::span<const double> FlowReader::flow(NodeId id, AccessKind kind) const {
    auto it = ds_->series.find(id);
    if (it == ds_->series.end())
        throw DataError("task " + std::to_string(ds_->task_index) + " has no node " + std::to_string(id));
    if (log_) {
        switch (kind) {
            case AccessKind::Window: log_->window_reads.insert(id); break;
            case AccessKind::Week: log_->week_reads.insert(id); break;
            case AccessKind::Stats: log_->stats_reads.insert(id); break;
        }
    }
    return it->second.flow;
}

// ---- ingest -------------------------------------------------------------------

void link_tasks(std::vector<TaskDataset>& tasks) {
    std::sort(tasks.begin(), tasks.end(), [](const auto& a, const auto& b) { return a.task_index < b.task_index; });
    const TaskDataset* prev = nullptr;
    for (auto& t : tasks) {
        t.nodes.clear();
        for (const auto& [id, s] : t.series) t.nodes.push_back(id);
        t.new_nodes.clear();
        if (!prev) {
            t.new_nodes = t.nodes;
        } else {
            for (NodeId id : prev->nodes)
                if (!t.has_node(id))
                    throw DataError("protocol error: node " + std::to_string(id) + " present in task " +
                                    std::to_string(prev->task_index) + " is missing from task " +
                                    std::to_string(t.task_index));
            std::set_difference(t.nodes.begin(), t.nodes.end(), prev->nodes.begin(), prev->nodes.end(),
                                std::back_inserter(t.new_nodes));
        }
        prev = &t;
    }
}

std::vector<TaskDataset> load_csv(const std::filesystem::path& path, const LoadOptions& opts) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    if (opts.bin_minutes <= 0 || 1440 % opts.bin_minutes != 0)
        throw DataError("bin_minutes must divide a day, got " + std::to_string(opts.bin_minutes));
    const std::size_t steps_per_day = static_cast<std::size_t>(1440 / opts.bin_minutes);
    expect_header(in, path, "task,node_id,bin_index,flow");

    // task -> node -> bin -> flow
    std::map<int, std::map<NodeId, std::map<std::size_t, double>>> raw;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto cells = split_commas(line);
        if (cells.size() != 4)
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 4 columns");
        const int task = parse_number<int>(cells[0], path, line_no);
        const NodeId node = parse_number<NodeId>(cells[1], path, line_no);
        const std::size_t bin = parse_number<std::size_t>(cells[2], path, line_no);
        const double flow = parse_number<double>(cells[3], path, line_no);
        if (task < 1) throw DataError(path.string() + ":" + std::to_string(line_no) + ": task index must be >= 1");
        if (!std::isfinite(flow) || flow < 0.0)
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": flow must be finite and >= 0");
        if (!raw[task][node].emplace(bin, flow).second)
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": duplicate bin " + std::to_string(bin) +
                            " for node " + std::to_string(node));
    }
    if (raw.empty()) throw DataError(path.string() + ": no rows");

    std::vector<TaskDataset> tasks;
    for (auto& [task, nodes] : raw) {
        TaskDataset ds;
        ds.task_index = task;
        ds.steps_per_day = steps_per_day;
        auto wd = opts.per_task_weekday.find(task);
        ds.calendar = wd != opts.per_task_weekday.end() ? wd->second : opts.first_weekday;
        std::size_t length = 0;
        for (const auto& [node, bins] : nodes) length = std::max(length, bins.rbegin()->first + 1);
        for (auto& [node, bins] : nodes) {
            SensorSeries s;
            s.node_id = node;
            s.bin_minutes = opts.bin_minutes;
            s.flow.reserve(length);
            std::size_t expect = 0;
            for (const auto& [bin, v] : bins) {
                if (bin != expect) break;
                s.flow.push_back(v);
                ++expect;
            }
            if (expect != length)
                throw DataError("gap error: task " + std::to_string(task) + " node " + std::to_string(node) +
                                " is missing bin " + std::to_string(expect));
            ds.series.emplace(node, std::move(s));
        }
        if (length % steps_per_day != 0)
            throw DataError("task " + std::to_string(task) + ": length " + std::to_string(length) +
                            " is not a whole number of days");
        tasks.push_back(std::move(ds));
    }
    link_tasks(tasks);

    if (opts.task_metadata) {
        std::ifstream meta(*opts.task_metadata);
        if (!meta) throw DataError("cannot open " + opts.task_metadata->string());
        expect_header(meta, *opts.task_metadata, "task,node_id,is_new");
        std::map<int, std::set<NodeId>> listed, flagged_new;
        std::size_t n = 1;
        while (std::getline(meta, line)) {
            ++n;
            if (trim(line).empty()) continue;
            auto cells = split_commas(line);
            if (cells.size() != 3)
                throw DataError(opts.task_metadata->string() + ":" + std::to_string(n) + ": expected 3 columns");
            const int task = parse_number<int>(cells[0], *opts.task_metadata, n);
            const NodeId node = parse_number<NodeId>(cells[1], *opts.task_metadata, n);
            const int is_new = parse_number<int>(cells[2], *opts.task_metadata, n);
            listed[task].insert(node);
            if (is_new) flagged_new[task].insert(node);
        }
        for (const auto& t : tasks) {
            const std::set<NodeId> nodes(t.nodes.begin(), t.nodes.end());
            const std::set<NodeId> fresh(t.new_nodes.begin(), t.new_nodes.end());
            if (listed[t.task_index] != nodes)
                throw DataError("task metadata node set disagrees with flows for task " + std::to_string(t.task_index));
            if (flagged_new[t.task_index] != fresh)
                throw DataError("task metadata is_new flags disagree with node growth for task " +
                                std::to_string(t.task_index));
        }
    }
    return tasks;
}

void write_flow_csv(const std::filesystem::path& path, std::span<const TaskDataset> tasks) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "task,node_id,bin_index,flow\n";
    char buf[64];
    for (const auto& t : tasks)
        for (const auto& [id, s] : t.series)
            for (std::size_t b = 0; b < s.flow.size(); ++b) {
                auto [p, ec] = std::to_chars(buf, buf + sizeof buf, s.flow[b]);
                (void)ec;
                out << t.task_index << ',' << id << ',' << b << ',' << std::string_view(buf, p - buf) << '\n';
            }
}

void write_task_csv(const std::filesystem::path& path, std::span<const TaskDataset> tasks) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "task,node_id,is_new\n";
    for (const auto& t : tasks) {
        const std::set<NodeId> fresh(t.new_nodes.begin(), t.new_nodes.end());
        for (NodeId id : t.nodes) out << t.task_index << ',' << id << ',' << (fresh.count(id) ? 1 : 0) << '\n';
    }
}

// ---- protocol -----------------------------------------------------------------

SplitRanges split_protocol(const TaskDataset& ds, std::size_t input_steps, std::size_t horizon) {
    const std::size_t L = ds.length();
    const std::size_t train_end = L * 6 / 10;
    const std::size_t val_end = L * 8 / 10;
    const std::size_t need = ds.steps_per_week() + input_steps + horizon;
    if (train_end < need)
        throw DataError("protocol error: task " + std::to_string(ds.task_index) + " train split has " +
                        std::to_string(train_end) + " bins, needs at least " + std::to_string(need));
    return {{0, train_end}, {train_end, val_end}, {val_end, L}};
}

NormStats fit_normalizer(const FlowReader& reader, TimeRange range, std::span<const NodeId> nodes) {
    if (nodes.empty() || range.size() == 0) throw DataError("fit_normalizer needs a non-empty node set and range");
    double sum = 0.0;
    std::size_t count = 0;
    std::vector<std::span<const double>> flows;
    for (NodeId id : nodes) {
        auto f = reader.flow(id, AccessKind::Stats);
        if (range.end > f.size()) throw DataError("fit_normalizer range exceeds series length");
        flows.push_back(f);
        for (std::size_t t = range.begin; t < range.end; ++t) sum += f[t];
        count += range.size();
    }
    NormStats s;
    s.mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (auto f : flows)
        for (std::size_t t = range.begin; t < range.end; ++t) ss += (f[t] - s.mean) * (f[t] - s.mean);
    s.std = std::max(std::sqrt(ss / static_cast<double>(count)), NormStats::kMinStd);
    return s;
}

std::size_t first_monday_bin(const TaskDataset& ds, TimeRange range) {
    const std::size_t week = ds.steps_per_week();
    const std::size_t start = range.begin + (week - ds.time_of_week(range.begin)) % week;
    if (start + week > range.end)
        throw DataError("protocol error: task " + std::to_string(ds.task_index) +
                        " has no full Monday-to-Sunday week in its training range");
    return start;
}

WeekMatrix extract_week(const FlowReader& reader, TimeRange train, const NormStats& norm,
                        std::span<const NodeId> nodes) {
    const TaskDataset& ds = reader.dataset();
    WeekMatrix w;
    w.nodes.assign(nodes.begin(), nodes.end());
    w.steps_per_week = ds.steps_per_week();
    w.start_bin = first_monday_bin(ds, train);
    w.weeks = Tensor({nodes.size(), w.steps_per_week});
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        auto f = reader.flow(nodes[i], AccessKind::Week);
        for (std::size_t s = 0; s < w.steps_per_week; ++s) w.weeks.at(i, s) = norm.normalize(f[w.start_bin + s]);
    }
    return w;
}

std::size_t window_count(std::size_t range_length, std::size_t input_steps, std::size_t horizon) {
    return range_length >= input_steps + horizon ? range_length - (input_steps + horizon) + 1 : 0;
}

WindowSet::WindowSet(const TaskDataset& ds, TimeRange range, std::size_t input_steps, std::size_t horizon,
                     std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed)
    : ds_(&ds), input_steps_(input_steps), horizon_(horizon), batch_size_(batch_size) {
    if (batch_size == 0 || input_steps == 0 || horizon == 0)
        throw DataError("window sizes and batch size must be positive");
    const std::size_t n = data::window_count(range.size(), input_steps, horizon);
    origins_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) origins_.push_back(range.begin + input_steps - 1 + i);
    if (shuffle_seed) {
        std::mt19937_64 rng(*shuffle_seed);
        std::shuffle(origins_.begin(), origins_.end(), rng);
    }
}

std::size_t WindowSet::batch_count() const { return (origins_.size() + batch_size_ - 1) / batch_size_; }

WindowBatch WindowSet::batch(std::size_t index, const FlowReader& reader, std::span<const NodeId> nodes,
                             const NormStats& norm) const {
    if (index >= batch_count()) throw DataError("window batch index out of range");
    const std::size_t lo = index * batch_size_;
    const std::size_t hi = std::min(lo + batch_size_, origins_.size());
    const std::size_t B = hi - lo, N = nodes.size();
    WindowBatch wb;
    wb.x = Tensor({B, N, input_steps_});
    wb.y = Tensor({B, N, horizon_});
    for (std::size_t b = 0; b < B; ++b) {
        wb.origins.push_back(origins_[lo + b]);
        wb.week_offsets.push_back(ds_->time_of_week(origins_[lo + b]));
    }
    for (std::size_t n = 0; n < N; ++n) {
        auto f = reader.flow(nodes[n], AccessKind::Window);
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t t = wb.origins[b];
            double* xr = wb.x.data() + (b * N + n) * input_steps_;
            double* yr = wb.y.data() + (b * N + n) * horizon_;
            for (std::size_t j = 0; j < input_steps_; ++j) xr[j] = norm.normalize(f[t + 1 - input_steps_ + j]);
            for (std::size_t j = 0; j < horizon_; ++j) yr[j] = norm.normalize(f[t + 1 + j]);
        }
    }
    return wb;
}

// ---- synthetic ------------------------------------------------------------------

std::vector<ClusterPattern> resolve_patterns(const StreamSpec& spec) {
    if (!spec.patterns.empty()) {
        if (spec.patterns.size() != static_cast<std::size_t>(spec.num_clusters))
            throw DataError("stream spec lists " + std::to_string(spec.patterns.size()) + " patterns for " +
                            std::to_string(spec.num_clusters) + " clusters");
        return spec.patterns;
    }
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ClusterPattern> out;
    for (int c = 0; c < spec.num_clusters; ++c) {
        ClusterPattern p;
        p.base = 80.0 + 60.0 * u(rng);
        p.amplitude = 40.0 + 40.0 * u(rng);
        p.harmonic_weights = {1.0, 0.2 + 0.6 * u(rng), 0.4 * u(rng)};
        p.harmonic_phases.clear();
        for (int h = 0; h < 3; ++h) p.harmonic_phases.push_back(2.0 * std::numbers::pi * u(rng));
        p.weekend_factor = 0.5 + 0.4 * u(rng);
        out.push_back(std::move(p));
    }
    return out;
}

namespace {

double pattern_value(const StreamSpec& spec, const ClusterPattern& p, int task_index, std::size_t bin,
                     double extra_phase) {
    const double spd = static_cast<double>(spec.steps_per_day);
    const std::size_t day = bin / spec.steps_per_day;
    const double s = static_cast<double>(bin % spec.steps_per_day);
    const int weekday = static_cast<int>((static_cast<std::size_t>(spec.first_weekday) + day) % 7);
    const double drift = static_cast<double>(task_index - 1);
    const double phase = spec.drift_phase * drift + extra_phase;
    double norm = 0.0, wave = 0.0;
    for (std::size_t h = 0; h < p.harmonic_weights.size(); ++h) {
        const double ph = h < p.harmonic_phases.size() ? p.harmonic_phases[h] : 0.0;
        wave += p.harmonic_weights[h] *
                std::sin(2.0 * std::numbers::pi * static_cast<double>(h + 1) * s / spd + ph + phase);
        norm += std::abs(p.harmonic_weights[h]);
    }
    if (norm > 0.0) wave /= norm;
    double v = p.base + p.amplitude * (1.0 + spec.drift_amplitude * drift) * wave;
    if (weekday >= 5) v *= p.weekend_factor;
    return v;
}

void validate(const StreamSpec& spec) {
    if (spec.num_tasks < 1 || spec.initial_nodes == 0 || spec.num_clusters < 1 || spec.steps_per_day == 0 ||
        spec.days_per_task == 0 || spec.bin_minutes <= 0)
        throw DataError("stream spec counts must be positive");
    if (spec.noise_level < 0.0 || spec.jitter < 0.0) throw DataError("stream spec noise and jitter must be >= 0");
    if (spec.num_tasks > 1 && spec.nodes_added.size() + 1 < static_cast<std::size_t>(spec.num_tasks))
        throw DataError("stream spec needs nodes_added for every task after the first");
    if (spec.switch_fraction < 0.0 || spec.switch_fraction > 1.0)
        throw DataError("stream spec switch_fraction must be in [0,1]");
}

}  // namespace

double template_flow(const StreamSpec& spec, const ClusterPattern& p, int task_index, std::size_t bin) {
    return std::max(0.0, pattern_value(spec, p, task_index, bin, 0.0));
}

std::vector<TaskDataset> generate_stream(const StreamSpec& spec) {
    validate(spec);
    const auto patterns = resolve_patterns(spec);
    const int K = spec.num_clusters;
    std::mt19937_64 structure(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    struct NodeState {
        int cluster;
        double scale;
        double phase;
    };
    std::map<NodeId, NodeState> state;

    auto available = [&](int task) {
        std::vector<double> w(K, 1.0);
        auto it = spec.new_node_weights.find(task);
        if (it != spec.new_node_weights.end()) {
            if (it->second.size() != static_cast<std::size_t>(K))
                throw DataError("new_node_weights for task " + std::to_string(task) + " must have one entry per cluster");
            w = it->second;
        }
        for (const auto& [c, first] : spec.cluster_first_task)
            if (c >= 0 && c < K && first > task) w[c] = 0.0;
        if (std::all_of(w.begin(), w.end(), [](double x) { return x <= 0.0; }))
            throw DataError("no cluster is available for new nodes in task " + std::to_string(task));
        return w;
    };

    const std::size_t length = spec.days_per_task * spec.steps_per_day;
    std::vector<TaskDataset> tasks;
    NodeId next_id = 0;
    for (int task = 1; task <= spec.num_tasks; ++task) {
        const auto weights = available(task);
        if (task > 1 && spec.switch_fraction > 0.0 && K > 1) {
            std::vector<NodeId> ids;
            for (const auto& [id, st] : state) ids.push_back(id);
            std::shuffle(ids.begin(), ids.end(), structure);
            const auto n_switch = static_cast<std::size_t>(std::llround(spec.switch_fraction * ids.size()));
            for (std::size_t i = 0; i < n_switch; ++i) {
                auto w = weights;
                w[state[ids[i]].cluster] = 0.0;
                if (std::all_of(w.begin(), w.end(), [](double x) { return x <= 0.0; })) continue;
                state[ids[i]].cluster = std::discrete_distribution<int>(w.begin(), w.end())(structure);
            }
        }
        const std::size_t add = task == 1 ? spec.initial_nodes : spec.nodes_added[task - 2];
        std::discrete_distribution<int> pick(weights.begin(), weights.end());
        for (std::size_t i = 0; i < add; ++i) {
            NodeState st;
            st.cluster = pick(structure);
            st.scale = 1.0 + spec.jitter * gauss(structure);
            st.phase = spec.jitter * gauss(structure);
            state.emplace(next_id++, st);
        }

        TaskDataset ds;
        ds.task_index = task;
        ds.steps_per_day = spec.steps_per_day;
        ds.calendar = spec.first_weekday;
        std::mt19937_64 noise_rng(spec.seed * 1000003ULL + static_cast<std::uint64_t>(task));
        std::normal_distribution<double> noise(0.0, 1.0);
        for (const auto& [id, st] : state) {
            const auto& p = patterns[st.cluster];
            SensorSeries s;
            s.node_id = id;
            s.bin_minutes = spec.bin_minutes;
            s.flow.resize(length);
            const double sigma = spec.noise_level * p.amplitude;
            for (std::size_t t = 0; t < length; ++t) {
                double v = st.scale * pattern_value(spec, p, task, t, st.phase);
                if (sigma > 0.0) v += sigma * noise(noise_rng);
                s.flow[t] = std::max(0.0, v);
            }
            ds.series.emplace(id, std::move(s));
            ds.labels[id] = st.cluster;
        }
        tasks.push_back(std::move(ds));
    }
    link_tasks(tasks);
    return tasks;
}

}  // namespace tfmoe::data
