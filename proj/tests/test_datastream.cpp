// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "tfmoe/datastream.hpp"

using namespace tfmoe;
using namespace tfmoe::data;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "tfmoe_test_datastream";
    std::filesystem::create_directories(dir);
    return dir / name;
}

TaskDataset make_task(int index, std::size_t steps_per_day, std::map<NodeId, std::vector<double>> flows,
                      Weekday cal = Weekday::Monday) {
    TaskDataset ds;
    ds.task_index = index;
    ds.steps_per_day = steps_per_day;
    ds.calendar = cal;
    for (auto& [id, f] : flows) ds.series[id] = SensorSeries{id, std::move(f), 5};
    for (const auto& [id, s] : ds.series) ds.nodes.push_back(id);
    ds.new_nodes = ds.nodes;
    return ds;
}

std::vector<double> ramp(std::size_t n, double start = 0.0) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = start + static_cast<double>(i);
    return v;
}

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
    std::ofstream out(p);
    for (const auto& l : lines) out << l << '\n';
}

}  // namespace

// ---- ingest ---------------------------------------------------------------------

TEST(LoadCsv, SecondTaskNewNodesAreTheSetDifference) {
    auto p = temp_file("two_tasks.csv");
    std::vector<std::string> lines{"task,node_id,bin_index,flow"};
    for (int task : {1, 2})
        for (int node : {1, 2, 3}) {
            if (task == 1 && node == 3) continue;
            for (int b = 0; b < 2; ++b)
                lines.push_back(std::to_string(task) + "," + std::to_string(node) + "," + std::to_string(b) + ",1.5");
        }
    write_lines(p, lines);
    LoadOptions opts;
    opts.bin_minutes = 720;
    auto tasks = load_csv(p, opts);
    ASSERT_EQ(tasks.size(), 2u);
    EXPECT_EQ(tasks[0].new_nodes, (std::vector<NodeId>{1, 2}));
    EXPECT_EQ(tasks[1].new_nodes, (std::vector<NodeId>{3}));
    EXPECT_EQ(tasks[1].nodes, (std::vector<NodeId>{1, 2, 3}));
}

TEST(LoadCsv, ShrinkingNodeSetIsAProtocolError) {
    auto p = temp_file("shrink.csv");
    write_lines(p, {"task,node_id,bin_index,flow", "1,1,0,1", "1,1,1,1", "1,2,0,1", "1,2,1,1", "2,1,0,1", "2,1,1,1"});
    LoadOptions opts;
    opts.bin_minutes = 720;
    try {
        load_csv(p, opts);
        FAIL() << "expected protocol error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("protocol"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("node 2"), std::string::npos);
    }
}

TEST(LoadCsv, GapErrorNamesNodeAndBin) {
    auto p = temp_file("gap.csv");
    write_lines(p, {"task,node_id,bin_index,flow", "1,7,0,1", "1,7,1,1", "1,9,0,1", "1,9,2,1", "1,7,2,1"});
    LoadOptions opts;
    opts.bin_minutes = 480;
    try {
        load_csv(p, opts);
        FAIL() << "expected gap error";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("node 9"), std::string::npos) << msg;
        EXPECT_NE(msg.find("bin 1"), std::string::npos) << msg;
    }
}

TEST(LoadCsv, SevenTaskIngestReportsPemsNodeCounts) {
    // Node counts of the seven yearly graphs; flows are placeholders.
    const std::vector<std::size_t> counts{655, 715, 786, 822, 834, 850, 871};
    auto p = temp_file("pems_shape.csv");
    auto meta = temp_file("pems_shape_tasks.csv");
    {
        std::ofstream out(p), mo(meta);
        out << "task,node_id,bin_index,flow\n";
        mo << "task,node_id,is_new\n";
        for (std::size_t t = 0; t < counts.size(); ++t)
            for (std::size_t n = 0; n < counts[t]; ++n) {
                for (int b = 0; b < 2; ++b) out << t + 1 << ',' << 1000 + n << ',' << b << ",42\n";
                const bool fresh = t == 0 || n >= counts[t - 1];
                mo << t + 1 << ',' << 1000 + n << ',' << (fresh ? 1 : 0) << '\n';
            }
    }
    LoadOptions opts;
    opts.bin_minutes = 720;
    opts.task_metadata = meta;
    auto tasks = load_csv(p, opts);
    ASSERT_EQ(tasks.size(), counts.size());
    for (std::size_t t = 0; t < counts.size(); ++t) {
        EXPECT_EQ(tasks[t].nodes.size(), counts[t]);
        EXPECT_EQ(tasks[t].new_nodes.size(), t == 0 ? counts[0] : counts[t] - counts[t - 1]);
    }
}

TEST(LoadCsv, MetadataDisagreeingWithFlowsIsRejected) {
    auto p = temp_file("meta_bad.csv");
    auto meta = temp_file("meta_bad_tasks.csv");
    write_lines(p, {"task,node_id,bin_index,flow", "1,1,0,1", "1,1,1,1", "2,1,0,1", "2,1,1,1", "2,2,0,1", "2,2,1,1"});
    write_lines(meta, {"task,node_id,is_new", "1,1,1", "2,1,1", "2,2,1"});
    LoadOptions opts;
    opts.bin_minutes = 720;
    opts.task_metadata = meta;
    EXPECT_THROW(load_csv(p, opts), DataError);
}

TEST(LoadCsv, RejectsNegativeFlowAndBadHeader) {
    auto p = temp_file("neg.csv");
    write_lines(p, {"task,node_id,bin_index,flow", "1,1,0,-1", "1,1,1,1"});
    LoadOptions opts;
    opts.bin_minutes = 720;
    EXPECT_THROW(load_csv(p, opts), DataError);
    write_lines(p, {"task,node,bin,flow", "1,1,0,1"});
    EXPECT_THROW(load_csv(p, opts), DataError);
    EXPECT_THROW(load_csv(temp_file("does_not_exist.csv"), opts), DataError);
}

TEST(LoadCsv, WriteThenLoadRoundTripsGeneratedStream) {
    StreamSpec spec;
    spec.num_tasks = 2;
    spec.initial_nodes = 4;
    spec.nodes_added = {2};
    spec.days_per_task = 2;
    spec.first_weekday = Weekday::Thursday;
    auto tasks = generate_stream(spec);
    auto p = temp_file("round.csv");
    auto meta = temp_file("round_tasks.csv");
    write_flow_csv(p, tasks);
    write_task_csv(meta, tasks);
    LoadOptions opts;
    opts.bin_minutes = spec.bin_minutes;
    opts.first_weekday = Weekday::Thursday;
    opts.task_metadata = meta;
    auto loaded = load_csv(p, opts);
    ASSERT_EQ(loaded.size(), tasks.size());
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        EXPECT_EQ(loaded[t].nodes, tasks[t].nodes);
        EXPECT_EQ(loaded[t].new_nodes, tasks[t].new_nodes);
        EXPECT_EQ(loaded[t].calendar, Weekday::Thursday);
        for (NodeId id : tasks[t].nodes) EXPECT_EQ(loaded[t].series.at(id).flow, tasks[t].series.at(id).flow);
    }
}

// ---- protocol -----------------------------------------------------------------

TEST(SplitProtocol, LengthHundred) {
    auto ds = make_task(1, 1, {{1, ramp(100)}});
    auto s = split_protocol(ds);
    EXPECT_EQ(s.train, (TimeRange{0, 60}));
    EXPECT_EQ(s.val, (TimeRange{60, 80}));
    EXPECT_EQ(s.test, (TimeRange{80, 100}));
}

TEST(SplitProtocol, TooShortIsProtocolError) {
    auto ds = make_task(1, 288, {{1, ramp(10)}});
    EXPECT_THROW(split_protocol(ds), DataError);
}

TEST(SplitProtocol, OneMonthOfFiveMinuteBins) {
    auto ds = make_task(1, 288, {{1, ramp(31 * 288)}});
    auto s = split_protocol(ds);
    EXPECT_EQ(s.train.size(), 5356u);
    EXPECT_EQ(s.val.begin, 5356u);
    EXPECT_EQ(s.test.end, 8928u);
}

TEST(FitNormalizer, TwoValues) {
    auto ds = make_task(1, 1, {{1, {8.0, 12.0}}});
    const std::vector<NodeId> nodes{1};
    auto st = fit_normalizer(FlowReader(ds), {0, 2}, nodes);
    EXPECT_DOUBLE_EQ(st.mean, 10.0);
    EXPECT_DOUBLE_EQ(st.std, 2.0);
    EXPECT_DOUBLE_EQ(st.normalize(14.0), 2.0);
}

TEST(FitNormalizer, ConstantSeriesClampsStd) {
    auto ds = make_task(1, 1, {{1, std::vector<double>(6, 3.0)}});
    const std::vector<NodeId> nodes{1};
    auto st = fit_normalizer(FlowReader(ds), {0, 6}, nodes);
    EXPECT_GE(st.std, NormStats::kMinStd);
    EXPECT_EQ(st.normalize(3.0), 0.0);
}

TEST(FitNormalizer, MatchesTwoPassOracleOnSubsetAndRange) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 300.0);
    std::map<NodeId, std::vector<double>> flows;
    for (NodeId id : {3, 5, 8}) {
        std::vector<double> f(40);
        for (auto& v : f) v = u(rng);
        flows[id] = f;
    }
    auto ds = make_task(1, 1, flows);
    const std::vector<NodeId> subset{3, 8};
    const TimeRange r{5, 31};
    auto st = fit_normalizer(FlowReader(ds), r, subset);

    long double sum = 0, n = 0;
    for (NodeId id : subset)
        for (std::size_t t = r.begin; t < r.end; ++t) sum += flows[id][t], n += 1;
    const long double mean = sum / n;
    long double ss = 0;
    for (NodeId id : subset)
        for (std::size_t t = r.begin; t < r.end; ++t) ss += (flows[id][t] - mean) * (flows[id][t] - mean);
    EXPECT_NEAR(st.mean, static_cast<double>(mean), 1e-10);
    EXPECT_NEAR(st.std, static_cast<double>(std::sqrt(ss / n)), 1e-10);
}

TEST(NormStats, NormalizeDenormalizeIdentity) {
    NormStats st{123.4, 56.7};
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 500.0);
    for (int i = 0; i < 1000; ++i) {
        const double v = u(rng);
        EXPECT_NEAR(st.denormalize(st.normalize(v)), v, 1e-12);
    }
}

TEST(ExtractWeek, MondayAtBinZero) {
    auto ds = make_task(1, 2, {{1, ramp(40)}, {2, ramp(40, 100)}});
    NormStats id{0.0, 1.0};
    const std::vector<NodeId> nodes{1, 2};
    auto w = extract_week(FlowReader(ds), {0, 24}, id, nodes);
    EXPECT_EQ(w.start_bin, 0u);
    EXPECT_EQ(w.weeks.shape(), (Shape{2, 14}));
    EXPECT_EQ(w.weeks.at(0, 0), 0.0);
    EXPECT_EQ(w.weeks.at(1, 13), 113.0);
}

TEST(ExtractWeek, WednesdayStartsAtFirstMonday) {
    const std::size_t spd = 4;
    auto ds = make_task(1, spd, {{1, ramp(20 * spd)}}, Weekday::Wednesday);
    const std::vector<NodeId> nodes{1};
    auto w = extract_week(FlowReader(ds), {0, 14 * spd}, NormStats{}, nodes);
    EXPECT_EQ(w.start_bin, 5 * spd);
    EXPECT_EQ(ds.time_of_week(w.start_bin), 0u);
    EXPECT_EQ(w.weeks.at(0, 0), static_cast<double>(5 * spd));
}

TEST(ExtractWeek, FiveMinuteWeekLengthAndNormalization) {
    auto ds = make_task(1, 288, {{1, std::vector<double>(8 * 288, 20.0)}});
    const std::vector<NodeId> nodes{1};
    auto w = extract_week(FlowReader(ds), {0, 8 * 288}, NormStats{10.0, 5.0}, nodes);
    EXPECT_EQ(w.steps_per_week, 2016u);
    EXPECT_EQ(w.weeks.numel(), 2016u);
    EXPECT_EQ(w.weeks[100], 2.0);
}

TEST(ExtractWeek, NoFullWeekIsProtocolError) {
    auto ds = make_task(1, 2, {{1, ramp(30)}}, Weekday::Tuesday);
    const std::vector<NodeId> nodes{1};
    EXPECT_THROW(extract_week(FlowReader(ds), {0, 20}, NormStats{}, nodes), DataError);
}

TEST(Windows, CountsForLengths24And25) {
    EXPECT_EQ(window_count(24, 12, 12), 1u);
    EXPECT_EQ(window_count(25, 12, 12), 2u);
    EXPECT_EQ(window_count(23, 12, 12), 0u);
    auto ds = make_task(1, 1, {{1, ramp(25)}});
    WindowSet ws(ds, {0, 25}, 12, 12, 128, std::nullopt);
    EXPECT_EQ(ws.window_count(), 2u);
    EXPECT_EQ(ws.batch_count(), 1u);
}

TEST(Windows, ContentsMatchDefinition) {
    auto ds = make_task(1, 2, {{1, ramp(30)}, {2, ramp(30, 1000)}});
    WindowSet ws(ds, {3, 30}, 3, 2, 4, std::nullopt);
    const std::vector<NodeId> nodes{2, 1};
    auto b = ws.batch(0, FlowReader(ds), nodes, NormStats{});
    ASSERT_EQ(b.x.shape(), (Shape{4, 2, 3}));
    ASSERT_EQ(b.y.shape(), (Shape{4, 2, 2}));
    EXPECT_EQ(b.origins[0], 5u);
    // node 2 at origin 5: x = bins 3..5, y = bins 6..7
    EXPECT_EQ(b.x[0], 1003.0);
    EXPECT_EQ(b.x[2], 1005.0);
    EXPECT_EQ(b.y[0], 1006.0);
    EXPECT_EQ(b.y[1], 1007.0);
    EXPECT_EQ(b.x[3], 3.0);
    EXPECT_EQ(b.week_offsets[0], 5u);
    auto last = ws.batch(ws.batch_count() - 1, FlowReader(ds), nodes, NormStats{});
    EXPECT_EQ(last.origins.back(), 27u);
}

TEST(Windows, ShuffleIsDeterministicPerSeed) {
    auto ds = make_task(1, 4, {{1, ramp(200)}});
    WindowSet a(ds, {0, 200}, 12, 12, 16, 99);
    WindowSet b(ds, {0, 200}, 12, 12, 16, 99);
    WindowSet c(ds, {0, 200}, 12, 12, 16, 100);
    EXPECT_EQ(a.origins(), b.origins());
    EXPECT_NE(a.origins(), c.origins());
    auto sorted = a.origins();
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted.front(), 11u);
    EXPECT_EQ(sorted.back(), 187u);
    const std::vector<NodeId> nodes{1};
    for (std::size_t i = 0; i < a.batch_count(); ++i)
        for (auto off : a.batch(i, FlowReader(ds), nodes, NormStats{}).week_offsets) EXPECT_LT(off, 28u);
}

TEST(FlowReader, LogRecordsReadsByKind) {
    auto ds = make_task(1, 1, {{1, ramp(60)}, {2, ramp(60)}, {3, ramp(60)}});
    AccessLog log;
    FlowReader r(ds, &log);
    const std::vector<NodeId> a{1}, b{2}, c{3};
    fit_normalizer(r, {0, 30}, a);
    WindowSet ws(ds, {0, 30}, 3, 3, 8, 1);
    ws.batch(0, r, b, NormStats{});
    extract_week(r, {0, 30}, NormStats{}, c);
    EXPECT_EQ(log.stats_reads, (std::set<NodeId>{1}));
    EXPECT_EQ(log.window_reads, (std::set<NodeId>{2}));
    EXPECT_EQ(log.week_reads, (std::set<NodeId>{3}));
    EXPECT_EQ(log.training_reads(), (std::set<NodeId>{1, 2}));
    EXPECT_THROW(r.flow(42, AccessKind::Window), DataError);
}

// ---- synthetic ---------------------------------------------------------------------

TEST(GenerateStream, NoNoiseNoJitterGivesIdenticalClusterSeries) {
    StreamSpec spec;
    spec.num_tasks = 1;
    spec.initial_nodes = 30;
    spec.noise_level = 0.0;
    spec.jitter = 0.0;
    spec.days_per_task = 7;
    auto tasks = generate_stream(spec);
    const auto& t = tasks[0];
    std::map<int, const std::vector<double>*> first;
    for (NodeId id : t.nodes) {
        const int c = t.labels.at(id);
        if (!first.count(c)) first[c] = &t.series.at(id).flow;
        else EXPECT_EQ(t.series.at(id).flow, *first[c]);
    }
    EXPECT_GE(first.size(), 2u);
    const auto patterns = resolve_patterns(spec);
    const NodeId some = t.nodes.front();
    EXPECT_DOUBLE_EQ(t.series.at(some).flow[5], template_flow(spec, patterns[t.labels.at(some)], 1, 5));
}

TEST(GenerateStream, LabelHistogramAndSeriesAreReproducible) {
    StreamSpec spec;
    spec.num_tasks = 2;
    spec.initial_nodes = 30;
    spec.nodes_added = {5};
    spec.seed = 17;
    auto a = generate_stream(spec);
    auto b = generate_stream(spec);
    std::vector<int> ha(3, 0), hb(3, 0);
    for (auto [id, c] : a[0].labels) ++ha[c];
    for (auto [id, c] : b[0].labels) ++hb[c];
    EXPECT_EQ(ha, hb);
    for (std::size_t t = 0; t < a.size(); ++t)
        for (NodeId id : a[t].nodes) EXPECT_EQ(a[t].series.at(id).flow, b[t].series.at(id).flow);
    EXPECT_EQ(a[1].new_nodes.size(), 5u);
    EXPECT_EQ(a[1].nodes.size(), 35u);
}

TEST(GenerateStream, FlowsAreNonNegativeAndWholeDays) {
    StreamSpec spec;
    spec.noise_level = 0.5;
    auto tasks = generate_stream(spec);
    for (const auto& t : tasks) {
        EXPECT_EQ(t.length() % t.steps_per_day, 0u);
        for (const auto& [id, s] : t.series)
            for (double v : s.flow) EXPECT_GE(v, 0.0);
    }
}

TEST(GenerateStream, LateClustersAndSwitchingNodes) {
    StreamSpec spec;
    spec.num_tasks = 3;
    spec.initial_nodes = 40;
    spec.nodes_added = {20, 20};
    spec.cluster_first_task = {{2, 3}};
    spec.switch_fraction = 0.25;
    spec.seed = 5;
    auto tasks = generate_stream(spec);
    for (const auto& t : {tasks[0], tasks[1]})
        for (auto [id, c] : t.labels) EXPECT_NE(c, 2);
    int late = 0, switched = 0;
    for (NodeId id : tasks[2].new_nodes) late += tasks[2].labels.at(id) == 2;
    for (NodeId id : tasks[0].nodes) switched += tasks[0].labels.at(id) != tasks[1].labels.at(id);
    EXPECT_GT(late, 0);
    EXPECT_EQ(switched, 10);
}

TEST(GenerateStream, InvalidSpecsAreRejected) {
    StreamSpec spec;
    spec.initial_nodes = 0;
    EXPECT_THROW(generate_stream(spec), DataError);
    spec = StreamSpec{};
    spec.noise_level = -1.0;
    EXPECT_THROW(generate_stream(spec), DataError);
    spec = StreamSpec{};
    spec.num_tasks = 4;
    EXPECT_THROW(generate_stream(spec), DataError);
}
