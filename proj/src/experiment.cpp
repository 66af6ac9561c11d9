// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "tfmoe/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "tfmoe/checkpoint.hpp"

namespace tfmoe::bench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

json pattern_json(const data::ClusterPattern& p) {
    return {{"base", p.base},
            {"amplitude", p.amplitude},
            {"harmonic_weights", p.harmonic_weights},
            {"harmonic_phases", p.harmonic_phases},
            {"weekend_factor", p.weekend_factor}};
}

data::ClusterPattern pattern_from(const json& j) {
    const std::string w = "data.synthetic.patterns[]";
    check_keys(j, {"base", "amplitude", "harmonic_weights", "harmonic_phases", "weekend_factor"}, w);
    data::ClusterPattern p;
    read(j, "base", p.base, w);
    read(j, "amplitude", p.amplitude, w);
    read(j, "harmonic_weights", p.harmonic_weights, w);
    read(j, "harmonic_phases", p.harmonic_phases, w);
    read(j, "weekend_factor", p.weekend_factor, w);
    return p;
}

double json_number(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

// ---- config ------------------------------------------------------------------------

const char* to_string(data::Weekday d) {
    static const char* names[] = {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"};
    return names[static_cast<int>(d)];
}

data::Weekday weekday_from_string(const std::string& s) {
    for (int i = 0; i < 7; ++i)
        if (s == to_string(static_cast<data::Weekday>(i))) return static_cast<data::Weekday>(i);
    throw ConfigError("unknown weekday '" + s + "'");
}

json to_json(const data::StreamSpec& s) {
    json patterns = json::array();
    for (const auto& p : s.patterns) patterns.push_back(pattern_json(p));
    json weights = json::object();
    for (const auto& [t, w] : s.new_node_weights) weights[std::to_string(t)] = w;
    json first = json::object();
    for (const auto& [c, t] : s.cluster_first_task) first[std::to_string(c)] = t;
    return {{"num_tasks", s.num_tasks},
            {"initial_nodes", s.initial_nodes},
            {"nodes_added", s.nodes_added},
            {"num_clusters", s.num_clusters},
            {"steps_per_day", s.steps_per_day},
            {"days_per_task", s.days_per_task},
            {"bin_minutes", s.bin_minutes},
            {"first_weekday", to_string(s.first_weekday)},
            {"patterns", patterns},
            {"noise_level", s.noise_level},
            {"jitter", s.jitter},
            {"drift_phase", s.drift_phase},
            {"drift_amplitude", s.drift_amplitude},
            {"switch_fraction", s.switch_fraction},
            {"new_node_weights", weights},
            {"cluster_first_task", first},
            {"seed", s.seed}};
}

data::StreamSpec stream_spec_from_json(const json& j) {
    const std::string w = "data.synthetic";
    check_keys(j,
               {"num_tasks", "initial_nodes", "nodes_added", "num_clusters", "steps_per_day", "days_per_task",
                "bin_minutes", "first_weekday", "patterns", "noise_level", "jitter", "drift_phase", "drift_amplitude",
                "switch_fraction", "new_node_weights", "cluster_first_task", "seed"},
               w);
    data::StreamSpec s;
    read(j, "num_tasks", s.num_tasks, w);
    read(j, "initial_nodes", s.initial_nodes, w);
    read(j, "nodes_added", s.nodes_added, w);
    read(j, "num_clusters", s.num_clusters, w);
    read(j, "steps_per_day", s.steps_per_day, w);
    read(j, "days_per_task", s.days_per_task, w);
    read(j, "bin_minutes", s.bin_minutes, w);
    if (j.contains("first_weekday")) s.first_weekday = weekday_from_string(j["first_weekday"].get<std::string>());
    if (j.contains("patterns"))
        for (const auto& p : j["patterns"]) s.patterns.push_back(pattern_from(p));
    read(j, "noise_level", s.noise_level, w);
    read(j, "jitter", s.jitter, w);
    read(j, "drift_phase", s.drift_phase, w);
    read(j, "drift_amplitude", s.drift_amplitude, w);
    read(j, "switch_fraction", s.switch_fraction, w);
    try {
        if (j.contains("new_node_weights"))
            for (const auto& [k, v] : j["new_node_weights"].items())
                s.new_node_weights[std::stoi(k)] = v.get<std::vector<double>>();
        if (j.contains("cluster_first_task"))
            for (const auto& [k, v] : j["cluster_first_task"].items()) s.cluster_first_task[std::stoi(k)] = v.get<int>();
    } catch (const std::exception& e) {
        throw ConfigError(w + ": " + e.what());
    }
    read(j, "seed", s.seed, w);
    if (s.num_tasks < 1 || s.initial_nodes == 0 || s.num_clusters < 1 || s.steps_per_day == 0 || s.days_per_task == 0)
        throw ConfigError(w + ": sizes must be positive");
    if (s.nodes_added.size() + 1 != static_cast<std::size_t>(s.num_tasks))
        throw ConfigError(w + ": nodes_added needs one entry per task after the first");
    return s;
}

json to_json(const ExperimentConfig& cfg) {
    const auto& e = cfg.engine;
    json data = {{"bin_minutes", cfg.data.bin_minutes}, {"first_weekday", to_string(cfg.data.first_weekday)}};
    if (cfg.data.csv) data["csv"] = cfg.data.csv->string();
    if (cfg.data.metadata) data["metadata"] = cfg.data.metadata->string();
    if (cfg.data.synthetic) data["synthetic"] = to_json(*cfg.data.synthetic);
    return {
        {"experts", e.experts},
        {"pretrain_latent", e.pretrain_latent},
        {"vae_latent", e.vae_latent},
        {"hidden1", e.hidden1},
        {"hidden2", e.hidden2},
        {"predictor",
         {{"input_steps", e.predictor.input_steps},
          {"horizon", e.predictor.horizon},
          {"embed_dim", e.predictor.embed_dim},
          {"diffusion_steps", e.predictor.diffusion_steps},
          {"kernel", e.predictor.kernel}}},
        {"alpha", e.alpha},
        {"beta", e.beta},
        {"sample_fraction", e.sample_fraction},
        {"replay_fraction", e.replay_fraction},
        {"epochs",
         {{"pretrain", e.pretrain_epochs},
          {"dec", e.dec_epochs},
          {"reconstructor", e.reconstructor_epochs},
          {"first", e.first_epochs},
          {"later", e.later_epochs}}},
        {"batch_size", e.batch_size},
        {"lr", {{"pretrain_reconstructor", e.lr[0]}, {"reconstructor", e.lr[1]}, {"predictor", e.lr[2]}}},
        {"seed", e.seed},
        {"protocol", engine::to_string(e.protocol)},
        {"mechanisms",
         {{"consolidation", e.mechanisms.consolidation},
          {"sampling", e.mechanisms.sampling},
          {"replay", e.mechanisms.replay}}},
        {"horizons", cfg.horizons},
        {"eval_batch", cfg.eval_batch},
        {"data", data},
    };
}

ExperimentConfig config_from_json(const json& j, ExperimentConfig cfg) {
    check_keys(j,
               {"experts", "pretrain_latent", "vae_latent", "hidden1", "hidden2", "predictor", "alpha", "beta",
                "sample_fraction", "replay_fraction", "epochs", "batch_size", "lr", "seed", "protocol", "mechanisms",
                "horizons", "eval_batch", "data"},
               "config");
    const std::string w = "config";
    auto& e = cfg.engine;
    read(j, "experts", e.experts, w);
    read(j, "pretrain_latent", e.pretrain_latent, w);
    read(j, "vae_latent", e.vae_latent, w);
    read(j, "hidden1", e.hidden1, w);
    read(j, "hidden2", e.hidden2, w);
    if (j.contains("predictor")) {
        const auto& p = j["predictor"];
        check_keys(p, {"input_steps", "horizon", "embed_dim", "diffusion_steps", "kernel"}, "predictor");
        read(p, "input_steps", e.predictor.input_steps, "predictor");
        read(p, "horizon", e.predictor.horizon, "predictor");
        read(p, "embed_dim", e.predictor.embed_dim, "predictor");
        read(p, "diffusion_steps", e.predictor.diffusion_steps, "predictor");
        read(p, "kernel", e.predictor.kernel, "predictor");
    }
    read(j, "alpha", e.alpha, w);
    read(j, "beta", e.beta, w);
    read(j, "sample_fraction", e.sample_fraction, w);
    read(j, "replay_fraction", e.replay_fraction, w);
    if (j.contains("epochs")) {
        const auto& p = j["epochs"];
        check_keys(p, {"pretrain", "dec", "reconstructor", "first", "later"}, "epochs");
        read(p, "pretrain", e.pretrain_epochs, "epochs");
        read(p, "dec", e.dec_epochs, "epochs");
        read(p, "reconstructor", e.reconstructor_epochs, "epochs");
        read(p, "first", e.first_epochs, "epochs");
        read(p, "later", e.later_epochs, "epochs");
    }
    read(j, "batch_size", e.batch_size, w);
    if (j.contains("lr")) {
        const auto& p = j["lr"];
        check_keys(p, {"pretrain_reconstructor", "reconstructor", "predictor"}, "lr");
        read(p, "pretrain_reconstructor", e.lr[0], "lr");
        read(p, "reconstructor", e.lr[1], "lr");
        read(p, "predictor", e.lr[2], "lr");
    }
    read(j, "seed", e.seed, w);
    if (j.contains("protocol")) {
        std::string s;
        read(j, "protocol", s, w);
        e.protocol = engine::protocol_from_string(s);
    }
    if (j.contains("mechanisms")) {
        const auto& p = j["mechanisms"];
        check_keys(p, {"consolidation", "sampling", "replay"}, "mechanisms");
        read(p, "consolidation", e.mechanisms.consolidation, "mechanisms");
        read(p, "sampling", e.mechanisms.sampling, "mechanisms");
        read(p, "replay", e.mechanisms.replay, "mechanisms");
    }
    read(j, "horizons", cfg.horizons, w);
    read(j, "eval_batch", cfg.eval_batch, w);
    if (j.contains("data")) {
        const auto& d = j["data"];
        check_keys(d, {"csv", "metadata", "bin_minutes", "first_weekday", "synthetic"}, "data");
        std::string path;
        if (d.contains("csv")) {
            read(d, "csv", path, "data");
            cfg.data.csv = path;
        }
        if (d.contains("metadata")) {
            read(d, "metadata", path, "data");
            cfg.data.metadata = path;
        }
        read(d, "bin_minutes", cfg.data.bin_minutes, "data");
        if (d.contains("first_weekday")) {
            std::string s;
            read(d, "first_weekday", s, "data");
            cfg.data.first_weekday = weekday_from_string(s);
        }
        if (d.contains("synthetic")) cfg.data.synthetic = stream_spec_from_json(d["synthetic"]);
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

void ExperimentConfig::validate() const {
    engine.validate();
    if (horizons.empty()) throw ConfigError("at least one horizon step is required");
    for (std::size_t h : horizons)
        if (h == 0 || h > engine.predictor.horizon)
            throw ConfigError("horizon step " + std::to_string(h) + " outside 1.." +
                              std::to_string(engine.predictor.horizon));
    if (eval_batch == 0) throw ConfigError("eval batch must be positive");
    if (data.csv && data.synthetic) throw ConfigError("data source: give either csv or synthetic, not both");
    if (data.metadata && !data.csv) throw ConfigError("data source: metadata needs a csv");
    if (data.bin_minutes <= 0) throw ConfigError("bin minutes must be positive");
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string text = to_json(cfg).dump();
    const auto crc = ckpt::crc32_of({reinterpret_cast<const unsigned char*>(text.data()), text.size()});
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", crc);
    return buf;
}

std::string variant_label(const engine::EngineConfig& cfg) {
    std::string s = engine::to_string(cfg.protocol);
    if (cfg.protocol != engine::Protocol::TFMoE) return s;
    if (!cfg.mechanisms.consolidation) s += "-noconsol";
    if (!cfg.mechanisms.sampling) s += "-nosamp";
    if (!cfg.mechanisms.replay) s += "-noreplay";
    return s;
}

std::vector<data::TaskDataset> load_tasks(const ExperimentConfig& cfg, const fs::path& base_dir) {
    if (cfg.data.synthetic) return data::generate_stream(*cfg.data.synthetic);
    if (!cfg.data.csv) throw ConfigError("no data source: set data.csv or data.synthetic");
    auto resolve = [&](const fs::path& p) { return p.is_relative() && !base_dir.empty() ? base_dir / p : p; };
    data::LoadOptions opts;
    opts.bin_minutes = cfg.data.bin_minutes;
    opts.first_weekday = cfg.data.first_weekday;
    if (cfg.data.metadata) opts.task_metadata = resolve(*cfg.data.metadata);
    return data::load_csv(resolve(*cfg.data.csv), opts);
}

// ---- runs ----------------------------------------------------------------------------

TaskMetrics evaluate_task(const engine::ModelState& state, const data::TaskDataset& task,
                          const data::TaskDataset& first_task, const ExperimentConfig& cfg) {
    const auto split = data::split_protocol(task, state.predictor.input_steps, state.predictor.horizon);
    const auto f = engine::forecast(state, task, split.test, cfg.eval_batch);
    TaskMetrics m;
    m.task = task.task_index;
    m.nodes = task.nodes.size();
    m.windows = f.pred.numel() ? f.pred.dim(0) : 0;
    if (m.windows == 0) throw data::DataError("task " + std::to_string(task.task_index) + " has no test windows");
    m.all_nodes = metrics::compute_metrics(f.pred, f.truth, cfg.horizons);
    std::vector<data::NodeId> old;
    std::set_intersection(task.nodes.begin(), task.nodes.end(), first_task.nodes.begin(), first_task.nodes.end(),
                          std::back_inserter(old));
    if (!old.empty()) {
        const auto g = engine::select_nodes(f, old);
        m.first_nodes = metrics::compute_metrics(g.pred, g.truth, cfg.horizons);
    }
    return m;
}

FirstTask run_first_task(const ExperimentConfig& cfg, const std::vector<data::TaskDataset>& tasks) {
    if (tasks.empty()) throw data::DataError("the stream has no tasks");
    FirstTask ft;
    ft.state = engine::make_model(cfg.engine, tasks[0].steps_per_week());
    ft.pretrain = engine::pretrain(ft.state, tasks[0], cfg.engine);
    ft.report = engine::train_task(ft.state, tasks[0], cfg.engine);
    return ft;
}

RunResult run_protocol(const ExperimentConfig& cfg, const std::vector<data::TaskDataset>& tasks,
                       const FirstTask* cache, const std::optional<fs::path>& out_dir) {
    cfg.validate();
    if (tasks.empty()) throw data::DataError("the stream has no tasks");
    RunResult r;
    r.protocol = engine::to_string(cfg.engine.protocol);
    r.variant = variant_label(cfg.engine);
    r.config_hash = config_hash(cfg);

    std::optional<JsonlWriter> log;
    if (out_dir) {
        fs::create_directories(*out_dir / "checkpoints");
        std::ofstream(*out_dir / "config.json") << to_json(cfg).dump(2) << "\n";
        log.emplace(*out_dir / "train_log.jsonl", false);
    }

    FirstTask first;
    if (cache) {
        if (cache->state.seed != cfg.engine.seed || cache->state.experts != cfg.engine.experts)
            throw ConfigError("first-task cache was built with another seed or K");
        first = *cache;
    } else {
        first = run_first_task(cfg, tasks);
    }
    r.pretrain = first.pretrain;
    if (log) log->write(pretrain_record(first.pretrain));

    engine::ModelState state = std::move(first.state);
    for (const auto& task : tasks) {
        engine::TaskTrainReport rep;
        if (task.task_index == tasks.front().task_index) {
            rep = first.report;
        } else {
            try {
                rep = engine::train_task(state, task, cfg.engine);
            } catch (const NumericError& e) {
                throw NumericError("task " + std::to_string(task.task_index) + ": " + e.what());
            } catch (const data::DataError& e) {
                throw data::DataError("task " + std::to_string(task.task_index) + ": " + e.what());
            }
        }
        auto m = evaluate_task(state, task, tasks.front(), cfg);
        if (log) {
            for (const auto& ep : rep.epochs)
                log->write({{"event", "epoch"},
                            {"task", task.task_index},
                            {"epoch", ep.epoch},
                            {"prediction_loss", ep.prediction_loss},
                            {"consolidation_elbo", ep.consolidation_elbo},
                            {"loss", ep.loss}});
            log->write(task_record(rep));
            json ev = to_json(m);
            ev["event"] = "eval";
            log->write(ev);
            ckpt::save_checkpoint(state, r.config_hash,
                                  *out_dir / "checkpoints" / ("task" + std::to_string(task.task_index) + ".ckpt"));
        }
        r.reports.push_back(std::move(rep));
        r.tasks.push_back(std::move(m));
    }
    std::vector<metrics::MetricsReport> per_task;
    for (const auto& t : r.tasks) per_task.push_back(t.all_nodes);
    r.aggregate = metrics::average(per_task);
    r.final_state = std::move(state);
    if (out_dir) std::ofstream(*out_dir / "metrics.json") << metrics_document(r).dump(2) << "\n";
    return r;
}

// ---- records --------------------------------------------------------------------------

json to_json(const metrics::MetricsReport& r) {
    json hs = json::array();
    for (const auto& h : r.horizons)
        hs.push_back({{"step", h.step},
                      {"mae", h.mae},
                      {"rmse", h.rmse},
                      {"mape", std::isnan(h.mape) ? json(nullptr) : json(h.mape)},
                      {"count", h.count},
                      {"mape_count", h.mape_count}});
    return {{"horizons", hs}, {"mae_all", r.mae_all}};
}

metrics::MetricsReport metrics_from_json(const json& j) {
    metrics::MetricsReport r;
    for (const auto& h : j.at("horizons")) {
        metrics::HorizonMetrics m;
        m.step = h.at("step").get<std::size_t>();
        m.mae = json_number(h.at("mae"));
        m.rmse = json_number(h.at("rmse"));
        m.mape = json_number(h.at("mape"));
        m.count = h.value("count", std::size_t{0});
        m.mape_count = h.value("mape_count", std::size_t{0});
        r.horizons.push_back(m);
    }
    r.mae_all = json_number(j.at("mae_all"));
    return r;
}

json to_json(const TaskMetrics& m) {
    json j = {{"task", m.task}, {"nodes", m.nodes}, {"windows", m.windows}, {"all_nodes", to_json(m.all_nodes)}};
    if (!m.first_nodes.horizons.empty()) j["first_nodes"] = to_json(m.first_nodes);
    return j;
}

json task_record(const engine::TaskTrainReport& r) {
    return {{"event", "task"},
            {"task", r.task},
            {"protocol", r.protocol},
            {"trained", r.trained},
            {"delta_n", r.delta_n},
            {"n_s", r.n_s},
            {"n_r", r.n_r},
            {"pool_size", r.pool_size},
            {"replay_nodes", r.replay_nodes},
            {"replay_clamped", r.replay_clamped},
            {"sample_counts", r.sample_counts},
            {"group_sizes", r.group_sizes},
            {"epochs", r.epochs.size()},
            {"final_loss", r.epochs.empty() ? json(nullptr) : json(r.epochs.back().loss)},
            {"window_reads", r.access.window_reads.size()},
            {"week_reads", r.access.week_reads.size()},
            {"stats_reads", r.access.stats_reads.size()},
            {"audit_violations", r.audit_violations},
            {"seconds", r.seconds}};
}

json pretrain_record(const engine::PretrainReport& r) {
    auto last = [](const std::vector<double>& v) { return v.empty() ? json(nullptr) : json(v.back()); };
    return {{"event", "pretrain"},
            {"autoencoder_loss", last(r.autoencoder_loss)},
            {"clustering_loss", last(r.clustering_loss)},
            {"reconstructor_elbo", last(r.reconstructor_elbo)},
            {"group_sizes", r.group_sizes},
            {"empty_groups", r.empty_groups},
            {"seconds", r.seconds}};
}

json metrics_document(const RunResult& r) {
    json tasks = json::array();
    for (const auto& t : r.tasks) tasks.push_back(to_json(t));
    return {{"protocol", r.protocol},
            {"variant", r.variant},
            {"config_hash", r.config_hash},
            {"seed", r.final_state.seed},
            {"tasks", tasks},
            {"aggregate", to_json(r.aggregate)}};
}

JsonlWriter::JsonlWriter(const fs::path& path, bool append) : path_(path) {
    if (!append) {
        std::ofstream out(path_, std::ios::trunc);
        if (!out) throw data::DataError("cannot write " + path_.string());
    }
}

void JsonlWriter::write(const json& record) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw data::DataError("cannot write " + path_.string());
    out << record.dump() << "\n";
}

void write_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
    if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
    struct Run {
        std::string name, variant;
        std::uint64_t seed = 0;
        json doc;
    };
    std::vector<Run> runs;
    for (const auto& d : run_dirs) {
        std::ifstream in(d / "metrics.json");
        if (!in) throw data::DataError("no metrics.json in " + d.string());
        Run r;
        try {
            r.doc = json::parse(in);
            r.variant = r.doc.at("variant").get<std::string>();
            r.seed = r.doc.at("seed").get<std::uint64_t>();
        } catch (const json::exception& e) {
            throw data::DataError((d / "metrics.json").string() + ": " + e.what());
        }
        r.name = d.filename().empty() ? d.parent_path().filename().string() : d.filename().string();
        runs.push_back(std::move(r));
    }
    fs::create_directories(out_dir);

    std::ofstream csv(out_dir / "summary.csv");
    csv << "run,variant,seed,horizon_step,mae,rmse,mape\n";
    std::map<std::string, std::vector<metrics::MetricsReport>> by_variant;
    for (const auto& r : runs) {
        const auto agg = metrics_from_json(r.doc.at("aggregate"));
        by_variant[r.variant].push_back(agg);
        for (const auto& h : agg.horizons)
            csv << r.name << "," << r.variant << "," << r.seed << "," << h.step << "," << fmt(h.mae) << ","
                << fmt(h.rmse) << "," << fmt(h.mape) << "\n";
    }

    std::ofstream md(out_dir / "summary.md");
    md << "Mean over tasks of test metrics on all nodes, averaged over runs.\n\n";
    const auto& first = by_variant.begin()->second.front();
    md << "| variant | runs |";
    for (const auto& h : first.horizons) md << " MAE@" << h.step << " | RMSE@" << h.step << " | MAPE@" << h.step << " |";
    md << "\n|---|---|";
    for (std::size_t i = 0; i < first.horizons.size(); ++i) md << "---|---|---|";
    md << "\n";
    for (const auto& [variant, reports] : by_variant) {
        const auto m = metrics::average(reports);
        md << "| " << variant << " | " << reports.size() << " |";
        for (const auto& h : m.horizons) md << " " << fmt(h.mae) << " | " << fmt(h.rmse) << " | " << fmt(h.mape) << " |";
        md << "\n";
    }

    std::ofstream plot(out_dir / "plot_data.csv");
    plot << "variant,run,seed,task,nodes,horizon_step,mae,rmse,mape,first_nodes_mae\n";
    for (const auto& r : runs) {
        for (const auto& t : r.doc.at("tasks")) {
            const auto all = metrics_from_json(t.at("all_nodes"));
            std::optional<metrics::MetricsReport> old;
            if (t.contains("first_nodes")) old = metrics_from_json(t["first_nodes"]);
            for (std::size_t i = 0; i < all.horizons.size(); ++i) {
                const auto& h = all.horizons[i];
                plot << r.variant << "," << r.name << "," << r.seed << "," << t.at("task").get<int>() << ","
                     << t.at("nodes").get<std::size_t>() << "," << h.step << "," << fmt(h.mae) << "," << fmt(h.rmse)
                     << "," << fmt(h.mape) << "," << (old ? fmt(old->horizons[i].mae) : std::string("nan")) << "\n";
            }
        }
    }
}

}  // namespace tfmoe::bench
