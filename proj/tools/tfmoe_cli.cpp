// Copyright 2026 The TFMoE Authors
// SPDX-License-Identifier: Apache-2.0

// tfmoe: generate | pretrain | train | evaluate | report | gradcheck
//
// Exit codes: 0 success, 2 config or usage error, 3 data or checkpoint error,
// 4 numeric divergence (also a failing gradcheck).

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "tfmoe/checkpoint.hpp"
#include "tfmoe/experiment.hpp"
#include "tfmoe/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace tfmoe;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

const char* kDataDirEnv = "TFMOE_DATA_DIR";

fs::path data_dir() {
    const char* v = std::getenv(kDataDirEnv);
    return v && *v ? fs::path(v) : fs::path("data");
}

// Flag values override the config file; unset flags leave it alone.
struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> experts, first_epochs, later_epochs, batch_size, embed_dim, diffusion_steps,
        reconstructor_epochs;
    std::optional<double> alpha, beta, sample_fraction, replay_fraction;
    std::optional<std::string> protocol, csv, metadata;
    std::optional<int> bin_minutes;
    std::vector<std::size_t> horizons;
    bool no_consolidation = false, no_sampling = false, no_replay = false;

    void attach(CLI::App& app) {
        app.add_option("-c,--config", config, "JSON config file");
        app.add_option("--seed", seed, "training seed");
        app.add_option("--experts", experts, "number of experts K");
        app.add_option("--protocol", protocol, "tfmoe | static | expansible | retrained");
        app.add_option("--first-epochs", first_epochs, "predictor epochs on task 1");
        app.add_option("--later-epochs", later_epochs, "predictor epochs on later tasks");
        app.add_option("--reconstructor-epochs", reconstructor_epochs, "reconstructor epochs per task");
        app.add_option("--batch-size", batch_size, "mini-batch size in windows");
        app.add_option("--embed-dim", embed_dim, "node embedding width of the learned graph");
        app.add_option("--diffusion-steps", diffusion_steps, "graph diffusion order");
        app.add_option("--alpha", alpha, "clustering loss weight in pre-training");
        app.add_option("--beta", beta, "consolidation loss weight");
        app.add_option("--sample-fraction", sample_fraction, "drift-sampled nodes as a fraction of the task's nodes");
        app.add_option("--replay-fraction", replay_fraction, "replayed nodes as a fraction of the task's nodes");
        app.add_option("--horizons", horizons, "1-based forecast steps, e.g. 3 6 12");
        app.add_option("--csv", csv, "flow CSV (task,node_id,bin_index,flow); relative to $" + std::string(kDataDirEnv));
        app.add_option("--metadata", metadata, "task CSV (task,node_id,is_new)");
        app.add_option("--bin-minutes", bin_minutes, "minutes per CSV bin");
        app.add_flag("--no-consolidation", no_consolidation, "drop the reconstructor consolidation term");
        app.add_flag("--no-sampling", no_sampling, "skip drift-based sampling");
        app.add_flag("--no-replay", no_replay, "skip reconstruction-based replay");
    }

    bench::ExperimentConfig resolve() const {
        bench::ExperimentConfig c = config.empty() ? bench::ExperimentConfig{} : bench::load_config(config);
        auto& e = c.engine;
        if (seed) e.seed = *seed;
        if (experts) e.experts = *experts;
        if (protocol) e.protocol = engine::protocol_from_string(*protocol);
        if (first_epochs) e.first_epochs = *first_epochs;
        if (later_epochs) e.later_epochs = *later_epochs;
        if (reconstructor_epochs) e.reconstructor_epochs = *reconstructor_epochs;
        if (batch_size) e.batch_size = *batch_size;
        if (embed_dim) e.predictor.embed_dim = *embed_dim;
        if (diffusion_steps) e.predictor.diffusion_steps = *diffusion_steps;
        if (alpha) e.alpha = *alpha;
        if (beta) e.beta = *beta;
        if (sample_fraction) e.sample_fraction = *sample_fraction;
        if (replay_fraction) e.replay_fraction = *replay_fraction;
        if (!horizons.empty()) c.horizons = horizons;
        if (csv) {
            // a CSV written by `generate` keeps the calendar of its stream
            if (c.data.synthetic) {
                c.data.bin_minutes = c.data.synthetic->bin_minutes;
                c.data.first_weekday = c.data.synthetic->first_weekday;
            }
            c.data.csv = *csv;
            c.data.synthetic.reset();
        }
        if (bin_minutes) c.data.bin_minutes = *bin_minutes;
        if (metadata) c.data.metadata = *metadata;
        if (no_consolidation) e.mechanisms.consolidation = false;
        if (no_sampling) e.mechanisms.sampling = false;
        if (no_replay) e.mechanisms.replay = false;
        c.validate();
        return c;
    }
};

fs::path checkpoint_path(const fs::path& run_dir, int task) {
    return run_dir / "checkpoints" / (task == 0 ? std::string("pretrain.ckpt") : "task" + std::to_string(task) + ".ckpt");
}

engine::ModelState load_state(const fs::path& path, const std::string& expected_hash) {
    auto ck = ckpt::load_checkpoint(path);
    if (ck.config_hash != expected_hash)
        std::fprintf(stderr, "warning: %s was written under config %s, current config is %s\n", path.c_str(),
                     ck.config_hash.c_str(), expected_hash.c_str());
    return std::move(ck.state);
}

const data::TaskDataset& find_task(const std::vector<data::TaskDataset>& tasks, int index) {
    for (const auto& t : tasks)
        if (t.task_index == index) return t;
    throw data::DataError("the stream has no task " + std::to_string(index));
}

void print_metrics(const bench::TaskMetrics& m) {
    std::printf("task %d  nodes %zu  windows %zu\n", m.task, m.nodes, m.windows);
    for (const auto& h : m.all_nodes.horizons)
        std::printf("  step %2zu  MAE %.4f  RMSE %.4f  MAPE %.2f%%\n", h.step, h.mae, h.rmse, h.mape);
}

int cmd_generate(const bench::ExperimentConfig& cfg, const fs::path& out) {
    if (!cfg.data.synthetic) throw ConfigError("generate needs data.synthetic in the config");
    const auto tasks = data::generate_stream(*cfg.data.synthetic);
    fs::create_directories(out);
    data::write_flow_csv(out / "flows.csv", tasks);
    data::write_task_csv(out / "tasks.csv", tasks);
    std::ofstream(out / "stream.json") << bench::to_json(*cfg.data.synthetic).dump(2) << "\n";
    std::printf("wrote %zu tasks to %s (flows.csv, tasks.csv)\n", tasks.size(), out.c_str());
    return 0;
}

int cmd_pretrain(const bench::ExperimentConfig& cfg, const fs::path& run_dir) {
    const auto tasks = bench::load_tasks(cfg, data_dir());
    if (tasks.empty()) throw data::DataError("the stream has no tasks");
    auto state = engine::make_model(cfg.engine, tasks[0].steps_per_week());
    const auto rep = engine::pretrain(state, tasks[0], cfg.engine);
    fs::create_directories(run_dir / "checkpoints");
    std::ofstream(run_dir / "config.json") << bench::to_json(cfg).dump(2) << "\n";
    const auto hash = bench::config_hash(cfg);
    ckpt::save_checkpoint(state, hash, checkpoint_path(run_dir, 0));
    bench::JsonlWriter(run_dir / "train_log.jsonl").write(bench::pretrain_record(rep));
    std::printf("pretrained in %.1fs; group sizes:", rep.seconds);
    for (auto g : rep.group_sizes) std::printf(" %zu", g);
    std::printf("\n");
    return 0;
}

int cmd_train_task(const bench::ExperimentConfig& cfg, const fs::path& run_dir, int task_index) {
    const auto tasks = bench::load_tasks(cfg, data_dir());
    const auto& task = find_task(tasks, task_index);
    const auto hash = bench::config_hash(cfg);
    const int prev = task_index == tasks.front().task_index ? 0 : task_index - 1;
    auto state = load_state(checkpoint_path(run_dir, prev), hash);
    const auto rep = engine::train_task(state, task, cfg.engine);
    ckpt::save_checkpoint(state, hash, checkpoint_path(run_dir, task_index));
    bench::JsonlWriter log(run_dir / "train_log.jsonl");
    for (const auto& ep : rep.epochs)
        log.write({{"event", "epoch"},
                   {"task", task_index},
                   {"epoch", ep.epoch},
                   {"prediction_loss", ep.prediction_loss},
                   {"consolidation_elbo", ep.consolidation_elbo},
                   {"loss", ep.loss}});
    log.write(bench::task_record(rep));
    std::printf("task %d (%s): pool %zu = %zu new + %zu sampled + %zu replayed, %zu epochs, %.1fs\n", task_index,
                rep.protocol.c_str(), rep.pool_size, rep.delta_n, rep.n_s, rep.n_r, rep.epochs.size(), rep.seconds);
    if (!rep.audit_violations.empty())
        std::fprintf(stderr, "warning: %zu nodes read outside the allowed set\n", rep.audit_violations.size());
    return 0;
}

int cmd_train_all(const bench::ExperimentConfig& cfg, const fs::path& run_dir) {
    const auto tasks = bench::load_tasks(cfg, data_dir());
    const auto r = bench::run_protocol(cfg, tasks, nullptr, run_dir);
    for (const auto& m : r.tasks) print_metrics(m);
    std::printf("aggregate MAE:");
    for (const auto& h : r.aggregate.horizons) std::printf(" step %zu %.4f", h.step, h.mae);
    std::printf("\nwrote %s\n", (run_dir / "metrics.json").c_str());
    return 0;
}

int cmd_evaluate(const bench::ExperimentConfig& cfg, const fs::path& run_dir, int task_index,
                 const std::string& checkpoint) {
    const auto tasks = bench::load_tasks(cfg, data_dir());
    const auto& task = find_task(tasks, task_index);
    const auto path = checkpoint.empty() ? checkpoint_path(run_dir, task_index) : fs::path(checkpoint);
    const auto state = load_state(path, bench::config_hash(cfg));
    const auto m = bench::evaluate_task(state, task, tasks.front(), cfg);
    print_metrics(m);
    fs::create_directories(run_dir);
    std::ofstream(run_dir / ("eval_task" + std::to_string(task_index) + ".json")) << bench::to_json(m).dump(2) << "\n";

    // fold the task into metrics.json so step-by-step runs can be reported
    const auto doc_path = run_dir / "metrics.json";
    json doc;
    if (std::ifstream in(doc_path); in) doc = json::parse(in, nullptr, false);
    if (!doc.is_object()) doc = json::object();
    doc["protocol"] = engine::to_string(cfg.engine.protocol);
    doc["variant"] = bench::variant_label(cfg.engine);
    doc["config_hash"] = bench::config_hash(cfg);
    doc["seed"] = state.seed;
    json tasks_json = json::array();
    for (const auto& t : doc.value("tasks", json::array()))
        if (t.at("task").get<int>() != task_index) tasks_json.push_back(t);
    tasks_json.push_back(bench::to_json(m));
    std::sort(tasks_json.begin(), tasks_json.end(),
              [](const json& a, const json& b) { return a.at("task").get<int>() < b.at("task").get<int>(); });
    std::vector<metrics::MetricsReport> per_task;
    for (const auto& t : tasks_json) per_task.push_back(bench::metrics_from_json(t.at("all_nodes")));
    doc["tasks"] = tasks_json;
    doc["aggregate"] = bench::to_json(metrics::average(per_task));
    std::ofstream(doc_path) << doc.dump(2) << "\n";
    return 0;
}

int cmd_gradcheck(const std::vector<std::string>& cases, bool list, std::uint64_t seed) {
    if (list) {
        for (const auto& n : gradcheck_case_names()) std::printf("%s\n", n.c_str());
        return 0;
    }
    GradCheckSuiteOptions opts;
    opts.seed = seed;
    const auto results = run_gradcheck_suite(opts, cases);
    bool ok = true;
    for (const auto& c : results) {
        std::printf("%s %-22s max_rel_err %.3e\n", c.report.passed ? "PASS" : "FAIL", c.name.c_str(),
                    c.report.max_rel_error());
        ok = ok && c.report.passed;
    }
    return ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixture-of-experts continual traffic forecasting"};
    app.require_subcommand(1);
    Overrides ov;

    auto* gen = app.add_subcommand("generate", "write a synthetic stream as CSV files");
    std::string gen_out;
    gen->add_option("-o,--out", gen_out, "output directory (default $" + std::string(kDataDirEnv) + " or ./data)");

    auto* pre = app.add_subcommand("pretrain", "pre-train clustering and reconstructors on task 1");
    auto* train = app.add_subcommand("train", "train one task, or every task with evaluation");
    auto* eval = app.add_subcommand("evaluate", "test-split metrics of a task checkpoint");
    std::string run_dir = "run";
    int task = 0;
    bool all_tasks = false;
    std::string checkpoint;
    for (auto* sc : {pre, train, eval}) sc->add_option("-r,--run-dir", run_dir, "run directory")->capture_default_str();
    auto* task_opt = train->add_option("-t,--task", task, "task index");
    auto* all_opt = train->add_flag("--all-tasks", all_tasks, "pre-train and run the whole stream");
    task_opt->excludes(all_opt);
    eval->add_option("-t,--task", task, "task index")->required();
    eval->add_option("--checkpoint", checkpoint, "checkpoint file (default <run-dir>/checkpoints/task<k>.ckpt)");

    auto* rep = app.add_subcommand("report", "summary tables and plot data from run directories");
    std::vector<std::string> runs;
    std::string rep_out = "report";
    rep->add_option("runs", runs, "run directories")->required();
    rep->add_option("-o,--out", rep_out, "report directory")->capture_default_str();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of every op and model loss");
    std::vector<std::string> cases;
    bool list = false;
    std::uint64_t gc_seed = 1;
    gc->add_option("--case", cases, "run only these cases");
    gc->add_flag("--list", list, "list case names");
    gc->add_option("--seed", gc_seed, "seed for random inputs")->capture_default_str();

    for (auto* sc : {gen, pre, train, eval}) ov.attach(*sc);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*gc) return cmd_gradcheck(cases, list, gc_seed);
        if (*rep) {
            std::vector<fs::path> dirs(runs.begin(), runs.end());
            bench::write_report(dirs, rep_out);
            std::printf("wrote summary.csv, summary.md and plot_data.csv to %s\n", rep_out.c_str());
            return 0;
        }
        const auto cfg = ov.resolve();
        if (*gen) return cmd_generate(cfg, gen_out.empty() ? data_dir() : fs::path(gen_out));
        if (*pre) return cmd_pretrain(cfg, run_dir);
        if (*train) {
            if (all_tasks) return cmd_train_all(cfg, run_dir);
            if (task < 1) throw ConfigError("train needs --task <k> or --all-tasks");
            return cmd_train_task(cfg, run_dir, task);
        }
        if (*eval) return cmd_evaluate(cfg, run_dir, task, checkpoint);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const engine::StateError& e) {
        std::fprintf(stderr, "state error: %s\n", e.what());
        return kExitConfig;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric divergence: %s\n", e.what());
        return kExitNumeric;
    } catch (const data::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const ckpt::CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return kExitData;
    } catch (const DimensionError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    }
    return 0;
}
