// Command-line driver: generate, train, evaluate, sweep.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "thermoq/errors.hpp"
#include "thermoq/experiments.hpp"
#include "thermoq/log.hpp"

#ifndef THERMOQ_VERSION
#define THERMOQ_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace thermoq;

namespace {

enum Exit { ok = 0, other = 1, config = 2, data = 3, numeric = 4 };

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    std::string out;
};

RunConfig load_config(const Common& c) {
    json j = json::object();
    if (!c.config_path.empty()) {
        std::ifstream in(c.config_path);
        if (!in) throw ConfigError("cannot open config " + c.config_path);
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError(c.config_path + ": " + e.what());
        }
    }
    RunConfig cfg = config_from_json(j);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.out_dir = c.out;
    if (c.jobs < 1) throw ConfigError("--jobs must be positive");
    return cfg;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

fs::path require_out(const RunConfig& cfg) {
    if (cfg.out_dir.empty()) throw ConfigError("no output directory (--out or out_dir)");
    fs::create_directories(cfg.out_dir);
    return cfg.out_dir;
}

TrajectoryDataset load_or_generate(const RunConfig& cfg) {
    if (!cfg.dataset_dir.empty()) return read_dataset(cfg.dataset_dir);
    logger().info("no dataset_dir given; generating {} data in memory", to_string(cfg.experiment));
    return generate(cfg);
}

json train_summary(const TrainResult& r) {
    json checks = json::array();
    for (const auto& c : r.checks) {
        checks.push_back({{"min_eigenvalue", c.min_eigenvalue},
                          {"null_residual", c.null_residual},
                          {"pure_residual", c.pure_residual},
                          {"ok", c.ok()}});
    }
    return {{"windows", r.windows},
            {"window_loss", r.window_loss},
            {"handoff_loss", r.handoff_loss},
            {"handoff_ratio", r.handoff_ratio},
            {"structural_checks", checks},
            {"iterations", r.history.size()}};
}

// Trains one model into `dir`: checkpoints per increment, history, final model.
TrainResult train_into(const RunConfig& cfg, const TrajectoryDataset& ds, const fs::path& dir) {
    fs::create_directories(dir);
    const LearnableModel init = initial_model(cfg, ds);
    auto records = ds.split("train");
    if (records.empty()) throw DataError("dataset has no training records");
    TrainResult r = train_continuation(init, records, cfg.train, cfg.seed, [&](int k, const LearnableModel& m) {
        json j = model_to_json(m);
        j["metadata"] = {{"increment", k}, {"experiment", to_string(cfg.experiment)}, {"seed", cfg.seed}};
        write_json(dir / ("checkpoint_" + std::to_string(k) + ".json"), j);
    });
    json mj = model_to_json(r.model);
    mj["metadata"] = {{"experiment", to_string(cfg.experiment)}, {"seed", cfg.seed}, {"code_version", THERMOQ_VERSION}};
    write_json(dir / "model.json", mj);
    write_history_csv(r.history, dir / "history.csv");
    return r;
}

// ---------------------------------------------------------------- commands

int cmd_generate(const Common& c) {
    RunConfig cfg = load_config(c);
    const fs::path out = !cfg.out_dir.empty() ? cfg.out_dir : cfg.dataset_dir;
    if (out.empty()) throw ConfigError("no output directory (--out or dataset_dir)");
    TrajectoryDataset ds = generate(cfg);
    ds.generator["code_version"] = THERMOQ_VERSION;
    ds.generator["config"] = config_to_json(cfg);
    write_dataset(ds, out);
    std::cout << "wrote " << ds.records.size() << " trajectories to " << out.string() << '\n';
    return ok;
}

int cmd_train(const Common& c) {
    RunConfig cfg = load_config(c);
    const fs::path out = require_out(cfg);
    const TrajectoryDataset ds = load_or_generate(cfg);
    write_json(out / "run_config.json", config_to_json(cfg));

    json metrics;
    if (cfg.experiment == Experiment::qutrit) {
        // One model per training interval; the intervals train independently.
        const auto& ts = cfg.qutrit_eval.t_train;
        std::vector<json> per(ts.size());
        std::vector<std::exception_ptr> errs(ts.size());
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i; (i = next++) < ts.size();) {
                try {
                    RunConfig sub = cfg;
                    sub.train.train_window = ts[i];
                    char name[32];
                    std::snprintf(name, sizeof name, "T%g", ts[i]);
                    const fs::path dir = out / name;
                    const TrainResult r = train_into(sub, ds, dir);
                    const EvalReport e = evaluate(sub, r.model, ds, dir);
                    write_json(dir / "metrics.json", {{"train", train_summary(r)}, {"eval", e.metrics}});
                    per[i] = {{"t_train", ts[i]}, {"dir", name}, {"eval", e.metrics}};
                } catch (...) {
                    errs[i] = std::current_exception();
                }
            }
        };
        std::vector<std::thread> pool;
        for (int k = 0; k < std::min<int>(c.jobs, static_cast<int>(ts.size())); ++k) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
        for (auto& e : errs)
            if (e) std::rethrow_exception(e);
        metrics["runs"] = per;
    } else {
        const TrainResult r = train_into(cfg, ds, out);
        metrics["train"] = train_summary(r);
        metrics["eval"] = evaluate(cfg, r.model, ds, out).metrics;
    }
    write_json(out / "metrics.json", metrics);
    std::cout << metrics.dump(2) << '\n';
    return ok;
}

int cmd_evaluate(const Common& c) {
    RunConfig cfg = load_config(c);
    const fs::path out = require_out(cfg);
    if (cfg.model_path.empty()) throw ConfigError("evaluate needs model_path");
    const LearnableModel model = model_from_json(read_json(cfg.model_path));
    const TrajectoryDataset ds = load_or_generate(cfg);
    const EvalReport e = evaluate(cfg, model, ds, out);
    write_json(out / "metrics.json", e.metrics);
    std::cout << e.metrics.dump(2) << '\n';
    return ok;
}

int cmd_sweep(const Common& c) {
    RunConfig cfg = load_config(c);
    if (cfg.experiment != Experiment::experimental) throw ConfigError("sweep runs the experimental pipeline");
    if (cfg.sweep.p.empty()) throw ConfigError("sweep grid is empty");
    const fs::path out = require_out(cfg);
    write_json(out / "run_config.json", config_to_json(cfg));

    struct Cell {
        double p, q;
        std::string status = "ok";
        Vec h = Vec::Zero(3);
        double loss = 0.0;
        double cumulative = 0.0;
    };
    std::vector<Cell> cells;
    for (double p : cfg.sweep.p)
        for (double q : cfg.sweep.q) cells.push_back({p, q});

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next++) < cells.size();) {
            Cell& cell = cells[i];
            try {
                RunConfig sub = cfg;
                sub.rabi.p = cell.p;
                sub.rabi.q = cell.q;
                sub.experimental.populations.clear();
                sub.seed = cfg.seed + 1000003ULL * (i + 1);
                const fs::path dir = out / ("cell_" + std::to_string(i));
                const TrajectoryDataset ds = generate(sub);
                const TrainResult r = train_into(sub, ds, dir);
                const EvalReport e = evaluate(sub, r.model, ds, dir);
                write_json(dir / "metrics.json", {{"train", train_summary(r)}, {"eval", e.metrics}});
                cell.h = r.model.h;
                cell.loss = r.window_loss.back();
                cell.cumulative = e.metrics["cumulative_final"].get<double>();
            } catch (const std::exception& e) {
                cell.status = std::string("failed: ") + e.what();
                logger().error("sweep cell {} (p={}, q={}) failed: {}", i, cell.p, cell.q, e.what());
            }
        }
    };
    std::vector<std::thread> pool;
    for (int k = 0; k < std::min<int>(c.jobs, static_cast<int>(cells.size())); ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    std::ofstream csv(out / "sweep.csv");
    if (!csv) throw DataError("cannot write sweep.csv");
    csv << "cell,p,q,status,h1,h2,h3,final_loss,cumulative_final\n";
    char buf[512];
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const Cell& k = cells[i];
        std::string status = k.status;
        std::replace(status.begin(), status.end(), ',', ';');
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%s,%.17g,%.17g,%.17g,%.17g,%.17g\n", i, k.p, k.q,
                      status.c_str(), k.h[0], k.h[1], k.h[2], k.loss, k.cumulative);
        csv << buf;
    }
    std::cout << "swept " << cells.size() << " cells into " << (out / "sweep.csv").string() << '\n';
    return ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Learn thermodynamically consistent quantum dynamics from trajectories"};
    app.require_subcommand(1);
    app.set_version_flag("--version", THERMOQ_VERSION);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "Run configuration (JSON)");
        sub->add_option("--seed", common.seed, "Override the configured seed");
        sub->add_option("--jobs", common.jobs, "Concurrent training runs")->check(CLI::PositiveNumber);
        sub->add_option("--out", common.out, "Output directory");
    };
    CLI::App* gen = app.add_subcommand("generate", "Write a synthetic or ingested dataset");
    CLI::App* train = app.add_subcommand("train", "Train a model with continuation");
    CLI::App* eval = app.add_subcommand("evaluate", "Metrics and plot data for a trained model");
    CLI::App* sweep = app.add_subcommand("sweep", "Train over a grid of constant pulse strengths");
    for (CLI::App* s : {gen, train, eval, sweep}) add_common(s);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : config;
    }

    try {
        if (gen->parsed()) return cmd_generate(common);
        if (train->parsed()) return cmd_train(common);
        if (eval->parsed()) return cmd_evaluate(common);
        if (sweep->parsed()) return cmd_sweep(common);
    } catch (const ConfigError& e) {
        logger().error("configuration: {}", e.what());
        return config;
    } catch (const ValidationError& e) {
        logger().error("configuration: {}", e.what());
        return config;
    } catch (const DataError& e) {
        logger().error("data: {}", e.what());
        return data;
    } catch (const DimensionError& e) {
        logger().error("data: {}", e.what());
        return data;
    } catch (const fs::filesystem_error& e) {
        logger().error("data: {}", e.what());
        return data;
    } catch (const IntegrationError& e) {
        logger().error("numeric: {} (last good time {})", e.what(), e.last_good_time());
        return numeric;
    } catch (const StateError& e) {
        logger().error("numeric: {}", e.what());
        return numeric;
    } catch (const std::exception& e) {
        logger().error("{}", e.what());
        return other;
    }
    return other;
}
