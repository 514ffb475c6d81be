#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "thermoq/data.hpp"
#include "thermoq/metrics.hpp"
#include "thermoq/model.hpp"
#include "thermoq/training.hpp"

namespace thermoq {

enum class Experiment { two_level, two_level_lindblad, qutrit, experimental };

std::string to_string(Experiment e);
Experiment experiment_from_string(const std::string& s);

// Starting point of training.
struct InitConfig {
    // Lower triangle of X drawn from N(0, x_sigma) when no prior is known.
    double x_sigma = 0.05;
    double net_scale = 1e-6;
    // Driven qutrit: truth perturbed by N(0, x_perturb) per entry of the
    // Cholesky factor and N(0, h_perturb) on the last Bloch component of h.
    double x_perturb = 0.05;
    double h_perturb = 5.0;
    // Start from this checkpoint instead (resume).
    std::filesystem::path checkpoint;
};

struct QutritEval {
    int n_controls = 20;
    double t_end = 20.0;
    double omega_lo = 2.0 * M_PI * 0.0625;
    double omega_hi = 2.0 * M_PI * 0.5;
    std::vector<double> t_train = {3.0, 6.0, 12.0};
};

struct ExperimentalInput {
    // Population CSV and confusion-matrix JSON; empty paths select the
    // synthetic Rabi stand-in.
    std::filesystem::path populations;
    std::filesystem::path confusion;
    double noise_sigma = 0.1;
    // Final stretch over which the plateau slope of the cumulative distance
    // is measured.
    double slope_window = 10.0;
};

// Grid of constant pulse strengths for the sweep command.
struct SweepGrid {
    std::vector<double> p;
    std::vector<double> q;
};

struct RunConfig {
    Experiment experiment = Experiment::two_level;
    std::uint64_t seed = 0;
    std::filesystem::path dataset_dir;
    std::filesystem::path model_path;
    std::filesystem::path out_dir;
    TrainConfig train;
    // Data generation and evaluation rollouts.
    IntegratorConfig integrator = IntegratorConfig::data_generation();
    InitConfig init;
    TwoLevelParams two_level;
    QutritParams qutrit;
    QutritEval qutrit_eval;
    RabiParams rabi;
    ExperimentalInput experimental;
    SweepGrid sweep;
    int overlays = 3;
};

// Defaults of each experiment.
RunConfig default_config(Experiment e);
// Overlays the keys of `j` on the defaults of its "experiment". Unknown keys
// are rejected with ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);

TrajectoryDataset generate(const RunConfig& cfg);
LearnableModel initial_model(const RunConfig& cfg, const TrajectoryDataset& ds);

struct EvalReport {
    nlohmann::json metrics = nlohmann::json::object();
};

// Metrics of a trained model; writes curve CSVs into out_dir when it is not empty.
EvalReport evaluate(const RunConfig& cfg, const LearnableModel& model, const TrajectoryDataset& ds,
                    const std::filesystem::path& out_dir = {});

// Slope of the least-squares line through (t_i, y_i) for t_i >= t_from.
double tail_slope(const std::vector<double>& t, const Vec& y, double t_from);

// Plain CSV with a header row; values at 17 significant digits.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<Vec>& columns);

} // namespace thermoq
