#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "thermoq/dynamics.hpp"
#include "thermoq/integrator.hpp"
#include "thermoq/types.hpp"

namespace thermoq {

enum class Provenance { synthetic_nonlinear, synthetic_lindblad, experimental };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

// One sampled trajectory. Row i of `v` is the Bloch vector at t[i].
struct TrajectoryRecord {
    std::string id;
    int levels = 2;
    Vec initial_condition;
    std::optional<ControlSpec> control;
    std::vector<double> t;
    Mat v;
    Provenance provenance = Provenance::synthetic_nonlinear;
    std::string split = "train";

    // Throws DataError if shapes or the time grid are inconsistent.
    void validate() const;
};

struct TrajectoryDataset {
    int levels = 2;
    std::string units = "dimensionless";
    // Added to the learnable Hamiltonian inside the dissipative term
    // (rotating-frame data carries the frame frequency here).
    Vec dissipative_shift;
    nlohmann::json generator = nlohmann::json::object();
    std::vector<TrajectoryRecord> records;

    std::vector<const TrajectoryRecord*> split(const std::string& name) const;
};

// Directory layout: manifest.json plus one CSV per record (t, v1..vd at 17
// significant digits). Reading back reproduces every double exactly.
void write_dataset(const TrajectoryDataset& ds, const std::filesystem::path& dir);
TrajectoryDataset read_dataset(const std::filesystem::path& dir);

std::vector<double> uniform_grid(double t_end, double dt);

// Two-level system H = (omega/2) sigma_3 with decay coupling
// X = sqrt(gamma1/2) diag(1, 1, 0).
struct TwoLevelParams {
    double omega = 1.5;
    double gamma1 = 0.0785;
    double kT = 0.65;
    double t_end = 60.0;
    double dt = 0.1;
    int n_train = 12;
    int n_test = 188;
    IntegratorConfig integrator = IntegratorConfig::data_generation();
};

Vec two_level_h(const TwoLevelParams& p);
Mat two_level_x(const TwoLevelParams& p);
SystemSpec two_level_system(const TwoLevelParams& p);
// Lindblad counterpart: decay |0> -> |1> (towards v3 = -1) at rate gamma1.
LindbladSystem two_level_lindblad_system(const TwoLevelParams& p);
// Unit vectors uniform on the sphere (normalized Gaussian draws).
std::vector<Vec> sample_bloch_sphere(int n, std::uint64_t seed);

TrajectoryDataset gen_two_level(const TwoLevelParams& p, std::uint64_t seed);
TrajectoryDataset gen_two_level_lindblad(const TwoLevelParams& p, std::uint64_t seed);

// Driven qutrit in the rotating frame of the drive.
struct QutritParams {
    double omega = 2.0 * M_PI * 344.8;
    double xi = 2.0 * M_PI * 3.48;
    double omega_d = 2.0 * M_PI * 344.8;
    double beta = 1.0 / 1309.0;
    // Omega12 = Omega01 - offset, in rad/us.
    double offset = 0.1;
    std::vector<double> amplitudes = {2.0 * M_PI * 0.0625, 2.0 * M_PI * 0.125, 2.0 * M_PI * 0.25,
                                      2.0 * M_PI * 0.5};
    double t_end = 12.0;
    double dt = 0.05;
    IntegratorConfig integrator = IntegratorConfig::data_generation();
};

// 8 x 3 coupling factor: 0-1 and 1-2 transition channels plus dephasing.
Mat qutrit_x();
ControlSpec qutrit_control(const QutritParams& p, double omega01);
SystemSpec qutrit_system(const QutritParams& p, const ControlSpec& ctrl);
// Bloch vector of the frame Hamiltonian omega_d a^+ a.
Vec qutrit_frame_shift(const QutritParams& p);
Vec ground_state(int levels);

// One trajectory per amplitude, all from the ground state.
TrajectoryDataset gen_qutrit(const QutritParams& p, std::uint64_t seed);
// Controls with Omega01 ~ U(lo, hi) applied to both quadratures.
std::vector<ControlSpec> random_control_set(int n, double lo, double hi, const QutritParams& p,
                                            std::uint64_t seed);

// Constant resonant drive on a two-level system with T1/T2 relaxation,
// standing in for the measured Rabi data.
struct RabiParams {
    double omega = 2.0 * M_PI * 3422.0;
    double kT = 1309.0;
    double t1 = 180.0;
    double t2 = 6.0;
    double p = 2.0 * M_PI * 0.0181 * 47.9;
    double q = 2.0 * M_PI * 0.0181 * 47.9;
    double t_end = 30.0;
    double dt = 0.02;
    IntegratorConfig integrator = IntegratorConfig::data_generation();
};

Mat rabi_x(const RabiParams& p);
SystemSpec rabi_system(const RabiParams& p);
TrajectoryDataset gen_rabi(const RabiParams& p);

// Rows are the true state, columns the measured outcome.
struct ConfusionMatrix {
    Mat c;
    void validate() const;
    // Corrected populations p with p^T C = p_raw^T, before clamping.
    Vec correct(const Vec& p_raw) const;
};

// Readout confusion matrix of the measured device.
ConfusionMatrix device_confusion();

// Populations per basis, one row per time. Columns P_x0.., P_y0.., P_z0..;
// with only P_b0 given the readout is two-outcome.
struct PopulationTable {
    std::vector<double> t;
    Mat px, py, pz;
};

PopulationTable read_population_csv(const std::filesystem::path& path);
ConfusionMatrix read_confusion_json(const std::filesystem::path& path);

// Clamp to [0, 1] and renormalize to sum 1.
Vec project_to_simplex(const Vec& p);
// v1 = 2 Px0 - 1, v2 = 2 Py0 - 1, v3 = 2 Pz0 - 1 after correction.
TrajectoryRecord ingest_experimental(const PopulationTable& table, const ConfusionMatrix& cm,
                                     const std::string& id = "experimental");

// Adds N(0, sigma) to every component of every sample, then clamps to [-1, 1].
TrajectoryDataset add_noise(const TrajectoryDataset& ds, double sigma, std::uint64_t seed);

// Integrates the exact nonlinear equation from v0 on the grid.
Mat simulate(const SystemSpec& sys, const Vec& v0, const std::vector<double>& t,
             const IntegratorConfig& cfg);
Mat simulate(const LindbladSystem& sys, const Vec& v0, const std::vector<double>& t,
             const IntegratorConfig& cfg);

} // namespace thermoq
