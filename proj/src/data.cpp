#include "thermoq/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "thermoq/basis.hpp"
#include "thermoq/errors.hpp"
#include "thermoq/log.hpp"

namespace thermoq {

namespace fs = std::filesystem;

std::string to_string(Provenance p) {
    switch (p) {
    case Provenance::synthetic_nonlinear:
        return "synthetic-nonlinear";
    case Provenance::synthetic_lindblad:
        return "synthetic-lindblad";
    case Provenance::experimental:
        return "experimental";
    }
    return "unknown";
}

Provenance provenance_from_string(const std::string& s) {
    if (s == "synthetic-nonlinear") return Provenance::synthetic_nonlinear;
    if (s == "synthetic-lindblad") return Provenance::synthetic_lindblad;
    if (s == "experimental") return Provenance::experimental;
    throw DataError("unknown provenance tag '" + s + "'");
}

void TrajectoryRecord::validate() const {
    const int d = bloch_dim(levels);
    if (t.empty()) throw DataError("record " + id + ": empty time grid");
    if (v.rows() != static_cast<Eigen::Index>(t.size()) || v.cols() != d) {
        throw DataError("record " + id + ": sample matrix shape does not match grid and N");
    }
    if (initial_condition.size() != d) throw DataError("record " + id + ": bad initial condition");
    for (std::size_t i = 1; i < t.size(); ++i) {
        if (!(t[i] > t[i - 1])) throw DataError("record " + id + ": time grid not increasing");
    }
}

std::vector<const TrajectoryRecord*> TrajectoryDataset::split(const std::string& name) const {
    std::vector<const TrajectoryRecord*> out;
    for (const auto& r : records)
        if (r.split == name) out.push_back(&r);
    return out;
}

// ---------------------------------------------------------------- IO

namespace {

// Rows of a confusion matrix must sum to 1. Published matrices are rounded to
// about five decimals, so the check allows 1e-5.
constexpr double kConfusionRowTol = 1e-5;

std::string fmt17(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

nlohmann::json control_to_json(const ControlSpec& c) {
    return {{"omega", c.omega},   {"xi", c.xi},         {"omega_d", c.omega_d},
            {"p01", c.pulse.p01}, {"p12", c.pulse.p12}, {"q01", c.pulse.q01},
            {"q12", c.pulse.q12}, {"mod_freq", c.pulse.mod_freq}};
}

ControlSpec control_from_json(const nlohmann::json& j) {
    ControlSpec c;
    c.omega = j.at("omega").get<double>();
    c.xi = j.at("xi").get<double>();
    c.omega_d = j.at("omega_d").get<double>();
    c.pulse.p01 = j.at("p01").get<double>();
    c.pulse.p12 = j.at("p12").get<double>();
    c.pulse.q01 = j.at("q01").get<double>();
    c.pulse.q12 = j.at("q12").get<double>();
    c.pulse.mod_freq = j.at("mod_freq").get<double>();
    return c;
}

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

Vec from_std(const std::vector<double>& v) {
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cell.erase(0, cell.find_first_not_of(" \t\r"));
        cell.erase(cell.find_last_not_of(" \t\r") + 1);
        out.push_back(cell);
    }
    return out;
}

double parse_double(const std::string& s, const std::string& where) {
    char* end = nullptr;
    const double x = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
        throw DataError(where + ": cannot parse number '" + s + "'");
    }
    return x;
}

// Numeric CSV with a header row; returns header and rows.
std::pair<std::vector<std::string>, std::vector<std::vector<double>>> read_numeric_csv(
    const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
    const auto header = split_csv(line);
    std::vector<std::vector<double>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size()) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(header.size()) + " columns");
        }
        std::vector<double> row;
        for (const auto& c : cells) row.push_back(parse_double(c, path.string() + ":" + std::to_string(lineno)));
        rows.push_back(std::move(row));
    }
    return {header, rows};
}

} // namespace

void write_dataset(const TrajectoryDataset& ds, const fs::path& dir) {
    fs::create_directories(dir);
    const int d = bloch_dim(ds.levels);
    nlohmann::json manifest;
    manifest["format"] = "thermoq-dataset";
    manifest["version"] = 1;
    manifest["N"] = ds.levels;
    manifest["units"] = ds.units;
    manifest["dissipative_shift"] = to_std(ds.dissipative_shift.size() == d ? ds.dissipative_shift
                                                                           : Vec::Zero(d));
    manifest["generator"] = ds.generator;
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : ds.records) {
        r.validate();
        const std::string file = r.id + ".csv";
        nlohmann::json jr;
        jr["id"] = r.id;
        jr["file"] = file;
        jr["split"] = r.split;
        jr["provenance"] = to_string(r.provenance);
        jr["initial_condition"] = to_std(r.initial_condition);
        jr["control"] = r.control ? control_to_json(*r.control) : nlohmann::json();
        recs.push_back(jr);

        std::ofstream out(dir / file);
        if (!out) throw DataError("cannot write " + (dir / file).string());
        out << "t";
        for (int j = 1; j <= d; ++j) out << ",v" << j;
        out << '\n';
        for (std::size_t i = 0; i < r.t.size(); ++i) {
            out << fmt17(r.t[i]);
            for (int j = 0; j < d; ++j) out << ',' << fmt17(r.v(static_cast<Eigen::Index>(i), j));
            out << '\n';
        }
    }
    manifest["records"] = recs;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw DataError("cannot write manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

TrajectoryDataset read_dataset(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("no manifest.json in " + dir.string());
    TrajectoryDataset ds;
    try {
        const auto manifest = nlohmann::json::parse(in);
        if (manifest.at("format").get<std::string>() != "thermoq-dataset") {
            throw DataError("unexpected dataset format tag");
        }
        ds.levels = manifest.at("N").get<int>();
        if (ds.levels < 2) throw DataError("dataset N must be >= 2");
        const int d = bloch_dim(ds.levels);
        ds.units = manifest.value("units", "dimensionless");
        ds.dissipative_shift = manifest.contains("dissipative_shift")
                                   ? from_std(manifest["dissipative_shift"].get<std::vector<double>>())
                                   : Vec::Zero(d);
        ds.generator = manifest.value("generator", nlohmann::json::object());
        for (const auto& jr : manifest.at("records")) {
            TrajectoryRecord r;
            r.id = jr.at("id").get<std::string>();
            r.levels = ds.levels;
            r.split = jr.value("split", "train");
            r.provenance = provenance_from_string(jr.at("provenance").get<std::string>());
            r.initial_condition = from_std(jr.at("initial_condition").get<std::vector<double>>());
            if (!jr.at("control").is_null()) r.control = control_from_json(jr["control"]);
            const auto [header, rows] = read_numeric_csv(dir / jr.at("file").get<std::string>());
            if (static_cast<int>(header.size()) != d + 1) {
                throw DataError("record " + r.id + ": expected " + std::to_string(d + 1) + " columns");
            }
            r.v.resize(static_cast<Eigen::Index>(rows.size()), d);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                r.t.push_back(rows[i][0]);
                for (int j = 0; j < d; ++j) r.v(static_cast<Eigen::Index>(i), j) = rows[i][j + 1];
            }
            r.validate();
            ds.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("dataset manifest: " + std::string(e.what()));
    }
    return ds;
}

std::vector<double> uniform_grid(double t_end, double dt) {
    if (!(dt > 0.0) || !(t_end > 0.0)) throw ValidationError("uniform_grid: need positive t_end and dt");
    const auto n = static_cast<long>(std::lround(t_end / dt));
    std::vector<double> t(static_cast<std::size_t>(n) + 1);
    for (long i = 0; i <= n; ++i) t[static_cast<std::size_t>(i)] = static_cast<double>(i) * dt;
    return t;
}

Mat simulate(const SystemSpec& sys, const Vec& v0, const std::vector<double>& t,
             const IntegratorConfig& cfg) {
    return integrate([&sys](double tt, const Vec& v, Vec& out) { out = rhs_nonlinear(v, sys, tt); },
                     v0, t, cfg);
}

Mat simulate(const LindbladSystem& sys, const Vec& v0, const std::vector<double>& t,
             const IntegratorConfig& cfg) {
    return integrate([&sys](double, const Vec& v, Vec& out) { out = rhs_lindblad(v, sys); }, v0, t,
                     cfg);
}

// ---------------------------------------------------------------- two-level

Vec two_level_h(const TwoLevelParams& p) { return Vec::Unit(3, 2) * p.omega; }

Mat two_level_x(const TwoLevelParams& p) {
    Mat x = Mat::Zero(3, 3);
    x(0, 0) = x(1, 1) = std::sqrt(p.gamma1 / 2.0);
    return x;
}

SystemSpec two_level_system(const TwoLevelParams& p) {
    SystemSpec sys;
    sys.levels = 2;
    sys.h = two_level_h(p);
    sys.coupling.x_cols = two_level_x(p);
    sys.beta = 1.0 / p.kT;
    return sys;
}

LindbladSystem two_level_lindblad_system(const TwoLevelParams& p) {
    LindbladSystem sys;
    sys.levels = 2;
    sys.h = two_level_h(p);
    CMat decay = CMat::Zero(2, 2);
    decay(1, 0) = 1.0;
    sys.jump_ops = {decay};
    sys.rates = {p.gamma1};
    return sys;
}

std::vector<Vec> sample_bloch_sphere(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<Vec> out;
    while (static_cast<int>(out.size()) < n) {
        Vec v(3);
        for (int i = 0; i < 3; ++i) v[i] = nd(rng);
        const double norm = v.norm();
        if (norm < 1e-12) continue;
        out.push_back(v / norm);
    }
    return out;
}

namespace {

nlohmann::json two_level_json(const TwoLevelParams& p, std::uint64_t seed) {
    return {{"omega", p.omega}, {"gamma1", p.gamma1}, {"kT", p.kT},           {"t_end", p.t_end},
            {"dt", p.dt},       {"n_train", p.n_train}, {"n_test", p.n_test}, {"seed", seed},
            {"rel_tol", p.integrator.rel_tol},          {"abs_tol", p.integrator.abs_tol}};
}

template <typename Sys>
TrajectoryDataset gen_two_level_impl(const TwoLevelParams& p, std::uint64_t seed, const Sys& sys,
                                     Provenance prov, const std::string& name) {
    TrajectoryDataset ds;
    ds.levels = 2;
    ds.units = "dimensionless";
    ds.dissipative_shift = Vec::Zero(3);
    ds.generator = two_level_json(p, seed);
    ds.generator["experiment"] = name;
    const auto t = uniform_grid(p.t_end, p.dt);
    const auto ics = sample_bloch_sphere(p.n_train + p.n_test, seed);
    for (std::size_t k = 0; k < ics.size(); ++k) {
        TrajectoryRecord r;
        char id[32];
        std::snprintf(id, sizeof id, "traj_%04zu", k);
        r.id = id;
        r.levels = 2;
        r.initial_condition = ics[k];
        r.t = t;
        r.v = simulate(sys, ics[k], t, p.integrator);
        r.provenance = prov;
        r.split = static_cast<int>(k) < p.n_train ? "train" : "test";
        ds.records.push_back(std::move(r));
    }
    return ds;
}

} // namespace

TrajectoryDataset gen_two_level(const TwoLevelParams& p, std::uint64_t seed) {
    return gen_two_level_impl(p, seed, two_level_system(p), Provenance::synthetic_nonlinear,
                              "two-level");
}

TrajectoryDataset gen_two_level_lindblad(const TwoLevelParams& p, std::uint64_t seed) {
    return gen_two_level_impl(p, seed, two_level_lindblad_system(p), Provenance::synthetic_lindblad,
                              "two-level-lindblad");
}

// ---------------------------------------------------------------- qutrit

Mat qutrit_x() {
    Mat x = Mat::Zero(8, 3);
    x(0, 0) = 0.044;
    x(1, 1) = 0.044;
    x(2, 2) = -0.16;
    x(5, 0) = 0.07;
    x(6, 1) = 0.07;
    x(7, 2) = -0.3;
    return x;
}

ControlSpec qutrit_control(const QutritParams& p, double omega01) {
    ControlSpec c;
    c.omega = p.omega;
    c.xi = p.xi;
    c.omega_d = p.omega_d;
    c.pulse.p01 = c.pulse.q01 = omega01;
    c.pulse.p12 = c.pulse.q12 = omega01 - p.offset;
    c.pulse.mod_freq = p.xi;
    return c;
}

SystemSpec qutrit_system(const QutritParams& p, const ControlSpec& ctrl) {
    SystemSpec sys;
    sys.levels = 3;
    sys.h = drift_bloch(ctrl, Frame::rotating, 3);
    sys.h_dissipative = drift_bloch(ctrl, Frame::lab, 3);
    sys.coupling.x_cols = qutrit_x();
    sys.beta = p.beta;
    sys.control = ctrl;
    return sys;
}

Vec qutrit_frame_shift(const QutritParams& p) { return p.omega_d * number_bloch(3); }

Vec ground_state(int levels) {
    CMat rho = CMat::Zero(levels, levels);
    rho(0, 0) = 1.0;
    return to_bloch(rho, *structure_constants(levels));
}

TrajectoryDataset gen_qutrit(const QutritParams& p, std::uint64_t seed) {
    TrajectoryDataset ds;
    ds.levels = 3;
    ds.units = "us, rad/us";
    ds.dissipative_shift = qutrit_frame_shift(p);
    ds.generator = {{"experiment", "qutrit"}, {"omega", p.omega},   {"xi", p.xi},
                    {"omega_d", p.omega_d},   {"beta", p.beta},     {"offset", p.offset},
                    {"amplitudes", p.amplitudes}, {"t_end", p.t_end}, {"dt", p.dt},
                    {"seed", seed},           {"rel_tol", p.integrator.rel_tol},
                    {"abs_tol", p.integrator.abs_tol}};
    const auto t = uniform_grid(p.t_end, p.dt);
    const Vec v0 = ground_state(3);
    for (std::size_t k = 0; k < p.amplitudes.size(); ++k) {
        const ControlSpec ctrl = qutrit_control(p, p.amplitudes[k]);
        TrajectoryRecord r;
        r.id = "pulse_" + std::to_string(k);
        r.levels = 3;
        r.initial_condition = v0;
        r.control = ctrl;
        r.t = t;
        r.v = simulate(qutrit_system(p, ctrl), v0, t, p.integrator);
        r.provenance = Provenance::synthetic_nonlinear;
        r.split = "train";
        ds.records.push_back(std::move(r));
    }
    return ds;
}

std::vector<ControlSpec> random_control_set(int n, double lo, double hi, const QutritParams& p,
                                            std::uint64_t seed) {
    if (!(lo < hi)) throw ValidationError("random_control_set: need lo < hi");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(lo, hi);
    std::vector<ControlSpec> out;
    for (int i = 0; i < n; ++i) out.push_back(qutrit_control(p, ud(rng)));
    return out;
}

// ---------------------------------------------------------------- driven qubit

Mat rabi_x(const RabiParams& p) {
    const double a = 1.0 / (2.0 * p.t1);
    const double b = 1.0 / p.t2 - 1.0 / (2.0 * p.t1);
    Mat x = Mat::Zero(3, 3);
    x(0, 0) = x(1, 1) = std::sqrt(a);
    x(2, 2) = std::sqrt(b);
    return x;
}

SystemSpec rabi_system(const RabiParams& p) {
    ControlSpec ctrl;
    ctrl.omega = p.omega;
    ctrl.omega_d = p.omega;
    ctrl.pulse.p01 = p.p;
    ctrl.pulse.q01 = p.q;
    SystemSpec sys;
    sys.levels = 2;
    sys.h = drift_bloch(ctrl, Frame::rotating, 2);
    sys.h_dissipative = drift_bloch(ctrl, Frame::lab, 2);
    sys.coupling.x_cols = rabi_x(p);
    sys.beta = 1.0 / p.kT;
    sys.control = ctrl;
    return sys;
}

TrajectoryDataset gen_rabi(const RabiParams& p) {
    const SystemSpec sys = rabi_system(p);
    TrajectoryDataset ds;
    ds.levels = 2;
    ds.units = "us, rad/us";
    ds.dissipative_shift = p.omega * number_bloch(2);
    ds.generator = {{"experiment", "rabi"}, {"omega", p.omega}, {"kT", p.kT}, {"t1", p.t1},
                    {"t2", p.t2},           {"p", p.p},         {"q", p.q},   {"t_end", p.t_end},
                    {"dt", p.dt}};
    TrajectoryRecord r;
    r.id = "rabi";
    r.levels = 2;
    r.initial_condition = ground_state(2);
    r.control = sys.control;
    r.t = uniform_grid(p.t_end, p.dt);
    r.v = simulate(sys, r.initial_condition, r.t, p.integrator);
    r.provenance = Provenance::synthetic_nonlinear;
    ds.records.push_back(std::move(r));
    return ds;
}

// ---------------------------------------------------------------- experimental

void ConfusionMatrix::validate() const {
    if (c.rows() != c.cols() || c.rows() < 2) throw ValidationError("confusion matrix must be square");
    if (c.minCoeff() < 0.0) throw ValidationError("confusion matrix has negative entries");
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
        if (std::abs(c.row(i).sum() - 1.0) > kConfusionRowTol) {
            throw ValidationError("confusion matrix row " + std::to_string(i) + " does not sum to 1");
        }
    }
    Eigen::FullPivLU<Mat> lu(c);
    if (!lu.isInvertible() || std::abs(lu.determinant()) < 1e-12) {
        throw ValidationError("confusion matrix is singular");
    }
}

Vec ConfusionMatrix::correct(const Vec& p_raw) const {
    if (p_raw.size() != c.rows()) throw DimensionError("population vector does not match confusion matrix");
    return c.transpose().fullPivLu().solve(p_raw);
}

ConfusionMatrix device_confusion() {
    ConfusionMatrix cm;
    cm.c.resize(3, 3);
    cm.c << 0.988875, 0.010875, 0.00025, 0.054875, 0.936375, 0.00875, 0.016750, 0.042625, 0.94063;
    return cm;
}

Vec project_to_simplex(const Vec& p) {
    Vec q = p.cwiseMax(0.0).cwiseMin(1.0);
    const double s = q.sum();
    if (!(s > 0.0)) throw DataError("populations vanish after clamping");
    return q / s;
}

PopulationTable read_population_csv(const fs::path& path) {
    const auto [header, rows] = read_numeric_csv(path);
    auto col = [&](const std::string& name) -> int {
        const auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : static_cast<int>(it - header.begin());
    };
    if (col("t") < 0) throw DataError(path.string() + ": missing column t");
    PopulationTable tab;
    for (const auto& row : rows) tab.t.push_back(row[static_cast<std::size_t>(col("t"))]);
    auto basis = [&](char b) {
        std::vector<int> idx;
        for (int k = 0;; ++k) {
            const int c = col(std::string("P_") + b + std::to_string(k));
            if (c < 0) break;
            idx.push_back(c);
        }
        if (idx.empty()) throw DataError(path.string() + ": missing column P_" + std::string(1, b) + "0");
        const std::size_t k = std::max<std::size_t>(idx.size(), 2);
        Mat m = Mat::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(k));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t j = 0; j < idx.size(); ++j)
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][static_cast<std::size_t>(idx[j])];
            if (idx.size() == 1) m(static_cast<Eigen::Index>(i), 1) = 1.0 - m(static_cast<Eigen::Index>(i), 0);
        }
        return m;
    };
    tab.px = basis('x');
    tab.py = basis('y');
    tab.pz = basis('z');
    return tab;
}

ConfusionMatrix read_confusion_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        const auto j = nlohmann::json::parse(in);
        const auto rows = j.at("confusion").get<std::vector<std::vector<double>>>();
        ConfusionMatrix cm;
        cm.c.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.size()) throw DataError("confusion matrix must be square");
            for (std::size_t k = 0; k < rows.size(); ++k)
                cm.c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
        }
        cm.validate();
        return cm;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

TrajectoryRecord ingest_experimental(const PopulationTable& table, const ConfusionMatrix& cm,
                                     const std::string& id) {
    cm.validate();
    const auto k = cm.c.rows();
    const auto n = static_cast<Eigen::Index>(table.t.size());
    TrajectoryRecord r;
    r.id = id;
    r.levels = 2;
    r.t = table.t;
    r.v.resize(n, 3);
    r.provenance = Provenance::experimental;
    const Mat* bases[3] = {&table.px, &table.py, &table.pz};
    for (int b = 0; b < 3; ++b) {
        const Mat& m = *bases[b];
        if (m.rows() != n) throw DataError("population table: column length mismatch");
        if (m.cols() > k) throw DataError("population table has more outcomes than the confusion matrix");
        for (Eigen::Index i = 0; i < n; ++i) {
            Vec raw = Vec::Zero(k);
            raw.head(m.cols()) = m.row(i).transpose();
            const Vec p = project_to_simplex(cm.correct(raw));
            r.v(i, b) = 2.0 * p[0] - 1.0;
        }
    }
    r.initial_condition = r.v.row(0).transpose();
    r.validate();
    return r;
}

TrajectoryDataset add_noise(const TrajectoryDataset& ds, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw ValidationError("add_noise: sigma must be non-negative");
    TrajectoryDataset out = ds;
    if (sigma == 0.0) return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, sigma);
    for (auto& r : out.records) {
        for (Eigen::Index i = 0; i < r.v.rows(); ++i)
            for (Eigen::Index j = 0; j < r.v.cols(); ++j)
                r.v(i, j) = std::clamp(r.v(i, j) + nd(rng), -1.0, 1.0);
    }
    out.generator["noise_sigma"] = sigma;
    out.generator["noise_seed"] = seed;
    return out;
}

} // namespace thermoq
