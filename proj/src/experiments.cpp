#include "thermoq/experiments.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "thermoq/errors.hpp"
#include "thermoq/log.hpp"

namespace thermoq {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Experiment e) {
    switch (e) {
    case Experiment::two_level: return "two-level";
    case Experiment::two_level_lindblad: return "two-level-lindblad";
    case Experiment::qutrit: return "qutrit";
    case Experiment::experimental: return "experimental";
    }
    return "?";
}

Experiment experiment_from_string(const std::string& s) {
    for (Experiment e : {Experiment::two_level, Experiment::two_level_lindblad, Experiment::qutrit,
                         Experiment::experimental}) {
        if (to_string(e) == s) return e;
    }
    throw ConfigError("unknown experiment '" + s + "'");
}

// ---------------------------------------------------------------- configuration

RunConfig default_config(Experiment e) {
    RunConfig c;
    c.experiment = e;
    switch (e) {
    case Experiment::two_level:
        break;
    case Experiment::two_level_lindblad:
        // Relaxation to the pole needs a longer horizon than thermal decay.
        c.train.train_window = 25.0;
        break;
    case Experiment::qutrit:
        c.train.train_window = 12.0;
        c.qutrit.t_end = 12.0;
        break;
    case Experiment::experimental:
        c.train.optimizer = OptimizerKind::lbfgs;
        c.train.continuation_step = 50;
        c.train.train_window = 15.0;
        c.rabi.t_end = 40.0;
        break;
    }
    return c;
}

namespace {

// Reads the keys of `j` into fields; any key without a reader is an error.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
    }
    ~Section() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError(name_ + ": unknown key '" + k + "'");
        }
    }
    template <typename T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(name_ + "." + key + ": " + e.what());
        }
    }
    void read_path(const char* key, fs::path& out) {
        std::string s = out.string();
        read(key, s);
        out = s;
    }
    const json* sub(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

void read_integrator(const json& j, const std::string& name, IntegratorConfig& c) {
    Section s(j, name);
    s.read("rel_tol", c.rel_tol);
    s.read("abs_tol", c.abs_tol);
    s.read("max_step", c.max_step);
    s.read("initial_step", c.initial_step);
    s.read("max_steps", c.max_steps);
}

json integrator_json(const IntegratorConfig& c) {
    return {{"rel_tol", c.rel_tol}, {"abs_tol", c.abs_tol}, {"max_step", c.max_step},
            {"initial_step", c.initial_step}, {"max_steps", c.max_steps}};
}

void validate(const RunConfig& c) {
    const TrainConfig& t = c.train;
    if (!(t.adam_lr > 0.0)) throw ConfigError("train.adam_lr must be positive");
    if (t.continuation_step < 1) throw ConfigError("train.continuation_step must be positive");
    if (t.lbfgs_history < 1) throw ConfigError("train.lbfgs_history must be positive");
    if (t.max_iters_first < 0 || t.max_iters_rest < 0 || t.final_lbfgs_iters < 0)
        throw ConfigError("train iteration counts must be >= 0");
    if (t.train_window < 0.0) throw ConfigError("train.train_window must be >= 0");
    if (t.tikhonov_lambda < 0.0) throw ConfigError("train.tikhonov_lambda must be >= 0");
    if (!(t.substep_scale > 0.0)) throw ConfigError("train.substep_scale must be positive");
    for (const IntegratorConfig* ic : {&t.integrator, &c.integrator}) {
        if (!(ic->rel_tol > 0.0) || !(ic->abs_tol > 0.0)) throw ConfigError("integrator tolerances must be positive");
    }
    if (!(c.two_level.dt > 0.0) || !(c.two_level.t_end > 0.0)) throw ConfigError("two_level grid is invalid");
    if (c.two_level.n_train < 1 || c.two_level.n_test < 0) throw ConfigError("two_level counts are invalid");
    if (!(c.qutrit.dt > 0.0) || !(c.qutrit.t_end > 0.0)) throw ConfigError("qutrit grid is invalid");
    if (c.qutrit.amplitudes.empty()) throw ConfigError("qutrit.amplitudes is empty");
    if (c.qutrit_eval.n_controls < 1) throw ConfigError("qutrit_eval.n_controls must be positive");
    if (!(c.qutrit_eval.omega_lo < c.qutrit_eval.omega_hi)) throw ConfigError("qutrit_eval needs omega_lo < omega_hi");
    if (!(c.rabi.dt > 0.0) || !(c.rabi.t_end > 0.0)) throw ConfigError("rabi grid is invalid");
    if (c.experimental.noise_sigma < 0.0) throw ConfigError("experimental.noise_sigma must be >= 0");
    if (c.sweep.p.empty() != c.sweep.q.empty()) throw ConfigError("sweep needs both p and q values");
}

} // namespace

RunConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    std::string tag = "two-level";
    if (j.contains("experiment")) {
        if (!j.at("experiment").is_string()) throw ConfigError("experiment must be a string");
        tag = j.at("experiment").get<std::string>();
    }
    RunConfig c = default_config(experiment_from_string(tag));
    {
        Section s(j, "config");
        s.read("experiment", tag);
        s.read("seed", c.seed);
        s.read_path("dataset_dir", c.dataset_dir);
        s.read_path("model_path", c.model_path);
        s.read_path("out_dir", c.out_dir);
        s.read("overlays", c.overlays);
        if (const json* t = s.sub("train")) {
            Section ts(*t, "train");
            std::string opt = to_string(c.train.optimizer);
            ts.read("optimizer", opt);
            try {
                c.train.optimizer = optimizer_from_string(opt);
            } catch (const ValidationError& e) {
                throw ConfigError(e.what());
            }
            ts.read("adam_lr", c.train.adam_lr);
            ts.read("lbfgs_history", c.train.lbfgs_history);
            ts.read("continuation_step", c.train.continuation_step);
            ts.read("first_window", c.train.first_window);
            ts.read("start_increment", c.train.start_increment);
            ts.read("max_iters_first", c.train.max_iters_first);
            ts.read("max_iters_rest", c.train.max_iters_rest);
            ts.read("final_lbfgs_iters", c.train.final_lbfgs_iters);
            ts.read("tikhonov_lambda", c.train.tikhonov_lambda);
            ts.read("train_window", c.train.train_window);
            ts.read("substep_scale", c.train.substep_scale);
            ts.read("grad_tol", c.train.grad_tol);
            ts.read("learn_h", c.train.learn_h);
            ts.read("learn_x", c.train.learn_x);
            ts.read("learn_network", c.train.learn_network);
            if (const json* ic = ts.sub("integrator")) read_integrator(*ic, "train.integrator", c.train.integrator);
        }
        if (const json* ic = s.sub("integrator")) read_integrator(*ic, "integrator", c.integrator);
        if (const json* i = s.sub("init")) {
            Section is(*i, "init");
            is.read("x_sigma", c.init.x_sigma);
            is.read("net_scale", c.init.net_scale);
            is.read("x_perturb", c.init.x_perturb);
            is.read("h_perturb", c.init.h_perturb);
            is.read_path("checkpoint", c.init.checkpoint);
        }
        if (const json* t = s.sub("two_level")) {
            Section ts(*t, "two_level");
            ts.read("omega", c.two_level.omega);
            ts.read("gamma1", c.two_level.gamma1);
            ts.read("kT", c.two_level.kT);
            ts.read("t_end", c.two_level.t_end);
            ts.read("dt", c.two_level.dt);
            ts.read("n_train", c.two_level.n_train);
            ts.read("n_test", c.two_level.n_test);
        }
        if (const json* q = s.sub("qutrit")) {
            Section qs(*q, "qutrit");
            qs.read("omega", c.qutrit.omega);
            qs.read("xi", c.qutrit.xi);
            qs.read("omega_d", c.qutrit.omega_d);
            qs.read("beta", c.qutrit.beta);
            qs.read("offset", c.qutrit.offset);
            qs.read("amplitudes", c.qutrit.amplitudes);
            qs.read("t_end", c.qutrit.t_end);
            qs.read("dt", c.qutrit.dt);
        }
        if (const json* q = s.sub("qutrit_eval")) {
            Section qs(*q, "qutrit_eval");
            qs.read("n_controls", c.qutrit_eval.n_controls);
            qs.read("t_end", c.qutrit_eval.t_end);
            qs.read("omega_lo", c.qutrit_eval.omega_lo);
            qs.read("omega_hi", c.qutrit_eval.omega_hi);
            qs.read("t_train", c.qutrit_eval.t_train);
        }
        if (const json* r = s.sub("rabi")) {
            Section rs(*r, "rabi");
            rs.read("omega", c.rabi.omega);
            rs.read("kT", c.rabi.kT);
            rs.read("t1", c.rabi.t1);
            rs.read("t2", c.rabi.t2);
            rs.read("p", c.rabi.p);
            rs.read("q", c.rabi.q);
            rs.read("t_end", c.rabi.t_end);
            rs.read("dt", c.rabi.dt);
        }
        if (const json* e = s.sub("experimental")) {
            Section es(*e, "experimental");
            es.read_path("populations", c.experimental.populations);
            es.read_path("confusion", c.experimental.confusion);
            es.read("noise_sigma", c.experimental.noise_sigma);
            es.read("slope_window", c.experimental.slope_window);
        }
        if (const json* g = s.sub("sweep")) {
            Section gs(*g, "sweep");
            gs.read("p", c.sweep.p);
            gs.read("q", c.sweep.q);
        }
    }
    c.two_level.integrator = c.qutrit.integrator = c.rabi.integrator = c.integrator;
    validate(c);
    return c;
}

json config_to_json(const RunConfig& c) {
    const TrainConfig& t = c.train;
    json j;
    j["experiment"] = to_string(c.experiment);
    j["seed"] = c.seed;
    j["dataset_dir"] = c.dataset_dir.string();
    j["model_path"] = c.model_path.string();
    j["out_dir"] = c.out_dir.string();
    j["overlays"] = c.overlays;
    j["train"] = {{"optimizer", to_string(t.optimizer)},
                  {"adam_lr", t.adam_lr},
                  {"lbfgs_history", t.lbfgs_history},
                  {"continuation_step", t.continuation_step},
                  {"first_window", t.first_window},
                  {"start_increment", t.start_increment},
                  {"max_iters_first", t.max_iters_first},
                  {"max_iters_rest", t.max_iters_rest},
                  {"final_lbfgs_iters", t.final_lbfgs_iters},
                  {"tikhonov_lambda", t.tikhonov_lambda},
                  {"train_window", t.train_window},
                  {"substep_scale", t.substep_scale},
                  {"grad_tol", t.grad_tol},
                  {"learn_h", t.learn_h},
                  {"learn_x", t.learn_x},
                  {"learn_network", t.learn_network},
                  {"integrator", integrator_json(t.integrator)}};
    j["integrator"] = integrator_json(c.integrator);
    j["init"] = {{"x_sigma", c.init.x_sigma},     {"net_scale", c.init.net_scale},
                 {"x_perturb", c.init.x_perturb}, {"h_perturb", c.init.h_perturb},
                 {"checkpoint", c.init.checkpoint.string()}};
    j["two_level"] = {{"omega", c.two_level.omega}, {"gamma1", c.two_level.gamma1},
                      {"kT", c.two_level.kT},       {"t_end", c.two_level.t_end},
                      {"dt", c.two_level.dt},       {"n_train", c.two_level.n_train},
                      {"n_test", c.two_level.n_test}};
    j["qutrit"] = {{"omega", c.qutrit.omega},   {"xi", c.qutrit.xi},
                   {"omega_d", c.qutrit.omega_d}, {"beta", c.qutrit.beta},
                   {"offset", c.qutrit.offset}, {"amplitudes", c.qutrit.amplitudes},
                   {"t_end", c.qutrit.t_end},   {"dt", c.qutrit.dt}};
    j["qutrit_eval"] = {{"n_controls", c.qutrit_eval.n_controls}, {"t_end", c.qutrit_eval.t_end},
                        {"omega_lo", c.qutrit_eval.omega_lo},     {"omega_hi", c.qutrit_eval.omega_hi},
                        {"t_train", c.qutrit_eval.t_train}};
    j["rabi"] = {{"omega", c.rabi.omega}, {"kT", c.rabi.kT}, {"t1", c.rabi.t1},       {"t2", c.rabi.t2},
                 {"p", c.rabi.p},         {"q", c.rabi.q},   {"t_end", c.rabi.t_end}, {"dt", c.rabi.dt}};
    j["experimental"] = {{"populations", c.experimental.populations.string()},
                         {"confusion", c.experimental.confusion.string()},
                         {"noise_sigma", c.experimental.noise_sigma},
                         {"slope_window", c.experimental.slope_window}};
    j["sweep"] = {{"p", c.sweep.p}, {"q", c.sweep.q}};
    return j;
}

// ---------------------------------------------------------------- generation

TrajectoryDataset generate(const RunConfig& cfg) {
    switch (cfg.experiment) {
    case Experiment::two_level: return gen_two_level(cfg.two_level, cfg.seed);
    case Experiment::two_level_lindblad: return gen_two_level_lindblad(cfg.two_level, cfg.seed);
    case Experiment::qutrit: return gen_qutrit(cfg.qutrit, cfg.seed);
    case Experiment::experimental: {
        if (!cfg.experimental.populations.empty()) {
            const ConfusionMatrix cm = cfg.experimental.confusion.empty()
                                           ? device_confusion()
                                           : read_confusion_json(cfg.experimental.confusion);
            TrajectoryDataset ds;
            ds.levels = 2;
            ds.units = "us, rad/us";
            ds.dissipative_shift = cfg.rabi.omega * number_bloch(2);
            ds.generator = {{"experiment", "experimental"},
                            {"populations", cfg.experimental.populations.string()},
                            {"omega", cfg.rabi.omega}};
            ds.records.push_back(ingest_experimental(read_population_csv(cfg.experimental.populations), cm));
            return ds;
        }
        // Synthetic stand-in: the drive is constant in the rotating frame and
        // is learned as part of h, so records carry no control.
        TrajectoryDataset ds = gen_rabi(cfg.rabi);
        for (auto& r : ds.records) r.control.reset();
        return add_noise(ds, cfg.experimental.noise_sigma, cfg.seed);
    }
    }
    throw ConfigError("unknown experiment");
}

LearnableModel initial_model(const RunConfig& cfg, const TrajectoryDataset& ds) {
    if (!cfg.init.checkpoint.empty()) {
        std::ifstream in(cfg.init.checkpoint);
        if (!in) throw DataError("cannot open checkpoint " + cfg.init.checkpoint.string());
        try {
            return model_from_json(json::parse(in));
        } catch (const json::exception& e) {
            throw DataError(cfg.init.checkpoint.string() + ": " + e.what());
        }
    }
    // The initialization stream is separate from the data stream.
    std::mt19937_64 rng(cfg.seed ^ 0x5bd1e9955bd1e995ULL);
    switch (cfg.experiment) {
    case Experiment::two_level:
    case Experiment::two_level_lindblad:
        return LearnableModel::initial(2, 1.0 / cfg.two_level.kT, rng, cfg.init.x_sigma, cfg.init.net_scale);
    case Experiment::qutrit: {
        const QutritParams& p = cfg.qutrit;
        LearnableModel m = LearnableModel::initial(3, p.beta, rng, cfg.init.x_sigma, cfg.init.net_scale);
        const SystemSpec truth = qutrit_system(p, qutrit_control(p, 0.0));
        std::normal_distribution<double> hn(0.0, cfg.init.h_perturb), xn(0.0, cfg.init.x_perturb);
        m.h = truth.h;
        m.h[m.dim() - 1] += hn(rng);
        m.x_hat = psd_cholesky(truth.coupling.gamma());
        for (int i = 0; i < m.dim(); ++i)
            for (int j = 0; j <= i; ++j) m.x_hat(i, j) += xn(rng);
        m.dissipative_shift = ds.dissipative_shift;
        return m;
    }
    case Experiment::experimental: {
        // Prior from the nominal pulse amplitudes, T1, T2 and zero detuning.
        LearnableModel m = LearnableModel::initial(2, 1.0 / cfg.rabi.kT, rng, cfg.init.x_sigma, cfg.init.net_scale);
        // Records carry no control, so the nominal constant drive starts inside h.
        const SystemSpec nominal = rabi_system(cfg.rabi);
        m.h = hamiltonian_at(*nominal.control, 0.0, Frame::rotating, 2);
        m.x_hat = rabi_x(cfg.rabi);
        m.dissipative_shift = ds.dissipative_shift;
        return m;
    }
    }
    throw ConfigError("unknown experiment");
}

// ---------------------------------------------------------------- evaluation

void write_csv(const fs::path& path, const std::vector<std::string>& header, const std::vector<Vec>& columns) {
    if (header.size() != columns.size()) throw DimensionError("write_csv: header and columns differ");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "," : "") << header[k];
    out << '\n';
    const Eigen::Index rows = columns.empty() ? 0 : columns.front().size();
    char buf[32];
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (std::size_t k = 0; k < columns.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", columns[k][i]);
            out << (k ? "," : "") << buf;
        }
        out << '\n';
    }
}

double tail_slope(const std::vector<double>& t, const Vec& y, double t_from) {
    double n = 0.0, st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] < t_from) continue;
        const double yi = y[static_cast<Eigen::Index>(i)];
        n += 1.0;
        st += t[i];
        sy += yi;
        stt += t[i] * t[i];
        sty += t[i] * yi;
    }
    const double den = n * stt - st * st;
    if (n < 2.0 || den <= 0.0) throw ValidationError("tail_slope: fewer than two samples in the window");
    return (n * sty - st * sy) / den;
}

namespace {

Vec to_vec(const std::vector<double>& t) { return Eigen::Map<const Vec>(t.data(), static_cast<Eigen::Index>(t.size())); }

void write_overlay(const fs::path& path, const std::vector<double>& t, const Mat& pred, const Mat& data) {
    std::vector<std::string> header{"t"};
    std::vector<Vec> cols{to_vec(t)};
    for (Eigen::Index k = 0; k < pred.cols(); ++k) {
        header.push_back("pred_v" + std::to_string(k + 1));
        cols.push_back(pred.col(k));
    }
    for (Eigen::Index k = 0; k < data.cols(); ++k) {
        header.push_back("data_v" + std::to_string(k + 1));
        cols.push_back(data.col(k));
    }
    write_csv(path, header, cols);
}

void write_bands(const fs::path& path, const std::vector<double>& t, const DistanceBands& b) {
    write_csv(path, {"t", "mean", "min", "max"}, {to_vec(t), b.mean, b.min, b.max});
}

// Mean over time of a curve restricted to t <= t_max.
double time_mean(const std::vector<double>& t, const Vec& y, double t_max) {
    double s = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] > t_max) break;
        s += y[static_cast<Eigen::Index>(i)];
        ++n;
    }
    return n ? s / n : 0.0;
}

double head_max(const std::vector<double>& t, const Vec& y, double t_max) {
    double m = 0.0;
    for (std::size_t i = 0; i < t.size() && t[i] <= t_max; ++i) m = std::max(m, y[static_cast<Eigen::Index>(i)]);
    return m;
}

EvalReport evaluate_two_level(const RunConfig& cfg, const LearnableModel& model, const TrajectoryDataset& ds,
                              const fs::path& out) {
    EvalReport rep;
    const auto sc = structure_constants(2);
    const TwoLevelParams& p = cfg.two_level;
    auto test = ds.split("test");
    if (test.empty()) test = ds.split("train");
    if (test.empty()) throw DataError("dataset has no records");

    std::vector<Vec> curves;
    std::vector<Mat> preds;
    std::vector<Vec> states;
    for (const TrajectoryRecord* r : test) {
        Mat pred = predict(model, *r, cfg.integrator);
        curves.push_back(trace_distance_curve(pred, r->v, *sc));
        for (Eigen::Index i = 0; i < r->v.rows(); ++i) states.push_back(r->v.row(i).transpose());
        preds.push_back(std::move(pred));
    }
    const DistanceBands b = bands(curves);
    const auto& t = test.front()->t;
    rep.metrics["test_trajectories"] = test.size();
    rep.metrics["trace_distance_mean_max"] = b.mean.maxCoeff();
    rep.metrics["trace_distance_mean_avg"] = b.mean.mean();
    rep.metrics["trace_distance_max"] = b.max.maxCoeff();
    const Vec viol = psd_violation(preds, *sc);
    rep.metrics["psd_violation_max"] = viol.maxCoeff();

    // Operator recovery is only meaningful against the thermodynamic truth.
    if (cfg.experiment == Experiment::two_level) {
        const OperatorErrors oe = operator_errors(model, two_level_h(p), two_level_x(p));
        const OperatorErrors op = operator_errors(model, two_level_h(p), two_level_x(p), true);
        rep.metrics["h_rel"] = oe.h_rel;
        rep.metrics["x_rel"] = oe.x_rel;
        rep.metrics["x_rel_orthogonal"] = op.x_rel;
        rep.metrics["nonlinear_term_error"] = nonlinear_term_error(model, two_level_h(p), two_level_x(p), states);
    }
    if (!out.empty()) {
        write_bands(out / "trace_distance.csv", t, b);
        write_csv(out / "psd_violation.csv", {"t", "v_psd"}, {to_vec(t), viol});
        for (int k = 0; k < std::min<int>(cfg.overlays, static_cast<int>(test.size())); ++k) {
            write_overlay(out / ("overlay_" + test[static_cast<std::size_t>(k)]->id + ".csv"), t,
                          preds[static_cast<std::size_t>(k)], test[static_cast<std::size_t>(k)]->v);
        }
    }
    return rep;
}

EvalReport evaluate_qutrit(const RunConfig& cfg, const LearnableModel& model, const fs::path& out) {
    EvalReport rep;
    const QutritParams& p = cfg.qutrit;
    const QutritEval& ev = cfg.qutrit_eval;
    const auto sc = structure_constants(3);
    // Evaluation controls use their own stream so that every run sees the same set.
    const auto controls = random_control_set(ev.n_controls, ev.omega_lo, ev.omega_hi, p, cfg.seed + 7919);
    const auto t = uniform_grid(ev.t_end, p.dt);
    const SystemSpec truth = qutrit_system(p, controls.front());
    const ExpectedDistance e = expected_trace_distance(model, truth, controls, ground_state(3), t, cfg.integrator);
    const Vec viol = psd_violation(e.predicted, *sc);
    rep.metrics["controls"] = ev.n_controls;
    rep.metrics["expected_trace_distance_max"] = e.bands.mean.maxCoeff();
    rep.metrics["expected_trace_distance_avg"] = e.bands.mean.mean();
    rep.metrics["trace_distance_max"] = e.bands.max.maxCoeff();
    rep.metrics["psd_violation_max"] = viol.maxCoeff();
    rep.metrics["psd_violation_fraction"] = psd_violation_fraction(e.predicted, *sc);
    const double t_train = cfg.train.train_window > 0.0 ? cfg.train.train_window : p.t_end;
    rep.metrics["expected_trace_distance_train_max"] = head_max(t, e.bands.mean, t_train);
    const OperatorErrors oe = operator_errors(model, truth.h, qutrit_x(), true);
    rep.metrics["h_rel"] = oe.h_rel;
    rep.metrics["x_rel_orthogonal"] = oe.x_rel;
    if (!out.empty()) {
        write_bands(out / "trace_distance.csv", t, e.bands);
        write_csv(out / "psd_violation.csv", {"t", "v_psd"}, {to_vec(t), viol});
        for (int k = 0; k < std::min<int>(cfg.overlays, ev.n_controls); ++k) {
            write_overlay(out / ("overlay_control_" + std::to_string(k) + ".csv"), t,
                          e.predicted[static_cast<std::size_t>(k)], e.reference[static_cast<std::size_t>(k)]);
        }
    }
    return rep;
}

EvalReport evaluate_experimental(const RunConfig& cfg, const LearnableModel& model, const TrajectoryDataset& ds,
                                 const fs::path& out) {
    EvalReport rep;
    const auto sc = structure_constants(2);
    if (ds.records.empty()) throw DataError("dataset has no records");
    const TrajectoryRecord& r = ds.records.front();
    const Mat pred = predict(model, r, cfg.integrator);
    const Vec cum = cumulative_trace_distance(pred, r.v, *sc);
    const double t_end = r.t.back();
    rep.metrics["cumulative_final"] = cum[cum.size() - 1];
    rep.metrics["cumulative_slope"] = tail_slope(r.t, cum, t_end - cfg.experimental.slope_window);
    rep.metrics["slope_window"] = cfg.experimental.slope_window;
    rep.metrics["h"] = std::vector<double>(model.h.data(), model.h.data() + model.h.size());
    rep.metrics["psd_violation_max"] = psd_violation(pred, *sc).maxCoeff();
    if (cfg.experimental.populations.empty()) {
        // The stand-in has a noiseless reference.
        TrajectoryDataset clean = gen_rabi(cfg.rabi);
        const Vec cc = cumulative_trace_distance(pred, clean.records.front().v, *sc);
        rep.metrics["cumulative_clean_final"] = cc[cc.size() - 1];
        rep.metrics["trace_distance_clean_avg"] = time_mean(r.t, trace_distance_curve(pred, clean.records.front().v, *sc), t_end);
    }
    if (!out.empty()) {
        write_csv(out / "cumulative_trace_distance.csv", {"t", "cumulative"}, {to_vec(r.t), cum});
        write_overlay(out / ("overlay_" + r.id + ".csv"), r.t, pred, r.v);
    }
    return rep;
}

} // namespace

EvalReport evaluate(const RunConfig& cfg, const LearnableModel& model, const TrajectoryDataset& ds,
                    const fs::path& out_dir) {
    if (!out_dir.empty()) fs::create_directories(out_dir);
    switch (cfg.experiment) {
    case Experiment::two_level:
    case Experiment::two_level_lindblad: return evaluate_two_level(cfg, model, ds, out_dir);
    case Experiment::qutrit: return evaluate_qutrit(cfg, model, out_dir);
    case Experiment::experimental: return evaluate_experimental(cfg, model, ds, out_dir);
    }
    throw ConfigError("unknown experiment");
}

} // namespace thermoq
