#include "thermoq/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>

#include <Eigen/Eigenvalues>

#include "thermoq/errors.hpp"
#include "thermoq/log.hpp"

namespace thermoq {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "lbfgs"; }

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "lbfgs") return OptimizerKind::lbfgs;
    throw ValidationError("unknown optimizer '" + s + "'");
}

namespace {

// Bound on the drive's contribution to |h(t)| for a record.
double drive_bound(const TrajectoryRecord& rec, const DriveBasis& db) {
    if (!rec.control) return 0.0;
    const PulseSpec& p = rec.control->pulse;
    const double pmax = std::abs(p.p01) + std::sqrt(2.0) * std::abs(p.p12);
    const double qmax = std::abs(p.q01) + std::sqrt(2.0) * std::abs(p.q12);
    return pmax * db.p_dir.norm() + qmax * db.q_dir.norm();
}

struct Scratch {
    Vec k1, k2, k3, k4, tmp;
};

} // namespace

// ---------------------------------------------------------------- TrajectoryLoss

struct TrajectoryLossImpl;

TrajectoryLoss::TrajectoryLoss(const LearnableModel& prototype,
                               std::vector<const TrajectoryRecord*> records, const TrainConfig& cfg)
    : model_(prototype), records_(std::move(records)), cfg_(cfg) {
    if (records_.empty()) throw ValidationError("TrajectoryLoss: no training records");
    for (const auto* r : records_) {
        r->validate();
        if (r->levels != model_.levels) throw DimensionError("TrajectoryLoss: record N differs from model N");
    }
    if (!(cfg_.substep_scale > 0.0)) throw ValidationError("substep_scale must be positive");
    const auto d = static_cast<Eigen::Index>(model_.dim());
    mask_ = Vec::Ones(static_cast<Eigen::Index>(model_.parameter_count()));
    if (!cfg_.learn_h) mask_.head(d).setZero();
    if (!cfg_.learn_x) mask_.segment(d, d * (d + 1) / 2).setZero();
    if (!cfg_.learn_network) {
        mask_.segment(d + d * (d + 1) / 2, static_cast<Eigen::Index>(model_.mlp.parameter_count())).setZero();
    }
    weight_mask_ = model_.weight_mask();
    window_ = max_window();
}

int TrajectoryLoss::max_window() const {
    int best = 0;
    for (const auto* r : records_) {
        int n = static_cast<int>(r->t.size()) - 1;
        if (cfg_.train_window > 0.0) {
            n = 0;
            while (n + 1 < static_cast<int>(r->t.size()) &&
                   r->t[static_cast<std::size_t>(n + 1)] - r->t[0] <= cfg_.train_window * (1.0 + 1e-12)) {
                ++n;
            }
        }
        best = std::max(best, n);
    }
    return best;
}

void TrajectoryLoss::set_window(int points) {
    if (points < 1) throw ValidationError("training window must contain at least one sample");
    window_ = std::min(points, max_window());
}

int TrajectoryLoss::points_for(const TrajectoryRecord& rec) const {
    int n = 0;
    while (n < window_ && n + 1 < static_cast<int>(rec.t.size()) &&
           (cfg_.train_window <= 0.0 ||
            rec.t[static_cast<std::size_t>(n + 1)] - rec.t[0] <= cfg_.train_window * (1.0 + 1e-12))) {
        ++n;
    }
    return n;
}

int TrajectoryLoss::substeps(const TrajectoryRecord& rec, double dt) const {
    static thread_local std::unique_ptr<DriveBasis> db;
    static thread_local int db_levels = 0;
    if (!db || db_levels != model_.levels) {
        db = std::make_unique<DriveBasis>(drive_basis(model_.levels));
        db_levels = model_.levels;
    }
    const double scale = std::max(1.0, model_.h.norm() + drive_bound(rec, *db));
    return std::max(1, static_cast<int>(std::ceil(dt * scale / cfg_.substep_scale - 1e-9)));
}

Mat TrajectoryLoss::rollout(const Vec& theta, const TrajectoryRecord& rec, int points) {
    model_.set_parameters(theta);
    ModelField field(model_);
    field.set_control(rec.control ? &*rec.control : nullptr);
    const int d = model_.dim();
    Mat out(points + 1, d);
    Vec y = rec.initial_condition;
    out.row(0) = y.transpose();
    Vec k1(d), k2(d), k3(d), k4(d), tmp(d);
    for (int i = 0; i < points; ++i) {
        const double t0 = rec.t[static_cast<std::size_t>(i)];
        const double span = rec.t[static_cast<std::size_t>(i + 1)] - t0;
        const int m = substeps(rec, span);
        const double h = span / m;
        for (int s = 0; s < m; ++s) {
            const double t = t0 + s * h;
            field.eval(t, y, k1);
            tmp = y + 0.5 * h * k1;
            field.eval(t + 0.5 * h, tmp, k2);
            tmp = y + 0.5 * h * k2;
            field.eval(t + 0.5 * h, tmp, k3);
            tmp = y + h * k3;
            field.eval(t + h, tmp, k4);
            y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out.row(i + 1) = y.transpose();
    }
    return out;
}

double TrajectoryLoss::record_loss(const TrajectoryRecord& rec, int points, Vec* grad) {
    // Called with model_ already holding the parameters.
    ModelField field(model_);
    field.set_control(rec.control ? &*rec.control : nullptr);
    const int d = model_.dim();
    const bool keep = grad != nullptr;
    stages_.clear();
    stage_t_.clear();
    stage_dt_.clear();
    std::vector<std::size_t> interval_end(static_cast<std::size_t>(points));
    std::vector<Vec> residual(static_cast<std::size_t>(points));

    Vec y = rec.initial_condition;
    Vec k1(d), k2(d), k3(d), k4(d), tmp(d);
    double sum = 0.0;
    for (int i = 0; i < points; ++i) {
        const double t0 = rec.t[static_cast<std::size_t>(i)];
        const double span = rec.t[static_cast<std::size_t>(i + 1)] - t0;
        const int m = substeps(rec, span);
        const double h = span / m;
        for (int s = 0; s < m; ++s) {
            const double t = t0 + s * h;
            if (keep) {
                stage_t_.push_back(t);
                stage_dt_.push_back(h);
                stages_.push_back(y);
            }
            field.eval(t, y, k1);
            tmp = y + 0.5 * h * k1;
            if (keep) stages_.push_back(tmp);
            field.eval(t + 0.5 * h, tmp, k2);
            tmp = y + 0.5 * h * k2;
            if (keep) stages_.push_back(tmp);
            field.eval(t + 0.5 * h, tmp, k3);
            tmp = y + h * k3;
            if (keep) stages_.push_back(tmp);
            field.eval(t + h, tmp, k4);
            y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        if (!y.allFinite()) return std::numeric_limits<double>::infinity();
        interval_end[static_cast<std::size_t>(i)] = stage_t_.size();
        residual[static_cast<std::size_t>(i)] = y - rec.v.row(i + 1).transpose();
        sum += residual[static_cast<std::size_t>(i)].squaredNorm();
    }
    const double value = sum / points;
    if (!keep) return value;

    const double scale = 1.0 / (static_cast<double>(records_.size()) * points);
    Vec ybar = Vec::Zero(d);
    Vec y0bar(d), gy(d), kb1(d), kb2(d), kb3(d), kb4(d);
    std::size_t sub = stage_t_.size();
    for (int i = points; i-- > 0;) {
        ybar += 2.0 * scale * residual[static_cast<std::size_t>(i)];
        const std::size_t begin = i == 0 ? 0 : interval_end[static_cast<std::size_t>(i - 1)];
        while (sub > begin) {
            --sub;
            const double t = stage_t_[sub];
            const double h = stage_dt_[sub];
            const Vec& s1 = stages_[4 * sub];
            const Vec& s2 = stages_[4 * sub + 1];
            const Vec& s3 = stages_[4 * sub + 2];
            const Vec& s4 = stages_[4 * sub + 3];
            kb1 = (h / 6.0) * ybar;
            kb2 = (h / 3.0) * ybar;
            kb3 = kb2;
            kb4 = kb1;
            y0bar = ybar;
            gy.setZero();
            field.vjp(t + h, s4, kb4, gy, *grad);
            y0bar += gy;
            kb3 += h * gy;
            gy.setZero();
            field.vjp(t + 0.5 * h, s3, kb3, gy, *grad);
            y0bar += gy;
            kb2 += 0.5 * h * gy;
            gy.setZero();
            field.vjp(t + 0.5 * h, s2, kb2, gy, *grad);
            y0bar += gy;
            kb1 += 0.5 * h * gy;
            gy.setZero();
            field.vjp(t, s1, kb1, gy, *grad);
            y0bar += gy;
            ybar = y0bar;
        }
    }
    return value;
}

LossReport TrajectoryLoss::evaluate(const Vec& theta, Vec* grad) {
    model_.set_parameters(theta);
    LossReport rep;
    rep.per_trajectory = Vec::Zero(static_cast<Eigen::Index>(records_.size()));
    if (grad) *grad = Vec::Zero(theta.size());
    double mean = 0.0;
    for (std::size_t j = 0; j < records_.size(); ++j) {
        const int points = points_for(*records_[j]);
        if (points < 1) throw ValidationError("record " + records_[j]->id + " has no samples in the window");
        const double lj = record_loss(*records_[j], points, grad);
        if (!std::isfinite(lj)) {
            logger().debug("rollout of {} diverged", records_[j]->id);
            rep.finite = false;
            rep.total = std::numeric_limits<double>::infinity();
            if (grad) grad->setZero();
            return rep;
        }
        rep.per_trajectory[static_cast<Eigen::Index>(j)] = lj;
        mean += lj;
    }
    mean /= static_cast<double>(records_.size());
    const Vec w = theta.cwiseProduct(weight_mask_);
    rep.regularization = cfg_.tikhonov_lambda * w.squaredNorm();
    rep.total = mean + rep.regularization;
    if (grad) {
        *grad += 2.0 * cfg_.tikhonov_lambda * w;
        if (!grad->allFinite()) {
            for (Eigen::Index i = 0; i < grad->size(); ++i) {
                if (!std::isfinite((*grad)[i])) {
                    logger().warn("non-finite gradient entry at parameter {}", i);
                    break;
                }
            }
            rep.finite = false;
            rep.total = std::numeric_limits<double>::infinity();
            grad->setZero();
            return rep;
        }
        *grad = grad->cwiseProduct(mask_);
    }
    return rep;
}

Objective TrajectoryLoss::objective() {
    return [this](const Vec& x, Vec& g) { return evaluate(x, &g).total; };
}

LossReport loss(const LearnableModel& model, const std::vector<const TrajectoryRecord*>& records,
                const TrainConfig& cfg, int window) {
    TrajectoryLoss l(model, records, cfg);
    if (window > 0) l.set_window(window);
    return l.evaluate(model.parameters(), nullptr);
}

Vec gradient(const LearnableModel& model, const std::vector<const TrajectoryRecord*>& records,
             const TrainConfig& cfg, int window) {
    TrajectoryLoss l(model, records, cfg);
    if (window > 0) l.set_window(window);
    Vec g;
    const LossReport rep = l.evaluate(model.parameters(), &g);
    if (!rep.finite) throw IntegrationError("gradient: loss is not finite", 0.0);
    return g;
}

Mat predict(const LearnableModel& model, const TrajectoryRecord& rec, const IntegratorConfig& cfg) {
    ModelField field(model);
    field.set_control(rec.control ? &*rec.control : nullptr);
    return integrate([&field](double t, const Vec& v, Vec& out) { field.eval(t, v, out); },
                     rec.initial_condition, rec.t, cfg);
}

// ---------------------------------------------------------------- structure

bool StructuralReport::ok(double tol) const {
    return min_eigenvalue >= -tol && null_residual <= tol && pure_residual <= tol;
}

StructuralReport structural_check(const LearnableModel& model, std::mt19937_64& rng, int samples) {
    const auto sc = structure_constants(model.levels);
    const int n = model.levels;
    std::normal_distribution<double> nd;
    StructuralReport rep;
    rep.min_eigenvalue = std::numeric_limits<double>::infinity();
    for (int s = 0; s < samples; ++s) {
        CMat g(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) g(i, j) = Complex(nd(rng), nd(rng));
        CMat rho = g * g.adjoint();
        rho /= rho.trace().real();
        const Vec v = to_bloch(rho, *sc);
        const Mat m = M_theta(v, model);
        const double scale = std::max(1.0, m.norm());
        rep.min_eigenvalue =
            std::min(rep.min_eigenvalue, Eigen::SelfAdjointEigenSolver<Mat>(m).eigenvalues().minCoeff() / scale);
        Vec w = hermitian_to_coeffs(hermitian_log(rho), *sc).a;
        w /= std::max(1.0, w.norm());
        rep.null_residual = std::max(rep.null_residual, (m * w).norm() / scale);

        Eigen::VectorXcd psi = g.col(0);
        psi.normalize();
        const Vec p = to_bloch(psi * psi.adjoint(), *sc);
        const Mat l = op_L(p, *sc);
        rep.pure_residual = std::max(rep.pure_residual, (M_theta(p, model) - l.transpose() * l).norm());
    }
    return rep;
}

// ---------------------------------------------------------------- continuation

std::vector<int> continuation_windows(int full, const TrainConfig& cfg) {
    if (cfg.continuation_step < 1) throw ValidationError("continuation_step must be positive");
    std::vector<int> w;
    const int first = cfg.first_window > 0 ? cfg.first_window : cfg.continuation_step;
    for (int n = std::min(first, full);; n += cfg.continuation_step) {
        w.push_back(std::min(n, full));
        if (n >= full) break;
    }
    return w;
}

TrainResult train_continuation(const LearnableModel& init,
                               const std::vector<const TrajectoryRecord*>& records,
                               const TrainConfig& cfg, std::uint64_t seed,
                               const IncrementCallback& on_increment) {
    if (!(cfg.adam_lr > 0.0)) throw ValidationError("adam_lr must be positive");
    TrajectoryLoss objective(init, records, cfg);
    const int full = objective.max_window();
    if (full < 1) throw ValidationError("training data has no samples after the initial time");
    const std::vector<int> windows = continuation_windows(full, cfg);
    if (cfg.start_increment < 0 || cfg.start_increment >= static_cast<int>(windows.size())) {
        throw ValidationError("start_increment is outside the " + std::to_string(windows.size()) +
                              " increments");
    }

    TrainResult res;
    std::mt19937_64 rng(seed);
    Vec theta = init.parameters();
    LearnableModel model = init;
    const auto start = std::chrono::steady_clock::now();
    const Objective obj = objective.objective();
    LbfgsOptions lopts;
    lopts.history = cfg.lbfgs_history;

    const auto first = static_cast<std::size_t>(cfg.start_increment);
    double prev_window_loss = 0.0;
    if (first > 0) {
        objective.set_window(windows[first - 1]);
        prev_window_loss = objective.evaluate(theta, nullptr).total;
    }
    for (std::size_t k = first; k < windows.size(); ++k) {
        objective.set_window(windows[k]);
        const int iters = k == 0 ? cfg.max_iters_first : cfg.max_iters_rest;
        const int increment = static_cast<int>(k);
        auto cb = [&](int it, double f, double gn) {
            const double wall =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            res.history.push_back({increment, it, f, gn, wall});
            return true;
        };
        const MinimizeResult mr =
            cfg.optimizer == OptimizerKind::adam
                ? minimize_adam(obj, theta, cfg.adam_lr, iters, cfg.grad_tol, cb)
                : minimize_lbfgs(obj, theta, lopts, iters, cfg.grad_tol, cb);
        theta = mr.x;
        res.windows.push_back(windows[k]);
        res.window_loss.push_back(mr.f);

        double ratio = 1.0;
        double prev = mr.f;
        if (k > 0) {
            objective.set_window(windows[k - 1]);
            prev = objective.evaluate(theta, nullptr).total;
            ratio = prev / prev_window_loss;
            if (!handoff_ok(prev_window_loss, prev)) {
                logger().warn("increment {}: loss on the previous window grew by a factor {:.3f}", k, ratio);
            }
        }
        prev_window_loss = mr.f;
        res.handoff_loss.push_back(prev);
        res.handoff_ratio.push_back(ratio);

        model.set_parameters(theta);
        res.checks.push_back(structural_check(model, rng));
        if (!res.checks.back().ok()) {
            logger().warn("increment {}: structural check failed (min eig {:.3e}, null {:.3e}, pure {:.3e})",
                          k, res.checks.back().min_eigenvalue, res.checks.back().null_residual,
                          res.checks.back().pure_residual);
        }
        logger().info("increment {} / {}: window {} samples, loss {:.6e}, {} iterations", k + 1,
                      windows.size(), windows[k], mr.f, mr.iterations);
        if (on_increment) on_increment(increment, model);
    }
    if (cfg.final_lbfgs_iters > 0) {
        objective.set_window(full);
        const int increment = static_cast<int>(windows.size());
        const double before = objective.evaluate(theta, nullptr).total;
        auto cb = [&](int it, double f, double gn) {
            const double wall =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            res.history.push_back({increment, it, f, gn, wall});
            return true;
        };
        const MinimizeResult mr = minimize_lbfgs(obj, theta, lopts, cfg.final_lbfgs_iters, cfg.grad_tol, cb);
        theta = mr.x;
        res.windows.push_back(full);
        res.window_loss.push_back(mr.f);
        res.handoff_loss.push_back(mr.f);
        res.handoff_ratio.push_back(before > 0.0 ? mr.f / before : 1.0);
        model.set_parameters(theta);
        res.checks.push_back(structural_check(model, rng));
        logger().info("final L-BFGS on {} samples: loss {:.6e} -> {:.6e}, {} iterations", full, before, mr.f,
                      mr.iterations);
        if (on_increment) on_increment(increment, model);
    }
    res.model = model;
    return res;
}

void write_history_csv(const std::vector<HistoryRow>& history, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "increment,iteration,loss,grad_norm,wall_time\n";
    char buf[160];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.6f\n", r.increment, r.iteration, r.loss,
                      r.grad_norm, r.wall_time);
        out << buf;
    }
}

} // namespace thermoq
