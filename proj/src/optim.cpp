#include "thermoq/optim.hpp"

#include <algorithm>
#include <cmath>

#include "thermoq/log.hpp"

namespace thermoq {

AdamState::AdamState(Eigen::Index n, double learning_rate)
    : m(Vec::Zero(n)), v(Vec::Zero(n)), lr(learning_rate) {}

void step_adam(AdamState& s, Vec& x, const Vec& g) {
    ++s.step;
    s.m = s.beta1 * s.m + (1.0 - s.beta1) * g;
    s.v = s.beta2 * s.v + (1.0 - s.beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    x.array() -= s.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

Lbfgs::Lbfgs(LbfgsOptions opts) : opts_(opts) {}

void Lbfgs::reset() {
    s_.clear();
    y_.clear();
    rho_.clear();
}

Vec Lbfgs::direction(const Vec& g) const {
    if (s_.empty()) return -g / std::max(1.0, g.norm());
    Vec q = g;
    std::vector<double> alpha(s_.size());
    for (std::size_t i = s_.size(); i-- > 0;) {
        alpha[i] = rho_[i] * s_[i].dot(q);
        q -= alpha[i] * y_[i];
    }
    const double gamma = s_.back().dot(y_.back()) / y_.back().squaredNorm();
    q *= gamma;
    for (std::size_t i = 0; i < s_.size(); ++i) {
        const double beta = rho_[i] * y_[i].dot(q);
        q += (alpha[i] - beta) * s_[i];
    }
    return -q;
}

bool Lbfgs::line_search(const Objective& obj, const Vec& x, double f, const Vec& g, const Vec& dir,
                        Vec& x_new, double& f_new, Vec& g_new, int& evals) const {
    const double slope = g.dot(dir);
    if (!(slope < 0.0)) return false;
    double alpha = 1.0;
    for (int k = 0; k < opts_.max_backtracks; ++k) {
        x_new = x + alpha * dir;
        f_new = obj(x_new, g_new);
        ++evals;
        if (std::isfinite(f_new) && f_new < f && f_new <= f + opts_.c1 * alpha * slope) {
            if (opts_.secant_refine > 0.0) refine(obj, x, dir, slope, alpha, x_new, f_new, g_new, evals);
            return true;
        }
        // Minimizer of the quadratic through f, slope and f_new, safeguarded.
        double next = 0.5 * alpha;
        if (std::isfinite(f_new)) {
            const double denom = 2.0 * (f_new - f - slope * alpha);
            if (denom > 0.0) next = -slope * alpha * alpha / denom;
        }
        alpha = std::clamp(next, 0.1 * alpha, 0.5 * alpha);
    }
    return false;
}

void Lbfgs::refine(const Objective& obj, const Vec& x, const Vec& dir, double slope, double alpha,
                   Vec& x_new, double& f_new, Vec& g_new, int& evals) const {
    const double slope_new = g_new.dot(dir);
    if (std::abs(slope_new) <= opts_.secant_refine * std::abs(slope) || slope_new == slope) return;
    // Zero of the secant model of the directional derivative.
    const double a2 = alpha * slope / (slope - slope_new);
    if (!(a2 > 0.0) || !std::isfinite(a2) || a2 > 10.0 * alpha) return;
    Vec g2(x.size());
    const Vec x2 = x + a2 * dir;
    const double f2 = obj(x2, g2);
    ++evals;
    if (std::isfinite(f2) && f2 < f_new) {
        x_new = x2;
        f_new = f2;
        g_new = g2;
    }
}

Lbfgs::StepResult Lbfgs::step(const Objective& obj, Vec& x, double& f, Vec& g) {
    StepResult res;
    Vec x_new(x.size()), g_new(x.size());
    double f_new = 0.0;
    bool ok = line_search(obj, x, f, g, direction(g), x_new, f_new, g_new, res.evaluations);
    if (!ok && !s_.empty()) {
        logger().debug("L-BFGS line search failed; retrying along steepest descent");
        reset();
        res.fallback = true;
        ok = line_search(obj, x, f, g, direction(g), x_new, f_new, g_new, res.evaluations);
    }
    if (!ok) {
        logger().info("L-BFGS line search failed along steepest descent");
        return res;
    }
    const Vec s = x_new - x;
    const Vec y = g_new - g;
    const double sy = s.dot(y);
    if (sy > opts_.curvature_eps) {
        s_.push_back(s);
        y_.push_back(y);
        rho_.push_back(1.0 / sy);
        if (static_cast<int>(s_.size()) > opts_.history) {
            s_.pop_front();
            y_.pop_front();
            rho_.pop_front();
        }
    }
    x = x_new;
    f = f_new;
    g = g_new;
    res.accepted = true;
    return res;
}

MinimizeResult minimize_adam(const Objective& obj, const Vec& x0, double lr, int max_iters,
                             double grad_tol, const IterationCallback& cb) {
    AdamState state(x0.size(), lr);
    Vec x = x0;
    Vec g(x.size());
    MinimizeResult best{x0, obj(x0, g), 0};
    for (int it = 0; it < max_iters; ++it) {
        const double f = it == 0 ? best.f : obj(x, g);
        if (!std::isfinite(f)) {
            logger().warn("Adam: non-finite loss at iteration {}; stopping", it);
            break;
        }
        if (f < best.f) {
            best.f = f;
            best.x = x;
        }
        const double gn = g.norm();
        best.iterations = it + 1;
        if (cb && !cb(it, f, gn)) break;
        if (gn <= grad_tol) break;
        step_adam(state, x, g);
    }
    // The final update has not been scored yet.
    const double f_last = obj(x, g);
    if (std::isfinite(f_last) && f_last < best.f) {
        best.f = f_last;
        best.x = x;
    }
    return best;
}

MinimizeResult minimize_lbfgs(const Objective& obj, const Vec& x0, const LbfgsOptions& opts,
                              int max_iters, double grad_tol, const IterationCallback& cb) {
    Lbfgs opt(opts);
    MinimizeResult res{x0, 0.0, 0};
    Vec g(x0.size());
    res.f = obj(res.x, g);
    if (!std::isfinite(res.f)) {
        logger().warn("L-BFGS: initial loss is not finite");
        return res;
    }
    for (int it = 0; it < max_iters; ++it) {
        if (g.norm() <= grad_tol) break;
        const auto step = opt.step(obj, res.x, res.f, g);
        if (!step.accepted) break;
        res.iterations = it + 1;
        if (cb && !cb(it, res.f, g.norm())) break;
    }
    return res;
}

} // namespace thermoq
