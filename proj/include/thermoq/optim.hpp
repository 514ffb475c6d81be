#pragma once

#include <deque>
#include <functional>

#include "thermoq/types.hpp"

namespace thermoq {

// Returns f(x) and writes its gradient. May return a non-finite value to
// signal a failed evaluation.
using Objective = std::function<double(const Vec& x, Vec& grad)>;

struct AdamState {
    Vec m;
    Vec v;
    long step = 0;
    double lr = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState(Eigen::Index n, double learning_rate);
};

// Bias-corrected Adam update of x in place.
void step_adam(AdamState& state, Vec& x, const Vec& grad);

struct LbfgsOptions {
    int history = 10;
    double c1 = 1e-4;
    double curvature_eps = 1e-10;
    int max_backtracks = 40;
    // After an Armijo point is found, one extra trial at the secant zero of the
    // directional derivative when |phi'(alpha)| > secant_refine |phi'(0)|
    // (0 disables).
    double secant_refine = 1e-3;
};

class Lbfgs {
public:
    explicit Lbfgs(LbfgsOptions opts = {});

    struct StepResult {
        bool accepted = false; // a point with sufficient decrease was found
        bool fallback = false; // steepest descent was used after a failed search
        int evaluations = 0;
    };

    // Two-loop direction; scaled steepest descent when the history is empty.
    Vec direction(const Vec& grad) const;
    // One iteration: direction, Armijo backtracking, history update. On
    // success x, f and grad hold the new point.
    StepResult step(const Objective& obj, Vec& x, double& f, Vec& grad);
    void reset();
    std::size_t history_size() const { return s_.size(); }

private:
    bool line_search(const Objective& obj, const Vec& x, double f, const Vec& grad, const Vec& dir,
                     Vec& x_new, double& f_new, Vec& g_new, int& evals) const;
    void refine(const Objective& obj, const Vec& x, const Vec& dir, double slope, double alpha,
                Vec& x_new, double& f_new, Vec& g_new, int& evals) const;

    LbfgsOptions opts_;
    std::deque<Vec> s_;
    std::deque<Vec> y_;
    std::deque<double> rho_;
};

// Called after every iteration with (iteration, loss at the current point,
// gradient norm). Returning false stops the run.
using IterationCallback = std::function<bool(int, double, double)>;

struct MinimizeResult {
    Vec x;
    double f = 0.0;
    int iterations = 0;
};

// Runs Adam for max_iters steps (or until the gradient norm drops below
// grad_tol) and returns the best iterate seen.
MinimizeResult minimize_adam(const Objective& obj, const Vec& x0, double lr, int max_iters,
                             double grad_tol = 0.0, const IterationCallback& cb = {});
// Runs L-BFGS until max_iters, grad_tol, or a failed line search.
MinimizeResult minimize_lbfgs(const Objective& obj, const Vec& x0, const LbfgsOptions& opts,
                              int max_iters, double grad_tol = 0.0, const IterationCallback& cb = {});

} // namespace thermoq
