#pragma once

#include <functional>
#include <span>

#include "thermoq/types.hpp"

namespace thermoq {

struct IntegratorConfig {
    double rel_tol = 1e-8;
    double abs_tol = 1e-10;
    double max_step = 0.0;     // 0 means unbounded
    double initial_step = 0.0; // 0 means automatic
    long max_steps = 50'000'000;

    static IntegratorConfig data_generation() { return {1e-8, 1e-10}; }
    static IntegratorConfig training() { return {1e-6, 1e-8}; }
};

// dy/dt = f(t, y). Writes the derivative into the third argument.
using OdeRhs = std::function<void(double, const Vec&, Vec&)>;

// Dormand-Prince 5(4) with step-size control and 4th-order dense output.
// Returns one row per entry of t_grid (which must be strictly increasing and
// start at the initial time). Throws IntegrationError on step-size underflow
// or when max_steps is exceeded.
Mat integrate(const OdeRhs& rhs, const Vec& y0, std::span<const double> t_grid,
              const IntegratorConfig& cfg);

} // namespace thermoq
