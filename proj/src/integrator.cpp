#include "thermoq/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "thermoq/errors.hpp"

namespace thermoq {

namespace {

// Dormand-Prince 5(4) tableau (Hairer, Norsett & Wanner).
constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;
constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                 a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                 a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0,
                 a75 = -2187.0 / 6784.0, a76 = 11.0 / 84.0;
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                 e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
// Dense output coefficients.
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

constexpr double kSafety = 0.9;
constexpr double kFacMin = 0.2;
constexpr double kFacMax = 10.0;

double error_norm(const Vec& err, const Vec& y0, const Vec& y1, const IntegratorConfig& cfg) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < err.size(); ++i) {
        const double sc = cfg.abs_tol + cfg.rel_tol * std::max(std::abs(y0[i]), std::abs(y1[i]));
        const double r = err[i] / sc;
        acc += r * r;
    }
    return std::sqrt(acc / static_cast<double>(std::max<Eigen::Index>(err.size(), 1)));
}

double initial_step(const OdeRhs& rhs, double t0, const Vec& y0, const Vec& f0,
                    const IntegratorConfig& cfg, double span) {
    Vec scale = (cfg.abs_tol + cfg.rel_tol * y0.array().abs()).matrix();
    const double n = static_cast<double>(std::max<Eigen::Index>(y0.size(), 1));
    const double dnf = std::sqrt((f0.array() / scale.array()).square().sum() / n);
    const double dny = std::sqrt((y0.array() / scale.array()).square().sum() / n);
    double h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : 0.01 * dny / dnf;
    h = std::min(h, span);
    Vec y1 = y0 + h * f0;
    Vec f1(y0.size());
    rhs(t0 + h, y1, f1);
    const double der2 = std::sqrt(((f1 - f0).array() / scale.array()).square().sum() / n) / h;
    const double der = std::max(der2, dnf);
    const double h1 = der <= 1e-15 ? std::max(1e-6, h * 1e-3) : std::pow(0.01 / der, 1.0 / 5.0);
    return std::min({100.0 * h, h1, span});
}

} // namespace

Mat integrate(const OdeRhs& rhs, const Vec& y0, std::span<const double> t_grid,
              const IntegratorConfig& cfg) {
    if (t_grid.empty()) throw std::invalid_argument("integrate: empty time grid");
    if (!(cfg.rel_tol > 0.0) || !(cfg.abs_tol > 0.0)) {
        throw std::invalid_argument("integrate: tolerances must be positive");
    }
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        if (!(t_grid[i] > t_grid[i - 1])) {
            throw std::invalid_argument("integrate: time grid must be strictly increasing");
        }
    }
    const auto n = y0.size();
    Mat out(static_cast<Eigen::Index>(t_grid.size()), n);
    out.row(0) = y0.transpose();
    if (t_grid.size() == 1) return out;

    const double t_end = t_grid.back();
    double t = t_grid.front();
    const double span = t_end - t;
    const double max_step = cfg.max_step > 0.0 ? cfg.max_step : span;

    Vec y = y0;
    Vec k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n), err(n);
    Vec r1(n), r2(n), r3(n), r4(n), r5(n);
    rhs(t, y, k1);
    double h = cfg.initial_step > 0.0 ? cfg.initial_step : initial_step(rhs, t, y, k1, cfg, span);
    h = std::min(h, max_step);

    std::size_t next = 1;
    long steps = 0;
    while (next < t_grid.size()) {
        if (++steps > cfg.max_steps) {
            throw IntegrationError("integrate: exceeded max_steps at t=" + std::to_string(t), t);
        }
        const double min_step = 16.0 * std::numeric_limits<double>::epsilon() *
                                std::max(std::abs(t), 1.0);
        if (h < min_step) {
            throw IntegrationError("integrate: step size underflow at t=" + std::to_string(t), t);
        }
        if (t + h > t_end) h = t_end - t;

        ytmp = y + h * a21 * k1;
        rhs(t + c2 * h, ytmp, k2);
        ytmp = y + h * (a31 * k1 + a32 * k2);
        rhs(t + c3 * h, ytmp, k3);
        ytmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
        rhs(t + c4 * h, ytmp, k4);
        ytmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        rhs(t + c5 * h, ytmp, k5);
        ytmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        rhs(t + h, ytmp, k6);
        ynew = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
        rhs(t + h, ynew, k7);
        err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

        const double en = error_norm(err, y, ynew, cfg);
        if (!std::isfinite(en)) {
            h *= kFacMin;
            continue;
        }
        if (en <= 1.0) {
            const double t_new = (t_end - (t + h) < 1e-12 * std::max(1.0, std::abs(t_end)))
                                     ? t_end
                                     : t + h;
            // Dense output on [t, t_new] for every requested sample inside it.
            if (next < t_grid.size() && t_grid[next] <= t_new) {
                r1 = y;
                r2 = ynew - y;
                r3 = h * k1 - r2;
                r4 = r2 - h * k7 - r3;
                r5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
                while (next < t_grid.size() && t_grid[next] <= t_new) {
                    if (t_grid[next] == t_new) {
                        out.row(static_cast<Eigen::Index>(next)) = ynew.transpose();
                    } else {
                        const double th = (t_grid[next] - t) / h;
                        const double th1 = 1.0 - th;
                        out.row(static_cast<Eigen::Index>(next)) =
                            (r1 + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)))).transpose();
                    }
                    ++next;
                }
            }
            t = t_new;
            y = ynew;
            k1 = k7;
            const double fac = en == 0.0 ? kFacMax
                                         : std::clamp(kSafety * std::pow(en, -0.2), kFacMin, kFacMax);
            h = std::min(h * fac, max_step);
        } else {
            h *= std::clamp(kSafety * std::pow(en, -0.2), kFacMin, 1.0);
        }
    }
    return out;
}

} // namespace thermoq
