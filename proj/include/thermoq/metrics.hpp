#pragma once

#include <vector>

#include "thermoq/basis.hpp"
#include "thermoq/dynamics.hpp"
#include "thermoq/integrator.hpp"
#include "thermoq/model.hpp"
#include "thermoq/types.hpp"

namespace thermoq {

// Half the trace norm of rho_a - rho_b, from the eigenvalues of the difference.
double trace_distance(const Vec& a, const Vec& b, const StructureConstants& sc);
// Two-level shortcut: half the Euclidean distance of the Bloch vectors.
double trace_distance_bloch(const Vec& a, const Vec& b);

// Row-wise trace distance of two trajectories sampled on the same grid.
Vec trace_distance_curve(const Mat& a, const Mat& b, const StructureConstants& sc);

struct DistanceBands {
    Vec mean;
    Vec min;
    Vec max;
};

// Per-time statistics over a set of equally long curves.
DistanceBands bands(const std::vector<Vec>& curves);

// Rolls the learned model and the exact system forward for every control and
// reports trace-distance bands on the grid.
struct ExpectedDistance {
    DistanceBands bands;
    std::vector<Mat> predicted;
    std::vector<Mat> reference;
};
ExpectedDistance expected_trace_distance(const LearnableModel& model, const SystemSpec& truth_template,
                                         const std::vector<ControlSpec>& controls, const Vec& v0,
                                         const std::vector<double>& t,
                                         const IntegratorConfig& cfg);

// |min(0, lambda_min(rho))| for every row of a trajectory.
Vec psd_violation(const Mat& trajectory, const StructureConstants& sc);
// Pointwise worst case over several trajectories.
Vec psd_violation(const std::vector<Mat>& trajectories, const StructureConstants& sc);
// Fraction of sampled states with lambda_min < -tol.
double psd_violation_fraction(const std::vector<Mat>& trajectories, const StructureConstants& sc,
                              double tol = 1e-10);

// C(n) = (1/n) sum_{i<=n} T(pred_i, data_i), n = 1..rows.
Vec cumulative_trace_distance(const Mat& pred, const Mat& data, const StructureConstants& sc);

struct OperatorErrors {
    double h_rel = 0.0;
    double x_rel = 0.0;
};

// Relative errors of h and X. X is compared after right-multiplying the
// learned factor by the best signed permutation, or by the best orthogonal
// matrix when `procrustes` is set. Narrow truth factors are zero-padded.
OperatorErrors operator_errors(const LearnableModel& model, const Vec& h_true, const Mat& x_true,
                               bool procrustes = false);

// Lower-triangular factor X with X X^T = gamma for a PSD gamma; columns with a
// vanishing pivot are zero.
Mat psd_cholesky(const Mat& gamma, double tol = 1e-14);

// sqrt(sum |G_theta(v) - G(v)|^2 / sum |G(v)|^2) over the given states, with
// G(v) = sum_k L(x_k) M(v) L(x_k) h.
double nonlinear_term_error(const LearnableModel& model, const Vec& h_true, const Mat& x_true,
                            const std::vector<Vec>& states);

} // namespace thermoq
