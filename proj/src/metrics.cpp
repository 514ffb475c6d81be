#include "thermoq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "thermoq/errors.hpp"
#include "thermoq/integrator.hpp"

namespace thermoq {

double trace_distance(const Vec& a, const Vec& b, const StructureConstants& sc) {
    if (a.size() != sc.dim() || b.size() != sc.dim()) throw DimensionError("trace_distance: size mismatch");
    // rho_a - rho_b = (a - b) . sigma / 2. The sign is fixed by a canonical
    // order of the arguments so that T(a, b) == T(b, a) bit for bit.
    const bool swap = std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
    const CMat diff = coeffs_to_hermitian({0.0, swap ? Vec(b - a) : Vec(a - b)}, sc);
    Eigen::SelfAdjointEigenSolver<CMat> es(diff, Eigen::EigenvaluesOnly);
    return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

double trace_distance_bloch(const Vec& a, const Vec& b) {
    if (a.size() != 3 || b.size() != 3) throw DimensionError("trace_distance_bloch: two-level only");
    return 0.5 * (a - b).norm();
}

Vec trace_distance_curve(const Mat& a, const Mat& b, const StructureConstants& sc) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("trace_distance_curve: grid mismatch");
    Vec out(a.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        out[i] = sc.levels() == 2 ? trace_distance_bloch(a.row(i).transpose(), b.row(i).transpose())
                                  : trace_distance(a.row(i).transpose(), b.row(i).transpose(), sc);
    }
    return out;
}

DistanceBands bands(const std::vector<Vec>& curves) {
    if (curves.empty()) throw ValidationError("bands: no curves");
    const auto n = curves.front().size();
    DistanceBands b{Vec::Zero(n), Vec::Constant(n, std::numeric_limits<double>::infinity()),
                    Vec::Constant(n, -std::numeric_limits<double>::infinity())};
    for (const Vec& c : curves) {
        if (c.size() != n) throw DimensionError("bands: curves differ in length");
        b.mean += c;
        b.min = b.min.cwiseMin(c);
        b.max = b.max.cwiseMax(c);
    }
    b.mean /= static_cast<double>(curves.size());
    return b;
}

ExpectedDistance expected_trace_distance(const LearnableModel& model, const SystemSpec& truth_template,
                                         const std::vector<ControlSpec>& controls, const Vec& v0,
                                         const std::vector<double>& t,
                                         const IntegratorConfig& cfg) {
    if (controls.empty()) throw ValidationError("expected_trace_distance: no controls");
    const auto sc = structure_constants(model.levels);
    ExpectedDistance out;
    std::vector<Vec> curves;
    ModelField field(model);
    for (const ControlSpec& ctrl : controls) {
        SystemSpec sys = truth_template;
        sys.control = ctrl;
        field.set_control(&ctrl);
        Mat ref = integrate([&sys](double tt, const Vec& v, Vec& o) { o = rhs_nonlinear(v, sys, tt); },
                            v0, t, cfg);
        Mat pred = integrate([&field](double tt, const Vec& v, Vec& o) { field.eval(tt, v, o); }, v0, t,
                             cfg);
        curves.push_back(trace_distance_curve(pred, ref, *sc));
        out.predicted.push_back(std::move(pred));
        out.reference.push_back(std::move(ref));
    }
    out.bands = bands(curves);
    return out;
}

Vec psd_violation(const Mat& trajectory, const StructureConstants& sc) {
    Vec out(trajectory.rows());
    for (Eigen::Index i = 0; i < trajectory.rows(); ++i) {
        const double lmin = density_spectrum(trajectory.row(i).transpose(), sc).values[0];
        out[i] = std::abs(std::min(0.0, lmin));
    }
    return out;
}

Vec psd_violation(const std::vector<Mat>& trajectories, const StructureConstants& sc) {
    if (trajectories.empty()) throw ValidationError("psd_violation: no trajectories");
    Vec worst = Vec::Zero(trajectories.front().rows());
    for (const Mat& m : trajectories) {
        if (m.rows() != worst.size()) throw DimensionError("psd_violation: grid mismatch");
        worst = worst.cwiseMax(psd_violation(m, sc));
    }
    return worst;
}

double psd_violation_fraction(const std::vector<Mat>& trajectories, const StructureConstants& sc,
                              double tol) {
    long total = 0, bad = 0;
    for (const Mat& m : trajectories) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            ++total;
            if (density_spectrum(m.row(i).transpose(), sc).values[0] < -tol) ++bad;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(bad) / static_cast<double>(total);
}

Vec cumulative_trace_distance(const Mat& pred, const Mat& data, const StructureConstants& sc) {
    const Vec d = trace_distance_curve(pred, data, sc);
    Vec out(d.size());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        acc += d[i];
        out[i] = acc / static_cast<double>(i + 1);
    }
    return out;
}

Mat psd_cholesky(const Mat& gamma, double tol) {
    const auto n = gamma.rows();
    if (gamma.cols() != n) throw DimensionError("psd_cholesky: matrix must be square");
    Mat l = Mat::Zero(n, n);
    const double scale = std::max(1.0, gamma.diagonal().cwiseAbs().maxCoeff());
    for (Eigen::Index j = 0; j < n; ++j) {
        double diag = gamma(j, j) - l.row(j).head(j).squaredNorm();
        if (diag <= tol * scale) continue;
        l(j, j) = std::sqrt(diag);
        for (Eigen::Index i = j + 1; i < n; ++i) {
            l(i, j) = (gamma(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
        }
    }
    return l;
}

namespace {

// Best signed permutation P maximizing <X, Y P> via exhaustive search for
// small d and greedy assignment otherwise.
Mat align_signed_permutation(const Mat& y, const Mat& x) {
    const auto d = x.cols();
    const Mat c = y.transpose() * x; // c(i, j) = <y_i, x_j>
    std::vector<int> perm(static_cast<std::size_t>(d));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_score = -std::numeric_limits<double>::infinity();
    if (d <= 8) {
        do {
            double s = 0.0;
            for (Eigen::Index j = 0; j < d; ++j) s += std::abs(c(perm[static_cast<std::size_t>(j)], j));
            if (s > best_score) {
                best_score = s;
                best = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
    } else {
        std::vector<bool> used(static_cast<std::size_t>(d), false);
        for (Eigen::Index j = 0; j < d; ++j) {
            int arg = -1;
            for (Eigen::Index i = 0; i < d; ++i) {
                if (used[static_cast<std::size_t>(i)]) continue;
                if (arg < 0 || std::abs(c(i, j)) > std::abs(c(arg, j))) arg = static_cast<int>(i);
            }
            used[static_cast<std::size_t>(arg)] = true;
            best[static_cast<std::size_t>(j)] = arg;
        }
    }
    Mat out(y.rows(), d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const int i = best[static_cast<std::size_t>(j)];
        out.col(j) = (c(i, j) < 0.0 ? -1.0 : 1.0) * y.col(i);
    }
    return out;
}

} // namespace

OperatorErrors operator_errors(const LearnableModel& model, const Vec& h_true, const Mat& x_true,
                               bool procrustes) {
    const int d = model.dim();
    if (h_true.size() != d || x_true.rows() != d || x_true.cols() > d) {
        throw DimensionError("operator_errors: truth has the wrong shape");
    }
    if (h_true.norm() == 0.0 || x_true.norm() == 0.0) {
        throw ValidationError("operator_errors: truth has zero norm");
    }
    Mat x = Mat::Zero(d, d);
    x.leftCols(x_true.cols()) = x_true;
    OperatorErrors e;
    e.h_rel = (model.h - h_true).norm() / h_true.norm();
    Mat aligned;
    if (procrustes) {
        // argmin_Q |Y Q - X|_F over orthogonal Q: Q = U V^T from Y^T X = U S V^T.
        Eigen::JacobiSVD<Mat> svd(model.x_hat.transpose() * x, Eigen::ComputeFullU | Eigen::ComputeFullV);
        aligned = model.x_hat * svd.matrixU() * svd.matrixV().transpose();
    } else {
        aligned = align_signed_permutation(model.x_hat, x);
    }
    e.x_rel = (aligned - x).norm() / x.norm();
    return e;
}

double nonlinear_term_error(const LearnableModel& model, const Vec& h_true, const Mat& x_true,
                            const std::vector<Vec>& states) {
    const auto sc = structure_constants(model.levels);
    const Vec hd = model.dissipative_shift.size() == model.dim() ? Vec(model.h + model.dissipative_shift)
                                                                  : model.h;
    double num = 0.0, den = 0.0;
    std::vector<Mat> lx, lxt;
    for (Eigen::Index k = 0; k < x_true.cols(); ++k) lx.push_back(op_L(x_true.col(k), *sc));
    for (Eigen::Index k = 0; k < model.x_hat.cols(); ++k) lxt.push_back(op_L(model.x_hat.col(k), *sc));
    for (const Vec& v : states) {
        const Mat m = nonlinear_M(v, *sc, -1.0);
        const Mat mt = M_theta(v, model);
        Vec g = Vec::Zero(model.dim()), gt = Vec::Zero(model.dim());
        for (const Mat& l : lx) g += l * (m * (l * h_true));
        for (const Mat& l : lxt) gt += l * (mt * (l * hd));
        num += (gt - g).squaredNorm();
        den += g.squaredNorm();
    }
    if (den == 0.0) throw ValidationError("nonlinear_term_error: reference term vanishes");
    return std::sqrt(num / den);
}

} // namespace thermoq
